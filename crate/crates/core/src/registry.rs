//! Name-keyed registries for interchangeable strategies.
//!
//! Attention mechanisms, similarity metrics and detection criteria are each
//! implemented behind a trait and registered under a stable name. Configs and
//! the CLI select strategies by that name at runtime.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use crate::model::{AttentionMechanism, DictionaryAttention, DotSimilarity, JsSimilarity, KlSimilarity,
    SelfAttention, SimilarityMetric};
use crate::scoring::{DetectionCriterion, ReconstructionCriterion, SeriesSimilarityCriterion, SimilarityCriterion};

/// Anything that can live in a [`Registry`].
pub trait Named {
    fn name(&self) -> &'static str;
}

pub struct Registry<T: ?Sized + Named> {
    kind: &'static str,
    entries: BTreeMap<&'static str, Arc<T>>,
}

impl<T: ?Sized + Named> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Adds `item` under its own name, replacing any previous entry.
    pub fn register(&mut self, item: Arc<T>) -> &mut Self {
        self.entries.insert(item.name(), item);
        self
    }

    pub fn get(&self, name: &str) -> Option<Arc<T>> {
        self.entries.get(name).cloned()
    }

    pub fn resolve(&self, name: &str) -> Result<Arc<T>, UnknownStrategy> {
        self.get(name).ok_or_else(|| UnknownStrategy {
            kind: self.kind,
            name: name.to_owned(),
            known: self.names().join(", "),
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("unknown {kind} {name:?} (known: {known})")]
pub struct UnknownStrategy {
    pub kind: &'static str,
    pub name: String,
    pub known: String,
}

pub fn attention_mechanisms() -> &'static Registry<dyn AttentionMechanism> {
    static REG: OnceLock<Registry<dyn AttentionMechanism>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r = Registry::<dyn AttentionMechanism>::new("attention mechanism");
        r.register(Arc::new(DictionaryAttention));
        r.register(Arc::new(SelfAttention));
        r
    })
}

pub fn similarity_metrics() -> &'static Registry<dyn SimilarityMetric> {
    static REG: OnceLock<Registry<dyn SimilarityMetric>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r = Registry::<dyn SimilarityMetric>::new("similarity metric");
        r.register(Arc::new(DotSimilarity));
        r.register(Arc::new(KlSimilarity));
        r.register(Arc::new(JsSimilarity));
        r
    })
}

pub fn detection_criteria() -> &'static Registry<dyn DetectionCriterion> {
    static REG: OnceLock<Registry<dyn DetectionCriterion>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r = Registry::<dyn DetectionCriterion>::new("detection criterion");
        r.register(Arc::new(SimilarityCriterion));
        r.register(Arc::new(SeriesSimilarityCriterion));
        r.register(Arc::new(ReconstructionCriterion));
        r
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug)]
    struct Dummy(&'static str);

    impl Named for Dummy {
        fn name(&self) -> &'static str {
            self.0
        }
    }

    #[test]
    fn register_and_resolve() {
        let mut r = Registry::<Dummy>::new("dummy");
        r.register(Arc::new(Dummy("b"))).register(Arc::new(Dummy("a")));
        assert_eq!(r.names(), vec!["a", "b"]);
        assert_eq!(r.resolve("a").unwrap().name(), "a");
        let err = r.resolve("zz").unwrap_err();
        assert!(err.to_string().contains("known: a, b"));
    }

    #[test]
    fn builtin_registries() {
        assert_eq!(attention_mechanisms().names(), vec!["dictionary", "self"]);
        assert_eq!(similarity_metrics().names(), vec!["dot", "js", "kl"]);
        assert_eq!(detection_criteria().names(), vec!["recon", "sim", "sim-series"]);
    }
}
