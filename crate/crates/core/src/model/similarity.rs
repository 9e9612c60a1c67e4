use crate::numerics::{NumericsError, Tape, Tensor, Var};
use crate::registry::Named;

/// Compares attention rows with normalized prototypes.
///
/// Given a row-stochastic map `[T x N]` and normalized prototypes `[P x N]`,
/// produces a `[T x P]` matrix where larger means more similar.
pub trait SimilarityMetric: Named + Send + Sync {
    fn similarity(&self, tape: &mut Tape, map: Var, prototypes: Var) -> Result<Var, NumericsError>;

    /// Closed range every entry falls in, for probability-vector inputs.
    fn bounds(&self) -> (f64, f64);
}

/// Dot product of the two distributions: `S = M softmax(E)^T`.
pub struct DotSimilarity;

/// Negated KL divergence `-KL(M_t || E_p)`.
pub struct KlSimilarity;

/// Negated Jensen-Shannon divergence, natural log.
pub struct JsSimilarity;

impl Named for DotSimilarity {
    fn name(&self) -> &'static str {
        "dot"
    }
}

impl SimilarityMetric for DotSimilarity {
    fn similarity(&self, tape: &mut Tape, map: Var, prototypes: Var) -> Result<Var, NumericsError> {
        let pt = tape.transpose(prototypes)?;
        tape.matmul(map, pt)
    }

    fn bounds(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
}

impl Named for KlSimilarity {
    fn name(&self) -> &'static str {
        "kl"
    }
}

impl SimilarityMetric for KlSimilarity {
    fn similarity(&self, tape: &mut Tape, map: Var, prototypes: Var) -> Result<Var, NumericsError> {
        tape.kl_similarity(map, prototypes)
    }

    fn bounds(&self) -> (f64, f64) {
        // KL is unbounded above; the log clamp caps it near ln(1e12).
        (-(1e12f64.ln()), 0.0)
    }
}

impl Named for JsSimilarity {
    fn name(&self) -> &'static str {
        "js"
    }
}

impl SimilarityMetric for JsSimilarity {
    fn similarity(&self, tape: &mut Tape, map: Var, prototypes: Var) -> Result<Var, NumericsError> {
        tape.js_similarity(map, prototypes)
    }

    fn bounds(&self) -> (f64, f64) {
        (-std::f64::consts::LN_2, 0.0)
    }
}

/// Untaped convenience wrapper: similarity between `map [T x N]` and
/// already-normalized `prototypes [P x N]`.
pub fn similarity_variant(
    metric: &dyn SimilarityMetric,
    map: &Tensor,
    prototypes: &Tensor,
) -> Result<Tensor, NumericsError> {
    let mut tape = Tape::new();
    let m = tape.constant(map.clone());
    let e = tape.constant(prototypes.clone());
    let s = metric.similarity(&mut tape, m, e)?;
    Ok(tape.value(s).clone())
}
