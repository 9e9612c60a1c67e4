use crate::numerics::{Rng, Tensor};

/// How a parameter tensor is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))` for a `[fan_in x fan_out]` matrix.
    XavierUniform,
    Gaussian { std: f64 },
    Uniform { lo: f64, hi: f64 },
    Zeros,
    Ones,
}

/// What part of the network a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Embedding,
    /// Query (and, for self-attention, key/value) projections.
    AttentionProjection,
    /// Learnable Key/Value dictionary rows.
    Dictionary,
    Prototypes,
    Norm,
    FeedForward,
    Reconstruction,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    pub role: ParamRole,
    /// Counted as part of the attention block proper.
    pub in_attention_block: bool,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init, role: ParamRole) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init,
            role,
            in_attention_block: false,
        }
    }

    pub fn attention_block(mut self) -> Self {
        self.in_attention_block = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn initialize(&self, rng: &mut Rng) -> Tensor {
        let n = self.numel();
        let data: Vec<f64> = match self.init {
            Init::XavierUniform => {
                let (fan_in, fan_out) = match self.shape.as_slice() {
                    [a, b] => (*a, *b),
                    [a] => (*a, *a),
                    _ => (n, n),
                };
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| rng.uniform_range(-bound, bound)).collect()
            }
            Init::Gaussian { std } => (0..n).map(|_| std * rng.gaussian()).collect(),
            Init::Uniform { lo, hi } => (0..n).map(|_| rng.uniform_range(lo, hi)).collect(),
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
        };
        Tensor::new(self.shape.clone(), data).expect("spec shape")
    }
}

/// Ordered, named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    specs: Vec<ParamSpec>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    /// Initializes every spec in order from a single generator seeded with
    /// `seed`.
    pub fn initialize(specs: Vec<ParamSpec>, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let tensors = specs.iter().map(|s| s.initialize(&mut rng)).collect();
        Self { specs, tensors }
    }

    pub fn from_parts(specs: Vec<ParamSpec>, tensors: Vec<Tensor>) -> Self {
        assert_eq!(specs.len(), tensors.len());
        Self { specs, tensors }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamSpec, &Tensor)> {
        self.specs.iter().zip(&self.tensors)
    }

    pub fn total_params(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xavier_bound_respected() {
        let spec = ParamSpec::new("w", &[8, 24], Init::XavierUniform, ParamRole::FeedForward);
        let t = spec.initialize(&mut Rng::new(1));
        let bound = (6.0f64 / 32.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn same_seed_same_parameters() {
        let specs = vec![
            ParamSpec::new("a", &[3, 3], Init::XavierUniform, ParamRole::Embedding),
            ParamSpec::new("b", &[4], Init::Gaussian { std: 0.5 }, ParamRole::Dictionary),
        ];
        let a = ParamStore::initialize(specs.clone(), 17);
        let b = ParamStore::initialize(specs, 17);
        assert_eq!(a, b);
        assert_eq!(a.get("b").unwrap().shape(), &[4]);
        assert_eq!(a.total_params(), 13);
    }
}
