use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

/// Named parameter tensors in creation order.
#[derive(Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    decay: Vec<bool>,
    index: HashMap<String, usize>,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_map()
            .entries(self.names.iter().zip(&self.tensors).map(|(n, t)| (n, t.shape())))
            .finish()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter; `decay` marks it for weight decay.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, decay: bool) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Contract(format!("parameter {name:?} registered twice")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        self.decay.push(decay);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.tensors[i])
            .ok_or_else(|| Error::Contract(format!("no parameter named {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn decays(&self, name: &str) -> bool {
        self.index.get(name).is_some_and(|&i| self.decay[i])
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Scalar count per top-level name component (`temporal`, `spatial`, …).
    pub fn census(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for (n, t) in self.iter() {
            let group = n.split('.').next().unwrap_or(n).to_string();
            *out.entry(group).or_insert(0) += t.numel();
        }
        out
    }

    /// Replaces a parameter's values with a fresh gradient-tracking leaf.
    pub fn set_data(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::Contract(format!("no parameter named {name:?}")))?;
        let shape = self.tensors[i].shape().to_vec();
        if data.len() != numel(&shape) {
            return Err(Error::Shape {
                op: "set_data",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        self.tensors[i] = Tensor::param(&shape, data)?;
        Ok(())
    }

    /// Same values without gradient tracking, for evaluation.
    pub fn frozen(&self) -> ParamStore {
        let mut out = self.clone();
        out.tensors = self.tensors.iter().map(Tensor::detach).collect();
        out
    }

    pub fn zero_grads(&self) {
        self.tensors.iter().for_each(Tensor::zero_grad);
    }
}

/// Seeded initializer. Each parameter draws from a stream derived from the
/// seed and its name, so a name gets the same values in every architecture.
pub(crate) struct Init {
    seed: u64,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init { seed }
    }

    fn rng(&self, name: &str) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(name.as_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    /// Uniform in ±1/√fan_in, fan_in being the product of all but the last axis.
    pub fn weight(&self, store: &mut ParamStore, name: &str, shape: &[usize]) -> Result<()> {
        let fan_in: usize = shape[..shape.len() - 1].iter().product();
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut rng = self.rng(name);
        let data = (0..numel(shape)).map(|_| rng.random_range(-bound..bound)).collect();
        store.insert(name, Tensor::param(shape, data)?, true)
    }

    pub fn zeros(&self, store: &mut ParamStore, name: &str, shape: &[usize]) -> Result<()> {
        store.insert(name, Tensor::param(shape, vec![0.0; numel(shape)])?, false)
    }

    pub fn ones(&self, store: &mut ParamStore, name: &str, shape: &[usize]) -> Result<()> {
        store.insert(name, Tensor::param(shape, vec![1.0; numel(shape)])?, false)
    }
}
