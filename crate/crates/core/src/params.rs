use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, shape_err, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub trainable: bool,
}

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Ordered, name-unique collection of parameters. Insertion order is the
/// checkpoint order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: BTreeMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), by_name: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(invalid!("duplicate parameter name {name}"));
        }
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, tensor, trainable });
        Ok(ParamId(id))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Total number of scalars across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter { name: p.name.clone(), tensor: p.tensor.cast(), trainable: p.trainable })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Copies computed gradients into each parameter's gradient slot.
    pub fn attach_grads(&mut self, grads: &Gradients<T>) -> Result<()> {
        for (p, g) in self.params.iter_mut().zip(&grads.0) {
            match g {
                Some(g) => p.tensor.set_grad(g.clone())?,
                None => p.tensor.clear_grad(),
            }
        }
        Ok(())
    }

    /// Replaces tensor values, keeping names; shapes must agree.
    pub fn load_values(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.len() != self.len() {
            return Err(shape_err!("parameter count {} vs {}", other.len(), self.len()));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || dst.tensor.shape() != src.tensor.shape() {
                return Err(shape_err!(
                    "parameter {} {:?} vs {} {:?}",
                    dst.name,
                    dst.tensor.shape(),
                    src.name,
                    src.tensor.shape()
                ));
            }
            dst.tensor = src.tensor.clone();
        }
        Ok(())
    }
}

/// Per-parameter gradients produced by backpropagation, indexed like the
/// store. `None` means the parameter did not influence the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T>(pub Vec<Option<Vec<T>>>);

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.0.get(id.0).and_then(|g| g.as_deref())
    }
}

/// Seeded parameter initializer: normal(0, std) weights, constant vectors.
pub struct Initializer {
    rng: ChaCha8Rng,
    std: f64,
}

impl Initializer {
    pub fn new(seed: u64, std: f64) -> Self {
        Initializer { rng: ChaCha8Rng::seed_from_u64(seed), std }
    }

    pub fn normal<T: Scalar>(&mut self, shape: Vec<usize>) -> Tensor<T> {
        let len: usize = shape.iter().product();
        // std validated by ModelConfig; Normal::new only fails on negative/NaN.
        let dist = Normal::new(0.0, self.std).expect("valid init std");
        let data = (0..len).map(|_| T::of(dist.sample(&mut self.rng))).collect();
        Tensor::new(shape, data).expect("shape matches generated data")
    }
}
