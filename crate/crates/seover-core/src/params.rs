//! Named parameter tensors with a stable iteration order.
//!
//! Parameters live outside any tape. Each forward pass binds them onto a
//! fresh tape as leaves; after `backward` the gradients are read back by
//! name and applied by the optimizer.

use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Ordered name → tensor map. Insertion order is the checkpoint order.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: IndexMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::MissingParameter {
                name: name.to_string(),
            })
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::MissingParameter {
                name: name.to_string(),
            })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Merge another set under a prefix; existing names are overwritten.
    pub fn absorb(&mut self, prefix: &str, other: ParamSet) {
        for (name, tensor) in other.entries {
            self.entries.insert(format!("{prefix}{name}"), tensor);
        }
    }

    /// Clone the parameters whose name passes `filter`, keeping order.
    pub fn subset(&self, filter: impl Fn(&str) -> bool) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, tensor) in self.iter() {
            if filter(name) {
                out.insert(name.clone(), tensor.clone());
            }
        }
        out
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    /// All parameter values in insertion order, concatenated.
    pub fn to_flat_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.numel());
        for (_, t) in self.iter() {
            out.extend_from_slice(t.values());
        }
        out
    }

    /// Overwrite all parameters from a flat vector laid out like
    /// [`ParamSet::to_flat_vec`].
    pub fn assign_from_flat(&mut self, flat: &[f64]) {
        debug_assert_eq!(flat.len(), self.numel());
        let mut offset = 0;
        for (_, t) in self.iter_mut() {
            let n = t.numel();
            t.values_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }
}

/// Tape bindings for one forward pass: every parameter bound as a leaf,
/// with or without gradient tracking.
#[derive(Debug)]
pub struct Binding {
    vars: IndexMap<String, Var>,
    trainable: bool,
}

impl Binding {
    /// Bind all parameters of `params` onto `tape`.
    pub fn bind(tape: &mut Tape, params: &ParamSet, trainable: bool) -> Self {
        Self::bind_where(tape, params, |_| true, trainable)
    }

    /// Bind only the parameters whose name passes `filter`. Looking up an
    /// unbound name later is an error, which keeps wiring mistakes loud.
    pub fn bind_where(
        tape: &mut Tape,
        params: &ParamSet,
        filter: impl Fn(&str) -> bool,
        trainable: bool,
    ) -> Self {
        let mut vars = IndexMap::new();
        for (name, tensor) in params.iter() {
            if filter(name) {
                let var = tape.leaf(tensor.clone(), trainable);
                vars.insert(name.clone(), var);
            }
        }
        Binding { vars, trainable }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParameter {
                name: name.to_string(),
            })
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    /// Read gradients back into a name → tensor map. Empty when the
    /// binding was not trainable.
    pub fn gradients(&self, tape: &Tape) -> Result<Vec<(String, Tensor)>> {
        if !self.trainable {
            return Ok(Vec::new());
        }
        let mut out = Vec::with_capacity(self.vars.len());
        for (name, var) in &self.vars {
            match tape.grad(*var) {
                Ok(g) => out.push((name.clone(), g)),
                // A parameter can sit on an unused path (e.g. padding rows
                // of an embedding); treat that as a zero gradient.
                Err(Error::MissingGradient) => {
                    out.push((name.clone(), Tensor::zeros(tape.shape(*var).to_vec())))
                }
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }
}

/// Xavier-uniform initialization for projection matrices.
pub fn xavier_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let values: Vec<f64> = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::new(vec![rows, cols], values).expect("xavier shape")
}

/// N(0, std) initialization for embedding tables.
pub fn normal(rng: &mut ChaCha8Rng, shape: Vec<usize>, std: f64) -> Tensor {
    use rand_distr::{Distribution, Normal};
    let dist = Normal::new(0.0, std).expect("valid std");
    let numel: usize = shape.iter().product();
    let values: Vec<f64> = (0..numel).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape, values).expect("normal shape")
}

pub fn ones(len: usize) -> Tensor {
    Tensor::vector(vec![1.0; len])
}

pub fn zeros_vec(len: usize) -> Tensor {
    Tensor::vector(vec![0.0; len])
}
