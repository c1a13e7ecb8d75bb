//! Named model parameters, kept outside the per-pass graphs.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use std::collections::BTreeMap;

/// One named parameter with its training flags.
#[derive(Debug, Clone)]
pub struct ParamEntry<T> {
    pub tensor: Tensor<T>,
    /// Frozen parameters receive no gradient and are never updated.
    pub frozen: bool,
    /// Weight decay applies only to decayable parameters (weights, not
    /// biases or the position encoding).
    pub decay: bool,
}

/// Ordered name -> tensor map. Iteration order is the sorted name order,
/// which keeps every consumer (optimizer, checkpoint, gradient check)
/// deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    entries: BTreeMap<String, ParamEntry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>, frozen: bool, decay: bool) {
        let name = name.into();
        assert!(
            self.entries
                .insert(name.clone(), ParamEntry { tensor, frozen, decay })
                .is_none(),
            "duplicate parameter name '{name}'"
        );
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry<T>> {
        self.entries.get_mut(name)
    }

    pub fn tensor(&self, name: &str) -> &Tensor<T> {
        &self
            .entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"))
            .tensor
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry<T>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamEntry<T>)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn total_elements(&self) -> usize {
        self.entries.values().map(|e| e.tensor.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| {
                    (
                        k.clone(),
                        ParamEntry {
                            tensor: v.tensor.cast::<U>(),
                            frozen: v.frozen,
                            decay: v.decay,
                        },
                    )
                })
                .collect(),
        }
    }

    /// Bitwise equality of all tensors (shapes, payload, flags).
    pub fn bitwise_eq(&self, other: &ParamStore<T>) -> bool {
        if self.entries.len() != other.entries.len() {
            return false;
        }
        self.entries.iter().zip(other.entries.iter()).all(|((ka, a), (kb, b))| {
            ka == kb
                && a.frozen == b.frozen
                && a.decay == b.decay
                && a.tensor.shape() == b.tensor.shape()
                && a.tensor
                    .data()
                    .iter()
                    .zip(b.tensor.data())
                    .all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
        })
    }
}

/// Graph leaves for every parameter of a store, addressed by name.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter '{name}' not bound"))
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.vars.keys()
    }
}

/// Inserts every parameter as a graph leaf. With `trainable` set, leaves of
/// non-frozen parameters accumulate gradients; frozen ones never do.
pub fn bind<T: Scalar>(graph: &mut Graph<T>, store: &ParamStore<T>, trainable: bool) -> Bound {
    let mut vars = BTreeMap::new();
    for (name, entry) in store.iter() {
        let requires_grad = trainable && !entry.frozen;
        vars.insert(name.clone(), graph.leaf(entry.tensor.clone(), requires_grad));
    }
    Bound { vars }
}

/// Collects the gradient of every bound, non-frozen parameter after a
/// backward pass. Parameters untouched by the loss report zero gradients.
pub fn collect_grads<T: Scalar>(
    graph: &Graph<T>,
    bound: &Bound,
    store: &ParamStore<T>,
) -> Result<BTreeMap<String, Vec<T>>> {
    let mut out = BTreeMap::new();
    for (name, entry) in store.iter() {
        if entry.frozen {
            continue;
        }
        let var = bound.var(name);
        let grad = match graph.grad(var) {
            Some(g) => g.to_vec(),
            None => vec![T::zero(); entry.tensor.numel()],
        };
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient for parameter '{name}'"
            )));
        }
        out.insert(name.clone(), grad);
    }
    Ok(out)
}
