use std::collections::BTreeMap;

use super::NnError;
use crate::numcore::{Gradients, Matrix, Tape, Var};

/// One learnable tensor with its gradient accumulator and RMSProp state.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Matrix,
    pub grad: Matrix,
    pub sq_avg: Matrix,
}

impl Param {
    fn new(value: Matrix) -> Self {
        let (r, c) = value.shape();
        Self {
            value,
            grad: Matrix::zeros(r, c),
            sq_avg: Matrix::zeros(r, c),
        }
    }
}

/// Named parameters, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    params: BTreeMap<String, Param>,
}

/// Parameters recorded as leaves of one tape.
#[derive(Clone, Debug, Default)]
pub struct Binding {
    vars: BTreeMap<String, Var>,
}

impl Binding {
    /// Binding over vars recorded elsewhere, e.g. parameters supplied as plain tape inputs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var, NnError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| NnError::Missing(name.to_string()))
    }
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<(), NnError> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(NnError::Duplicate(name));
        }
        self.params.insert(name, Param::new(value));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn value(&self, name: &str) -> Result<&Matrix, NnError> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| NnError::Missing(name.to_string()))
    }

    /// Replaces a value, keeping the shape.
    pub fn set_value(&mut self, name: &str, value: Matrix) -> Result<(), NnError> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| NnError::Missing(name.to_string()))?;
        if p.value.shape() != value.shape() {
            return Err(NnError::Shape {
                name: name.to_string(),
                expected: p.value.shape(),
                found: value.shape(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Records every parameter as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        self.bind_with(tape, true)
    }

    /// Records every parameter as a constant leaf (frozen copies, rollouts).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Binding {
        self.bind_with(tape, false)
    }

    /// Frozen binding of the parameters whose names start with `prefix`.
    pub fn bind_frozen_prefix(&self, tape: &mut Tape, prefix: &str) -> Binding {
        let vars = self
            .params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, p)| (k.clone(), tape.constant(p.value.clone())))
            .collect();
        Binding { vars }
    }

    fn bind_with(&self, tape: &mut Tape, trainable: bool) -> Binding {
        let vars = self
            .params
            .iter()
            .map(|(k, p)| {
                let v = if trainable {
                    tape.input(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                };
                (k.clone(), v)
            })
            .collect();
        Binding { vars }
    }

    /// Adds the gradients of bound parameters into their accumulators.
    pub fn accumulate(&mut self, binding: &Binding, grads: &Gradients) {
        for (name, var) in &binding.vars {
            if let (Some(p), Some(g)) = (self.params.get_mut(name), grads.get(*var)) {
                for (a, b) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .values()
            .flat_map(|p| p.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales gradients so their global L2 norm is at most `max_norm`.
    ///
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm.is_finite() {
            let k = max_norm / norm;
            for p in self.params.values_mut() {
                p.grad.data_mut().iter_mut().for_each(|g| *g *= k);
            }
        }
        norm
    }

    /// Hard copy of every value from `source`; names and shapes must agree.
    pub fn copy_values_from(&mut self, source: &ParameterStore) -> Result<(), NnError> {
        if self.params.len() != source.params.len() {
            return Err(NnError::Format(format!(
                "parameter count mismatch: {} vs {}",
                self.params.len(),
                source.params.len()
            )));
        }
        for (name, p) in self.params.iter_mut() {
            let src = source
                .params
                .get(name)
                .ok_or_else(|| NnError::Missing(name.clone()))?;
            if src.value.shape() != p.value.shape() {
                return Err(NnError::Shape {
                    name: name.clone(),
                    expected: p.value.shape(),
                    found: src.value.shape(),
                });
            }
            p.value.data_mut().copy_from_slice(src.value.data());
        }
        Ok(())
    }

    /// Bitwise equality of all values (ignores gradients and optimizer state).
    pub fn values_bit_equal(&self, other: &ParameterStore) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().all(|(k, p)| {
                other.params.get(k).is_some_and(|q| {
                    p.value.shape() == q.value.shape()
                        && p
                            .value
                            .data()
                            .iter()
                            .zip(q.value.data())
                            .all(|(a, b)| a.to_bits() == b.to_bits())
                })
            })
    }
}
