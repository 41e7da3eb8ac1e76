use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub value: Tensor,
    pub grad: Tensor,
    /// ADAM first and second moment estimates.
    pub moment1: Tensor,
    pub moment2: Tensor,
}

/// Named trainable tensors with their gradients and optimizer state.
///
/// Iteration order is the lexicographic order of names, so anything derived
/// from a walk over the store (serialization, flattening) is deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    entries: BTreeMap<String, ParamEntry>,
    /// Number of optimizer steps taken.
    pub step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter '{name}'")));
        }
        let zeros = Tensor::zeros(value.shape());
        self.entries.insert(
            name,
            ParamEntry {
                grad: zeros.clone(),
                moment1: zeros.clone(),
                moment2: zeros,
                value,
            },
        );
        Ok(())
    }

    pub fn value(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.value)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.grad)
    }

    pub fn entry_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.entries.get_mut(name)
    }

    /// Replace a value, keeping the shape contract.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter '{name}'")))?;
        if e.value.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "parameter '{name}' has shape {:?}, got {:?}",
                e.value.shape(),
                value.shape()
            )));
        }
        e.value = value;
        Ok(())
    }

    pub(crate) fn accumulate(&mut self, name: &str, g: &Tensor) -> Result<()> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter '{name}'")))?;
        if e.grad.shape() != g.shape() {
            return Err(Error::Shape(format!("gradient shape mismatch for '{name}'")));
        }
        e.grad.add_assign(g);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    /// All values concatenated in name order.
    pub fn flatten(&self) -> Vec<f64> {
        self.entries
            .values()
            .flat_map(|e| e.value.data().iter().copied())
            .collect()
    }

    pub fn flatten_grad(&self) -> Vec<f64> {
        self.entries
            .values()
            .flat_map(|e| e.grad.data().iter().copied())
            .collect()
    }

    /// Inverse of [`ParameterStore::flatten`].
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.count() {
            return Err(Error::Shape(format!(
                "flat vector of {} for {} parameters",
                flat.len(),
                self.count()
            )));
        }
        let mut offset = 0;
        for e in self.entries.values_mut() {
            let n = e.value.len();
            e.value.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Set every value to zero.
    pub fn zero_values(&mut self) {
        for e in self.entries.values_mut() {
            e.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut s = ParameterStore::new();
        s.insert("a", Tensor::zeros(&[2])).unwrap();
        assert!(s.insert("a", Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn set_checks_shape() {
        let mut s = ParameterStore::new();
        s.insert("w", Tensor::zeros(&[2, 2])).unwrap();
        assert!(s.set("w", Tensor::zeros(&[4])).is_err());
        s.set("w", Tensor::full(&[2, 2], 1.0)).unwrap();
        assert_eq!(s.value("w").unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn flatten_roundtrip_follows_name_order() {
        let mut s = ParameterStore::new();
        s.insert("b", Tensor::new(vec![1], vec![2.0]).unwrap()).unwrap();
        s.insert("a", Tensor::new(vec![2], vec![0.0, 1.0]).unwrap()).unwrap();
        assert_eq!(s.flatten(), vec![0.0, 1.0, 2.0]);
        s.assign_flat(&[5.0, 6.0, 7.0]).unwrap();
        assert_eq!(s.value("b").unwrap().data(), &[7.0]);
    }
}
