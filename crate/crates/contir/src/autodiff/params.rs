//! Named parameter collections and gradient maps.

use std::collections::BTreeMap;

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Named map of trainable tensors. Iteration order is lexicographic by
/// name, so flattening and optimizer sweeps are deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    map: BTreeMap<String, Tensor>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a parameter; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        let prev = self.map.insert(name.clone(), value);
        assert!(prev.is_none(), "parameter {name:?} inserted twice");
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.map.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.map.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn entry_count(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }

    /// Flatten all parameters into one vector, in name order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.entry_count());
        for value in self.map.values() {
            out.extend_from_slice(value.data());
        }
        out
    }

    /// Rebuild a set with this set's names and shapes from a flat vector.
    ///
    /// Panics when the vector length disagrees with [`entry_count`].
    ///
    /// [`entry_count`]: ParameterSet::entry_count
    pub fn unflatten(&self, flat: &[f64]) -> ParameterSet {
        assert_eq!(flat.len(), self.entry_count(), "unflatten length mismatch");
        let mut map = BTreeMap::new();
        let mut offset = 0;
        for (name, value) in &self.map {
            let n = value.len();
            map.insert(
                name.clone(),
                Tensor::new(value.shape().to_vec(), flat[offset..offset + n].to_vec()),
            );
            offset += n;
        }
        ParameterSet { map }
    }

    /// Register every parameter on a tape and return the variable handles.
    pub fn attach(&self, tape: &Tape) -> TapeParams {
        let vars = self
            .map
            .iter()
            .map(|(name, value)| (name.clone(), tape.param(name, value)))
            .collect();
        TapeParams { vars }
    }
}

impl FromIterator<(String, Tensor)> for ParameterSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        let mut set = ParameterSet::new();
        for (name, value) in iter {
            set.insert(name, value);
        }
        set
    }
}

/// Tape-side handles for a registered [`ParameterSet`].
pub struct TapeParams {
    vars: BTreeMap<String, Var>,
}

impl TapeParams {
    /// Handle for a parameter; panics when the name is unknown.
    pub fn var(&self, name: &str) -> &Var {
        self.vars
            .get(name)
            .unwrap_or_else(|| panic!("no parameter named {name:?} on this tape"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// Per-parameter gradients keyed by name, mirroring a [`ParameterSet`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientMap {
    map: BTreeMap<String, Tensor>,
}

impl GradientMap {
    pub fn from_map(map: BTreeMap<String, Tensor>) -> Self {
        GradientMap { map }
    }

    pub fn zeros_like(params: &ParameterSet) -> Self {
        let map = params
            .iter()
            .map(|(name, value)| (name.clone(), Tensor::zeros(value.shape())))
            .collect();
        GradientMap { map }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.map.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn iter_mut_pairs(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.map.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Flatten in name order; mirrors [`ParameterSet::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for value in self.map.values() {
            out.extend_from_slice(value.data());
        }
        out
    }

    /// Rebuild a gradient map shaped like `template` from a flat vector.
    pub fn unflatten_like(template: &ParameterSet, flat: &[f64]) -> GradientMap {
        let set = template.unflatten(flat);
        GradientMap {
            map: set.iter().map(|(n, t)| (n.clone(), t.clone())).collect(),
        }
    }
}
