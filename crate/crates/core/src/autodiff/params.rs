use std::collections::HashMap;

use super::AutodiffError;

/// Index of a parameter inside its [`ParamStore`].
pub type ParamId = usize;

/// A trainable weight tensor with its optimizer slots.
///
/// Values are stored row-major; vectors use `cols == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub value: Vec<f64>,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub max_second_moment: Vec<f64>,
}

impl Parameter {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Registry of every trainable weight. Names are unique.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        value: Vec<f64>,
    ) -> Result<ParamId, AutodiffError> {
        let name = name.into();
        if value.len() != rows * cols {
            return Err(AutodiffError::ShapeMismatch {
                context: format!("parameter {name}"),
                expected: rows * cols,
                found: value.len(),
            });
        }
        if self.index.contains_key(&name) {
            return Err(AutodiffError::DuplicateParameter(name));
        }
        let n = value.len();
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            rows,
            cols,
            value,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            max_second_moment: vec![0.0; n],
        });
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Parameter::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter)> {
        self.params.iter_mut().enumerate()
    }

    /// Overwrites values (not optimizer slots) from a store with identical layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) {
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            dst.value.copy_from_slice(&src.value);
        }
    }
}

/// Per-parameter gradient accumulators, aligned with a [`ParamStore`].
///
/// Cleared slots keep their buffers, so a recycled `Gradients` does not
/// allocate again.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    slots: Vec<Vec<f64>>,
    active: Vec<bool>,
}

impl PartialEq for Gradients {
    fn eq(&self, other: &Self) -> bool {
        let n = self.slots.len().max(other.slots.len());
        (0..n).all(|id| self.get(id) == other.get(id))
    }
}

impl Gradients {
    pub fn new(num_params: usize) -> Self {
        Self {
            slots: vec![Vec::new(); num_params],
            active: vec![false; num_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        match self.active.get(id) {
            Some(true) => Some(&self.slots[id]),
            _ => None,
        }
    }

    fn ensure(&mut self, id: ParamId) {
        if id >= self.slots.len() {
            self.slots.resize(id + 1, Vec::new());
            self.active.resize(id + 1, false);
        }
    }

    /// Slot for `id`, created zero-filled with `len` entries if absent.
    pub fn slot_mut(&mut self, id: ParamId, len: usize) -> &mut [f64] {
        self.ensure(id);
        if !self.active[id] {
            let buf = &mut self.slots[id];
            buf.clear();
            buf.resize(len, 0.0);
            self.active[id] = true;
        }
        &mut self.slots[id]
    }

    /// Slot for `id` with unspecified contents; the caller overwrites all of it.
    pub fn overwrite_mut(&mut self, id: ParamId, len: usize) -> &mut [f64] {
        self.ensure(id);
        let buf = &mut self.slots[id];
        if buf.len() != len {
            buf.clear();
            buf.resize(len, 0.0);
        }
        self.active[id] = true;
        buf
    }

    pub fn add(&mut self, id: ParamId, grad: &[f64]) {
        let slot = self.slot_mut(id, grad.len());
        for (s, g) in slot.iter_mut().zip(grad) {
            *s += g;
        }
    }

    /// Replaces a slot.
    pub fn set(&mut self, id: ParamId, grad: Vec<f64>) {
        self.ensure(id);
        self.slots[id] = grad;
        self.active[id] = true;
    }

    /// `self[id] += scale * other[id]` for every slot present in `other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (id, g) in other.iter() {
            let dst = self.slot_mut(id, g.len());
            for (d, v) in dst.iter_mut().zip(g) {
                *d += scale * v;
            }
        }
    }

    pub fn clear(&mut self) {
        self.active.iter_mut().for_each(|a| *a = false);
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.slots
            .iter()
            .zip(&self.active)
            .enumerate()
            .filter_map(|(id, (s, a))| a.then_some((id, s.as_slice())))
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|(_, g)| g.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.iter()
            .flat_map(|(_, g)| g.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}
