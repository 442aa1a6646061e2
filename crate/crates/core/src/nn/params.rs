use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParameterSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    /// Rows that never receive updates (e.g. the PAD embedding row).
    pub frozen_rows: Vec<usize>,
}

/// Named trainable matrices with gradient buffers of the same shape.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    entries: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let grad = Matrix::zeros(value.rows(), value.cols());
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(Parameter {
            name,
            value,
            grad,
            frozen_rows: Vec::new(),
        });
        Ok(ParamId(id))
    }

    pub fn freeze_row(&mut self, id: ParamId, row: usize) {
        let p = &mut self.entries[id.0];
        p.value.row_mut(row).fill(0.0);
        if !p.frozen_rows.contains(&row) {
            p.frozen_rows.push(row);
        }
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))
    }

    /// Looks up `name` and checks its shape.
    pub fn expect(&self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        let id = self.id(name)?;
        let shape = self.value(id).shape();
        if shape != (rows, cols) {
            return Err(Error::dim(
                "parameter shape",
                format!("{name} expected {rows}x{cols}"),
                format!("found {}x{}", shape.0, shape.1),
            ));
        }
        Ok(id)
    }

    #[inline]
    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].value
    }

    #[inline]
    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.entries[id.0].value
    }

    #[inline]
    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].grad
    }

    #[inline]
    pub fn grad_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.entries[id.0].grad
    }

    /// Value and gradient of the same parameter, borrowed together.
    pub fn split_mut(&mut self, id: ParamId) -> (&Matrix, &mut Matrix) {
        let p = &mut self.entries[id.0];
        (&p.value, &mut p.grad)
    }

    /// Value of `src` alongside the gradient buffer of a different parameter `dst`.
    pub fn value_and_grad(&mut self, src: ParamId, dst: ParamId) -> (&Matrix, &mut Matrix) {
        assert_ne!(src, dst, "value_and_grad needs distinct parameters");
        if src.0 < dst.0 {
            let (a, b) = self.entries.split_at_mut(dst.0);
            (&a[src.0].value, &mut b[0].grad)
        } else {
            let (a, b) = self.entries.split_at_mut(src.0);
            (&b[0].value, &mut a[dst.0].grad)
        }
    }

    pub fn entries(&self) -> &[Parameter] {
        &self.entries
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [Parameter] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.entries {
            p.grad.fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|p| p.grad.values())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Copies values (not gradients) from `other`, which must have the same layout.
    pub fn copy_values_from(&mut self, other: &ParameterSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::dim(
                "parameter copy",
                self.entries.len(),
                other.entries.len(),
            ));
        }
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(Error::dim("parameter copy", &dst.name, &src.name));
            }
            dst.value.values_mut().copy_from_slice(src.value.values());
        }
        Ok(())
    }

    pub fn to_records(&self) -> Vec<ParamRecord> {
        self.entries
            .iter()
            .map(|p| ParamRecord {
                name: p.name.clone(),
                rows: p.value.rows(),
                cols: p.value.cols(),
                frozen_rows: p.frozen_rows.clone(),
                values: p.value.values().to_vec(),
            })
            .collect()
    }

    pub fn from_records(records: Vec<ParamRecord>) -> Result<Self> {
        let mut set = ParameterSet::new();
        for r in records {
            let id = set.add(r.name, Matrix::from_vec(r.rows, r.cols, r.values)?)?;
            for row in r.frozen_rows {
                if row >= set.value(id).rows() {
                    return Err(Error::dim("frozen row", row, set.value(id).rows()));
                }
                set.freeze_row(id, row);
            }
        }
        Ok(set)
    }
}

/// Shape-tagged serialized form of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frozen_rows: Vec<usize>,
    pub values: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut p = ParameterSet::new();
        p.add("w", Matrix::zeros(1, 1)).unwrap();
        assert!(p.add("w", Matrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn grad_matches_value_shape() {
        let mut p = ParameterSet::new();
        let id = p.add("w", Matrix::zeros(3, 2)).unwrap();
        assert_eq!(p.grad(id).shape(), (3, 2));
    }

    #[test]
    fn record_round_trip() {
        let mut p = ParameterSet::new();
        let id = p
            .add("e", Matrix::from_vec(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap())
            .unwrap();
        p.freeze_row(id, 0);
        let q = ParameterSet::from_records(p.to_records()).unwrap();
        assert_eq!(p, q);
    }
}
