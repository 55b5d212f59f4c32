//! Append-only per-layer KV cache.

use crate::error::{ensure, Result};
use crate::tensor::Matrix;

/// Keys and values of one layer, one `len x d` matrix per KV group, holding bf16 values.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerCache {
    keys: Vec<Matrix>,
    values: Vec<Matrix>,
}

impl LayerCache {
    pub fn new(groups: usize, head_dim: usize) -> Self {
        Self {
            keys: vec![Matrix::zeros(0, head_dim); groups],
            values: vec![Matrix::zeros(0, head_dim); groups],
        }
    }

    /// Cache with existing contents; all groups must share one length and width.
    pub fn from_parts(keys: Vec<Matrix>, values: Vec<Matrix>) -> Result<Self> {
        ensure!(
            !keys.is_empty() && keys.len() == values.len(),
            DimMismatch,
            "{} key groups, {} value groups",
            keys.len(),
            values.len()
        );
        let shape = keys[0].shape();
        ensure!(
            keys.iter().chain(&values).all(|m| m.shape() == shape),
            DimMismatch,
            "all cached groups must be {shape:?}"
        );
        Ok(Self { keys, values })
    }

    pub fn len(&self) -> usize {
        self.keys[0].rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn groups(&self) -> usize {
        self.keys.len()
    }

    pub fn keys(&self) -> &[Matrix] {
        &self.keys
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    /// Append new rows per group. Existing rows are never touched.
    pub fn append(&mut self, keys: &[Matrix], values: &[Matrix]) -> Result<()> {
        ensure!(
            keys.len() == self.groups() && values.len() == self.groups(),
            DimMismatch,
            "cache has {} groups, got {} keys and {} values",
            self.groups(),
            keys.len(),
            values.len()
        );
        let rows = keys[0].rows();
        ensure!(
            keys.iter().chain(values).all(|m| m.rows() == rows),
            DimMismatch,
            "every group must append the same number of rows"
        );
        for (dst, src) in self.keys.iter_mut().zip(keys) {
            dst.append_rows(src)?;
        }
        for (dst, src) in self.values.iter_mut().zip(values) {
            dst.append_rows(src)?;
        }
        Ok(())
    }
}
