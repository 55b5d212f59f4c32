//! Whole weight matrices as a row-major grid of Q4NX blocks.

use super::bf16::Bf16;
use super::block::{dequantize_block, quantize_block, Q4nxBlock, BLOCK_COLS, BLOCK_ROWS};
use crate::error::{ensure, Error, Result};
use crate::tensor::Matrix;

/// An M x K weight matrix zero-padded to multiples of 32 x 256 and stored as blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Q4nxTensor {
    rows: usize,
    cols: usize,
    logical_rows: usize,
    logical_cols: usize,
    blocks: Vec<Q4nxBlock>,
}

impl Q4nxTensor {
    pub fn from_blocks(
        logical_rows: usize,
        logical_cols: usize,
        blocks: Vec<Q4nxBlock>,
    ) -> Result<Self> {
        let rows = padded(logical_rows, BLOCK_ROWS);
        let cols = padded(logical_cols, BLOCK_COLS);
        ensure!(
            blocks.len() == (rows / BLOCK_ROWS) * (cols / BLOCK_COLS),
            Format,
            "{logical_rows}x{logical_cols} needs {} blocks, got {}",
            (rows / BLOCK_ROWS) * (cols / BLOCK_COLS),
            blocks.len()
        );
        Ok(Self {
            rows,
            cols,
            logical_rows,
            logical_cols,
            blocks,
        })
    }

    /// Padded row count (multiple of 32).
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Padded column count (multiple of 256).
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn logical_rows(&self) -> usize {
        self.logical_rows
    }

    pub fn logical_cols(&self) -> usize {
        self.logical_cols
    }

    pub fn block_rows(&self) -> usize {
        self.rows / BLOCK_ROWS
    }

    pub fn block_cols(&self) -> usize {
        self.cols / BLOCK_COLS
    }

    pub fn blocks(&self) -> &[Q4nxBlock] {
        &self.blocks
    }

    #[inline]
    pub fn block(&self, block_row: usize, block_col: usize) -> &Q4nxBlock {
        &self.blocks[block_row * self.block_cols() + block_col]
    }
}

#[inline]
fn padded(n: usize, to: usize) -> usize {
    n.div_ceil(to).max(1) * to
}

/// Quantize an M x K matrix, zero-padding to the block grid.
pub fn quantize_tensor(w: &Matrix) -> Result<Q4nxTensor> {
    if !w.is_finite() {
        return Err(Error::NonFinite("weight matrix contains NaN or inf".into()));
    }
    let (m, k) = w.shape();
    let rows = padded(m, BLOCK_ROWS);
    let cols = padded(k, BLOCK_COLS);
    let mut blocks = Vec::with_capacity((rows / BLOCK_ROWS) * (cols / BLOCK_COLS));
    for br in 0..rows / BLOCK_ROWS {
        for bc in 0..cols / BLOCK_COLS {
            let tile = Matrix::from_fn(BLOCK_ROWS, BLOCK_COLS, |r, c| {
                let (gr, gc) = (br * BLOCK_ROWS + r, bc * BLOCK_COLS + c);
                if gr < m && gc < k {
                    w.get(gr, gc)
                } else {
                    0.0
                }
            });
            blocks.push(quantize_block(&tile)?);
        }
    }
    Q4nxTensor::from_blocks(m, k, blocks)
}

/// Dequantize the full padded grid.
pub fn dequantize_padded(t: &Q4nxTensor) -> Matrix<Bf16> {
    let mut out = Matrix::zeros(t.rows(), t.cols());
    for br in 0..t.block_rows() {
        for bc in 0..t.block_cols() {
            let tile = dequantize_block(t.block(br, bc));
            for r in 0..BLOCK_ROWS {
                let dst = &mut out.row_mut(br * BLOCK_ROWS + r)[bc * BLOCK_COLS..][..BLOCK_COLS];
                dst.copy_from_slice(tile.row(r));
            }
        }
    }
    out
}

/// Dequantize and truncate back to the logical dimensions.
pub fn dequantize_tensor(t: &Q4nxTensor) -> Matrix<Bf16> {
    let full = dequantize_padded(t);
    Matrix::from_fn(t.logical_rows(), t.logical_cols(), |r, c| full.get(r, c))
}
