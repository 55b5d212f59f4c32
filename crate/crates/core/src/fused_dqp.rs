//! Fused dequantize-and-project matrix-vector product over Q4NX weights.
//!
//! Block-rows of the weight tensor are split into contiguous stripes, one per
//! worker. Each worker walks its blocks left to right and, inside a block, the
//! 16x8 sub-blocks in row-major order, dequantizing each element on the fly and
//! accumulating into a float32 accumulator per output row. Every output row is
//! owned by one worker and sees its columns in ascending order, so the result
//! does not depend on the worker count.

use std::ops::Range;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{ensure, Result};
use crate::q4nx::{Bf16, Q4nxTensor, BLOCK_BYTES, BLOCK_COLS, BLOCK_ROWS, GROUP_SIZE};

pub const SUBBLOCK_ROWS: usize = 16;
pub const SUBBLOCK_COLS: usize = 8;
/// Bytes of one activation segment (one block's worth of bf16 inputs).
pub const SEGMENT_BYTES: usize = BLOCK_COLS * 2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FusedDqpPlan {
    worker_count: usize,
    block_rows: usize,
    stripes: Vec<Range<usize>>,
}

impl FusedDqpPlan {
    /// Balanced contiguous stripes; the first `block_rows % workers` stripes get one extra row.
    /// Workers beyond the block-row count receive empty stripes.
    pub fn new(worker_count: usize, block_rows: usize) -> Result<Self> {
        ensure!(worker_count >= 1, InvalidConfig, "need at least one worker");
        let base = block_rows / worker_count;
        let extra = block_rows % worker_count;
        let mut start = 0;
        let stripes = (0..worker_count)
            .map(|w| {
                let len = base + usize::from(w < extra);
                let r = start..start + len;
                start += len;
                r
            })
            .collect();
        Ok(Self {
            worker_count,
            block_rows,
            stripes,
        })
    }

    pub fn for_tensor(worker_count: usize, w: &Q4nxTensor) -> Result<Self> {
        Self::new(worker_count, w.block_rows())
    }

    pub fn worker_count(&self) -> usize {
        self.worker_count
    }

    pub fn block_rows(&self) -> usize {
        self.block_rows
    }

    /// Block-rows owned by each worker.
    pub fn stripes(&self) -> &[Range<usize>] {
        &self.stripes
    }

    pub fn owner_of(&self, block_row: usize) -> Option<usize> {
        self.stripes.iter().position(|s| s.contains(&block_row))
    }
}

fn check_inputs(w: &Q4nxTensor, a_len: usize, plan: &FusedDqpPlan) -> Result<()> {
    ensure!(
        a_len == w.logical_cols() || a_len == w.cols(),
        DimMismatch,
        "activation has {a_len} entries, weights have {} columns ({} padded)",
        w.logical_cols(),
        w.cols()
    );
    ensure!(
        plan.block_rows == w.block_rows(),
        PlanMismatch,
        "plan covers {} block-rows, tensor has {}",
        plan.block_rows,
        w.block_rows()
    );
    Ok(())
}

/// Accumulate one block's contribution into `acc` (32 rows), sub-block by sub-block.
fn accumulate_block(w: &Q4nxTensor, br: usize, bc: usize, a_seg: &[f32], acc: &mut [f32]) {
    let block = w.block(br, bc);
    let (scales, mins) = (block.scales(), block.mins());
    for sr in (0..BLOCK_ROWS).step_by(SUBBLOCK_ROWS) {
        for sc in (0..BLOCK_COLS).step_by(SUBBLOCK_COLS) {
            for r in sr..sr + SUBBLOCK_ROWS {
                // a sub-block row never crosses a group boundary
                let g = r * (BLOCK_COLS / GROUP_SIZE) + sc / GROUP_SIZE;
                let (d, m) = (scales[g].to_f32(), mins[g].to_f32());
                let mut y = acc[r];
                for c in sc..sc + SUBBLOCK_COLS {
                    let wq = Bf16::from_f32(d * f32::from(block.code(r, c)) + m).to_f32();
                    y += wq * a_seg[c];
                }
                acc[r] = y;
            }
        }
    }
}

/// Float32 accumulators `y_acc = dequant(W) a`, one per logical output row.
///
/// `a` may have the logical or the padded column count; padding is zero either way.
pub fn fused_dqp_accumulate(w: &Q4nxTensor, a: &[Bf16], plan: &FusedDqpPlan) -> Result<Vec<f32>> {
    check_inputs(w, a.len(), plan)?;
    let mut a_pad = vec![0.0f32; w.cols()];
    for (dst, src) in a_pad.iter_mut().zip(a) {
        *dst = src.to_f32();
    }
    let stripe_out: Vec<Vec<f32>> = plan
        .stripes
        .par_iter()
        .map(|stripe| {
            let mut out = vec![0.0f32; stripe.len() * BLOCK_ROWS];
            for (i, br) in stripe.clone().enumerate() {
                let acc = &mut out[i * BLOCK_ROWS..(i + 1) * BLOCK_ROWS];
                for bc in 0..w.block_cols() {
                    accumulate_block(
                        w,
                        br,
                        bc,
                        &a_pad[bc * BLOCK_COLS..(bc + 1) * BLOCK_COLS],
                        acc,
                    );
                }
            }
            out
        })
        .collect();
    let mut y: Vec<f32> = stripe_out.concat();
    y.truncate(w.logical_rows());
    Ok(y)
}

/// Fused projection with the output rounded to bf16.
pub fn fused_dqp_mvm(w: &Q4nxTensor, a: &[Bf16], plan: &FusedDqpPlan) -> Result<Vec<Bf16>> {
    Ok(fused_dqp_accumulate(w, a, plan)?
        .into_iter()
        .map(Bf16::from_f32)
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transfer {
    /// One activation segment, fetched once and delivered to every worker.
    Segment { block_col: usize, bytes: usize },
    /// One weight block, fetched by the worker that owns its block-row.
    Block {
        worker: usize,
        block_row: usize,
        block_col: usize,
        bytes: usize,
    },
}

impl Transfer {
    pub fn bytes(&self) -> usize {
        match *self {
            Transfer::Segment { bytes, .. } | Transfer::Block { bytes, .. } => bytes,
        }
    }
}

/// DRAM fetches for one projection over an `m x k` weight, in issue order.
///
/// For each block column the activation segment is broadcast first, then each
/// worker fetches its blocks in that column. Workers keep the segment for all
/// of their block-rows, so every segment and every block is fetched once.
pub fn broadcast_schedule(plan: &FusedDqpPlan, m: usize, k: usize) -> Result<Vec<Transfer>> {
    let block_rows = m.div_ceil(BLOCK_ROWS).max(1);
    let block_cols = k.div_ceil(BLOCK_COLS).max(1);
    ensure!(
        block_rows == plan.block_rows,
        PlanMismatch,
        "{m} rows need {block_rows} block-rows, plan has {}",
        plan.block_rows
    );
    let mut out = Vec::with_capacity(block_cols * (block_rows + 1));
    for block_col in 0..block_cols {
        out.push(Transfer::Segment {
            block_col,
            bytes: SEGMENT_BYTES,
        });
        for (worker, stripe) in plan.stripes.iter().enumerate() {
            out.extend(stripe.clone().map(|block_row| Transfer::Block {
                worker,
                block_row,
                block_col,
                bytes: BLOCK_BYTES,
            }));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::q4nx::{dequantize_tensor, quantize_tensor, Q4nxBlock};
    use crate::refkern::matvec_ref;
    use crate::tensor::{max_rel_error, Matrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_case(rng: &mut ChaCha8Rng, m: usize, k: usize) -> (Q4nxTensor, Vec<Bf16>) {
        let w = Matrix::from_fn(m, k, |_, _| rng.gen_range(-1.0f32..1.0));
        let a = (0..k)
            .map(|_| Bf16::from_f32(rng.gen_range(-2.0f32..2.0)))
            .collect();
        (quantize_tensor(&w).unwrap(), a)
    }

    #[test]
    fn stripes_are_balanced_and_contiguous() {
        let plan = FusedDqpPlan::new(4, 8).unwrap();
        assert_eq!(plan.stripes(), &[0..2, 2..4, 4..6, 6..8]);
        let plan = FusedDqpPlan::new(3, 7).unwrap();
        assert_eq!(plan.stripes(), &[0..3, 3..5, 5..7]);
        let plan = FusedDqpPlan::new(16, 2).unwrap();
        assert_eq!(plan.stripes().iter().filter(|s| !s.is_empty()).count(), 2);
        for br in 0..2 {
            assert!(plan.owner_of(br).is_some());
        }
        assert!(FusedDqpPlan::new(0, 4).is_err());
    }

    #[test]
    fn zero_weights_give_zero() {
        let w = Q4nxTensor::from_blocks(32, 256, vec![Q4nxBlock::zeroed()]).unwrap();
        let a = vec![Bf16::from_f32(3.0); 256];
        let y = fused_dqp_mvm(&w, &a, &FusedDqpPlan::for_tensor(1, &w).unwrap()).unwrap();
        assert!(y.iter().all(|v| v.to_f32() == 0.0));
    }

    #[test]
    fn one_hot_selects_a_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (w, _) = random_case(&mut rng, 32, 256);
        let dense = dequantize_tensor(&w);
        let plan = FusedDqpPlan::for_tensor(1, &w).unwrap();
        for j in [0, 7, 100, 255] {
            let mut a = vec![Bf16::ZERO; 256];
            a[j] = Bf16::ONE;
            let y = fused_dqp_mvm(&w, &a, &plan).unwrap();
            for r in 0..32 {
                assert_eq!(y[r], dense.get(r, j));
            }
        }
    }

    #[test]
    fn matches_dequantize_then_multiply() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (w, a) = random_case(&mut rng, 128, 512);
        let dense = dequantize_tensor(&w).to_f32();
        let a32: Vec<f32> = a.iter().map(|v| v.to_f32()).collect();
        let oracle = matvec_ref(&dense, &a32).unwrap();
        let y = fused_dqp_accumulate(&w, &a, &FusedDqpPlan::for_tensor(4, &w).unwrap()).unwrap();
        assert!(max_rel_error(&y, &oracle) <= 1e-4);
    }

    #[test]
    fn ragged_shapes_and_padded_activations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (w, a) = random_case(&mut rng, 45, 300);
        let plan = FusedDqpPlan::for_tensor(2, &w).unwrap();
        let y = fused_dqp_accumulate(&w, &a, &plan).unwrap();
        assert_eq!(y.len(), 45);
        let mut a_pad = a.clone();
        a_pad.resize(w.cols(), Bf16::ZERO);
        assert_eq!(fused_dqp_accumulate(&w, &a_pad, &plan).unwrap(), y);
        assert!(fused_dqp_accumulate(&w, &a[..299], &plan).is_err());
        let wrong = FusedDqpPlan::new(2, 5).unwrap();
        assert!(fused_dqp_accumulate(&w, &a, &wrong).is_err());
    }

    #[test]
    fn schedule_fetches_everything_once() {
        let plan = FusedDqpPlan::new(1, 1).unwrap();
        let s = broadcast_schedule(&plan, 32, 256).unwrap();
        assert_eq!(s.len(), 2);
        assert!(matches!(s[0], Transfer::Segment { block_col: 0, .. }));

        let plan = FusedDqpPlan::new(4, 8).unwrap();
        let s = broadcast_schedule(&plan, 256, 1024).unwrap();
        let mut seen = std::collections::HashSet::new();
        for t in &s {
            if let Transfer::Block {
                worker,
                block_row,
                block_col,
                ..
            } = *t
            {
                assert_eq!(worker, block_row / 2);
                assert!(seen.insert((block_row, block_col)));
            }
        }
        assert_eq!(seen.len(), 8 * 4);
        let w_bytes: usize = s
            .iter()
            .filter(|t| matches!(t, Transfer::Block { .. }))
            .map(Transfer::bytes)
            .sum();
        assert_eq!(w_bytes, 8 * 4 * 5120);
        assert!(broadcast_schedule(&plan, 32, 256).is_err());
    }
}
