//! Multi-head chunked attention for prefill and decode, plus the read-bandwidth metric.

use rayon::prelude::*;

use super::accumulator::ChunkAccumulator;
use super::plan::{ChunkPlan, Phase};
use crate::error::{ensure, Result};
use crate::refkern::GqaLayout;
use crate::tensor::{MatRef, Matrix};

fn check_heads(
    q_heads: usize,
    k: &[Matrix],
    v: &[Matrix],
    layout: &GqaLayout,
    plan: &ChunkPlan,
) -> Result<()> {
    ensure!(
        q_heads == layout.heads && k.len() == layout.groups && v.len() == layout.groups,
        DimMismatch,
        "expected {} heads over {} KV groups, got {q_heads} heads, {} K, {} V",
        layout.heads,
        layout.groups,
        k.len(),
        v.len()
    );
    for (g, (kg, vg)) in k.iter().zip(v).enumerate() {
        ensure!(
            kg.shape() == (plan.context_len, layout.head_dim) && vg.shape() == kg.shape(),
            PlanMismatch,
            "group {g}: K {:?} / V {:?}, plan expects {}x{}",
            kg.shape(),
            vg.shape(),
            plan.context_len,
            layout.head_dim
        );
    }
    Ok(())
}

/// Attention for the queries of one head against its group's K/V, following `plan`.
///
/// `q` holds the plan's query rows (`query_offset..context_len`).
pub fn sweep_head(
    q: MatRef<'_>,
    k: &Matrix,
    v: &Matrix,
    plan: &ChunkPlan,
    scale: f32,
) -> Result<Matrix> {
    let d = k.cols();
    let mut out = Matrix::zeros(q.rows(), d);
    for qs in &plan.query_sweeps {
        let (lo, hi) = (
            qs.queries.start - plan.query_offset,
            qs.queries.end - plan.query_offset,
        );
        let q_chunk = MatRef::new(hi - lo, d, &q.as_slice()[lo * d..hi * d])?;
        let mut acc = ChunkAccumulator::new(hi - lo, d);
        for entry in &qs.sweep {
            let keys = plan.kv_chunk_range(entry.kv_chunk);
            acc.process_chunk(
                q_chunk,
                k.view_rows(keys.start, keys.end),
                v.view_rows(keys.start, keys.end),
                &plan.chunk_mask(qs, entry),
                scale,
            )?;
        }
        let o = acc.finalize()?;
        out.as_mut_slice()[lo * d..hi * d].copy_from_slice(o.as_slice());
    }
    Ok(out)
}

/// Chunked prefill attention (causal, sliding-window or non-causal per the plan).
///
/// `q_heads[h]` is `L_p x d`; `k_groups[g]`, `v_groups[g]` are `L x d` and
/// include any cached context. Head `h` reads group `h / (H/G)`. Accumulation
/// is float32 and the result is not rounded; callers storing activations in
/// bf16 round at that boundary.
pub fn flowqkv_prefill(
    q_heads: &[Matrix],
    k_groups: &[Matrix],
    v_groups: &[Matrix],
    layout: &GqaLayout,
    plan: &ChunkPlan,
    scale: f32,
) -> Result<Vec<Matrix>> {
    ensure!(
        plan.phase == Phase::Prefill,
        PlanMismatch,
        "prefill needs a prefill plan"
    );
    check_heads(q_heads.len(), k_groups, v_groups, layout, plan)?;
    for (h, q) in q_heads.iter().enumerate() {
        ensure!(
            q.shape() == (plan.query_len(), layout.head_dim),
            PlanMismatch,
            "head {h}: Q is {:?}, plan expects {}x{}",
            q.shape(),
            plan.query_len(),
            layout.head_dim
        );
    }
    q_heads
        .par_iter()
        .enumerate()
        .map(|(h, q)| {
            let g = layout.group_of_head(h);
            sweep_head(q.view(), &k_groups[g], &v_groups[g], plan, scale)
        })
        .collect()
}

/// Chunked single-token decode attention. `q` is `H x d`, one row per head.
pub fn flowkv_decode(
    q: &Matrix,
    k_groups: &[Matrix],
    v_groups: &[Matrix],
    layout: &GqaLayout,
    plan: &ChunkPlan,
    scale: f32,
) -> Result<Matrix> {
    ensure!(
        plan.phase == Phase::Decode,
        PlanMismatch,
        "decode needs a decode plan"
    );
    ensure!(
        q.cols() == layout.head_dim,
        DimMismatch,
        "query head dim {} != {}",
        q.cols(),
        layout.head_dim
    );
    check_heads(q.rows(), k_groups, v_groups, layout, plan)?;
    let rows = (0..layout.heads)
        .map(|h| {
            let g = layout.group_of_head(h);
            sweep_head(
                q.view_rows(h, h + 1),
                &k_groups[g],
                &v_groups[g],
                plan,
                scale,
            )
            .map(Matrix::into_vec)
        })
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_rows(&rows)
}

/// Sustained read bandwidth of a chunked attention run, in bytes per second:
/// `2B (1 + L/L_c) L * CT_count * H / T_d`.
///
/// `2B` counts one K and one V element of `bytes_per_elem` bytes each.
pub fn u_mem_rd(
    bytes_per_elem: f64,
    seq_len: f64,
    chunk_len: f64,
    ct_count: f64,
    heads: f64,
    elapsed_s: f64,
) -> Result<f64> {
    ensure!(
        elapsed_s > 0.0,
        InvalidConfig,
        "elapsed time must be positive"
    );
    ensure!(
        bytes_per_elem > 0.0 && seq_len > 0.0 && chunk_len > 0.0 && ct_count > 0.0 && heads > 0.0,
        InvalidConfig,
        "all bandwidth-model inputs must be positive"
    );
    Ok(2.0 * bytes_per_elem * (1.0 + seq_len / chunk_len) * seq_len * ct_count * heads / elapsed_s)
}
