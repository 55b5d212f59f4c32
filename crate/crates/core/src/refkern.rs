//! Naive float32 reference kernels.
//!
//! These are the oracles every optimized kernel is checked against: plain loops,
//! full score rows, no chunking. Masked scores are `-inf` before the softmax.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::tensor::Matrix;

/// Which key positions a query may attend to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    CausalFull,
    /// Causal, restricted to the most recent `window` positions (inclusive of self).
    SlidingWindow(usize),
    NonCausal,
}

impl MaskKind {
    pub fn validate(self) -> Result<Self> {
        if let MaskKind::SlidingWindow(w) = self {
            ensure!(w >= 1, InvalidConfig, "sliding window must be at least 1");
        }
        Ok(self)
    }

    /// Whether the query at 0-based absolute position `query_pos` may see `key_pos`.
    #[inline]
    pub fn allows(self, query_pos: usize, key_pos: usize) -> bool {
        match self {
            MaskKind::CausalFull => key_pos <= query_pos,
            MaskKind::SlidingWindow(w) => key_pos <= query_pos && key_pos + w > query_pos,
            MaskKind::NonCausal => true,
        }
    }

    /// Half-open range of visible key positions within a context of `len` keys.
    pub fn visible_range(self, query_pos: usize, len: usize) -> std::ops::Range<usize> {
        match self {
            MaskKind::CausalFull => 0..(query_pos + 1).min(len),
            MaskKind::SlidingWindow(w) => {
                (query_pos + 1).saturating_sub(w).min(len)..(query_pos + 1).min(len)
            }
            MaskKind::NonCausal => 0..len,
        }
    }
}

/// A mask plus the absolute position of the first query row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    pub kind: MaskKind,
    pub query_offset: usize,
}

impl AttentionMask {
    pub fn new(kind: MaskKind, query_offset: usize) -> Self {
        Self { kind, query_offset }
    }

    /// Queries are the last `query_len` positions of a `context_len` context.
    pub fn trailing(kind: MaskKind, context_len: usize, query_len: usize) -> Self {
        Self::new(kind, context_len.saturating_sub(query_len))
    }
}

/// Query heads, KV groups and head dimension for grouped-query attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GqaLayout {
    pub heads: usize,
    pub groups: usize,
    pub head_dim: usize,
}

impl GqaLayout {
    pub fn new(heads: usize, groups: usize, head_dim: usize) -> Result<Self> {
        ensure!(
            heads >= 1 && groups >= 1 && head_dim >= 1,
            InvalidConfig,
            "heads, groups and head_dim must be positive"
        );
        ensure!(
            heads % groups == 0,
            InvalidConfig,
            "{heads} heads cannot be split evenly over {groups} KV groups"
        );
        Ok(Self {
            heads,
            groups,
            head_dim,
        })
    }

    pub fn heads_per_group(&self) -> usize {
        self.heads / self.groups
    }

    /// KV group serving query head `h`.
    #[inline]
    pub fn group_of_head(&self, h: usize) -> usize {
        h / self.heads_per_group()
    }
}

/// `1 / sqrt(d)`.
pub fn default_scale(head_dim: usize) -> f32 {
    1.0 / (head_dim as f32).sqrt()
}

fn ref_dot(a: &[f32], b: &[f32]) -> f32 {
    // four interleaved partial sums; plain enough to trust, fast enough for large grids
    let mut s = [0.0f32; 4];
    let n4 = a.len() / 4 * 4;
    let mut i = 0;
    while i < n4 {
        s[0] += a[i] * b[i];
        s[1] += a[i + 1] * b[i + 1];
        s[2] += a[i + 2] * b[i + 2];
        s[3] += a[i + 3] * b[i + 3];
        i += 4;
    }
    let mut total = (s[0] + s[1]) + (s[2] + s[3]);
    while i < a.len() {
        total += a[i] * b[i];
        i += 1;
    }
    total
}

/// Triple-loop product; each output accumulates over the inner dimension in ascending order.
pub fn matmul_ref(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    ensure!(
        a.cols() == b.rows(),
        DimMismatch,
        "cannot multiply {:?} by {:?}",
        a.shape(),
        b.shape()
    );
    let mut c = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut acc = 0.0f32;
            for k in 0..a.cols() {
                acc += a.get(i, k) * b.get(k, j);
            }
            c.set(i, j, acc);
        }
    }
    Ok(c)
}

/// `W x` with ascending-order accumulation per output.
pub fn matvec_ref(w: &Matrix, x: &[f32]) -> Result<Vec<f32>> {
    ensure!(
        w.cols() == x.len(),
        DimMismatch,
        "matrix has {} columns, vector has {}",
        w.cols(),
        x.len()
    );
    Ok((0..w.rows())
        .map(|r| {
            let mut acc = 0.0f32;
            for (a, b) in w.row(r).iter().zip(x) {
                acc += a * b;
            }
            acc
        })
        .collect())
}

/// Max-subtracted softmax. `-inf` entries get probability 0.
pub fn softmax_ref(row: &[f32]) -> Result<Vec<f32>> {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if max == f32::NEG_INFINITY {
        return Err(Error::EmptyWindow(
            "every score in the row is masked".into(),
        ));
    }
    ensure!(!max.is_nan(), NonFinite, "NaN score");
    let exps: Vec<f32> = row.iter().map(|&s| (s - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

fn check_qkv(q_cols: usize, k: &Matrix, v: &Matrix) -> Result<()> {
    ensure!(
        k.cols() == q_cols && v.cols() == q_cols,
        DimMismatch,
        "head dims differ: q {q_cols}, k {}, v {}",
        k.cols(),
        v.cols()
    );
    ensure!(
        k.rows() == v.rows(),
        DimMismatch,
        "K has {} rows, V has {}",
        k.rows(),
        v.rows()
    );
    Ok(())
}

/// Attention for one query row at absolute position `pos` against full K/V.
fn attend_row(
    q: &[f32],
    k: &Matrix,
    v: &Matrix,
    kind: MaskKind,
    pos: usize,
    scale: f32,
) -> Result<Vec<f32>> {
    let scores: Vec<f32> = (0..k.rows())
        .map(|j| {
            if kind.allows(pos, j) {
                ref_dot(q, k.row(j)) * scale
            } else {
                f32::NEG_INFINITY
            }
        })
        .collect();
    let p = softmax_ref(&scores)
        .map_err(|_| Error::EmptyWindow(format!("query at position {pos} sees no keys")))?;
    let mut out = vec![0.0f32; v.cols()];
    for (j, &pj) in p.iter().enumerate() {
        if pj != 0.0 {
            for (o, &x) in out.iter_mut().zip(v.row(j)) {
                *o += pj * x;
            }
        }
    }
    Ok(out)
}

/// Scaled dot-product attention over the whole context.
pub fn attention_ref(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    mask: &AttentionMask,
    scale: f32,
) -> Result<Matrix> {
    check_qkv(q.cols(), k, v)?;
    mask.kind.validate()?;
    let rows = (0..q.rows())
        .map(|i| attend_row(q.row(i), k, v, mask.kind, mask.query_offset + i, scale))
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, q.cols()));
    }
    Matrix::from_rows(&rows)
}

/// Single-query attention at step `t = K.rows()`; the query sits at the last position.
pub fn decode_attention_ref(
    q: &[f32],
    k: &Matrix,
    v: &Matrix,
    kind: MaskKind,
    scale: f32,
) -> Result<Vec<f32>> {
    ensure!(k.rows() >= 1, EmptyWindow, "decode with an empty KV cache");
    check_qkv(q.len(), k, v)?;
    kind.validate()?;
    attend_row(q, k, v, kind, k.rows() - 1, scale)
}

/// Grouped-query attention: head `h` attends against KV group `h / (H/G)`.
pub fn gqa_attention_ref(
    q_heads: &[Matrix],
    k_groups: &[Matrix],
    v_groups: &[Matrix],
    layout: &GqaLayout,
    mask: &AttentionMask,
    scale: f32,
) -> Result<Vec<Matrix>> {
    ensure!(
        q_heads.len() == layout.heads
            && k_groups.len() == layout.groups
            && v_groups.len() == layout.groups,
        DimMismatch,
        "expected {} query heads and {} KV groups, got {} / {} / {}",
        layout.heads,
        layout.groups,
        q_heads.len(),
        k_groups.len(),
        v_groups.len()
    );
    q_heads
        .iter()
        .enumerate()
        .map(|(h, q)| {
            let g = layout.group_of_head(h);
            attention_ref(q, &k_groups[g], &v_groups[g], mask, scale)
        })
        .collect()
}
