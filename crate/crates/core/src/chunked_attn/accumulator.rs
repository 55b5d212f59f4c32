//! Running online-softmax state for one query chunk.

use crate::error::{ensure, Error, Result};
use crate::refkern::MaskKind;
use crate::tensor::{axpy, dot, MatRef, Matrix};

/// How a KV chunk is masked against the query chunk it is swept for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkMaskKind {
    /// Every key visible to every query; no per-element test.
    Full,
    /// The causal boundary cuts the chunk (keys ahead of some queries).
    Diagonal,
    /// The sliding-window boundary cuts the chunk (keys behind some windows).
    PartialWindow,
}

/// Mask for one (query chunk, KV chunk) pair, in absolute token positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChunkMask {
    pub kind: ChunkMaskKind,
    pub rule: MaskKind,
    pub query_start: usize,
    pub key_start: usize,
}

impl ChunkMask {
    /// No masking at all.
    pub fn full() -> Self {
        Self {
            kind: ChunkMaskKind::Full,
            rule: MaskKind::NonCausal,
            query_start: 0,
            key_start: 0,
        }
    }

    /// Classify the mask `rule` over queries `query_start..+query_len` and keys `key_start..+key_len`.
    pub fn for_positions(
        rule: MaskKind,
        query_start: usize,
        query_len: usize,
        key_start: usize,
        key_len: usize,
    ) -> Self {
        let (q_last, k_last) = (query_start + query_len - 1, key_start + key_len - 1);
        let kind = if rule.allows(query_start, k_last) && rule.allows(q_last, key_start) {
            ChunkMaskKind::Full
        } else if k_last > query_start && rule != MaskKind::NonCausal {
            ChunkMaskKind::Diagonal
        } else {
            ChunkMaskKind::PartialWindow
        };
        Self {
            kind,
            rule,
            query_start,
            key_start,
        }
    }

    #[inline]
    fn allows(&self, q_row: usize, k_row: usize) -> bool {
        self.kind == ChunkMaskKind::Full
            || self
                .rule
                .allows(self.query_start + q_row, self.key_start + k_row)
    }
}

/// Row maxima `m`, denominators `l` and weighted-value numerators `Y`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkAccumulator {
    m: Vec<f32>,
    l: Vec<f32>,
    y: Matrix,
}

impl ChunkAccumulator {
    /// Fresh state: `m = -inf`, `l = 0`, `Y = 0`.
    pub fn new(query_rows: usize, head_dim: usize) -> Self {
        Self {
            m: vec![f32::NEG_INFINITY; query_rows],
            l: vec![0.0; query_rows],
            y: Matrix::zeros(query_rows, head_dim),
        }
    }

    pub fn rows(&self) -> usize {
        self.m.len()
    }

    pub fn head_dim(&self) -> usize {
        self.y.cols()
    }

    pub fn row_max(&self) -> &[f32] {
        &self.m
    }

    pub fn denominators(&self) -> &[f32] {
        &self.l
    }

    pub fn numerators(&self) -> &Matrix {
        &self.y
    }

    /// Fold one KV chunk into the running state.
    ///
    /// Per query row: scores `s = q.k * scale` (masked: `-inf`), new max
    /// `m' = max(max s, m)`, numerators `f = exp(s - m')`, correction
    /// `c = exp(m - m')`, then `l = c*l + sum f` and `Y = c*Y + f V`.
    /// A row with no visible key so far keeps `c = 1` and stays untouched.
    pub fn process_chunk(
        &mut self,
        q: MatRef<'_>,
        k: MatRef<'_>,
        v: MatRef<'_>,
        mask: &ChunkMask,
        scale: f32,
    ) -> Result<()> {
        let d = self.head_dim();
        ensure!(
            q.rows() == self.rows() && q.cols() == d,
            DimMismatch,
            "query chunk is {}x{}, accumulator is {}x{d}",
            q.rows(),
            q.cols(),
            self.rows()
        );
        ensure!(
            k.cols() == d && v.cols() == d && k.rows() == v.rows(),
            DimMismatch,
            "K chunk {}x{} / V chunk {}x{} do not match head dim {d}",
            k.rows(),
            k.cols(),
            v.rows(),
            v.cols()
        );
        if q.has_nan() || k.has_nan() || v.has_nan() {
            return Err(Error::NonFinite("NaN in attention chunk".into()));
        }

        let mut scores = vec![0.0f32; k.rows()];
        for r in 0..self.rows() {
            let qr = q.row(r);
            let mut row_max = f32::NEG_INFINITY;
            for (j, s) in scores.iter_mut().enumerate() {
                *s = if mask.allows(r, j) {
                    dot(qr, k.row(j)) * scale
                } else {
                    f32::NEG_INFINITY
                };
                row_max = row_max.max(*s);
            }
            let m_old = self.m[r];
            let m_new = row_max.max(m_old);
            if m_new == f32::NEG_INFINITY {
                continue;
            }
            let correction = if m_old == f32::NEG_INFINITY {
                0.0
            } else {
                (m_old - m_new).exp()
            };
            let y = self.y.row_mut(r);
            if correction != 1.0 {
                y.iter_mut().for_each(|x| *x *= correction);
            }
            let mut sum = 0.0f32;
            for (j, &s) in scores.iter().enumerate() {
                if s == f32::NEG_INFINITY {
                    continue;
                }
                let f = (s - m_new).exp();
                sum += f;
                axpy(f, v.row(j), y);
            }
            self.l[r] = correction * self.l[r] + sum;
            self.m[r] = m_new;
        }
        Ok(())
    }

    /// `O = Y / l`, row-wise.
    pub fn finalize(&self) -> Result<Matrix> {
        if let Some(r) = self.l.iter().position(|&l| l <= 0.0) {
            return Err(Error::EmptyWindow(format!(
                "query row {r} has no visible key (l = 0)"
            )));
        }
        let mut out = self.y.clone();
        for (r, &l) in self.l.iter().enumerate() {
            out.row_mut(r).iter_mut().for_each(|x| *x /= l);
        }
        Ok(out)
    }
}
