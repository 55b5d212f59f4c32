//! KV chunk sweep schedules.
//!
//! Keys are chunked on a fixed grid of `chunk_len` positions starting at 0, and
//! query chunks sit on the same grid, so for causal attention query chunk `c`
//! sweeps KV chunks `0..=c` with chunk `c` on the diagonal. Sweeps always run
//! left to right.

use std::ops::Range;

use serde::Serialize;

use super::accumulator::{ChunkMask, ChunkMaskKind};
use crate::error::{ensure, Result};
use crate::refkern::MaskKind;

pub const DEFAULT_PREFILL_CHUNK: usize = 256;
pub const DEFAULT_DECODE_CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Prefill,
    /// One query row: the newest position.
    Decode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SweepEntry {
    pub kv_chunk: usize,
    pub kind: ChunkMaskKind,
}

/// The KV chunks one query chunk visits, in order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct QuerySweep {
    pub query_chunk: usize,
    /// Absolute positions of the queries in this chunk.
    pub queries: Range<usize>,
    pub sweep: Vec<SweepEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ChunkPlan {
    pub mask: MaskKind,
    pub phase: Phase,
    pub chunk_len: usize,
    pub context_len: usize,
    pub query_offset: usize,
    pub query_sweeps: Vec<QuerySweep>,
}

impl ChunkPlan {
    /// Plan for `query_len` new tokens at the end of a `context_len` context.
    pub fn prefill(
        mask: MaskKind,
        chunk_len: usize,
        context_len: usize,
        query_len: usize,
    ) -> Result<Self> {
        ensure!(
            query_len <= context_len,
            InvalidConfig,
            "{query_len} queries cannot exceed a {context_len}-token context"
        );
        Self::build(
            mask,
            Phase::Prefill,
            chunk_len,
            context_len,
            context_len - query_len,
        )
    }

    /// Plan for the single newest query of a `context_len` context.
    pub fn decode(mask: MaskKind, chunk_len: usize, context_len: usize) -> Result<Self> {
        ensure!(
            context_len >= 1,
            EmptyWindow,
            "decode needs at least one cached token"
        );
        Self::build(mask, Phase::Decode, chunk_len, context_len, context_len - 1)
    }

    fn build(
        mask: MaskKind,
        phase: Phase,
        chunk_len: usize,
        context_len: usize,
        query_offset: usize,
    ) -> Result<Self> {
        mask.validate()?;
        ensure!(
            chunk_len >= 1,
            InvalidConfig,
            "chunk length must be at least 1"
        );
        let mut query_sweeps = Vec::new();
        let mut start = query_offset;
        while start < context_len {
            let chunk = start / chunk_len;
            let end = ((chunk + 1) * chunk_len).min(context_len);
            query_sweeps.push(QuerySweep {
                query_chunk: chunk,
                queries: start..end,
                sweep: sweep_for(mask, chunk_len, context_len, start..end),
            });
            start = end;
        }
        Ok(Self {
            mask,
            phase,
            chunk_len,
            context_len,
            query_offset,
            query_sweeps,
        })
    }

    pub fn query_len(&self) -> usize {
        self.context_len - self.query_offset
    }

    pub fn kv_chunk_count(&self) -> usize {
        self.context_len.div_ceil(self.chunk_len)
    }

    /// Key positions held by KV chunk `i`; the last chunk may be short.
    pub fn kv_chunk_range(&self, i: usize) -> Range<usize> {
        i * self.chunk_len..((i + 1) * self.chunk_len).min(self.context_len)
    }

    /// Mask to apply when sweeping `entry` for the queries of `qs`.
    pub fn chunk_mask(&self, qs: &QuerySweep, entry: &SweepEntry) -> ChunkMask {
        ChunkMask {
            kind: entry.kind,
            rule: self.mask,
            query_start: qs.queries.start,
            key_start: self.kv_chunk_range(entry.kv_chunk).start,
        }
    }

    /// Total KV chunk loads over the whole plan.
    pub fn kv_chunk_loads(&self) -> usize {
        self.query_sweeps.iter().map(|q| q.sweep.len()).sum()
    }
}

fn sweep_for(
    mask: MaskKind,
    chunk_len: usize,
    context_len: usize,
    queries: Range<usize>,
) -> Vec<SweepEntry> {
    let (q_first, q_last) = (queries.start, queries.end - 1);
    // union of visible key positions over the query chunk
    let keys = match mask {
        MaskKind::NonCausal => 0..context_len,
        MaskKind::CausalFull => 0..q_last + 1,
        MaskKind::SlidingWindow(w) => (q_first + 1).saturating_sub(w)..q_last + 1,
    };
    (keys.start / chunk_len..keys.end.div_ceil(chunk_len))
        .map(|kv_chunk| {
            let ks = kv_chunk * chunk_len;
            let kl = chunk_len.min(context_len - ks);
            let kind = ChunkMask::for_positions(mask, q_first, queries.len(), ks, kl).kind;
            SweepEntry { kv_chunk, kind }
        })
        .collect()
}
