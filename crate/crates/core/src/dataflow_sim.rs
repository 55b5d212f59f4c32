//! Analytical model of the compute-tile array: double-buffered DMA pipelines,
//! L1 buffer budgets, bandwidth-bound classification and kernel placement.
//!
//! Times are in seconds. Compute latencies are inputs, not derived from a cycle
//! model, so the simulator reproduces overlap structure rather than absolute runtime.

use std::collections::HashSet;

use serde::Serialize;

use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TileArrayConfig {
    pub ct_cols: usize,
    pub ct_rows: usize,
    pub l1_bytes: usize,
    pub mt_count: usize,
    pub mt_bytes: usize,
    pub clock_hz: f64,
    /// Allocated DRAM read bandwidth, bytes per second.
    pub dram_rd_bw: f64,
}

impl Default for TileArrayConfig {
    fn default() -> Self {
        Self {
            ct_cols: 8,
            ct_rows: 4,
            l1_bytes: 64 * 1024,
            mt_count: 8,
            mt_bytes: 512 * 1024,
            clock_hz: 1.8e9,
            dram_rd_bw: 40e9,
        }
    }
}

impl TileArrayConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.ct_cols > 0
                && self.ct_rows > 0
                && self.l1_bytes > 0
                && self.mt_count > 0
                && self.mt_bytes > 0,
            InvalidConfig,
            "array dimensions and capacities must be positive"
        );
        ensure!(
            self.clock_hz > 0.0 && self.dram_rd_bw > 0.0,
            InvalidConfig,
            "clock and bandwidth must be positive"
        );
        Ok(())
    }

    pub fn ct_count(&self) -> usize {
        self.ct_cols * self.ct_rows
    }
}

/// One pipeline stage: a DMA stream feeding one compute tile.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageSpec {
    pub name: String,
    /// Bytes fetched from DRAM per chunk.
    pub transfer_bytes: f64,
    /// Compute latency per chunk.
    pub compute_time: f64,
    pub chunk_count: usize,
    /// Compute of chunk `i` also waits for the previous stage's compute of chunk `i`
    /// (an on-chip hand-off, modelled as free).
    pub after_previous: bool,
}

impl StageSpec {
    pub fn new(
        name: impl Into<String>,
        transfer_bytes: f64,
        compute_time: f64,
        chunk_count: usize,
    ) -> Self {
        Self {
            name: name.into(),
            transfer_bytes,
            compute_time,
            chunk_count,
            after_previous: false,
        }
    }

    pub fn chained(mut self) -> Self {
        self.after_previous = true;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Transfer,
    Compute,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimelineEvent {
    pub stage: usize,
    pub chunk: usize,
    pub kind: EventKind,
    pub start: f64,
    pub end: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChunkTiming {
    pub transfer_start: f64,
    pub transfer_end: f64,
    pub compute_start: f64,
    pub compute_end: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PipelineTimeline {
    /// `stages[s][i]` is chunk `i` of stage `s`.
    pub stages: Vec<Vec<ChunkTiming>>,
    pub total_time: f64,
    /// Per-stream bandwidth after splitting the allocation across streams that move bytes.
    pub stream_bw: f64,
}

impl PipelineTimeline {
    /// Flattened events ordered by stage, chunk, then transfer before compute.
    pub fn events(&self) -> Vec<TimelineEvent> {
        let mut out = Vec::new();
        for (stage, chunks) in self.stages.iter().enumerate() {
            for (chunk, t) in chunks.iter().enumerate() {
                out.push(TimelineEvent {
                    stage,
                    chunk,
                    kind: EventKind::Transfer,
                    start: t.transfer_start,
                    end: t.transfer_end,
                });
                out.push(TimelineEvent {
                    stage,
                    chunk,
                    kind: EventKind::Compute,
                    start: t.compute_start,
                    end: t.compute_end,
                });
            }
        }
        out
    }

    /// Largest number of chunk buffers a stage holds at once (fetch start to compute end).
    pub fn max_buffers_in_flight(&self) -> usize {
        self.stages
            .iter()
            .map(|chunks| {
                chunks
                    .iter()
                    .map(|t| {
                        chunks
                            .iter()
                            .filter(|o| {
                                o.transfer_start <= t.transfer_start
                                    && t.transfer_start < o.compute_end
                            })
                            .count()
                    })
                    .max()
                    .unwrap_or(0)
            })
            .max()
            .unwrap_or(0)
    }
}

/// Event schedule with two buffers per stream.
///
/// A chunk's transfer starts once the stream is idle and a buffer is free (the
/// compute two chunks back has finished); its compute starts once the transfer
/// is done, the tile is idle and, for chained stages, the previous stage has
/// finished the same chunk. Streams that move bytes share the DRAM bandwidth equally.
pub fn simulate_pipeline(stages: &[StageSpec], cfg: &TileArrayConfig) -> Result<PipelineTimeline> {
    cfg.validate()?;
    ensure!(!stages.is_empty(), InvalidConfig, "pipeline has no stages");
    for (s, st) in stages.iter().enumerate() {
        ensure!(
            st.chunk_count >= 1,
            InvalidConfig,
            "stage {s} ({}) has zero chunks",
            st.name
        );
        ensure!(
            st.transfer_bytes >= 0.0
                && st.compute_time >= 0.0
                && st.transfer_bytes.is_finite()
                && st.compute_time.is_finite(),
            InvalidConfig,
            "stage {s} ({}) has a negative or non-finite size",
            st.name
        );
        if st.after_previous {
            ensure!(
                s > 0 && stages[s - 1].chunk_count == st.chunk_count,
                InvalidConfig,
                "chained stage {s} ({}) needs a previous stage with the same chunk count",
                st.name
            );
        }
    }
    let streams = stages
        .iter()
        .filter(|s| s.transfer_bytes > 0.0)
        .count()
        .max(1);
    let stream_bw = cfg.dram_rd_bw / streams as f64;

    let mut out: Vec<Vec<ChunkTiming>> = Vec::with_capacity(stages.len());
    for (s, st) in stages.iter().enumerate() {
        let transfer = st.transfer_bytes / stream_bw;
        let mut chunks: Vec<ChunkTiming> = Vec::with_capacity(st.chunk_count);
        for i in 0..st.chunk_count {
            let stream_free = if i >= 1 {
                chunks[i - 1].transfer_end
            } else {
                0.0
            };
            let buffer_free = if i >= 2 {
                chunks[i - 2].compute_end
            } else {
                0.0
            };
            let transfer_start = stream_free.max(buffer_free);
            let transfer_end = transfer_start + transfer;
            let mut compute_start = transfer_end;
            if i >= 1 {
                compute_start = compute_start.max(chunks[i - 1].compute_end);
            }
            if st.after_previous {
                compute_start = compute_start.max(out[s - 1][i].compute_end);
            }
            chunks.push(ChunkTiming {
                transfer_start,
                transfer_end,
                compute_start,
                compute_end: compute_start + st.compute_time,
            });
        }
        out.push(chunks);
    }
    let total_time = out
        .iter()
        .filter_map(|c| c.last())
        .map(|t| t.compute_end)
        .fold(0.0, f64::max);
    Ok(PipelineTimeline {
        stages: out,
        total_time,
        stream_bw,
    })
}

/// Two-tile decode attention pipeline for one KV group: the first tile streams
/// K chunks and produces scores, the second streams V chunks and accumulates.
/// Compute time per chunk is `chunk_len * head_dim / (lanes * clock)`.
pub fn flowkv_stages(
    chunk_len: usize,
    head_dim: usize,
    chunk_count: usize,
    vector_lanes: usize,
    cfg: &TileArrayConfig,
) -> Vec<StageSpec> {
    let bytes = (chunk_len * head_dim * 2) as f64;
    let compute = (chunk_len * head_dim) as f64 / (vector_lanes as f64 * cfg.clock_hz);
    vec![
        StageSpec::new("scores", bytes, compute, chunk_count),
        StageSpec::new("accumulate", bytes, compute, chunk_count).chained(),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BufferSpec {
    pub name: String,
    pub bytes: usize,
    pub double_buffered: bool,
}

impl BufferSpec {
    pub fn new(name: impl Into<String>, bytes: usize, double_buffered: bool) -> Self {
        Self {
            name: name.into(),
            bytes,
            double_buffered,
        }
    }

    pub fn footprint(&self) -> usize {
        if self.double_buffered {
            2 * self.bytes
        } else {
            self.bytes
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct L1FitReport {
    pub fits: bool,
    pub used_bytes: usize,
    pub capacity: usize,
    /// `(name, footprint)` per buffer.
    pub breakdown: Vec<(String, usize)>,
}

pub fn check_l1_fit(buffers: &[BufferSpec], cfg: &TileArrayConfig) -> L1FitReport {
    let breakdown: Vec<(String, usize)> = buffers
        .iter()
        .map(|b| (b.name.clone(), b.footprint()))
        .collect();
    let used_bytes = breakdown.iter().map(|(_, b)| b).sum();
    L1FitReport {
        fits: used_bytes <= cfg.l1_bytes,
        used_bytes,
        capacity: cfg.l1_bytes,
        breakdown,
    }
}

/// L1 buffers of the score tile in decode attention: a double-buffered bf16 K
/// chunk, the bf16 query, and float32 score and probability rows.
pub fn flowkv_score_buffers(chunk_len: usize, head_dim: usize) -> Vec<BufferSpec> {
    vec![
        BufferSpec::new("k_chunk", chunk_len * head_dim * 2, true),
        BufferSpec::new("query", head_dim * 2, false),
        BufferSpec::new("scores", chunk_len * 4, false),
        BufferSpec::new("probs", chunk_len * 4, false),
        BufferSpec::new("row_stats", 3 * 4, false),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    MemoryBound,
    ComputeBound,
}

/// Memory-bound iff the allocated bandwidth is strictly below what the kernel needs.
pub fn classify_bound(required_bw: f64, cfg: &TileArrayConfig) -> Bound {
    if cfg.dram_rd_bw < required_bw {
        Bound::MemoryBound
    } else {
        Bound::ComputeBound
    }
}

/// Bandwidth a kernel needs at `clock_hz`, given its need at `base_clock_hz`.
/// Bandwidth demand scales linearly with clock.
pub fn required_bw_at_clock(required_bw: f64, base_clock_hz: f64, clock_hz: f64) -> f64 {
    required_bw * clock_hz / base_clock_hz
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct CtId {
    pub col: usize,
    pub row: usize,
}

impl CtId {
    pub const fn new(col: usize, row: usize) -> Self {
        Self { col, row }
    }
}

/// Decode-phase kernel placement over the tile array.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct KernelAssignment {
    /// Attention tiles, consumed as (score, accumulate) pairs.
    pub flowkv: Vec<(CtId, CtId)>,
    pub fused_dqp: Vec<CtId>,
    pub nonlinear: Vec<(String, CtId)>,
    pub kv_groups: usize,
}

impl KernelAssignment {
    /// Two columns of attention pairs, four columns of projection tiles and one
    /// tile each for RoPE, RMSNorm with residual and GeLU-multiply.
    pub fn decode_reference(kv_groups: usize) -> Self {
        let flowkv = (0..2)
            .flat_map(|col| {
                [
                    (CtId::new(col, 0), CtId::new(col, 1)),
                    (CtId::new(col, 2), CtId::new(col, 3)),
                ]
            })
            .collect();
        let fused_dqp = (2..6)
            .flat_map(|col| (0..4).map(move |row| CtId::new(col, row)))
            .collect();
        let nonlinear = ["rope", "rmsnorm_residual", "gelu_mul"]
            .iter()
            .enumerate()
            .map(|(row, name)| (name.to_string(), CtId::new(6, row)))
            .collect();
        Self {
            flowkv,
            fused_dqp,
            nonlinear,
            kv_groups,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlacementReport {
    pub flowkv_tiles: usize,
    pub fused_dqp_tiles: usize,
    pub nonlinear_tiles: usize,
    pub used: usize,
    pub free: usize,
}

/// Checks a placement: tiles exist and are used once, attention pairs are
/// vertical neighbours in one column, and there is one pair per KV group.
pub fn map_kernels(
    assignment: &KernelAssignment,
    cfg: &TileArrayConfig,
) -> Result<PlacementReport> {
    cfg.validate()?;
    let all: Vec<CtId> = assignment
        .flowkv
        .iter()
        .flat_map(|&(a, b)| [a, b])
        .chain(assignment.fused_dqp.iter().copied())
        .chain(assignment.nonlinear.iter().map(|(_, c)| *c))
        .collect();
    ensure!(
        all.len() <= cfg.ct_count(),
        Placement,
        "{} tiles requested, array has {}",
        all.len(),
        cfg.ct_count()
    );
    let mut seen = HashSet::new();
    for ct in &all {
        ensure!(
            ct.col < cfg.ct_cols && ct.row < cfg.ct_rows,
            Placement,
            "tile ({}, {}) is outside the {}x{} array",
            ct.col,
            ct.row,
            cfg.ct_cols,
            cfg.ct_rows
        );
        ensure!(
            seen.insert(*ct),
            Placement,
            "tile ({}, {}) assigned twice",
            ct.col,
            ct.row
        );
    }
    for &(a, b) in &assignment.flowkv {
        ensure!(
            a.col == b.col && a.row.abs_diff(b.row) == 1,
            Placement,
            "attention tiles ({}, {}) and ({}, {}) are not vertical neighbours",
            a.col,
            a.row,
            b.col,
            b.row
        );
    }
    ensure!(
        assignment.flowkv.len() == assignment.kv_groups,
        Placement,
        "{} KV groups need as many attention pairs, got {}",
        assignment.kv_groups,
        assignment.flowkv.len()
    );
    Ok(PlacementReport {
        flowkv_tiles: 2 * assignment.flowkv.len(),
        fused_dqp_tiles: assignment.fused_dqp.len(),
        nonlinear_tiles: assignment.nonlinear.len(),
        used: all.len(),
        free: cfg.ct_count() - all.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_bw() -> TileArrayConfig {
        TileArrayConfig {
            dram_rd_bw: 1.0,
            ..Default::default()
        }
    }

    #[test]
    fn equal_transfer_and_compute_overlap() {
        let tl = simulate_pipeline(&[StageSpec::new("s", 0.25, 0.25, 100)], &unit_bw()).unwrap();
        assert_eq!(tl.total_time, 101.0 * 0.25);
        assert!(tl.max_buffers_in_flight() <= 2);
    }

    #[test]
    fn compute_dominated_stage() {
        let tl = simulate_pipeline(&[StageSpec::new("s", 0.5, 1.0, 7)], &unit_bw()).unwrap();
        assert_eq!(tl.total_time, 0.5 + 7.0 * 1.0);
    }

    #[test]
    fn transfer_dominated_decode_attention_is_bandwidth_limited() {
        let cfg = TileArrayConfig::default();
        let stages = flowkv_stages(32, 256, 200, 256, &cfg);
        let tl = simulate_pipeline(&stages, &cfg).unwrap();
        let bytes: f64 = stages
            .iter()
            .map(|s| s.transfer_bytes * s.chunk_count as f64)
            .sum();
        let ideal = bytes / cfg.dram_rd_bw;
        assert!(
            (tl.total_time / ideal - 1.0).abs() < 0.05,
            "{} vs {ideal}",
            tl.total_time
        );
    }

    #[test]
    fn rejects_bad_pipelines() {
        let cfg = TileArrayConfig::default();
        assert!(simulate_pipeline(&[StageSpec::new("s", 1.0, 1.0, 0)], &cfg).is_err());
        assert!(simulate_pipeline(&[], &cfg).is_err());
        assert!(simulate_pipeline(&[StageSpec::new("s", 1.0, 1.0, 2).chained()], &cfg).is_err());
        let bad = [
            StageSpec::new("a", 1.0, 1.0, 2),
            StageSpec::new("b", 1.0, 1.0, 3).chained(),
        ];
        assert!(simulate_pipeline(&bad, &cfg).is_err());
    }

    #[test]
    fn l1_budgets() {
        let cfg = TileArrayConfig::default();
        let small = check_l1_fit(&flowkv_score_buffers(32, 256), &cfg);
        assert!(small.fits);
        assert_eq!(small.breakdown[0], ("k_chunk".to_string(), 32 * 1024));
        assert!(!check_l1_fit(&flowkv_score_buffers(128, 256), &cfg).fits);
        let empty = check_l1_fit(&[], &cfg);
        assert!(empty.fits && empty.used_bytes == 0);
    }

    #[test]
    fn bound_classification() {
        let mut cfg = TileArrayConfig::default();
        assert_eq!(classify_bound(60e9, &cfg), Bound::MemoryBound);
        assert_eq!(classify_bound(40e9, &cfg), Bound::ComputeBound);
        cfg.dram_rd_bw = 80e9;
        assert_eq!(classify_bound(60e9, &cfg), Bound::ComputeBound);
        let doubled = required_bw_at_clock(30e9, 0.9e9, 1.8e9);
        assert_eq!(doubled, 60e9);
        cfg.dram_rd_bw = 40e9;
        assert_eq!(classify_bound(doubled, &cfg), Bound::MemoryBound);
    }

    #[test]
    fn placements() {
        let cfg = TileArrayConfig::default();
        let r = map_kernels(&KernelAssignment::decode_reference(4), &cfg).unwrap();
        assert_eq!(
            (r.flowkv_tiles, r.fused_dqp_tiles, r.nonlinear_tiles, r.used),
            (8, 16, 3, 27)
        );
        assert!(map_kernels(&KernelAssignment::decode_reference(5), &cfg).is_err());
        assert_eq!(
            map_kernels(&KernelAssignment::default(), &cfg)
                .unwrap()
                .used,
            0
        );

        let mut dup = KernelAssignment::decode_reference(4);
        dup.nonlinear.push(("extra".into(), CtId::new(0, 0)));
        assert!(map_kernels(&dup, &cfg).is_err());
        let mut split = KernelAssignment::decode_reference(4);
        split.flowkv[0] = (CtId::new(0, 0), CtId::new(7, 3));
        assert!(map_kernels(&split, &cfg).is_err());
        let mut outside = KernelAssignment::default();
        outside.fused_dqp.push(CtId::new(8, 0));
        assert!(map_kernels(&outside, &cfg).is_err());
    }
}
