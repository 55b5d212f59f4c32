//! Chunked attention with online-softmax accumulation.
//!
//! Prefill (`flowqkv_prefill`) walks query chunks and, for each, sweeps the
//! KV chunks its mask can see; decode (`flowkv_decode`) is the same sweep with
//! a single query row. Variants differ only in their sweep plan.

mod accumulator;
mod flow;
mod plan;

pub use accumulator::{ChunkAccumulator, ChunkMask, ChunkMaskKind};
pub use flow::{flowkv_decode, flowqkv_prefill, sweep_head, u_mem_rd};
pub use plan::{
    ChunkPlan, Phase, QuerySweep, SweepEntry, DEFAULT_DECODE_CHUNK, DEFAULT_PREFILL_CHUNK,
};
