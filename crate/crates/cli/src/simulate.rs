//! `simulate`: double-buffered pipeline timelines for the decode kernels and GEMM.

use std::time::Instant;

use flowkern::dataflow_sim::{
    classify_bound, flowkv_stages, simulate_pipeline, EventKind, StageSpec, TileArrayConfig,
};
use flowkern::fused_dqp::SEGMENT_BYTES;
use flowkern::q4nx::{BLOCK_BYTES, BLOCK_COLS, BLOCK_ROWS};
use flowkern::tiled_mm::MEASURED_TILE;
use serde_json::json;

use crate::cases::Outcome;
use crate::config::Params;
use crate::report::RunReport;
use crate::{CliError, Scenario, SimulateArgs};

/// Tolerance on the measured steady-state chunk period.
const STEADY_TOL: f64 = 5e-3;
const MAX_INLINE_EVENTS: usize = 4096;

pub fn run(
    args: &SimulateArgs,
    params: &mut Params,
    report: &mut RunReport,
) -> Result<(), CliError> {
    let start = Instant::now();
    let defaults = TileArrayConfig::default();
    let cfg = TileArrayConfig {
        dram_rd_bw: params.get("bw", args.bw, defaults.dram_rd_bw)?,
        clock_hz: params.get("clock_hz", args.clock_hz, defaults.clock_hz)?,
        ..defaults
    };
    let lanes = params.get("lanes", args.lanes, 32usize)?;
    if lanes == 0 {
        return Err(CliError::Usage("lanes must be positive".into()));
    }
    params.echo("scenario", args.scenario);

    let stages = match args.scenario {
        Scenario::Flowkv => {
            let chunks = params.get("chunks", args.chunks, 100usize)?;
            let lc = params.get("lc", args.lc, 32usize)?;
            let d = params.get("head_dim", args.head_dim, 64usize)?;
            if lc == 0 || d == 0 {
                return Err(CliError::Usage("lc and head_dim must be positive".into()));
            }
            flowkv_stages(lc, d, chunks, lanes, &cfg)
        }
        Scenario::FusedDqp => {
            // one chunk per block column: every worker's blocks plus the broadcast segment
            let dims = params.dims("shape", args.shape.clone(), &[2048, 2048])?;
            let (block_rows, block_cols) =
                (dims[0].div_ceil(BLOCK_ROWS), dims[1].div_ceil(BLOCK_COLS));
            let workers = block_rows.min(cfg.ct_count());
            let bytes = (block_rows * BLOCK_BYTES + SEGMENT_BYTES) as f64;
            let compute = (block_rows.div_ceil(workers) * BLOCK_ROWS * BLOCK_COLS) as f64
                / (lanes as f64 * cfg.clock_hz);
            vec![StageSpec::new("fused_dqp", bytes, compute, block_cols)]
        }
        Scenario::Mm => {
            // one chunk per (supertile, k-step); all tiles compute in parallel
            let dims = params.dims("shape", args.shape.clone(), &[2048, 2048, 2048])?;
            let t = MEASURED_TILE;
            let (rows, cols) = (cfg.ct_cols * t.m, cfg.ct_rows * t.n);
            let chunks = dims[0].div_ceil(rows) * dims[2].div_ceil(cols) * dims[1].div_ceil(t.k);
            let bytes = (2 * (rows * t.k + t.k * cols)) as f64;
            let compute = (t.m * t.k * t.n) as f64 / (lanes as f64 * cfg.clock_hz);
            vec![StageSpec::new("supertile_k_step", bytes, compute, chunks)]
        }
    };
    let tl = simulate_pipeline(&stages, &cfg)?;

    let per_chunk_bytes: f64 = stages.iter().map(|s| s.transfer_bytes).sum();
    let slowest_compute = stages.iter().map(|s| s.compute_time).fold(0.0, f64::max);
    let derived_bw = if slowest_compute > 0.0 {
        per_chunk_bytes / slowest_compute
    } else {
        f64::INFINITY
    };
    let required_bw = params
        .get_opt("required_bw", args.required_bw)?
        .unwrap_or(derived_bw);
    let bound = classify_bound(required_bw, &cfg);

    // period between the last stage's compute ends over the second half of the run
    let expected = stages
        .iter()
        .map(|s| (s.transfer_bytes / tl.stream_bw).max(s.compute_time))
        .fold(0.0, f64::max);
    let last = tl.stages.last().unwrap();
    let mut o = Outcome::default();
    o.metric("total_time_s", tl.total_time)
        .metric("stream_bw", tl.stream_bw)
        .metric("required_bw", required_bw)
        .metric("slowest_stage_period_s", expected)
        .metric("max_buffers_in_flight", tl.max_buffers_in_flight() as f64);
    if last.len() >= 3 && expected > 0.0 {
        let half = last.len() / 2;
        let period = (last[last.len() - 1].compute_end - last[half].compute_end)
            / (last.len() - 1 - half) as f64;
        o.metric("steady_period_s", period).within(
            "steady_rel_dev",
            (period / expected - 1.0).abs(),
            STEADY_TOL,
        );
    }
    report.cases = vec![o.into_case("simulate/steady_state", start.elapsed().as_secs_f64())];

    if let Some(path) = params.get_opt("timeline", args.timeline.clone())? {
        let mut csv = String::from("stage,name,chunk,kind,start_s,end_s\n");
        for e in tl.events() {
            let kind = match e.kind {
                EventKind::Transfer => "transfer",
                EventKind::Compute => "compute",
            };
            csv.push_str(&format!(
                "{},{},{},{kind},{},{}\n",
                e.stage, stages[e.stage].name, e.chunk, e.start, e.end
            ));
        }
        std::fs::write(&path, csv).map_err(|e| CliError::io(path.as_ref(), e))?;
    }
    let events = tl.events();
    report.extra = Some(json!({
        "array": cfg,
        "stages": stages,
        "bound": bound,
        "total_time_s": tl.total_time,
        // long runs go to --timeline only
        "events": (events.len() <= MAX_INLINE_EVENTS).then_some(&events),
        "event_count": events.len(),
    }));
    Ok(())
}
