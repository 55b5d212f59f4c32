//! `cost`: rank megatile configurations for one GEMM shape.

use std::time::Instant;

use flowkern::tiled_mm::{
    default_candidates, measured_configs, select_tile_config, MemoryLimits, MEASURED_MEGATILES,
};
use serde_json::json;

use crate::cases::Outcome;
use crate::config::Params;
use crate::report::RunReport;
use crate::{Candidates, CliError, CostArgs};

pub fn run(args: &CostArgs, params: &mut Params, report: &mut RunReport) -> Result<(), CliError> {
    let start = Instant::now();
    let defaults = MemoryLimits::default();
    let candidates = params.get("candidates", args.candidates, Candidates::Default)?;
    let limits = MemoryLimits {
        l1_bytes: params.get("l1_bytes", args.l1_bytes, defaults.l1_bytes)?,
        l2_bytes: params.get("l2_bytes", args.l2_bytes, defaults.l2_bytes)?,
    };
    let top = params.get("top", args.top, 10usize)?;
    params.echo("shape", format!("{},{},{}", args.m, args.k, args.n));

    let pool = match candidates {
        Candidates::Measured => measured_configs(),
        Candidates::Default => default_candidates(),
    };
    let ranked = select_tile_config(args.m, args.k, args.n, &limits, &pool)?;

    let mut o = Outcome::default();
    o.metric("feasible", ranked.len() as f64)
        .metric("best_bytes_moved", ranked[0].cost.bytes_moved);
    if candidates == Candidates::Measured && (args.m, args.k, args.n) == (2048, 2048, 2048) {
        // fewer modelled bytes should go with higher measured throughput on the measured shape
        let mut by_tops = MEASURED_MEGATILES.to_vec();
        by_tops.sort_by(|a, b| b.1.total_cmp(&a.1));
        let by_tops: Vec<(usize, usize)> = by_tops.iter().map(|&((r, _, c), _)| (r, c)).collect();
        let by_bytes: Vec<(usize, usize)> = ranked
            .iter()
            .map(|r| (r.config.megatile_rows(), r.config.megatile_cols()))
            .collect();
        o.expect("ranking_matches_measured_throughput", by_bytes == by_tops);
    }
    report.cases = vec![o.into_case("cost/ranking", start.elapsed().as_secs_f64())];
    report.extra = Some(json!({
        "limits": limits,
        "candidates_considered": pool.len(),
        "ranking": ranked.iter().take(top).collect::<Vec<_>>(),
    }));
    Ok(())
}
