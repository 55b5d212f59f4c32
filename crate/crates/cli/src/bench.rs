//! `bench`: host timings for the kernels, reported next to the analytical
//! read-bandwidth or cost-model traffic for the same run.
//!
//! One untimed warm-up run precedes the timed repetitions.

use std::time::Instant;

use flowkern::chunked_attn::{flowkv_decode, flowqkv_prefill, u_mem_rd, ChunkPlan};
use flowkern::fused_dqp::{fused_dqp_mvm, FusedDqpPlan};
use flowkern::q4nx::{quantize_tensor, Bf16, BLOCK_BYTES};
use flowkern::refkern::{default_scale, GqaLayout, MaskKind};
use flowkern::tiled_mm::{default_candidates, select_tile_config, tiled_matmul, MemoryLimits};
use flowkern::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cases::Outcome;
use crate::config::Params;
use crate::report::RunReport;
use crate::{BenchArgs, CliError, Kernel};

pub fn run(
    args: &BenchArgs,
    params: &mut Params,
    seed: u64,
    report: &mut RunReport,
) -> Result<(), CliError> {
    params.echo("kernel", args.kernel);
    let reps = params.get("reps", args.reps, 3usize)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut o = Outcome::default();
    let per_rep = match args.kernel {
        Kernel::Prefill | Kernel::Decode => {
            let decode = args.kernel == Kernel::Decode;
            let len = params.get("len", args.len, if decode { 1024 } else { 256 })?;
            let chunk = params.get("chunk", args.chunk, if decode { 32 } else { 256 })?;
            let heads = params.get("heads", args.heads, 4usize)?;
            let groups = params.get("groups", args.groups, 2usize)?;
            let d = params.get("head_dim", args.head_dim, 64usize)?;
            let ct_count = params.get("ct_count", args.ct_count, rayon::current_num_threads())?;
            let layout = GqaLayout::new(heads, groups, d)?;
            let scale = default_scale(d);
            let ks: Vec<Matrix> = (0..groups).map(|_| rand_mat(&mut rng, len, d)).collect();
            let vs: Vec<Matrix> = (0..groups).map(|_| rand_mat(&mut rng, len, d)).collect();
            if reps == 0 {
                return Ok(());
            }
            let per_rep = if decode {
                let plan = ChunkPlan::decode(MaskKind::CausalFull, chunk, len)?;
                let q = rand_mat(&mut rng, heads, d);
                timed(reps, || {
                    flowkv_decode(&q, &ks, &vs, &layout, &plan, scale).map(drop)
                })?
            } else {
                let plan = ChunkPlan::prefill(MaskKind::CausalFull, chunk, len, len)?;
                let qs: Vec<Matrix> = (0..heads).map(|_| rand_mat(&mut rng, len, d)).collect();
                timed(reps, || {
                    flowqkv_prefill(&qs, &ks, &vs, &layout, &plan, scale).map(drop)
                })?
            };
            let tokens = if decode { 1.0 } else { len as f64 };
            o.metric("tokens_per_s", tokens / per_rep).metric(
                "u_mem_rd",
                u_mem_rd(
                    2.0,
                    len as f64,
                    chunk as f64,
                    ct_count as f64,
                    heads as f64,
                    per_rep,
                )?,
            );
            per_rep
        }
        Kernel::Mm => {
            let dims = params.dims("shape", args.shape.clone(), &[256, 256, 256])?;
            let (m, k, n) = (dims[0], dims[1], dims[2]);
            let best =
                select_tile_config(m, k, n, &MemoryLimits::default(), &default_candidates())?
                    .remove(0);
            params.echo("megatile", &best.label);
            let a = Matrix::from_fn(m, k, |_, _| Bf16::from_f32(rng.gen_range(-1.0f32..1.0)));
            let b = Matrix::from_fn(k, n, |_, _| Bf16::from_f32(rng.gen_range(-1.0f32..1.0)));
            if reps == 0 {
                return Ok(());
            }
            let per_rep = timed(reps, || tiled_matmul(&a, &b, &best.config).map(drop))?;
            o.metric("macs_per_s", (m * k * n) as f64 / per_rep)
                .metric("model_bytes_per_s", best.cost.bytes_moved / per_rep);
            per_rep
        }
        Kernel::FusedDqp => {
            let dims = params.dims("shape", args.shape.clone(), &[2048, 2048])?;
            let workers = params.get("workers", args.workers, 4usize)?;
            let w = quantize_tensor(&rand_mat(&mut rng, dims[0], dims[1]))?;
            let x: Vec<Bf16> = (0..dims[1])
                .map(|_| Bf16::from_f32(rng.gen_range(-1.0f32..1.0)))
                .collect();
            let plan = FusedDqpPlan::for_tensor(workers, &w)?;
            if reps == 0 {
                return Ok(());
            }
            let per_rep = timed(reps, || fused_dqp_mvm(&w, &x, &plan).map(drop))?;
            o.metric("elements_per_s", (dims[0] * dims[1]) as f64 / per_rep)
                .metric(
                    "weight_bytes_per_s",
                    (w.blocks().len() * BLOCK_BYTES) as f64 / per_rep,
                );
            per_rep
        }
    };
    o.metric("reps", reps as f64)
        .metric("per_rep_s", per_rep)
        .metric("total_s", per_rep * reps as f64);
    report.cases = vec![o.into_case(format!("bench/{}", args.kernel), per_rep * reps as f64)];
    Ok(())
}

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0f32..1.0))
}

/// Mean seconds per repetition after one warm-up call.
fn timed(reps: usize, mut f: impl FnMut() -> flowkern::Result<()>) -> flowkern::Result<f64> {
    f()?;
    let start = Instant::now();
    for _ in 0..reps {
        f()?;
    }
    Ok(start.elapsed().as_secs_f64() / reps as f64)
}
