//! `verify`: oracle-equivalence and invariant checks for each kernel family.

use std::collections::HashSet;

use flowkern::chunked_attn::{flowkv_decode, flowqkv_prefill, u_mem_rd, ChunkPlan};
use flowkern::dataflow_sim::{
    check_l1_fit, classify_bound, flowkv_score_buffers, flowkv_stages, map_kernels,
    simulate_pipeline, Bound, KernelAssignment, StageSpec, TileArrayConfig,
};
use flowkern::fused_dqp::{
    broadcast_schedule, fused_dqp_accumulate, fused_dqp_mvm, FusedDqpPlan, Transfer,
};
use flowkern::model_layer::{LayerCache, LayerKind, Model, ModelConfig};
use flowkern::q4nx::{
    decode_container, dequantize_block, dequantize_tensor, encode_container, group_of, parse_block,
    parse_header, quantize_block, quantize_tensor, round_f32, serialize_block, Bf16, Q4nxBlock,
    BLOCK_BYTES, BLOCK_COLS, BLOCK_ROWS,
};
use flowkern::refkern::{
    decode_attention_ref, default_scale, gqa_attention_ref, matmul_ref, matvec_ref, AttentionMask,
    GqaLayout, MaskKind,
};
use flowkern::tensor::{max_rel_error, Matrix};
use flowkern::tiled_mm::{
    cost_basic, cost_megatile, default_candidates, measured_configs, select_tile_config,
    tiled_matmul, tiled_matmul_acc, MegatileConfig, MemoryLimits, TileShape,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::cases::{run_cases, CaseSpec, Outcome};
use crate::config::Params;
use crate::report::RunReport;
use crate::{CliError, Sizes, Suite, VerifyArgs};

const ATTN_TOL: f64 = 1e-5;
const FUSED_TOL: f64 = 1e-4;
const MM_TOL: f64 = 1e-3;
const LAYER_TOL: f64 = 1e-3;

pub fn run(
    args: &VerifyArgs,
    params: &mut Params,
    seed: u64,
    report: &mut RunReport,
) -> Result<(), CliError> {
    let sizes = params.get("sizes", args.sizes, Sizes::Small)?;
    let full = sizes == Sizes::Full;
    params.echo("suite", args.suite);
    let mut specs = Vec::new();
    let all = args.suite == Suite::All;
    if all || args.suite == Suite::Q4nx {
        specs.extend(q4nx_cases(full));
    }
    if all || args.suite == Suite::Attn {
        specs.extend(attn_cases(full));
    }
    if all || args.suite == Suite::Fused {
        specs.extend(fused_cases(full));
    }
    if all || args.suite == Suite::Mm {
        specs.extend(mm_cases(full));
    }
    if all || args.suite == Suite::Sim {
        specs.extend(sim_cases());
    }
    if all || args.suite == Suite::Layer {
        specs.extend(layer_cases(full));
    }
    report.cases = run_cases(specs, seed);
    Ok(())
}

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, a: f32) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.gen_range(-a..a))
}

fn q4nx_cases(full: bool) -> Vec<CaseSpec> {
    let blocks = if full { 1000 } else { 200 };
    let bound_blocks = if full { 48 } else { 12 };
    vec![
        CaseSpec::new("q4nx/round_trip", move |rng| {
            let mut ok = true;
            for _ in 0..blocks {
                let codes: Vec<u8> = (0..BLOCK_ROWS * BLOCK_COLS)
                    .map(|_| rng.gen_range(0..16))
                    .collect();
                let scales: Vec<Bf16> = (0..256).map(|_| Bf16::from_bits(rng.gen())).collect();
                let mins: Vec<Bf16> = (0..256).map(|_| Bf16::from_bits(rng.gen())).collect();
                let block = Q4nxBlock::from_parts(&codes, &scales, &mins)?;
                let bytes = serialize_block(&block);
                ok &= bytes.len() == BLOCK_BYTES && parse_block(&bytes)? == block;
            }
            let mut o = Outcome::default();
            o.metric("blocks", blocks as f64)
                .expect("bitwise_round_trip", ok);
            Ok(o)
        }),
        CaseSpec::new("q4nx/error_bound", move |rng| {
            let ranges = [
                (-1.0f32, 1.0f32),
                (0.0, 1e-3),
                (-300.0, -299.0),
                (-5e4, 7e4),
                (-0.01, 0.3),
                (-7.0, 0.05),
            ];
            let mut worst = 0.0f64;
            for i in 0..bound_blocks {
                let (lo, hi) = ranges[i % ranges.len()];
                let w = Matrix::from_fn(BLOCK_ROWS, BLOCK_COLS, |_, _| rng.gen_range(lo..hi));
                let block = quantize_block(&w)?;
                let deq = dequantize_block(&block);
                for r in 0..BLOCK_ROWS {
                    for c in 0..BLOCK_COLS {
                        worst = worst.max(bound_ratio(
                            w.get(r, c),
                            deq.get(r, c),
                            block.scales()[group_of(r, c)],
                        ));
                    }
                }
            }
            let mut o = Outcome::default();
            o.metric("groups", (bound_blocks * 256) as f64).within(
                "max_err_over_bound",
                worst,
                1.0,
            );
            Ok(o)
        }),
        CaseSpec::new("q4nx/container", |rng| {
            let t = quantize_tensor(&rand_mat(rng, 32, 256, 1.0))?;
            let bytes = encode_container(&t);
            let h = parse_header(&bytes)?;
            let odd = quantize_tensor(&rand_mat(rng, 70, 300, 3.0))?;
            let odd_back = decode_container(&encode_container(&odd))?;
            let truncated = encode_container(&odd);
            let mut o = Outcome::default();
            o.metric("block_count", h.block_count() as f64)
                .metric("payload_bytes", h.payload_bytes() as f64)
                .expect(
                    "single_5120_byte_block",
                    h.block_count() == 1 && h.payload_bytes() == 5120,
                )
                .expect("ragged_tensor_round_trip", odd_back == odd)
                .expect(
                    "truncation_rejected",
                    decode_container(&truncated[..truncated.len() - 1]).is_err(),
                );
            Ok(o)
        }),
    ]
}

/// `|deq - w| / (d_g / 2 + 2^-8 |w|)`, evaluated in f64.
pub(crate) fn bound_ratio(w: f32, deq: Bf16, scale: Bf16) -> f64 {
    let x = f64::from(w);
    let bound = f64::from(scale.to_f32()) / 2.0 + x.abs() / 256.0;
    let err = (f64::from(deq.to_f32()) - x).abs();
    if bound > 0.0 {
        err / bound
    } else if err == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

fn attn_cases(full: bool) -> Vec<CaseSpec> {
    let lens: &[usize] = if full {
        &[16, 64, 256, 512]
    } else {
        &[16, 64, 256]
    };
    let dims: &'static [usize] = if full { &[8, 64, 256] } else { &[8, 64] };
    let seeds = if full { 10 } else { 2 };
    let mut out = Vec::new();
    for variant in ["causal", "swa", "non_causal", "decode"] {
        for &l in lens {
            out.push(CaseSpec::new(
                format!("attn/{variant}/len={l:03}"),
                move |rng| attn_case(rng, variant, l, dims, seeds),
            ));
        }
    }
    out
}

fn attn_case(
    rng: &mut ChaCha8Rng,
    variant: &str,
    l: usize,
    dims: &[usize],
    seeds: usize,
) -> flowkern::Result<Outcome> {
    let chunks = [8usize, 16, 64, 256];
    let (mut worst, mut runs) = (0.0f32, 0usize);
    for &d in dims {
        for ratio in [1usize, 2] {
            for s in 0..seeds {
                let layout = GqaLayout::new(2 * ratio, 2, d)?;
                let scale = default_scale(d);
                let window = l / 4 + 3;
                let ks: Vec<Matrix> = (0..2).map(|_| rand_mat(rng, l, d, 2.0)).collect();
                let vs: Vec<Matrix> = (0..2).map(|_| rand_mat(rng, l, d, 2.0)).collect();
                if variant == "decode" {
                    let mask = if s % 2 == 0 {
                        MaskKind::CausalFull
                    } else {
                        MaskKind::SlidingWindow(window)
                    };
                    let q = rand_mat(rng, layout.heads, d, 2.0);
                    let want = (0..layout.heads)
                        .map(|h| {
                            let g = layout.group_of_head(h);
                            decode_attention_ref(q.row(h), &ks[g], &vs[g], mask, scale)
                        })
                        .collect::<flowkern::Result<Vec<_>>>()?;
                    for lc in chunks {
                        let got = flowkv_decode(
                            &q,
                            &ks,
                            &vs,
                            &layout,
                            &ChunkPlan::decode(mask, lc, l)?,
                            scale,
                        )?;
                        for (h, w) in want.iter().enumerate() {
                            worst = worst.max(max_rel_error(got.row(h), w));
                        }
                        runs += 1;
                    }
                } else {
                    let mask = match variant {
                        "causal" => MaskKind::CausalFull,
                        "swa" => MaskKind::SlidingWindow(window),
                        _ => MaskKind::NonCausal,
                    };
                    let qs: Vec<Matrix> = (0..layout.heads)
                        .map(|_| rand_mat(rng, l, d, 2.0))
                        .collect();
                    let want = gqa_attention_ref(
                        &qs,
                        &ks,
                        &vs,
                        &layout,
                        &AttentionMask::new(mask, 0),
                        scale,
                    )?;
                    for lc in chunks {
                        let got = flowqkv_prefill(
                            &qs,
                            &ks,
                            &vs,
                            &layout,
                            &ChunkPlan::prefill(mask, lc, l, l)?,
                            scale,
                        )?;
                        for (g, w) in got.iter().zip(&want) {
                            worst = worst.max(max_rel_error(g.as_slice(), w.as_slice()));
                        }
                        runs += 1;
                    }
                }
            }
        }
    }
    let mut o = Outcome::default();
    o.metric("runs", runs as f64)
        .within("max_rel_err", f64::from(worst), ATTN_TOL);
    Ok(o)
}

fn fused_cases(full: bool) -> Vec<CaseSpec> {
    let count = if full { 100 } else { 12 };
    let mut out: Vec<CaseSpec> = (0..count)
        .map(|i| {
            CaseSpec::new(format!("fused/case={i:03}"), |rng| {
                let (m, k) = (rng.gen_range(1..=512), rng.gen_range(1..=1024));
                let w = quantize_tensor(&rand_mat(rng, m, k, 1.0))?;
                let a: Vec<Bf16> = (0..k)
                    .map(|_| Bf16::from_f32(rng.gen_range(-1.0f32..1.0)))
                    .collect();
                let a32: Vec<f32> = a.iter().map(|v| v.to_f32()).collect();
                let want = matvec_ref(&dequantize_tensor(&w).to_f32(), &a32)?;
                let one = FusedDqpPlan::for_tensor(1, &w)?;
                let base = fused_dqp_accumulate(&w, &a, &one)?;
                let base_bf16 = fused_dqp_mvm(&w, &a, &one)?;
                let mut invariant = true;
                for workers in [2, 4, 16] {
                    let plan = FusedDqpPlan::for_tensor(workers, &w)?;
                    let y = fused_dqp_accumulate(&w, &a, &plan)?;
                    invariant &= y
                        .iter()
                        .map(|v| v.to_bits())
                        .eq(base.iter().map(|v| v.to_bits()));
                    invariant &= fused_dqp_mvm(&w, &a, &plan)? == base_bf16;
                }
                let mut o = Outcome::default();
                o.metric("m", m as f64)
                    .metric("k", k as f64)
                    .within(
                        "max_rel_err",
                        f64::from(max_rel_error(&base, &want)),
                        FUSED_TOL,
                    )
                    .expect("bitwise_across_workers", invariant);
                Ok(o)
            })
        })
        .collect();
    out.push(CaseSpec::new("fused/schedule", |rng| {
        let mut ok = true;
        for _ in 0..20 {
            let (m, k, workers) = (
                rng.gen_range(1..=600usize),
                rng.gen_range(1..=2000usize),
                rng.gen_range(1..=16),
            );
            let plan = FusedDqpPlan::new(workers, m.div_ceil(BLOCK_ROWS))?;
            let mut blocks = HashSet::new();
            let mut segments = HashSet::new();
            for t in broadcast_schedule(&plan, m, k)? {
                match t {
                    Transfer::Segment { block_col, .. } => ok &= segments.insert(block_col),
                    Transfer::Block {
                        worker,
                        block_row,
                        block_col,
                        ..
                    } => {
                        ok &= plan.owner_of(block_row) == Some(worker)
                            && blocks.insert((block_row, block_col));
                    }
                }
            }
            ok &= blocks.len() == m.div_ceil(BLOCK_ROWS) * k.div_ceil(BLOCK_COLS)
                && segments.len() == k.div_ceil(BLOCK_COLS);
        }
        let mut o = Outcome::default();
        o.expect("each_block_and_segment_fetched_once", ok);
        Ok(o)
    }));
    out
}

fn mm_cases(full: bool) -> Vec<CaseSpec> {
    let shapes = [
        (256, 256, 256),
        (256, 200, 130),
        (97, 256, 33),
        (1, 77, 256),
        (64, 64, 64),
    ];
    let stride = if full { 1 } else { 16 };
    let mut out: Vec<CaseSpec> = shapes
        .iter()
        .map(|&(m, k, n)| {
            CaseSpec::new(format!("mm/shape={m}x{k}x{n}"), move |rng| {
                let limits = MemoryLimits::default();
                let feasible: Vec<MegatileConfig> = default_candidates()
                    .into_iter()
                    .filter(|c| limits.fits(c))
                    .step_by(stride)
                    .collect();
                let a = Matrix::from_fn(m, k, |_, _| Bf16::from_f32(rng.gen_range(-1.0f32..1.0)));
                let b = Matrix::from_fn(k, n, |_, _| Bf16::from_f32(rng.gen_range(-1.0f32..1.0)));
                let want = matmul_ref(&a.to_f32(), &b.to_f32())?;
                let want_bf16 = want.to_bf16().to_f32();
                let mut worst = 0.0f32;
                for cfg in &feasible {
                    let acc = tiled_matmul_acc(&a, &b, cfg)?;
                    let out = tiled_matmul(&a, &b, cfg)?.to_f32();
                    worst = worst
                        .max(max_rel_error(acc.as_slice(), want.as_slice()))
                        .max(max_rel_error(out.as_slice(), want_bf16.as_slice()));
                }
                let mut o = Outcome::default();
                o.metric("configs", feasible.len() as f64).within(
                    "max_rel_err",
                    f64::from(worst),
                    MM_TOL,
                );
                Ok(o)
            })
        })
        .collect();
    out.push(CaseSpec::new("mm/cost_model", |_| {
        let (mut reduces, mut decreasing) = (true, true);
        for (m, k, n) in [(2048, 2048, 2048), (17, 300, 999), (4096, 64, 128)] {
            for tm in [1, 16, 64] {
                for tn in [1, 32, 64] {
                    let tile = TileShape::new(tm, 64, tn)?;
                    let unit = MegatileConfig::new(tile, 1, 1, 8)?;
                    reduces &= cost_megatile(m, k, n, &unit, 2)?
                        == cost_basic(m, k, n, 8 * tm, 4 * tn, 2)?;
                    for e in 1..8 {
                        let c = |ex, ey| {
                            cost_megatile(m, k, n, &MegatileConfig::new(tile, ex, ey, 8)?, 2)
                        };
                        decreasing &= c(e + 1, 1)? < c(e, 1)? && c(1, e + 1)? < c(1, e)?;
                    }
                }
            }
        }
        let ranked = select_tile_config(
            2048,
            2048,
            2048,
            &MemoryLimits::default(),
            &measured_configs(),
        )?;
        let order: Vec<usize> = ranked.iter().map(|r| r.config.megatile_rows()).collect();
        let mut o = Outcome::default();
        o.expect("unit_expansion_equals_basic", reduces)
            .expect("strictly_decreasing_in_expansion", decreasing)
            .expect("measured_ranking_512_256_128", order == [512, 256, 128]);
        Ok(o)
    }));
    out
}

fn sim_cases() -> Vec<CaseSpec> {
    vec![
        CaseSpec::new("sim/fill_law", |_| {
            let cfg = TileArrayConfig::default();
            let t = 1.0 / 1024.0;
            let tl = simulate_pipeline(&[StageSpec::new("s", cfg.dram_rd_bw * t, t, 100)], &cfg)?;
            let mut o = Outcome::default();
            o.metric("total_over_t", tl.total_time / t)
                .expect("total_is_101_t", tl.total_time == 101.0 * t);
            Ok(o)
        }),
        CaseSpec::new("sim/steady_state", |rng| {
            let cfg = TileArrayConfig::default();
            let mut worst = 0.0f64;
            for _ in 0..20 {
                let stages: Vec<StageSpec> = (0..rng.gen_range(1..4))
                    .map(|i| {
                        let s = StageSpec::new(
                            format!("s{i}"),
                            rng.gen_range(0.0..4e6),
                            rng.gen_range(0.0..1e-4),
                            1000,
                        );
                        if i > 0 && rng.gen_bool(0.5) {
                            s.chained()
                        } else {
                            s
                        }
                    })
                    .collect();
                let tl = simulate_pipeline(&stages, &cfg)?;
                let slowest = stages
                    .iter()
                    .map(|s| (s.transfer_bytes / tl.stream_bw).max(s.compute_time))
                    .fold(0.0, f64::max);
                worst = worst.max((tl.total_time / 1000.0 / slowest - 1.0).abs());
            }
            let mut o = Outcome::default();
            o.within("max_rel_dev_from_slowest_stage", worst, 5e-3);
            Ok(o)
        }),
        CaseSpec::new("sim/bound_and_fit", |_| {
            let at = |bw: f64| {
                classify_bound(
                    60e9,
                    &TileArrayConfig {
                        dram_rd_bw: bw,
                        ..Default::default()
                    },
                )
            };
            let cfg = TileArrayConfig::default();
            let fit = check_l1_fit(&flowkv_score_buffers(32, 64), &cfg);
            let placement = map_kernels(&KernelAssignment::decode_reference(4), &cfg);
            let stages = flowkv_stages(32, 64, 10, 32, &cfg);
            let tl = simulate_pipeline(&stages, &cfg)?;
            let mut o = Outcome::default();
            o.expect("memory_bound_at_40gbs", at(40e9) == Bound::MemoryBound)
                .expect("compute_bound_at_80gbs", at(80e9) == Bound::ComputeBound)
                .expect("flowkv_buffers_fit_l1", fit.fits)
                .expect("decode_placement_valid", placement.is_ok())
                .expect("double_buffering_bound", tl.max_buffers_in_flight() <= 2);
            Ok(o)
        }),
        CaseSpec::new("sim/read_bandwidth_metric", |_| {
            let u = u_mem_rd(2.0, 2048.0, 256.0, 8.0, 8.0, 1e-3)?;
            let mut o = Outcome::default();
            o.metric("u_mem_rd", u)
                .expect("exact_value", u == 4_718_592_000.0);
            Ok(o)
        }),
    ]
}

fn layer_cases(full: bool) -> Vec<CaseSpec> {
    let seeds = if full { 20 } else { 2 };
    let len = if full { 64 } else { 32 };
    let mut out: Vec<CaseSpec> = (0..seeds)
        .map(|s| {
            CaseSpec::new(
                format!("layer/decode_vs_prefill/model={s:02}"),
                move |rng| {
                    let model = Model::random(ModelConfig::desk_text(6), rng)?;
                    let x = Matrix::from_fn(len, 64, |_, _| round_f32(rng.gen_range(-1.0..1.0)));
                    let full_rows = model.prefill(&x, &mut model.new_cache())?;
                    let mut caches = model.new_cache();
                    model.prefill(&x.slice_rows(0, 1), &mut caches)?;
                    let mut worst = 0.0f32;
                    for t in 1..len {
                        let y = model.decode_step(x.row(t), &mut caches)?;
                        worst = worst.max(max_rel_error(&y, full_rows.row(t)));
                    }
                    let mut o = Outcome::default();
                    o.within("max_rel_err", f64::from(worst), LAYER_TOL);
                    Ok(o)
                },
            )
        })
        .collect();
    out.push(CaseSpec::new("layer/window_eviction", |rng| {
        let model = Model::random(ModelConfig::desk_text(6), rng)?;
        let t = 40;
        let x = Matrix::from_fn(t + 1, 64, |_, _| round_f32(rng.gen_range(-1.0..1.0)));
        let mut caches = model.new_cache();
        model.prefill(&x.slice_rows(0, t), &mut caches)?;
        let bump_local = |pos: usize| -> flowkern::Result<Vec<LayerCache>> {
            caches
                .iter()
                .zip(&model.layers)
                .map(|(c, layer)| {
                    if layer.config.kind != LayerKind::Local {
                        return Ok(c.clone());
                    }
                    let bump = |m: &Matrix| {
                        Matrix::from_fn(m.rows(), m.cols(), |i, j| {
                            m.get(i, j) + if i == pos { 5.0 } else { 0.0 }
                        })
                    };
                    LayerCache::from_parts(
                        c.keys().iter().map(bump).collect(),
                        c.values().iter().map(bump).collect(),
                    )
                })
                .collect()
        };
        let w = model.layers[0].config.window;
        let base = model.decode_step(x.row(t), &mut caches.clone())?;
        let outside = model.decode_step(x.row(t), &mut bump_local(t - w)?)?;
        let inside = model.decode_step(x.row(t), &mut bump_local(t - w + 1)?)?;
        let mut o = Outcome::default();
        o.expect("evicted_position_ignored", base == outside)
            .expect("in_window_position_used", base != inside);
        Ok(o)
    }));
    out
}
