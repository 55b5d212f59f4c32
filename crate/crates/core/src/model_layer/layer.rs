//! Layer weights, the shared prefill/decode block, and the layer stack.

use rand::Rng;

use super::cache::LayerCache;
use super::ops::{gelu_mul, qk_norm, rmsnorm, rope};
use super::{LayerConfig, ModelConfig};
use crate::chunked_attn::{flowkv_decode, flowqkv_prefill, ChunkPlan};
use crate::error::{ensure, Result};
use crate::fused_dqp::{fused_dqp_accumulate, FusedDqpPlan};
use crate::q4nx::{dequantize_tensor, quantize_tensor, round_f32, Bf16, Q4nxTensor};
use crate::refkern::default_scale;
use crate::tensor::Matrix;
use crate::tiled_mm::{
    default_candidates, select_tile_config, tiled_matmul_acc, MegatileConfig, MemoryLimits,
};

/// A Q4NX weight `out x in` with its dequantized transpose for the prefill path.
#[derive(Clone, Debug)]
pub struct QuantLinear {
    weight: Q4nxTensor,
    dense_t: Matrix<Bf16>,
    plan: FusedDqpPlan,
}

impl QuantLinear {
    pub fn new(weight: Q4nxTensor, workers: usize) -> Result<Self> {
        let dense_t = dequantize_tensor(&weight).transpose();
        let plan = FusedDqpPlan::for_tensor(workers, &weight)?;
        Ok(Self {
            weight,
            dense_t,
            plan,
        })
    }

    /// Uniform weights in `+-1/sqrt(in)`.
    pub fn random<R: Rng>(
        out_dim: usize,
        in_dim: usize,
        workers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let a = 1.0 / (in_dim as f32).sqrt();
        let w = Matrix::from_fn(out_dim, in_dim, |_, _| rng.gen_range(-a..a));
        Self::new(quantize_tensor(&w)?, workers)
    }

    pub fn in_dim(&self) -> usize {
        self.weight.logical_cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.logical_rows()
    }

    pub fn weight(&self) -> &Q4nxTensor {
        &self.weight
    }

    /// Dequantized `out x in` weight as float32.
    pub fn dense(&self) -> Matrix {
        self.dense_t.transpose().to_f32()
    }

    fn tile_config(&self, rows: usize) -> Result<MegatileConfig> {
        let ranked = select_tile_config(
            rows,
            self.in_dim(),
            self.out_dim(),
            &MemoryLimits::default(),
            &default_candidates(),
        )?;
        Ok(ranked[0].config)
    }

    /// `x W^T` for each row of `x`, through the tiled matmul; bf16 output.
    pub fn forward_rows(&self, x: &Matrix) -> Result<Matrix> {
        ensure!(
            x.cols() == self.in_dim(),
            DimMismatch,
            "input width {} != weight input dim {}",
            x.cols(),
            self.in_dim()
        );
        let cfg = self.tile_config(x.rows().max(1))?;
        Ok(tiled_matmul_acc(&x.to_bf16(), &self.dense_t, &cfg)?.round_bf16())
    }

    /// `W x` through the fused dequantizing matvec; bf16 output.
    pub fn forward_vec(&self, x: &[f32]) -> Result<Vec<f32>> {
        let a: Vec<Bf16> = x.iter().map(|&v| Bf16::from_f32(v)).collect();
        Ok(fused_dqp_accumulate(&self.weight, &a, &self.plan)?
            .into_iter()
            .map(round_f32)
            .collect())
    }
}

#[derive(Clone, Debug)]
pub struct LayerWeights {
    pub q: QuantLinear,
    pub k: QuantLinear,
    pub v: QuantLinear,
    pub o: QuantLinear,
    pub gate: QuantLinear,
    pub up: QuantLinear,
    pub down: QuantLinear,
    pub input_norm: Vec<f32>,
    pub post_attn_norm: Vec<f32>,
    pub pre_ffw_norm: Vec<f32>,
    pub post_ffw_norm: Vec<f32>,
    pub q_norm: Vec<f32>,
    pub k_norm: Vec<f32>,
}

impl LayerWeights {
    pub fn random<R: Rng>(cfg: &LayerConfig, rng: &mut R) -> Result<Self> {
        let (dm, hd, w) = (cfg.model_dim, cfg.head_dim, cfg.workers);
        let mut gamma = |n: usize| -> Vec<f32> {
            (0..n)
                .map(|_| round_f32(rng.gen_range(-0.2..0.2)))
                .collect()
        };
        let norms = [
            gamma(dm),
            gamma(dm),
            gamma(dm),
            gamma(dm),
            gamma(hd),
            gamma(hd),
        ];
        let [input_norm, post_attn_norm, pre_ffw_norm, post_ffw_norm, q_norm, k_norm] = norms;
        Ok(Self {
            q: QuantLinear::random(cfg.heads * hd, dm, w, rng)?,
            k: QuantLinear::random(cfg.groups * hd, dm, w, rng)?,
            v: QuantLinear::random(cfg.groups * hd, dm, w, rng)?,
            o: QuantLinear::random(dm, cfg.heads * hd, w, rng)?,
            gate: QuantLinear::random(cfg.mlp_hidden, dm, w, rng)?,
            up: QuantLinear::random(cfg.mlp_hidden, dm, w, rng)?,
            down: QuantLinear::random(dm, cfg.mlp_hidden, w, rng)?,
            input_norm,
            post_attn_norm,
            pre_ffw_norm,
            post_ffw_norm,
            q_norm,
            k_norm,
        })
    }

    fn check(&self, cfg: &LayerConfig) -> Result<()> {
        let (dm, hd) = (cfg.model_dim, cfg.head_dim);
        let shapes = [
            (&self.q, cfg.heads * hd, dm),
            (&self.k, cfg.groups * hd, dm),
            (&self.v, cfg.groups * hd, dm),
            (&self.o, dm, cfg.heads * hd),
            (&self.gate, cfg.mlp_hidden, dm),
            (&self.up, cfg.mlp_hidden, dm),
            (&self.down, dm, cfg.mlp_hidden),
        ];
        for (i, (w, o, n)) in shapes.into_iter().enumerate() {
            ensure!(
                (w.out_dim(), w.in_dim()) == (o, n),
                DimMismatch,
                "projection {i} is {}x{}, config needs {o}x{n}",
                w.out_dim(),
                w.in_dim()
            );
        }
        let norms = [
            (&self.input_norm, dm),
            (&self.post_attn_norm, dm),
            (&self.pre_ffw_norm, dm),
            (&self.post_ffw_norm, dm),
            (&self.q_norm, hd),
            (&self.k_norm, hd),
        ];
        ensure!(
            norms.iter().all(|(g, n)| g.len() == *n),
            DimMismatch,
            "norm weights do not match the config"
        );
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Layer {
    pub config: LayerConfig,
    pub weights: LayerWeights,
}

impl Layer {
    pub fn new(config: LayerConfig, weights: LayerWeights) -> Result<Self> {
        config.validate()?;
        weights.check(&config)?;
        Ok(Self { config, weights })
    }

    pub fn random<R: Rng>(config: LayerConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let weights = LayerWeights::random(&config, rng)?;
        Ok(Self { config, weights })
    }

    pub fn new_cache(&self) -> LayerCache {
        LayerCache::new(self.config.groups, self.config.head_dim)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Phase {
    Prefill,
    Decode,
}

fn project(w: &QuantLinear, x: &Matrix, phase: Phase) -> Result<Matrix> {
    match phase {
        Phase::Prefill => w.forward_rows(x),
        Phase::Decode => {
            let rows = (0..x.rows())
                .map(|r| w.forward_vec(x.row(r)))
                .collect::<Result<Vec<_>>>()?;
            Matrix::from_rows(&rows)
        }
    }
}

fn norm_rows(x: &Matrix, gamma: &[f32], eps: f32) -> Result<Matrix> {
    let rows = (0..x.rows())
        .map(|r| {
            Ok(rmsnorm(x.row(r), gamma, eps)?
                .into_iter()
                .map(round_f32)
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_rows(&rows)
}

fn add_rows(a: &Matrix, b: &Matrix) -> Matrix {
    Matrix::from_fn(a.rows(), a.cols(), |i, j| {
        round_f32(a.get(i, j) + b.get(i, j))
    })
}

/// Split `rows x (n*d)` into `n` matrices of `rows x d`, normalizing and rotating each row.
fn split_heads(
    x: &Matrix,
    n: usize,
    d: usize,
    rotate: Option<(&[f32], usize, &LayerConfig)>,
) -> Result<Vec<Matrix>> {
    (0..n)
        .map(|h| {
            let rows = (0..x.rows())
                .map(|r| {
                    let seg = &x.row(r)[h * d..(h + 1) * d];
                    match rotate {
                        None => Ok(seg.to_vec()),
                        Some((gamma, first_pos, cfg)) => {
                            let normed: Vec<f32> = qk_norm(seg, gamma, cfg.eps)?
                                .into_iter()
                                .map(round_f32)
                                .collect();
                            Ok(rope(&normed, first_pos + r, cfg.rope_base)?
                                .into_iter()
                                .map(round_f32)
                                .collect())
                        }
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Matrix::from_rows(&rows)
        })
        .collect()
}

fn mlp_rows(w: &LayerWeights, x: &Matrix, phase: Phase) -> Result<Matrix> {
    let gate = project(&w.gate, x, phase)?;
    let up = project(&w.up, x, phase)?;
    let act = Matrix::from_fn(gate.rows(), gate.cols(), |i, j| {
        round_f32(gelu_mul(gate.get(i, j), up.get(i, j)))
    });
    project(&w.down, &act, phase)
}

fn block(layer: &Layer, x: &Matrix, cache: &mut LayerCache, phase: Phase) -> Result<Matrix> {
    let (cfg, w) = (&layer.config, &layer.weights);
    ensure!(
        x.cols() == cfg.model_dim,
        DimMismatch,
        "input width {} != model dim {}",
        x.cols(),
        cfg.model_dim
    );
    ensure!(
        cache.groups() == cfg.groups && cache.keys()[0].cols() == cfg.head_dim,
        DimMismatch,
        "cache layout does not match the layer"
    );
    let prior = cache.len();
    let h = norm_rows(x, &w.input_norm, cfg.eps)?;
    let q = project(&w.q, &h, phase)?;
    let k = project(&w.k, &h, phase)?;
    let v = project(&w.v, &h, phase)?;
    let q_heads = split_heads(&q, cfg.heads, cfg.head_dim, Some((&w.q_norm, prior, cfg)))?;
    let k_groups = split_heads(&k, cfg.groups, cfg.head_dim, Some((&w.k_norm, prior, cfg)))?;
    let v_groups = split_heads(&v, cfg.groups, cfg.head_dim, None)?;
    cache.append(&k_groups, &v_groups)?;

    let layout = cfg.layout();
    let scale = default_scale(cfg.head_dim);
    let len = cache.len();
    let heads_out: Vec<Matrix> = match phase {
        Phase::Prefill => {
            let plan = ChunkPlan::prefill(cfg.mask(), cfg.prefill_chunk, len, x.rows())?;
            flowqkv_prefill(
                &q_heads,
                cache.keys(),
                cache.values(),
                &layout,
                &plan,
                scale,
            )?
        }
        Phase::Decode => {
            ensure!(
                x.rows() == 1,
                DimMismatch,
                "decode takes one token, got {}",
                x.rows()
            );
            let plan = ChunkPlan::decode(cfg.mask(), cfg.decode_chunk, len)?;
            let q1 = Matrix::from_rows(
                &q_heads
                    .iter()
                    .map(|m| m.row(0).to_vec())
                    .collect::<Vec<_>>(),
            )?;
            let out = flowkv_decode(&q1, cache.keys(), cache.values(), &layout, &plan, scale)?;
            (0..cfg.heads)
                .map(|hh| out.slice_rows(hh, hh + 1))
                .collect()
        }
    };
    let attn = Matrix::from_fn(x.rows(), cfg.heads * cfg.head_dim, |r, c| {
        round_f32(heads_out[c / cfg.head_dim].get(r, c % cfg.head_dim))
    });

    let mut o = project(&w.o, &attn, phase)?;
    if cfg.post_attn_norm {
        o = norm_rows(&o, &w.post_attn_norm, cfg.eps)?;
    }
    let x1 = add_rows(x, &o);
    let h2 = norm_rows(&x1, &w.pre_ffw_norm, cfg.eps)?;
    let mut f = mlp_rows(w, &h2, phase)?;
    if cfg.post_ffw_norm {
        f = norm_rows(&f, &w.post_ffw_norm, cfg.eps)?;
    }
    Ok(add_rows(&x1, &f))
}

/// Process `x` (`L_p x D`, bf16 values) as the next `L_p` tokens after the cached context.
pub fn prefill_layer(layer: &Layer, x: &Matrix, cache: &mut LayerCache) -> Result<Matrix> {
    ensure!(
        x.rows() >= 1,
        DimMismatch,
        "prefill needs at least one token"
    );
    block(layer, x, cache, Phase::Prefill)
}

/// Process one token through the decode path.
pub fn decode_step(layer: &Layer, x: &[f32], cache: &mut LayerCache) -> Result<Vec<f32>> {
    let xm = Matrix::from_vec(1, x.len(), x.to_vec())?;
    Ok(block(layer, &xm, cache, Phase::Decode)?.into_vec())
}

/// `down(gelu(gate x) * up x)` for one vector, through the fused decode projections.
pub fn geglu_mlp(
    x: &[f32],
    gate: &QuantLinear,
    up: &QuantLinear,
    down: &QuantLinear,
) -> Result<Vec<f32>> {
    ensure!(
        gate.out_dim() == up.out_dim()
            && down.in_dim() == gate.out_dim()
            && gate.in_dim() == up.in_dim(),
        DimMismatch,
        "feed-forward projection shapes are inconsistent"
    );
    let g = gate.forward_vec(x)?;
    let u = up.forward_vec(x)?;
    let act: Vec<f32> = g
        .iter()
        .zip(&u)
        .map(|(a, b)| round_f32(gelu_mul(*a, *b)))
        .collect();
    down.forward_vec(&act)
}

/// A stack of layers owning no state; caches are passed in.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub layers: Vec<Layer>,
}

impl Model {
    pub fn random<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layers
            .iter()
            .map(|c| Layer::random(c.clone(), rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, layers })
    }

    pub fn new_cache(&self) -> Vec<LayerCache> {
        self.layers.iter().map(Layer::new_cache).collect()
    }

    pub fn prefill(&self, x: &Matrix, caches: &mut [LayerCache]) -> Result<Matrix> {
        ensure!(
            caches.len() == self.layers.len(),
            DimMismatch,
            "one cache per layer required"
        );
        let mut h = x.round_bf16();
        for (layer, cache) in self.layers.iter().zip(caches.iter_mut()) {
            h = prefill_layer(layer, &h, cache)?;
        }
        Ok(h)
    }

    pub fn decode_step(&self, x: &[f32], caches: &mut [LayerCache]) -> Result<Vec<f32>> {
        ensure!(
            caches.len() == self.layers.len(),
            DimMismatch,
            "one cache per layer required"
        );
        let mut h: Vec<f32> = x.iter().copied().map(round_f32).collect();
        for (layer, cache) in self.layers.iter().zip(caches.iter_mut()) {
            h = decode_step(layer, &h, cache)?;
        }
        Ok(h)
    }
}
