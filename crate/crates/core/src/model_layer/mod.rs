//! Desk-scale Gemma-style decoder layers wired through the kernels.
//!
//! Activations are float32 matrices holding bf16 values: every projection
//! output, normalized activation, cached key/value and attention output is
//! rounded to bf16, while reductions inside kernels run in float32. Prefill
//! projections use the tiled matmul over dequantized weights; decode uses the
//! fused dequantizing matvec. Both sum each output in ascending input order.

mod cache;
mod layer;
mod ops;

pub use cache::LayerCache;
pub use layer::{decode_step, geglu_mlp, prefill_layer, Layer, LayerWeights, Model, QuantLinear};
pub use ops::{
    gelu_mul, gelu_tanh, qk_norm, rmsnorm, rope, DEFAULT_EPS, GLOBAL_ROPE_BASE, LOCAL_ROPE_BASE,
};

use serde::Serialize;

use crate::error::{ensure, Result};
use crate::refkern::{GqaLayout, MaskKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// Sliding-window attention.
    Local,
    Global,
}

/// Five local layers, then one global, starting with a local layer.
pub fn layer_kind(index: usize) -> LayerKind {
    if (index + 1) % 6 == 0 {
        LayerKind::Global
    } else {
        LayerKind::Local
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerConfig {
    pub model_dim: usize,
    pub heads: usize,
    pub groups: usize,
    pub head_dim: usize,
    pub window: usize,
    pub kind: LayerKind,
    pub mlp_hidden: usize,
    /// Bidirectional attention over the whole sequence (vision-style stacks).
    pub non_causal: bool,
    pub rope_base: f32,
    pub eps: f32,
    pub post_attn_norm: bool,
    pub post_ffw_norm: bool,
    pub prefill_chunk: usize,
    pub decode_chunk: usize,
    /// Workers for the fused decode projections.
    pub workers: usize,
}

impl LayerConfig {
    /// Text layer at desk scale: D = 64, 4 heads over 2 KV groups of width 16, window 16.
    pub fn desk(kind: LayerKind) -> Self {
        Self {
            model_dim: 64,
            heads: 4,
            groups: 2,
            head_dim: 16,
            window: 16,
            kind,
            mlp_hidden: 128,
            non_causal: false,
            rope_base: match kind {
                LayerKind::Local => LOCAL_ROPE_BASE,
                LayerKind::Global => GLOBAL_ROPE_BASE,
            },
            eps: DEFAULT_EPS,
            post_attn_norm: true,
            post_ffw_norm: true,
            // one grid for both phases keeps decode rows identical to prefill rows
            prefill_chunk: 16,
            decode_chunk: 16,
            workers: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        GqaLayout::new(self.heads, self.groups, self.head_dim)?;
        ensure!(
            self.model_dim >= 1 && self.mlp_hidden >= 1,
            InvalidConfig,
            "model and feed-forward dims must be positive"
        );
        ensure!(
            self.head_dim % 2 == 0,
            InvalidConfig,
            "head dim must be even for rotary embedding"
        );
        ensure!(
            self.kind == LayerKind::Global || self.non_causal || self.window >= 1,
            InvalidConfig,
            "local layers need a window of at least 1"
        );
        ensure!(
            self.prefill_chunk >= 1 && self.decode_chunk >= 1 && self.workers >= 1,
            InvalidConfig,
            "chunk lengths and worker count must be positive"
        );
        Ok(())
    }

    pub fn layout(&self) -> GqaLayout {
        GqaLayout {
            heads: self.heads,
            groups: self.groups,
            head_dim: self.head_dim,
        }
    }

    pub fn mask(&self) -> MaskKind {
        match (self.non_causal, self.kind) {
            (true, _) => MaskKind::NonCausal,
            (false, LayerKind::Local) => MaskKind::SlidingWindow(self.window),
            (false, LayerKind::Global) => MaskKind::CausalFull,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelConfig {
    pub layers: Vec<LayerConfig>,
}

impl ModelConfig {
    /// Text stack following the local/global pattern.
    pub fn desk_text(layer_count: usize) -> Self {
        Self {
            layers: (0..layer_count)
                .map(|i| LayerConfig::desk(layer_kind(i)))
                .collect(),
        }
    }

    /// Vision-style stack: bidirectional attention, one KV group per head.
    pub fn desk_vision(layer_count: usize) -> Self {
        let layers = (0..layer_count)
            .map(|_| LayerConfig {
                groups: 4,
                non_causal: true,
                ..LayerConfig::desk(LayerKind::Global)
            })
            .collect();
        Self { layers }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            !self.layers.is_empty(),
            InvalidConfig,
            "model has no layers"
        );
        let d = self.layers[0].model_dim;
        for (i, l) in self.layers.iter().enumerate() {
            l.validate()?;
            ensure!(
                l.model_dim == d,
                InvalidConfig,
                "layer {i} has model dim {}, expected {d}",
                l.model_dim
            );
        }
        Ok(())
    }
}
