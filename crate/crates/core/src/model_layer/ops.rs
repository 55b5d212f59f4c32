//! Element-wise and per-vector layer ops.
//!
//! These run in double precision and return float32; callers round to bf16,
//! so the store is the only rounding that matters.

use crate::error::{ensure, Result};

pub const DEFAULT_EPS: f32 = 1e-6;
pub const LOCAL_ROPE_BASE: f32 = 10_000.0;
pub const GLOBAL_ROPE_BASE: f32 = 1_000_000.0;

/// `x / sqrt(mean(x^2) + eps) * (1 + gamma)`.
pub fn rmsnorm(x: &[f32], gamma: &[f32], eps: f32) -> Result<Vec<f32>> {
    ensure!(
        !x.is_empty(),
        DimMismatch,
        "cannot normalize an empty vector"
    );
    ensure!(
        x.len() == gamma.len(),
        DimMismatch,
        "vector has {} entries, gamma has {}",
        x.len(),
        gamma.len()
    );
    let mean_sq = x.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (mean_sq + f64::from(eps)).sqrt();
    Ok(x.iter()
        .zip(gamma)
        .map(|(&v, &g)| (f64::from(v) * inv * (1.0 + f64::from(g))) as f32)
        .collect())
}

/// Per-head RMSNorm over the head dimension, applied to queries and keys.
pub fn qk_norm(x: &[f32], gamma: &[f32], eps: f32) -> Result<Vec<f32>> {
    rmsnorm(x, gamma, eps)
}

/// Rotary embedding: pair `(x[2i], x[2i+1])` turns by `position * base^(-2i/d)`.
pub fn rope(x: &[f32], position: usize, base: f32) -> Result<Vec<f32>> {
    ensure!(
        x.len() % 2 == 0,
        DimMismatch,
        "rotary embedding needs an even dim, got {}",
        x.len()
    );
    let d = x.len() as f64;
    let mut out = vec![0.0; x.len()];
    for i in 0..x.len() / 2 {
        let angle = position as f64 * f64::from(base).powf(-2.0 * i as f64 / d);
        let (s, c) = angle.sin_cos();
        let (a, b) = (f64::from(x[2 * i]), f64::from(x[2 * i + 1]));
        out[2 * i] = (a * c - b * s) as f32;
        out[2 * i + 1] = (a * s + b * c) as f32;
    }
    Ok(out)
}

fn gelu_f64(u: f64) -> f64 {
    let inner = (2.0 / std::f64::consts::PI).sqrt() * (u + 0.044715 * u * u * u);
    0.5 * u * (1.0 + inner.tanh())
}

/// tanh approximation of GeLU.
pub fn gelu_tanh(u: f32) -> f32 {
    gelu_f64(f64::from(u)) as f32
}

/// Gated activation `gelu(gate) * up`, evaluated in one step.
pub fn gelu_mul(gate: f32, up: f32) -> f32 {
    (gelu_f64(f64::from(gate)) * f64::from(up)) as f32
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rmsnorm_cases() {
        assert_eq!(
            rmsnorm(&[0.0; 4], &[0.3; 4], DEFAULT_EPS).unwrap(),
            vec![0.0; 4]
        );
        let ones = rmsnorm(&[1.0; 4], &[0.0; 4], DEFAULT_EPS).unwrap();
        assert!(ones.iter().all(|v| (v - 1.0).abs() < 1e-6));
        assert!(rmsnorm(&[1.0; 4], &[0.0; 3], DEFAULT_EPS).is_err());
        assert!(rmsnorm(&[], &[], DEFAULT_EPS).is_err());
    }

    proptest! {
        #[test]
        fn rmsnorm_matches_double_precision(
            x in prop::collection::vec(-10.0f32..10.0, 1..96),
            g in -0.5f32..0.5,
        ) {
            let gamma = vec![g; x.len()];
            let got = rmsnorm(&x, &gamma, DEFAULT_EPS).unwrap();
            let ms: f64 = x.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>() / x.len() as f64;
            let inv = 1.0 / (ms + f64::from(DEFAULT_EPS)).sqrt();
            let max = x.iter().map(|&v| (f64::from(v) * inv * (1.0 + f64::from(g))).abs()).fold(0.0, f64::max);
            for (o, &v) in got.iter().zip(&x) {
                let want = f64::from(v) * inv * (1.0 + f64::from(g));
                prop_assert!((f64::from(*o) - want).abs() <= 1e-6 * max.max(1e-30));
            }
        }

        #[test]
        fn rope_scores_depend_only_on_offset(
            q in prop::array::uniform2(-1.0f32..1.0),
            k in prop::array::uniform2(-1.0f32..1.0),
            p in 0usize..500,
            delta in 0usize..50,
        ) {
            let score = |pq: usize, pk: usize| {
                let a = rope(&q, pq, 10_000.0).unwrap();
                let b = rope(&k, pk, 10_000.0).unwrap();
                a[0] * b[0] + a[1] * b[1]
            };
            prop_assert!((score(p + delta, p) - score(delta, 0)).abs() < 1e-4);
        }
    }

    #[test]
    fn rope_cases() {
        let x = [0.3, -0.7, 1.5, 2.0];
        assert_eq!(rope(&x, 0, LOCAL_ROPE_BASE).unwrap(), x.to_vec());
        let r = rope(&[1.0, 0.0], 2, 123.0).unwrap();
        assert!((r[0] - 2f32.cos()).abs() < 1e-7 && (r[1] - 2f32.sin()).abs() < 1e-7);
        assert!(rope(&[1.0, 2.0, 3.0], 1, LOCAL_ROPE_BASE).is_err());
    }

    #[test]
    fn gelu_cases() {
        assert_eq!(gelu_tanh(0.0), 0.0);
        assert!((gelu_tanh(20.0) - 20.0).abs() < 1e-5);
        assert!(gelu_tanh(-20.0).abs() < 1e-5);
        // reference value of the tanh form at u = 1
        assert!((gelu_tanh(1.0) - 0.841_192).abs() < 1e-5);
    }
}
