//! Tiled matrix multiply on a grid of compute tiles, with data-movement cost models.
//!
//! One load-compute cycle gives each compute tile an `m x k` slice of A and a
//! `k x n` slice of B. A slices are shared down a grid column and B slices
//! across a grid row, so `columns x 4` tiles produce a `(columns*m) x 4n`
//! supertile after `K/k` cycles. A megatile stacks `e_y x e_x` supertiles in
//! L2 so each A panel is reused across `e_x` supertiles and each B panel across
//! `e_y`.

use serde::Serialize;

use crate::error::{ensure, Result};
use crate::q4nx::Bf16;
use crate::tensor::Matrix;

pub const GRID_COLUMNS: usize = 8;
pub const GRID_ROWS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct TileShape {
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

impl TileShape {
    pub fn new(m: usize, k: usize, n: usize) -> Result<Self> {
        ensure!(
            m >= 1 && k >= 1 && n >= 1,
            InvalidConfig,
            "tile dims must be positive, got {m}x{k}x{n}"
        );
        Ok(Self { m, k, n })
    }

    /// L1 bytes for double-buffered bf16 `a`, `b` and float32 `c` tiles.
    pub fn l1_bytes(&self) -> usize {
        2 * (2 * self.m * self.k + 2 * self.k * self.n + 4 * self.m * self.n)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct MegatileConfig {
    pub tile: TileShape,
    pub e_x: usize,
    pub e_y: usize,
    /// Grid columns in use; fewer than 8 shrinks the megatile height for short inputs.
    pub columns: usize,
}

impl MegatileConfig {
    pub fn new(tile: TileShape, e_x: usize, e_y: usize, columns: usize) -> Result<Self> {
        ensure!(
            e_x >= 1 && e_y >= 1,
            InvalidConfig,
            "expansion factors must be at least 1"
        );
        ensure!(
            (1..=GRID_COLUMNS).contains(&columns),
            InvalidConfig,
            "columns must be in 1..={GRID_COLUMNS}, got {columns}"
        );
        Ok(Self {
            tile,
            e_x,
            e_y,
            columns,
        })
    }

    /// Full-grid config whose megatile is `rows x cols` for the given tile.
    pub fn with_megatile(tile: TileShape, rows: usize, cols: usize) -> Result<Self> {
        let (sr, sc) = (GRID_COLUMNS * tile.m, GRID_ROWS * tile.n);
        ensure!(
            rows % sr == 0 && cols % sc == 0 && rows > 0 && cols > 0,
            InvalidConfig,
            "megatile {rows}x{cols} is not a multiple of the {sr}x{sc} supertile"
        );
        Self::new(tile, cols / sc, rows / sr, GRID_COLUMNS)
    }

    pub fn supertile_rows(&self) -> usize {
        self.columns * self.tile.m
    }

    pub fn supertile_cols(&self) -> usize {
        GRID_ROWS * self.tile.n
    }

    pub fn megatile_rows(&self) -> usize {
        self.e_y * self.supertile_rows()
    }

    pub fn megatile_cols(&self) -> usize {
        self.e_x * self.supertile_cols()
    }

    /// Float32 output block staged in L2.
    pub fn l2_bytes(&self) -> usize {
        4 * self.megatile_rows() * self.megatile_cols()
    }

    pub fn label(&self) -> String {
        format!(
            "{}x{} megatile (tile {}x{}x{}, e_x {}, e_y {}, {} col)",
            self.megatile_rows(),
            self.megatile_cols(),
            self.tile.m,
            self.tile.k,
            self.tile.n,
            self.e_x,
            self.e_y,
            self.columns
        )
    }
}

/// The three megatile shapes (M_t x K_t x N_t) measured on a 2048-cube bf16 GEMM,
/// with their throughput in TOPS. Only M_t and N_t enter the cost model.
pub const MEASURED_MEGATILES: [((usize, usize, usize), f64); 3] = [
    ((128, 512, 512), 5.9),
    ((256, 256, 512), 12.0),
    ((512, 512, 512), 13.7),
];

/// Tile used to realize the measured megatile shapes on the full grid.
pub const MEASURED_TILE: TileShape = TileShape {
    m: 16,
    k: 64,
    n: 32,
};

pub fn measured_configs() -> Vec<MegatileConfig> {
    MEASURED_MEGATILES
        .iter()
        .map(|&((rows, _, cols), _)| {
            MegatileConfig::with_megatile(MEASURED_TILE, rows, cols)
                .expect("measured shapes are supertile multiples")
        })
        .collect()
}

/// Measured shapes plus power-of-two tiles over every column count and small expansions.
pub fn default_candidates() -> Vec<MegatileConfig> {
    let mut out = measured_configs();
    for m in [16, 32, 64] {
        for k in [16, 32, 64] {
            for n in [16, 32, 64] {
                for columns in [1, 2, 4, 8] {
                    for e_x in [1, 2, 4] {
                        for e_y in [1, 2, 4] {
                            let cfg = MegatileConfig::new(TileShape { m, k, n }, e_x, e_y, columns)
                                .unwrap();
                            if !out.contains(&cfg) {
                                out.push(cfg);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CostReport {
    /// Input bytes loaded from DRAM.
    pub bytes_moved: f64,
    pub flops: f64,
    /// Padded work over useful work, minus one.
    pub padding_overhead: f64,
    /// Flops per input byte.
    pub intensity: f64,
    /// Output bytes written back; not part of `bytes_moved`.
    pub writeback_bytes: f64,
}

fn check_dims(m: usize, k: usize, n: usize) -> Result<()> {
    ensure!(
        m >= 1 && k >= 1 && n >= 1,
        InvalidConfig,
        "problem dims must be positive, got {m}x{k}x{n}"
    );
    Ok(())
}

fn two_term(m: usize, k: usize, n: usize, rows: usize, cols: usize, elem_bytes: usize) -> f64 {
    let size_a = (m * k * elem_bytes) as f64;
    let size_b = (k * n * elem_bytes) as f64;
    n as f64 / cols as f64 * size_a + m as f64 / rows as f64 * size_b
}

/// Bytes loaded when every `tile_m x tile_n` output tile streams its A rows and B columns:
/// `(N/n) size(A) + (M/m) size(B)`.
pub fn cost_basic(
    m: usize,
    k: usize,
    n: usize,
    tile_m: usize,
    tile_n: usize,
    elem_bytes: usize,
) -> Result<f64> {
    check_dims(m, k, n)?;
    ensure!(
        tile_m >= 1 && tile_n >= 1,
        InvalidConfig,
        "tile dims must be positive"
    );
    Ok(two_term(m, k, n, tile_m, tile_n, elem_bytes))
}

/// Bytes loaded with megatile reuse: `N/(4 e_x n) size(A) + M/(cols e_y m) size(B)`.
pub fn cost_megatile(
    m: usize,
    k: usize,
    n: usize,
    cfg: &MegatileConfig,
    elem_bytes: usize,
) -> Result<f64> {
    check_dims(m, k, n)?;
    Ok(two_term(
        m,
        k,
        n,
        cfg.megatile_rows(),
        cfg.megatile_cols(),
        elem_bytes,
    ))
}

pub fn padding_overhead(m: usize, k: usize, n: usize, cfg: &MegatileConfig) -> f64 {
    let pad = |x: usize, to: usize| x.div_ceil(to) * to;
    let padded = pad(m, cfg.megatile_rows()) as f64
        * pad(k, cfg.tile.k) as f64
        * pad(n, cfg.megatile_cols()) as f64;
    padded / (m as f64 * k as f64 * n as f64) - 1.0
}

pub fn cost_report(
    m: usize,
    k: usize,
    n: usize,
    cfg: &MegatileConfig,
    elem_bytes: usize,
) -> Result<CostReport> {
    let bytes_moved = cost_megatile(m, k, n, cfg, elem_bytes)?;
    let flops = 2.0 * m as f64 * k as f64 * n as f64;
    Ok(CostReport {
        bytes_moved,
        flops,
        padding_overhead: padding_overhead(m, k, n, cfg),
        intensity: flops / bytes_moved,
        writeback_bytes: (m * n * elem_bytes) as f64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct MemoryLimits {
    pub l1_bytes: usize,
    pub l2_bytes: usize,
}

impl Default for MemoryLimits {
    fn default() -> Self {
        Self {
            l1_bytes: 64 * 1024,
            l2_bytes: 8 * 512 * 1024,
        }
    }
}

impl MemoryLimits {
    pub fn fits(&self, cfg: &MegatileConfig) -> bool {
        cfg.tile.l1_bytes() <= self.l1_bytes && cfg.l2_bytes() <= self.l2_bytes
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedConfig {
    pub config: MegatileConfig,
    pub label: String,
    pub cost: CostReport,
    /// `bytes_moved * (1 + padding_overhead)`; lower is better.
    pub score: f64,
}

/// Feasible candidates, best first. bf16 operands.
pub fn select_tile_config(
    m: usize,
    k: usize,
    n: usize,
    limits: &MemoryLimits,
    candidates: &[MegatileConfig],
) -> Result<Vec<RankedConfig>> {
    check_dims(m, k, n)?;
    ensure!(
        !candidates.is_empty(),
        InvalidConfig,
        "no candidate configs given"
    );
    let mut ranked = candidates
        .iter()
        .filter(|c| limits.fits(c))
        .map(|c| {
            let cost = cost_report(m, k, n, c, 2)?;
            Ok(RankedConfig {
                config: *c,
                label: c.label(),
                cost,
                score: cost.bytes_moved * (1.0 + cost.padding_overhead),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ensure!(
        !ranked.is_empty(),
        Infeasible,
        "none of {} candidates fit L1 {} B / L2 {} B",
        candidates.len(),
        limits.l1_bytes,
        limits.l2_bytes
    );
    ranked.sort_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then(a.cost.padding_overhead.total_cmp(&b.cost.padding_overhead))
    });
    Ok(ranked)
}

/// Float32 product accumulated tile by tile.
///
/// Megatiles run in row-major order; inside each, supertiles run row-major and
/// every compute tile accumulates its `c` over `K/k` cycles in ascending `k`.
/// Tiles are clipped to the logical extents, so padding is never computed and
/// each output element sums its products in the same order as a plain triple loop.
pub fn tiled_matmul_acc(
    a: &Matrix<Bf16>,
    b: &Matrix<Bf16>,
    cfg: &MegatileConfig,
) -> Result<Matrix> {
    ensure!(
        a.cols() == b.rows(),
        DimMismatch,
        "cannot multiply {:?} by {:?}",
        a.shape(),
        b.shape()
    );
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let a32 = a.to_f32();
    let b32 = b.to_f32();
    let mut c = Matrix::zeros(m, n);
    let t = cfg.tile;
    for mt_r in (0..m).step_by(cfg.megatile_rows()) {
        for mt_c in (0..n).step_by(cfg.megatile_cols()) {
            for st_r in (mt_r..(mt_r + cfg.megatile_rows()).min(m)).step_by(cfg.supertile_rows()) {
                for st_c in
                    (mt_c..(mt_c + cfg.megatile_cols()).min(n)).step_by(cfg.supertile_cols())
                {
                    for k0 in (0..k).step_by(t.k) {
                        let k1 = (k0 + t.k).min(k);
                        for col in 0..cfg.columns {
                            let r0 = st_r + col * t.m;
                            for row in 0..GRID_ROWS {
                                let c0 = st_c + row * t.n;
                                tile_update(
                                    &a32,
                                    &b32,
                                    &mut c,
                                    r0..(r0 + t.m).min(m),
                                    c0..(c0 + t.n).min(n),
                                    k0..k1,
                                );
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(c)
}

fn tile_update(
    a: &Matrix,
    b: &Matrix,
    c: &mut Matrix,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
    ks: std::ops::Range<usize>,
) {
    if cols.is_empty() {
        return;
    }
    for i in rows {
        let a_row = a.row(i);
        let c_row = &mut c.row_mut(i)[cols.clone()];
        for kk in ks.clone() {
            let aik = a_row[kk];
            let b_row = &b.row(kk)[cols.clone()];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += aik * bv;
            }
        }
    }
}

/// Tiled product with bf16 output.
pub fn tiled_matmul(
    a: &Matrix<Bf16>,
    b: &Matrix<Bf16>,
    cfg: &MegatileConfig,
) -> Result<Matrix<Bf16>> {
    Ok(tiled_matmul_acc(a, b, cfg)?.to_bf16())
}
