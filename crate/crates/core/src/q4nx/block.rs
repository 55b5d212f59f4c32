//! One 32x256 Q4NX block: packed 4-bit codes plus a bf16 scale and minimum per group.
//!
//! Groups run along the input (column) axis: row `r`, columns `32j..32j+32`
//! form group `8r + j`.

use super::bf16::{bf16_round, Bf16};
use crate::error::{ensure, Error, Result};
use crate::tensor::Matrix;

pub const BLOCK_ROWS: usize = 32;
pub const BLOCK_COLS: usize = 256;
pub const GROUP_SIZE: usize = 32;
pub const GROUPS_PER_ROW: usize = BLOCK_COLS / GROUP_SIZE;
pub const GROUP_COUNT: usize = BLOCK_ROWS * GROUPS_PER_ROW;
pub const CODE_BYTES: usize = BLOCK_ROWS * BLOCK_COLS / 2;
pub const BLOCK_BYTES: usize = CODE_BYTES + 2 * GROUP_COUNT * 2;

const _: () = assert!(BLOCK_BYTES == 5120);
const _: () = assert!(GROUP_COUNT == 256);

/// Group index of element `(row, col)` inside a block.
#[inline]
pub const fn group_of(row: usize, col: usize) -> usize {
    row * GROUPS_PER_ROW + col / GROUP_SIZE
}

#[derive(Clone, PartialEq, Eq)]
pub struct Q4nxBlock {
    /// Row-major codes, two per byte, low nibble holds the even column.
    codes: Vec<u8>,
    scales: Vec<Bf16>,
    mins: Vec<Bf16>,
}

impl std::fmt::Debug for Q4nxBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Q4nxBlock")
            .field("scales[0]", &self.scales[0])
            .field("mins[0]", &self.mins[0])
            .finish_non_exhaustive()
    }
}

impl Default for Q4nxBlock {
    fn default() -> Self {
        Self::zeroed()
    }
}

impl Q4nxBlock {
    /// All codes, scales and minima zero; dequantizes to zeros.
    pub fn zeroed() -> Self {
        Self {
            codes: vec![0; CODE_BYTES],
            scales: vec![Bf16::ZERO; GROUP_COUNT],
            mins: vec![Bf16::ZERO; GROUP_COUNT],
        }
    }

    /// Assemble a block from unpacked codes (row-major, 8192 entries) and per-group parameters.
    pub fn from_parts(codes: &[u8], scales: &[Bf16], mins: &[Bf16]) -> Result<Self> {
        ensure!(
            codes.len() == BLOCK_ROWS * BLOCK_COLS,
            DimMismatch,
            "expected {} codes, got {}",
            BLOCK_ROWS * BLOCK_COLS,
            codes.len()
        );
        ensure!(
            scales.len() == GROUP_COUNT && mins.len() == GROUP_COUNT,
            DimMismatch,
            "expected {GROUP_COUNT} scales and minima"
        );
        let mut block = Self {
            codes: vec![0; CODE_BYTES],
            scales: scales.to_vec(),
            mins: mins.to_vec(),
        };
        for (i, &c) in codes.iter().enumerate() {
            ensure!(
                c <= 15,
                Format,
                "code {c} at index {i} does not fit in 4 bits"
            );
            block.set_code(i / BLOCK_COLS, i % BLOCK_COLS, c);
        }
        Ok(block)
    }

    #[inline]
    pub fn code(&self, row: usize, col: usize) -> u8 {
        let idx = row * BLOCK_COLS + col;
        let byte = self.codes[idx / 2];
        if idx % 2 == 0 {
            byte & 0x0F
        } else {
            byte >> 4
        }
    }

    #[inline]
    fn set_code(&mut self, row: usize, col: usize, code: u8) {
        debug_assert!(code <= 15);
        let idx = row * BLOCK_COLS + col;
        let byte = &mut self.codes[idx / 2];
        if idx % 2 == 0 {
            *byte = (*byte & 0xF0) | code;
        } else {
            *byte = (*byte & 0x0F) | (code << 4);
        }
    }

    pub fn scales(&self) -> &[Bf16] {
        &self.scales
    }

    pub fn mins(&self) -> &[Bf16] {
        &self.mins
    }

    pub fn packed_codes(&self) -> &[u8] {
        &self.codes
    }

    /// Dequantize one element: `bf16(d_g * code + m_g)` with f32 intermediates.
    #[inline]
    pub fn dequant(&self, row: usize, col: usize) -> Bf16 {
        let g = group_of(row, col);
        bf16_round(self.scales[g].to_f32() * f32::from(self.code(row, col)) + self.mins[g].to_f32())
    }
}

/// Quantize a 32x256 float32 block.
pub fn quantize_block(weights: &Matrix) -> Result<Q4nxBlock> {
    ensure!(
        weights.shape() == (BLOCK_ROWS, BLOCK_COLS),
        DimMismatch,
        "a Q4NX block is {BLOCK_ROWS}x{BLOCK_COLS}, got {:?}",
        weights.shape()
    );
    if let Some(pos) = weights.as_slice().iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!(
            "weight at row {}, col {} is {}",
            pos / BLOCK_COLS,
            pos % BLOCK_COLS,
            weights.as_slice()[pos]
        )));
    }
    let mut block = Q4nxBlock::zeroed();
    for row in 0..BLOCK_ROWS {
        let src = weights.row(row);
        for (j, group) in src.chunks_exact(GROUP_SIZE).enumerate() {
            let g = row * GROUPS_PER_ROW + j;
            let (lo, hi) = group
                .iter()
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &w| {
                    (lo.min(w), hi.max(w))
                });
            let min = bf16_round(lo);
            block.mins[g] = min;
            if hi == lo {
                continue;
            }
            let scale = bf16_round((hi - lo) / 15.0);
            block.scales[g] = scale;
            let (d, m) = (scale.to_f32(), min.to_f32());
            if d == 0.0 {
                continue;
            }
            for (k, &w) in group.iter().enumerate() {
                block.set_code(row, j * GROUP_SIZE + k, nearest_code(w, d, m));
            }
        }
    }
    Ok(block)
}

/// Code for `w` given the stored (bf16) scale and minimum.
///
/// Starts from `round((w - m) / d)` and keeps a neighbouring code only when its
/// bf16-rounded dequantization lands strictly closer to `w`.
#[inline]
fn nearest_code(w: f32, d: f32, m: f32) -> u8 {
    let base = ((w - m) / d).round().clamp(0.0, 15.0) as u8;
    let err = |q: u8| (bf16_round(d * f32::from(q) + m).to_f32() - w).abs();
    let mut best = (base, err(base));
    for q in [base.wrapping_sub(1), base + 1] {
        if q <= 15 {
            let e = err(q);
            if e < best.1 {
                best = (q, e);
            }
        }
    }
    best.0
}

/// Dequantize a block to a 32x256 bf16 matrix.
pub fn dequantize_block(block: &Q4nxBlock) -> Matrix<Bf16> {
    Matrix::from_fn(BLOCK_ROWS, BLOCK_COLS, |r, c| block.dequant(r, c))
}

/// Serialize to the fixed 5120-byte layout: packed codes, then scales, then minima (little-endian).
pub fn serialize_block(block: &Q4nxBlock) -> Vec<u8> {
    let mut out = Vec::with_capacity(BLOCK_BYTES);
    write_block(block, &mut out);
    out
}

pub(crate) fn write_block(block: &Q4nxBlock, out: &mut Vec<u8>) {
    out.extend_from_slice(&block.codes);
    for s in &block.scales {
        out.extend_from_slice(&s.to_bits().to_le_bytes());
    }
    for m in &block.mins {
        out.extend_from_slice(&m.to_bits().to_le_bytes());
    }
}

pub fn parse_block(bytes: &[u8]) -> Result<Q4nxBlock> {
    ensure!(
        bytes.len() == BLOCK_BYTES,
        Format,
        "a Q4NX block is {BLOCK_BYTES} bytes, got {}",
        bytes.len()
    );
    let (codes, rest) = bytes.split_at(CODE_BYTES);
    let (scales, mins) = rest.split_at(GROUP_COUNT * 2);
    let read = |b: &[u8]| -> Vec<Bf16> {
        b.chunks_exact(2)
            .map(|p| Bf16::from_bits(u16::from_le_bytes([p[0], p[1]])))
            .collect()
    };
    Ok(Q4nxBlock {
        codes: codes.to_vec(),
        scales: read(scales),
        mins: read(mins),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn block_from_fn(f: impl FnMut(usize, usize) -> f32) -> Matrix {
        Matrix::from_fn(BLOCK_ROWS, BLOCK_COLS, f)
    }

    #[test]
    fn constant_group_has_zero_scale() {
        let w = block_from_fn(|_, _| 0.3);
        let b = quantize_block(&w).unwrap();
        assert!(b.scales().iter().all(|&s| s == Bf16::ZERO));
        assert!(b.mins().iter().all(|&m| m == bf16_round(0.3)));
        assert!((0..BLOCK_COLS).all(|c| b.code(5, c) == 0));
        let dq = dequantize_block(&b);
        assert!(dq.as_slice().iter().all(|&x| x == bf16_round(0.3)));
    }

    #[test]
    fn ramp_group_spans_all_codes() {
        // group 0 of row 0 holds 0..=31
        let w = block_from_fn(|r, c| if r == 0 && c < 32 { c as f32 } else { 0.0 });
        let b = quantize_block(&w).unwrap();
        assert_eq!(b.mins()[0], Bf16::ZERO);
        assert_eq!(b.scales()[0], bf16_round(31.0 / 15.0));
        assert_eq!(b.code(0, 31), 15);
        assert_eq!(b.code(0, 0), 0);
        // every element within half a step of its source
        let d = b.scales()[0].to_f32();
        let dq = dequantize_block(&b);
        for c in 0..32 {
            assert!((dq.get(0, c).to_f32() - c as f32).abs() <= d / 2.0 + (c as f32) / 256.0);
        }
    }

    #[test]
    fn dequant_formula() {
        let mut codes = vec![0u8; BLOCK_ROWS * BLOCK_COLS];
        codes[0] = 15;
        let mut scales = vec![Bf16::ZERO; GROUP_COUNT];
        let mut mins = vec![Bf16::ZERO; GROUP_COUNT];
        scales[0] = Bf16::from_f32(2.0);
        mins[0] = Bf16::from_f32(-16.0);
        mins[1] = Bf16::from_f32(0.5);
        let b = Q4nxBlock::from_parts(&codes, &scales, &mins).unwrap();
        let dq = dequantize_block(&b);
        assert_eq!(dq.get(0, 0).to_f32(), 14.0);
        assert_eq!(dq.get(0, 1).to_f32(), -16.0);
        // zero code broadcasts the group minimum
        assert!((32..64).all(|c| dq.get(0, c).to_f32() == 0.5));
    }

    #[test]
    fn non_finite_weights_are_rejected() {
        let w = block_from_fn(|r, c| if (r, c) == (3, 7) { f32::NAN } else { 1.0 });
        let err = quantize_block(&w).unwrap_err();
        assert!(matches!(err, Error::NonFinite(ref m) if m.contains("row 3, col 7")));
        let w = block_from_fn(|_, c| if c == 0 { f32::INFINITY } else { 1.0 });
        assert!(quantize_block(&w).is_err());
    }

    #[test]
    fn wrong_shape_is_rejected() {
        assert!(quantize_block(&Matrix::zeros(32, 128)).is_err());
    }

    #[test]
    fn byte_layout() {
        assert_eq!(
            serialize_block(&Q4nxBlock::zeroed()),
            vec![0u8; BLOCK_BYTES]
        );

        let mut codes = vec![0u8; BLOCK_ROWS * BLOCK_COLS];
        codes[0] = 0x1;
        codes[1] = 0x2;
        let mut scales = vec![Bf16::ZERO; GROUP_COUNT];
        scales[0] = Bf16::ONE;
        let b = Q4nxBlock::from_parts(&codes, &scales, &[Bf16::ZERO; GROUP_COUNT]).unwrap();
        let bytes = serialize_block(&b);
        assert_eq!(bytes.len(), 5120);
        assert_eq!(bytes[0], 0x21);
        // first scale follows the codes, little-endian 0x3F80
        assert_eq!(&bytes[CODE_BYTES..CODE_BYTES + 2], &[0x80, 0x3F]);
    }

    #[test]
    fn parse_rejects_wrong_length() {
        assert!(matches!(parse_block(&[0u8; 5119]), Err(Error::Format(_))));
        assert!(parse_block(&[0u8; 5121]).is_err());
    }

    #[test]
    fn from_parts_rejects_wide_codes() {
        let codes = vec![16u8; BLOCK_ROWS * BLOCK_COLS];
        let z = [Bf16::ZERO; GROUP_COUNT];
        assert!(Q4nxBlock::from_parts(&codes, &z, &z).is_err());
    }

    fn arb_block() -> impl Strategy<Value = Q4nxBlock> {
        (
            proptest::collection::vec(0u8..16, BLOCK_ROWS * BLOCK_COLS),
            proptest::collection::vec(any::<u16>(), GROUP_COUNT),
            proptest::collection::vec(any::<u16>(), GROUP_COUNT),
        )
            .prop_map(|(c, s, m)| {
                let s: Vec<Bf16> = s.into_iter().map(Bf16::from_bits).collect();
                let m: Vec<Bf16> = m.into_iter().map(Bf16::from_bits).collect();
                Q4nxBlock::from_parts(&c, &s, &m).unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn serialize_parse_round_trip(b in arb_block()) {
            let bytes = serialize_block(&b);
            prop_assert_eq!(bytes.len(), BLOCK_BYTES);
            prop_assert_eq!(parse_block(&bytes).unwrap(), b);
        }
    }
}
