//! The Q4NX container file.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size | field                     |
//! |--------|------|---------------------------|
//! | 0      | 4    | magic `b"Q4NX"`           |
//! | 4      | 4    | version (`1`)             |
//! | 8      | 8    | logical rows              |
//! | 16     | 8    | logical cols              |
//! | 24     | 4    | group size (`32`)         |
//! | 28     | 8    | padded rows               |
//! | 36     | 8    | padded cols               |
//! | 44     | ...  | blocks, row-major, 5120 B |

use std::io::{Read, Write};

use super::block::{parse_block, write_block, BLOCK_BYTES, BLOCK_COLS, BLOCK_ROWS, GROUP_SIZE};
use super::tensor::Q4nxTensor;
use crate::error::{ensure, Error, Result};

pub const MAGIC: &[u8; 4] = b"Q4NX";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 44;

/// Parsed container header.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub struct ContainerHeader {
    pub version: u32,
    pub logical_rows: u64,
    pub logical_cols: u64,
    pub group_size: u32,
    pub padded_rows: u64,
    pub padded_cols: u64,
}

impl ContainerHeader {
    pub fn block_count(&self) -> usize {
        (self.padded_rows as usize / BLOCK_ROWS) * (self.padded_cols as usize / BLOCK_COLS)
    }

    pub fn payload_bytes(&self) -> usize {
        self.block_count() * BLOCK_BYTES
    }
}

pub fn encode_container(t: &Q4nxTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_BYTES + t.blocks().len() * BLOCK_BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.logical_rows() as u64).to_le_bytes());
    out.extend_from_slice(&(t.logical_cols() as u64).to_le_bytes());
    out.extend_from_slice(&(GROUP_SIZE as u32).to_le_bytes());
    out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
    for b in t.blocks() {
        write_block(b, &mut out);
    }
    out
}

pub fn write_container<W: Write>(t: &Q4nxTensor, mut w: W) -> std::io::Result<()> {
    w.write_all(&encode_container(t))
}

pub fn parse_header(bytes: &[u8]) -> Result<ContainerHeader> {
    ensure!(
        bytes.len() >= HEADER_BYTES,
        Format,
        "container truncated: {} bytes, header needs {HEADER_BYTES}",
        bytes.len()
    );
    ensure!(
        &bytes[0..4] == MAGIC,
        Format,
        "bad magic {:?}",
        &bytes[0..4]
    );
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let h = ContainerHeader {
        version: u32_at(4),
        logical_rows: u64_at(8),
        logical_cols: u64_at(16),
        group_size: u32_at(24),
        padded_rows: u64_at(28),
        padded_cols: u64_at(36),
    };
    ensure!(
        h.version == VERSION,
        Format,
        "unsupported version {}",
        h.version
    );
    ensure!(
        h.group_size as usize == GROUP_SIZE,
        Format,
        "unsupported group size {}",
        h.group_size
    );
    let expect = |n: u64, to: usize| (n as usize).div_ceil(to).max(1) * to;
    ensure!(
        h.padded_rows as usize == expect(h.logical_rows, BLOCK_ROWS)
            && h.padded_cols as usize == expect(h.logical_cols, BLOCK_COLS),
        Format,
        "padded dims {}x{} inconsistent with logical {}x{}",
        h.padded_rows,
        h.padded_cols,
        h.logical_rows,
        h.logical_cols
    );
    Ok(h)
}

pub fn decode_container(bytes: &[u8]) -> Result<Q4nxTensor> {
    let h = parse_header(bytes)?;
    let payload = &bytes[HEADER_BYTES..];
    ensure!(
        payload.len() == h.payload_bytes(),
        Format,
        "payload is {} bytes, header implies {}",
        payload.len(),
        h.payload_bytes()
    );
    let blocks = payload
        .chunks_exact(BLOCK_BYTES)
        .map(parse_block)
        .collect::<Result<Vec<_>>>()?;
    Q4nxTensor::from_blocks(h.logical_rows as usize, h.logical_cols as usize, blocks)
}

pub fn read_container<R: Read>(mut r: R) -> Result<Q4nxTensor> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::Format(format!("read failed: {e}")))?;
    decode_container(&bytes)
}
