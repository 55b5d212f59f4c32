//! Q4NX: 4-bit block quantization with per-group bf16 scale and minimum.
//!
//! A block holds 32x256 unsigned 4-bit codes, 256 scales and 256 minima and
//! serializes to exactly 5120 bytes. Each group of 32 consecutive input-dim
//! elements dequantizes as `w = d_g * code + m_g`.

mod bf16;
mod block;
mod container;
mod tensor;

pub use bf16::{bf16_round, round_f32, Bf16};
pub use block::{
    dequantize_block, group_of, parse_block, quantize_block, serialize_block, Q4nxBlock,
    BLOCK_BYTES, BLOCK_COLS, BLOCK_ROWS, CODE_BYTES, GROUPS_PER_ROW, GROUP_COUNT, GROUP_SIZE,
};
pub use container::{
    decode_container, encode_container, parse_header, read_container, write_container,
    ContainerHeader, HEADER_BYTES, MAGIC, VERSION,
};
pub use tensor::{dequantize_padded, dequantize_tensor, quantize_tensor, Q4nxTensor};
