//! Inference kernels for tiled dataflow NPUs, modelled on the host.

pub mod chunked_attn;
pub mod dataflow_sim;
pub mod error;
pub mod fused_dqp;
pub mod model_layer;
pub mod q4nx;
pub mod refkern;
pub mod tensor;
pub mod tiled_mm;

pub use error::{Error, Result};
pub use q4nx::Bf16;
pub use tensor::Matrix;
