//! Linear-order cosine attention and the machinery around it.
//!
//! * [`tensor`]: dense matrices, feature maps, seeded generation, tensor files
//! * [`attention`]: softmax, quadratic cosine, linear-order cosine and
//!   unnormalized dot attention, plus the analytic backward pass
//! * [`fa_block`]: the full attention block with 1×1 projections
//! * [`streaming`]: sliding-window spatial-temporal attention with per-frame
//!   context reuse
//! * [`flops`]: analytic cost model of the attention modules
//! * [`toynet`]: a small encoder/decoder segmentation graph with
//!   configurable extra spatial reduction

pub mod attention;
pub mod error;
pub mod fa_block;
pub mod flops;
pub mod streaming;
pub mod tensor;
pub mod toynet;

pub use error::{Error, Result};
pub use tensor::{Distribution, FeatureMap, Matrix, OpCounts, Precision, Real, SeededRng};
