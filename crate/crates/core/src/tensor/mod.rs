//! Dense real-matrix substrate shared by every other module.
//!
//! Everything is row-major. A [`FeatureMap`] is stored channel-major
//! (`C×H×W`) and flattens to an `n×C` matrix in pixel-major order, the
//! single canonical layout the attention code assumes.

mod counter;
mod feature_map;
mod io;
mod matrix;
mod real;
mod rng;

pub use counter::{measure, record_adds, record_macs, OpCounts};
pub use feature_map::FeatureMap;
pub use io::{
    load_feature_map, load_matrix, load_tensor, save_feature_map, save_matrix, save_tensor,
    RawTensor, TensorData, FORMAT_VERSION, MAGIC,
};
pub use matrix::Matrix;
pub use real::{Dtype, Precision, Real};
pub use rng::{random_matrix, Distribution, SeededRng};
