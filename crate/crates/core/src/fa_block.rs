//! The full attention block: 1×1 projections around the attention core.
//!
//! ```text
//! X ──┬── ·W_q ──────────┐
//!     ├── ·W_k ──────────┤ fast attention ── ·W_out ──(+)── Y
//!     ├── ·W_v ── relu ──┘                             │
//!     └────────────────────────────────────────────────┘
//! ```
//!
//! Query and key projections carry no nonlinearity. A 1×1 convolution is a
//! flatten, a matrix product with a `C_in×C_out` weight, and an unflatten.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attention::{dot_attention_unnormalized, fast_attention, softmax_attention, AttentionInputs};
use crate::error::{Error, Result};
use crate::flops::DEFAULT_ATTENTION_CHANNELS;
use crate::tensor::{
    load_matrix, measure, save_matrix, Distribution, FeatureMap, Matrix, SeededRng,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FABlockConfig {
    pub channels: usize,
    pub attention_channels: usize,
    /// L2-normalize query and key rows. Off gives the unbounded dot-product variant.
    pub normalize: bool,
    pub use_output_projection: bool,
    pub use_residual: bool,
    pub value_relu: bool,
}

impl FABlockConfig {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            attention_channels: DEFAULT_ATTENTION_CHANNELS.min(channels),
            normalize: true,
            use_output_projection: true,
            use_residual: true,
            value_relu: true,
        }
    }

    pub fn with_attention_channels(mut self, attention_channels: usize) -> Self {
        self.attention_channels = attention_channels;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.attention_channels == 0 {
            return Err(Error::Config(format!(
                "channels and attention_channels must be >= 1, got C={} c′={}",
                self.channels, self.attention_channels
            )));
        }
        if self.attention_channels > self.channels {
            return Err(Error::Config(format!(
                "attention_channels c′={} exceeds channels C={}",
                self.attention_channels, self.channels
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FABiases {
    pub query: Vec<f64>,
    pub key: Vec<f64>,
    pub value: Vec<f64>,
    pub out: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FAWeights {
    /// `C×c′`
    pub w_query: Matrix,
    /// `C×c′`
    pub w_key: Matrix,
    /// `C×C`
    pub w_value: Matrix,
    /// `C×C`
    pub w_out: Matrix,
    pub biases: Option<FABiases>,
}

impl FAWeights {
    pub fn channels(&self) -> usize {
        self.w_query.rows()
    }

    pub fn attention_channels(&self) -> usize {
        self.w_query.cols()
    }

    fn validate(&self) -> Result<()> {
        let (c, cp) = (self.channels(), self.attention_channels());
        let expect = |name: &'static str, m: &Matrix, shape: (usize, usize)| {
            if m.shape() != shape {
                Err(Error::shape(
                    "FAWeights",
                    format!("{name} {}x{}", shape.0, shape.1),
                    format!("{name} {}x{}", m.rows(), m.cols()),
                ))
            } else {
                Ok(())
            }
        };
        expect("w_key", &self.w_key, (c, cp))?;
        expect("w_value", &self.w_value, (c, c))?;
        expect("w_out", &self.w_out, (c, c))?;
        if let Some(b) = &self.biases {
            if b.query.len() != cp || b.key.len() != cp || b.value.len() != c || b.out.len() != c {
                return Err(Error::shape(
                    "FAWeights",
                    format!("biases of length {cp}/{cp}/{c}/{c}"),
                    format!(
                        "{}/{}/{}/{}",
                        b.query.len(),
                        b.key.len(),
                        b.value.len(),
                        b.out.len()
                    ),
                ));
            }
        }
        if cp > c {
            return Err(Error::Config(format!(
                "attention_channels c′={cp} exceeds channels C={c}"
            )));
        }
        Ok(())
    }
}

/// Half-width of the uniform initialization for fan-in `fan_in`.
pub fn init_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

/// Seeded weights, each entry drawn from `U(−1/√C, 1/√C)`.
///
/// Draw order from a single stream: `w_query`, `w_key`, `w_value`, `w_out`,
/// each row-major. No biases.
pub fn init_fa_weights(channels: usize, attention_channels: usize, seed: u64) -> Result<FAWeights> {
    FABlockConfig::new(channels)
        .with_attention_channels(attention_channels)
        .validate()?;
    let mut rng = SeededRng::new(seed);
    let dist = Distribution::symmetric(init_bound(channels));
    Ok(FAWeights {
        w_query: rng.matrix(channels, attention_channels, dist),
        w_key: rng.matrix(channels, attention_channels, dist),
        w_value: rng.matrix(channels, channels, dist),
        w_out: rng.matrix(channels, channels, dist),
        biases: None,
    })
}

fn project(x: &Matrix, w: &Matrix, bias: Option<&[f64]>) -> Matrix {
    let y = x.matmul(w).expect("weight shapes validated");
    match bias {
        None => y,
        Some(b) => Matrix::from_fn(y.rows(), y.cols(), |i, j| y.get(i, j) + b[j]),
    }
}

fn check_input(x: &FeatureMap, w: &FAWeights, cfg: &FABlockConfig) -> Result<()> {
    cfg.validate()?;
    w.validate()?;
    if w.channels() != cfg.channels || w.attention_channels() != cfg.attention_channels {
        return Err(Error::Config(format!(
            "weights are C={} c′={}, config says C={} c′={}",
            w.channels(),
            w.attention_channels(),
            cfg.channels,
            cfg.attention_channels
        )));
    }
    if x.channels() != cfg.channels {
        return Err(Error::shape(
            "fa_block_forward",
            format!("{} input channels", cfg.channels),
            format!("{} input channels", x.channels()),
        ));
    }
    Ok(())
}

/// Attention core selected by the block configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Core {
    Fast,
    Dot,
    Softmax,
}

fn block_forward(x: &FeatureMap, w: &FAWeights, cfg: &FABlockConfig, core: Core) -> Result<FeatureMap> {
    check_input(x, w, cfg)?;
    let flat = x.flatten();
    let b = w.biases.as_ref();
    let q = project(&flat, &w.w_query, b.map(|b| b.query.as_slice()));
    let k = project(&flat, &w.w_key, b.map(|b| b.key.as_slice()));
    let mut v = project(&flat, &w.w_value, b.map(|b| b.value.as_slice()));
    if cfg.value_relu {
        v = v.relu();
    }
    let inputs = AttentionInputs::new(q, k, v)?;
    let mut y = match core {
        Core::Fast => fast_attention(&inputs),
        Core::Dot => dot_attention_unnormalized(&inputs),
        Core::Softmax => softmax_attention(&inputs),
    };
    if cfg.use_output_projection {
        y = project(&y, &w.w_out, b.map(|b| b.out.as_slice()));
    }
    if cfg.use_residual {
        y.add_assign(&flat)?;
    }
    FeatureMap::unflatten(&y, x.height(), x.width())
}

/// Forward pass of the attention block. Output has the input's shape.
pub fn fa_block_forward(x: &FeatureMap, w: &FAWeights, cfg: &FABlockConfig) -> Result<FeatureMap> {
    let core = if cfg.normalize { Core::Fast } else { Core::Dot };
    block_forward(x, w, cfg, core)
}

/// The same block with a softmax core: the quadratic non-local baseline.
/// `cfg.normalize` is ignored.
pub fn self_attention_block_forward(
    x: &FeatureMap,
    w: &FAWeights,
    cfg: &FABlockConfig,
) -> Result<FeatureMap> {
    block_forward(x, w, cfg, Core::Softmax)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSweepRow {
    pub attention_channels: usize,
    pub projection_macs: u64,
    pub core_macs: u64,
    pub total_macs: u64,
    pub wall_time_s: f64,
}

/// Runs the default block once per `c′`, recording MACs and elapsed time.
pub fn channel_sweep_report(
    x: &FeatureMap,
    attention_channels: &[usize],
    seed: u64,
) -> Result<Vec<ChannelSweepRow>> {
    let c = x.channels();
    let flat = x.flatten();
    attention_channels
        .iter()
        .map(|&cp| {
            let cfg = FABlockConfig::new(c).with_attention_channels(cp);
            let w = init_fa_weights(c, cp, seed)?;
            let start = Instant::now();
            let (out, total) = measure(|| fa_block_forward(x, &w, &cfg));
            let wall_time_s = start.elapsed().as_secs_f64();
            out?;
            // Core = total minus the four projections, which are pure matmuls
            // of the flattened input or the core output.
            let (_, proj) = measure(|| {
                let _ = flat.matmul(&w.w_query);
                let _ = flat.matmul(&w.w_key);
                let _ = flat.matmul(&w.w_value);
                let _ = flat.matmul(&w.w_out);
            });
            Ok(ChannelSweepRow {
                attention_channels: cp,
                projection_macs: proj.macs,
                core_macs: total.macs - proj.macs,
                total_macs: total.macs,
                wall_time_s,
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsManifest {
    channels: usize,
    attention_channels: usize,
    w_query: String,
    w_key: String,
    w_value: String,
    w_out: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    biases: Option<FABiases>,
}

pub const WEIGHTS_MANIFEST: &str = "fa_weights.json";

/// Writes each projection as a tensor file plus a JSON manifest naming them.
pub fn save_fa_weights(dir: impl AsRef<Path>, w: &FAWeights) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = WeightsManifest {
        channels: w.channels(),
        attention_channels: w.attention_channels(),
        w_query: "w_query.fatn".into(),
        w_key: "w_key.fatn".into(),
        w_value: "w_value.fatn".into(),
        w_out: "w_out.fatn".into(),
        biases: w.biases.clone(),
    };
    save_matrix(dir.join(&manifest.w_query), &w.w_query)?;
    save_matrix(dir.join(&manifest.w_key), &w.w_key)?;
    save_matrix(dir.join(&manifest.w_value), &w.w_value)?;
    save_matrix(dir.join(&manifest.w_out), &w.w_out)?;
    let path = dir.join(WEIGHTS_MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

pub fn load_fa_weights(dir: impl AsRef<Path>) -> Result<FAWeights> {
    let dir = dir.as_ref();
    let path = dir.join(WEIGHTS_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: WeightsManifest =
        serde_json::from_str(&text).map_err(|source| Error::Manifest { path: path.clone(), source })?;
    let w = FAWeights {
        w_query: load_matrix(dir.join(&m.w_query))?,
        w_key: load_matrix(dir.join(&m.w_key))?,
        w_value: load_matrix(dir.join(&m.w_value))?,
        w_out: load_matrix(dir.join(&m.w_out))?,
        biases: m.biases,
    };
    w.validate()?;
    if w.channels() != m.channels || w.attention_channels() != m.attention_channels {
        return Err(Error::Config(format!(
            "{}: manifest says C={} c′={}, tensors are C={} c′={}",
            path.display(),
            m.channels,
            m.attention_channels,
            w.channels(),
            w.attention_channels()
        )));
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::random_matrix;

    fn input(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap {
        let m = random_matrix(h * w, c, seed, Distribution::standard_normal());
        FeatureMap::unflatten(&m, h, w).unwrap()
    }

    #[test]
    fn zero_value_path_with_residual_is_identity() {
        let x = input(8, 4, 5, 1);
        let mut w = init_fa_weights(8, 4, 2).unwrap();
        w.w_value = Matrix::zeros(8, 8);
        let cfg = FABlockConfig::new(8).with_attention_channels(4);
        assert_eq!(fa_block_forward(&x, &w, &cfg).unwrap(), x);
    }

    #[test]
    fn shape_is_preserved_for_all_flag_combinations() {
        let x = input(6, 3, 7, 3);
        let w = init_fa_weights(6, 2, 4).unwrap();
        for bits in 0..16u8 {
            let cfg = FABlockConfig {
                channels: 6,
                attention_channels: 2,
                normalize: bits & 1 != 0,
                use_output_projection: bits & 2 != 0,
                use_residual: bits & 4 != 0,
                value_relu: bits & 8 != 0,
            };
            let y = fa_block_forward(&x, &w, &cfg).unwrap();
            assert_eq!(y.dims(), x.dims());
            assert!(y.is_finite());
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let x = input(6, 2, 2, 3);
        let w = init_fa_weights(6, 2, 4).unwrap();
        let cfg = FABlockConfig::new(6).with_attention_channels(2);
        assert!(fa_block_forward(&input(5, 2, 2, 3), &w, &cfg).is_err());
        assert!(fa_block_forward(&x, &w, &cfg.with_attention_channels(7)).is_err());
        assert!(init_fa_weights(4, 5, 0).is_err());
        assert!(init_fa_weights(4, 0, 0).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = init_fa_weights(16, 4, 9).unwrap();
        assert_eq!(a, init_fa_weights(16, 4, 9).unwrap());
        assert_ne!(a, init_fa_weights(16, 4, 10).unwrap());
        assert_eq!(a.w_query.shape(), (16, 4));
        assert_eq!(a.w_key.shape(), (16, 4));
        assert_eq!(a.w_value.shape(), (16, 16));
        assert_eq!(a.w_out.shape(), (16, 16));
        // U(-1/sqrt(16), 1/sqrt(16)) = U(-0.25, 0.25)
        for m in [&a.w_query, &a.w_key, &a.w_value, &a.w_out] {
            assert!(m.max_abs() < 0.25);
        }
    }

    #[test]
    fn biases_are_added_per_channel() {
        let x = input(4, 2, 2, 5);
        let mut w = init_fa_weights(4, 2, 6).unwrap();
        let cfg = FABlockConfig {
            use_residual: false,
            ..FABlockConfig::new(4).with_attention_channels(2)
        };
        let plain = fa_block_forward(&x, &w, &cfg).unwrap();
        w.biases = Some(FABiases {
            query: vec![0.0; 2],
            key: vec![0.0; 2],
            value: vec![0.0; 4],
            out: vec![1.0, 2.0, 3.0, 4.0],
        });
        let biased = fa_block_forward(&x, &w, &cfg).unwrap();
        for c in 0..4 {
            for (a, b) in plain.channel(c).iter().zip(biased.channel(c)) {
                assert!((b - a - (c as f64 + 1.0)).abs() < 1e-12);
            }
        }
        w.biases.as_mut().unwrap().out.pop();
        assert!(fa_block_forward(&x, &w, &cfg).is_err());
    }

    #[test]
    fn weights_roundtrip_through_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let w = init_fa_weights(8, 3, 11).unwrap();
        save_fa_weights(dir.path(), &w).unwrap();
        assert_eq!(load_fa_weights(dir.path()).unwrap(), w);
        let manifest = fs::read_to_string(dir.path().join(WEIGHTS_MANIFEST)).unwrap();
        assert!(manifest.contains("\"w_query\": \"w_query.fatn\""));
    }

    #[test]
    fn sweep_rows_grow_with_attention_channels() {
        let x = input(32, 8, 8, 7);
        let rows = channel_sweep_report(&x, &[2, 4, 8, 16, 32], 1).unwrap();
        assert_eq!(rows.len(), 5);
        assert!(rows.windows(2).all(|p| p[0].total_macs < p[1].total_macs));
        // n = 64: core 2·n·c′·C, projections 2·n·C·c′ + 2·n·C².
        let r = &rows[2];
        assert_eq!(r.core_macs, 2 * 64 * 8 * 32);
        assert_eq!(r.projection_macs, 2 * 64 * 32 * 8 + 2 * 64 * 32 * 32);
    }
}
