//! Analytic multiply-accumulate model of the attention modules.
//!
//! Convention: one MAC counts as one FLOP. Element-wise work (normalization,
//! softmax exponentials, scaling, activations) is not counted; at the sizes
//! of interest it is well under one percent of the matrix products.
//!
//! For a `C×H×W` input, `n = H·W` and query/key width `c′`, both modules
//! share four projections:
//!
//! ```text
//! Q-proj  n·C·c′      K-proj  n·C·c′
//! V-proj  n·C²        out-proj n·C²
//! ```
//!
//! and differ in the attention core:
//!
//! ```text
//! self-attention   QKᵀ: n²·c′       (QKᵀ)V: n²·C
//! fast attention   K̂ᵀV: n·c′·C      Q̂(K̂ᵀV): n·c′·C
//! ```
//!
//! These are exactly the MACs the instrumented [`crate::tensor::measure`]
//! counter records for the corresponding forward passes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAC_CONVENTION: &str = "1 MAC = 1 FLOP";

/// Query/key width used for the published cost table.
pub const DEFAULT_ATTENTION_CHANNELS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    Projection,
    AttentionCore,
    /// Whole-matrix additions (streaming context sums).
    Addition,
    Convolution,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostComponent {
    pub label: String,
    pub kind: CostKind,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub components: Vec<CostComponent>,
    pub convention: String,
}

impl Default for FlopsReport {
    fn default() -> Self {
        Self {
            components: Vec::new(),
            convention: MAC_CONVENTION.to_string(),
        }
    }
}

impl FlopsReport {
    pub fn push(&mut self, label: impl Into<String>, kind: CostKind, flops: u64) {
        self.components.push(CostComponent {
            label: label.into(),
            kind,
            flops,
        });
    }

    pub fn with(mut self, label: impl Into<String>, kind: CostKind, flops: u64) -> Self {
        self.push(label, kind, flops);
        self
    }

    pub fn extend(&mut self, other: FlopsReport) {
        self.components.extend(other.components);
    }

    pub fn total(&self) -> u64 {
        self.components.iter().map(|c| c.flops).sum()
    }

    pub fn total_of(&self, kind: CostKind) -> u64 {
        self.components
            .iter()
            .filter(|c| c.kind == kind)
            .map(|c| c.flops)
            .sum()
    }

    pub fn get(&self, label: &str) -> Option<u64> {
        self.components.iter().find(|c| c.label == label).map(|c| c.flops)
    }

    pub fn gflops(&self) -> f64 {
        self.total() as f64 / 1e9
    }
}

/// Input geometry of one attention module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub attention_channels: usize,
}

impl ModuleShape {
    pub fn new(channels: usize, height: usize, width: usize, attention_channels: usize) -> Self {
        Self {
            channels,
            height,
            width,
            attention_channels,
        }
    }

    pub fn spatial_size(&self) -> u64 {
        (self.height * self.width) as u64
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.height == 0 || self.width == 0 || self.attention_channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "module shape must be positive, got {self:?}"
            )));
        }
        Ok(())
    }
}

fn projections(s: &ModuleShape) -> FlopsReport {
    let (n, c, cp) = (s.spatial_size(), s.channels as u64, s.attention_channels as u64);
    FlopsReport::default()
        .with("q_proj", CostKind::Projection, n * c * cp)
        .with("k_proj", CostKind::Projection, n * c * cp)
        .with("v_proj", CostKind::Projection, n * c * c)
        .with("out_proj", CostKind::Projection, n * c * c)
}

fn self_attention_core(s: &ModuleShape) -> FlopsReport {
    let (n, c, cp) = (s.spatial_size(), s.channels as u64, s.attention_channels as u64);
    FlopsReport::default()
        .with("affinity", CostKind::AttentionCore, n * n * cp)
        .with("aggregate", CostKind::AttentionCore, n * n * c)
}

fn fast_attention_core(s: &ModuleShape) -> FlopsReport {
    let (n, c, cp) = (s.spatial_size(), s.channels as u64, s.attention_channels as u64);
    FlopsReport::default()
        .with("context", CostKind::AttentionCore, n * cp * c)
        .with("query_context", CostKind::AttentionCore, n * cp * c)
}

/// Softmax self-attention module: projections plus `n²(c′ + C)` core.
pub fn flops_self_attention_module(shape: ModuleShape) -> Result<FlopsReport> {
    shape.validate()?;
    let mut r = projections(&shape);
    r.extend(self_attention_core(&shape));
    Ok(r)
}

/// Fast attention module: projections plus `2·n·c′·C` core.
pub fn flops_fast_attention_module(shape: ModuleShape) -> Result<FlopsReport> {
    shape.validate()?;
    let mut r = projections(&shape);
    r.extend(fast_attention_core(&shape));
    Ok(r)
}

/// Fast-module total over self-attention-module total.
pub fn flops_ratio(shape: ModuleShape) -> Result<f64> {
    let fast = flops_fast_attention_module(shape)?.total();
    let slow = flops_self_attention_module(shape)?.total();
    Ok(fast as f64 / slow as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatioTemporalMethod {
    /// Affinity against every frame in the window, `t·n²(c′ + C)`.
    Naive,
    /// Cached per-frame contexts: one new context, one query product, and
    /// `(t − 1)` context additions.
    Fast,
}

/// Per-frame cost of attending over a `t`-frame window.
///
/// Projections are those of the incoming frame only; older frames'
/// projections were paid when they arrived.
pub fn flops_spatiotemporal(
    shape: ModuleShape,
    window: usize,
    method: SpatioTemporalMethod,
) -> Result<FlopsReport> {
    shape.validate()?;
    if window == 0 {
        return Err(Error::InvalidArgument("window t must be >= 1".into()));
    }
    let t = window as u64;
    let (n, c, cp) = (shape.spatial_size(), shape.channels as u64, shape.attention_channels as u64);
    let mut r = projections(&shape);
    match method {
        SpatioTemporalMethod::Naive => {
            r.push("affinity", CostKind::AttentionCore, t * n * n * cp);
            r.push("aggregate", CostKind::AttentionCore, t * n * n * c);
        }
        SpatioTemporalMethod::Fast => {
            r.extend(fast_attention_core(&shape));
            r.push("context_sum", CostKind::Addition, (t - 1) * cp * c);
        }
    }
    Ok(r)
}

/// MACs of a `k×k` convolution producing a `c_out×h_out×w_out` map.
pub fn conv_macs(c_in: usize, c_out: usize, kernel: usize, h_out: usize, w_out: usize) -> u64 {
    (h_out * w_out * c_out * c_in * kernel * kernel) as u64
}

/// Published per-module cost table for `C×128×256` inputs.
pub mod table1 {
    pub const HEIGHT: usize = 128;
    pub const WIDTH: usize = 256;
    pub const CHANNELS: [usize; 6] = [32, 64, 128, 256, 512, 1024];
    pub const SELF_ATTENTION_GFLOPS: [f64; 6] = [68.0, 103.0, 173.0, 313.0, 602.0, 1203.0];
    pub const FAST_ATTENTION_GFLOPS: [f64; 6] = [0.2, 0.6, 1.7, 5.0, 19.0, 73.0];
    pub const SELF_TOLERANCE: f64 = 0.03;
    pub const FAST_TOLERANCE: f64 = 0.10;
}

/// One column of the published table next to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub channels: usize,
    pub self_attention_gflops: f64,
    pub self_attention_published: f64,
    pub self_attention_deviation: f64,
    pub fast_attention_gflops: f64,
    pub fast_attention_published: f64,
    pub fast_attention_deviation: f64,
    pub ratio: f64,
}

impl Table1Row {
    pub fn self_within_tolerance(&self) -> bool {
        self.self_attention_deviation.abs() <= table1::SELF_TOLERANCE
    }

    pub fn fast_within_tolerance(&self) -> bool {
        self.fast_attention_deviation.abs() <= table1::FAST_TOLERANCE
    }
}

/// Model versus published values; deviations are `(model − published) / published`.
pub fn table1_rows() -> Vec<Table1Row> {
    table1::CHANNELS
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let shape = ModuleShape::new(c, table1::HEIGHT, table1::WIDTH, DEFAULT_ATTENTION_CHANNELS);
            let slow = flops_self_attention_module(shape).expect("valid shape").gflops();
            let fast = flops_fast_attention_module(shape).expect("valid shape").gflops();
            let (ps, pf) = (table1::SELF_ATTENTION_GFLOPS[i], table1::FAST_ATTENTION_GFLOPS[i]);
            Table1Row {
                channels: c,
                self_attention_gflops: slow,
                self_attention_published: ps,
                self_attention_deviation: (slow - ps) / ps,
                fast_attention_gflops: fast,
                fast_attention_published: pf,
                fast_attention_deviation: (fast - pf) / pf,
                ratio: fast / slow,
            }
        })
        .collect()
}
