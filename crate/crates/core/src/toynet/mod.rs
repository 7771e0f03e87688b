//! Desk-scale encoder/decoder segmentation graph.
//!
//! ```text
//! image ─ Conv-0 (7×7, /2) ─ maxpool /2 ─ Res-1 ─ Res-2 ─ Res-3 ─ Res-4
//!                                           │       │       │       │
//!                                          FA-1    FA-2    FA-3    FA-4
//!                                           │       │       │       │
//!              scores ← classifier ← d1 ← FuseUp ← FuseUp ← FuseUp ─┤
//!                                     ↑                              │
//!                                     └──────── skip (1×1) ──────────┘
//! ```
//!
//! Conv-0 is the usual 7×7 stride-2 stem. Res-1 runs at `h/4 × w/4`; each later stage halves once more. Residual
//! units are two 3×3 convolutions with a 1×1 projection shortcut whenever
//! stride or width changes. One extra ×2 spatial reduction can be placed
//! before Conv-0 or at the start of any Res stage, either by doubling the
//! stride of that stage's first convolution or by 2×2 pooling its input.
//! The decoder compensates with one extra ×2 upsampling at the same stage,
//! so the class-score map is always predicted at `h/4 × w/4` and then
//! resized bilinearly to `h × w`.
//!
//! The skip connection takes the Res-4 attention output through a 1×1
//! convolution to the Res-1 width and adds it to the last decoder stage.
//! FuseUp upsamples the deeper map to the shallower resolution, applies a
//! 1×1 convolution to the shallower width, and adds.

mod layers;

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fa_block::{fa_block_forward, init_fa_weights, FABlockConfig, FAWeights};
use crate::flops::{flops_fast_attention_module, CostKind, FlopsReport, ModuleShape};
use crate::tensor::{
    load_matrix, save_feature_map, save_matrix, Distribution, FeatureMap, Matrix, SeededRng,
};

pub use layers::{pool2x2, resize_bilinear, upsample_pow2, Conv2d, PoolKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReductionStage {
    Conv0,
    Res1,
    Res2,
    Res3,
    Res4,
    None,
}

impl ReductionStage {
    /// Earliest placement first.
    pub const ALL: [ReductionStage; 6] = [
        ReductionStage::Conv0,
        ReductionStage::Res1,
        ReductionStage::Res2,
        ReductionStage::Res3,
        ReductionStage::Res4,
        ReductionStage::None,
    ];

    /// Res stage index 0..4 this placement modifies, if any.
    fn res_index(self) -> Option<usize> {
        match self {
            ReductionStage::Res1 => Some(0),
            ReductionStage::Res2 => Some(1),
            ReductionStage::Res3 => Some(2),
            ReductionStage::Res4 => Some(3),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ReductionStage::Conv0 => "Conv0",
            ReductionStage::Res1 => "Res1",
            ReductionStage::Res2 => "Res2",
            ReductionStage::Res3 => "Res3",
            ReductionStage::Res4 => "Res4",
            ReductionStage::None => "None",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionOp {
    StridedConv,
    MaxPool,
    AvgPool,
}

impl ReductionOp {
    pub const ALL: [ReductionOp; 3] = [ReductionOp::StridedConv, ReductionOp::MaxPool, ReductionOp::AvgPool];

    pub fn name(self) -> &'static str {
        match self {
            ReductionOp::StridedConv => "strided_conv",
            ReductionOp::MaxPool => "max_pool",
            ReductionOp::AvgPool => "avg_pool",
        }
    }

    fn pool(self) -> Option<PoolKind> {
        match self {
            ReductionOp::StridedConv => None,
            ReductionOp::MaxPool => Some(PoolKind::Max),
            ReductionOp::AvgPool => Some(PoolKind::Avg),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub stage_channels: [usize; 4],
    pub attention_channels: [usize; 4],
    pub reduction_stage: ReductionStage,
    pub reduction_op: ReductionOp,
    pub num_classes: usize,
    /// When false every attention block is an identity passthrough.
    pub use_attention: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            input_channels: 3,
            input_height: 64,
            input_width: 128,
            stage_channels: [16, 32, 64, 128],
            attention_channels: [16, 32, 32, 32],
            reduction_stage: ReductionStage::None,
            reduction_op: ReductionOp::StridedConv,
            num_classes: 19,
            use_attention: true,
        }
    }
}

impl NetConfig {
    pub fn with_reduction(mut self, stage: ReductionStage, op: ReductionOp) -> Self {
        self.reduction_stage = stage;
        self.reduction_op = op;
        self
    }

    pub fn with_input(mut self, height: usize, width: usize) -> Self {
        self.input_height = height;
        self.input_width = width;
        self
    }

    /// Overall downsampling from the input to Res-4.
    pub fn total_stride(&self) -> usize {
        if self.reduction_stage == ReductionStage::None {
            32
        } else {
            64
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.num_classes == 0 {
            return Err(Error::Config("input_channels and num_classes must be >= 1".into()));
        }
        if self.stage_channels.iter().any(|&c| c == 0) {
            return Err(Error::Config("stage_channels must be >= 1".into()));
        }
        if self.stage_channels.windows(2).any(|p| p[0] > p[1]) {
            return Err(Error::Config(format!(
                "stage_channels must be nondecreasing, got {:?}",
                self.stage_channels
            )));
        }
        for (s, (&cp, &c)) in self.attention_channels.iter().zip(&self.stage_channels).enumerate() {
            if cp == 0 || cp > c {
                return Err(Error::Config(format!(
                    "stage {} attention_channels c′={cp} must be in 1..={c}",
                    s + 1
                )));
            }
        }
        let stride = self.total_stride();
        let (h, w) = (self.input_height, self.input_width);
        if h < stride || w < stride {
            return Err(Error::Config(format!(
                "input {h}x{w} is too small for total stride {stride}; minimum input size is {stride}x{stride}"
            )));
        }
        if h % stride != 0 || w % stride != 0 {
            return Err(Error::Config(format!(
                "input {h}x{w} must be a multiple of the total stride {stride} in both dimensions"
            )));
        }
        Ok(())
    }
}

/// Spatial size of every intermediate map for one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolutions {
    pub conv0: (usize, usize),
    pub stages: [(usize, usize); 4],
    /// Where class scores are predicted: `h/4 × w/4`.
    pub prediction: (usize, usize),
    pub output: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
struct ResBlock {
    pre_pool: Option<PoolKind>,
    conv1: Conv2d,
    conv2: Conv2d,
    shortcut: Option<Conv2d>,
}

impl ResBlock {
    fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        let x = match self.pre_pool {
            Some(kind) => pool2x2(x, kind)?,
            None => x.clone(),
        };
        let h = layers::relu(&self.conv1.forward(&x)?);
        let h = self.conv2.forward(&h)?;
        let identity = match &self.shortcut {
            Some(proj) => proj.forward(&x)?,
            None => x,
        };
        Ok(layers::relu(&h.add(&identity)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Attention {
    config: FABlockConfig,
    weights: FAWeights,
}

/// A built network with seeded, immutable weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetConfig,
    seed: u64,
    stem_pre_pool: Option<PoolKind>,
    stem: Conv2d,
    stages: Vec<ResBlock>,
    attention: Vec<Attention>,
    /// `fuse[i]` maps stage `i + 1` width to stage `i` width.
    fuse: Vec<Conv2d>,
    skip: Conv2d,
    classifier: Conv2d,
    resolutions: Resolutions,
}

/// Builds the network for `cfg`; weights depend only on `(cfg, seed)`.
pub fn build_network(cfg: &NetConfig, seed: u64) -> Result<Network> {
    cfg.validate()?;
    let mut rng = SeededRng::new(seed);
    let reduction_pool = cfg.reduction_op.pool();
    let strided = cfg.reduction_op == ReductionOp::StridedConv;
    let at_conv0 = cfg.reduction_stage == ReductionStage::Conv0;

    let stem_pre_pool = if at_conv0 { reduction_pool } else { None };
    let stem_stride = if at_conv0 && strided { 4 } else { 2 };
    let stem = Conv2d::seeded(cfg.input_channels, cfg.stage_channels[0], 7, stem_stride, &mut rng);

    let (mut h, mut w) = (cfg.input_height, cfg.input_width);
    if stem_pre_pool.is_some() {
        h /= 2;
        w /= 2;
    }
    let conv0 = stem.output_size(h, w);
    let (mut h, mut w) = (conv0.0 / 2, conv0.1 / 2);

    let mut stages = Vec::with_capacity(4);
    let mut stage_res = [(0, 0); 4];
    let mut c_in = cfg.stage_channels[0];
    for s in 0..4 {
        let c_out = cfg.stage_channels[s];
        let here = cfg.reduction_stage.res_index() == Some(s);
        let pre_pool = if here { reduction_pool } else { None };
        let base_stride = if s == 0 { 1 } else { 2 };
        let stride = if here && strided { base_stride * 2 } else { base_stride };
        let conv1 = Conv2d::seeded(c_in, c_out, 3, stride, &mut rng);
        let conv2 = Conv2d::seeded(c_out, c_out, 3, 1, &mut rng);
        let shortcut = (stride != 1 || c_in != c_out).then(|| Conv2d::seeded(c_in, c_out, 1, stride, &mut rng));
        if pre_pool.is_some() {
            h /= 2;
            w /= 2;
        }
        (h, w) = conv1.output_size(h, w);
        stage_res[s] = (h, w);
        stages.push(ResBlock { pre_pool, conv1, conv2, shortcut });
        c_in = c_out;
    }

    let attention = (0..4)
        .map(|s| -> Result<Attention> {
            let (c, cp) = (cfg.stage_channels[s], cfg.attention_channels[s]);
            Ok(Attention {
                config: FABlockConfig::new(c).with_attention_channels(cp),
                weights: init_fa_weights(c, cp, rng.next_u64())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let ch = cfg.stage_channels;
    let fuse = (0..3).map(|s| Conv2d::seeded(ch[s + 1], ch[s], 1, 1, &mut rng)).collect();
    let skip = Conv2d::seeded(ch[3], ch[0], 1, 1, &mut rng);
    let classifier = Conv2d::seeded(ch[0], cfg.num_classes, 1, 1, &mut rng);

    let resolutions = Resolutions {
        conv0,
        stages: stage_res,
        prediction: (cfg.input_height / 4, cfg.input_width / 4),
        output: (cfg.input_height, cfg.input_width),
    };
    Ok(Network {
        config: cfg.clone(),
        seed,
        stem_pre_pool,
        stem,
        stages,
        attention,
        fuse,
        skip,
        classifier,
        resolutions,
    })
}

/// Named intermediate activations of one forward pass, in execution order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub activations: Vec<(String, FeatureMap)>,
}

impl Trace {
    pub fn get(&self, name: &str) -> Option<&FeatureMap> {
        self.activations.iter().find(|(n, _)| n == name).map(|(_, f)| f)
    }

    /// One tensor file per activation, `<name>.fatn`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, fm) in &self.activations {
            save_feature_map(dir.join(format!("{name}.fatn")), fm)?;
        }
        Ok(())
    }
}

impl Network {
    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn resolutions(&self) -> &Resolutions {
        &self.resolutions
    }

    /// Every weight matrix with a stable name, in a fixed order.
    pub fn parameters(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![("conv0".to_string(), &self.stem.weight)];
        for (s, b) in self.stages.iter().enumerate() {
            out.push((format!("res{}.conv1", s + 1), &b.conv1.weight));
            out.push((format!("res{}.conv2", s + 1), &b.conv2.weight));
            if let Some(sc) = &b.shortcut {
                out.push((format!("res{}.shortcut", s + 1), &sc.weight));
            }
        }
        for (s, a) in self.attention.iter().enumerate() {
            let w = &a.weights;
            out.push((format!("fa{}.w_query", s + 1), &w.w_query));
            out.push((format!("fa{}.w_key", s + 1), &w.w_key));
            out.push((format!("fa{}.w_value", s + 1), &w.w_value));
            out.push((format!("fa{}.w_out", s + 1), &w.w_out));
        }
        for (s, f) in self.fuse.iter().enumerate() {
            out.push((format!("fuse{}", s + 1), &f.weight));
        }
        out.push(("skip".to_string(), &self.skip.weight));
        out.push(("classifier".to_string(), &self.classifier.weight));
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.stem.weight];
        for b in &mut self.stages {
            out.push(&mut b.conv1.weight);
            out.push(&mut b.conv2.weight);
            if let Some(sc) = &mut b.shortcut {
                out.push(&mut sc.weight);
            }
        }
        for a in &mut self.attention {
            let w = &mut a.weights;
            out.extend([&mut w.w_query, &mut w.w_key, &mut w.w_value, &mut w.w_out]);
        }
        for f in &mut self.fuse {
            out.push(&mut f.weight);
        }
        out.push(&mut self.skip.weight);
        out.push(&mut self.classifier.weight);
        out
    }

    /// Copy of the network with every weight transformed by `f`.
    pub fn map_weights(&self, f: impl Fn(f64) -> f64) -> Network {
        let mut net = self.clone();
        for m in net.parameters_mut() {
            *m = m.map(&f);
        }
        net
    }

    pub fn forward(&self, image: &FeatureMap) -> Result<FeatureMap> {
        self.run(image, None)
    }

    pub fn forward_traced(&self, image: &FeatureMap) -> Result<(FeatureMap, Trace)> {
        let mut trace = Trace::default();
        let out = self.run(image, Some(&mut trace))?;
        Ok((out, trace))
    }

    fn run(&self, image: &FeatureMap, mut trace: Option<&mut Trace>) -> Result<FeatureMap> {
        let cfg = &self.config;
        let expected = (cfg.input_channels, cfg.input_height, cfg.input_width);
        if image.dims() != expected {
            return Err(Error::shape(
                "Network::forward",
                format!("{}x{}x{}", expected.0, expected.1, expected.2),
                format!("{}x{}x{}", image.channels(), image.height(), image.width()),
            ));
        }
        let mut record = |name: &str, fm: &FeatureMap| {
            if let Some(t) = trace.as_deref_mut() {
                t.activations.push((name.to_string(), fm.clone()));
            }
        };

        let x = match self.stem_pre_pool {
            Some(kind) => pool2x2(image, kind)?,
            None => image.clone(),
        };
        let x = layers::relu(&self.stem.forward(&x)?);
        record("conv0", &x);
        let mut x = pool2x2(&x, PoolKind::Max)?;

        let mut attended = Vec::with_capacity(4);
        for (s, (block, att)) in self.stages.iter().zip(&self.attention).enumerate() {
            x = block.forward(&x)?;
            record(&format!("res{}", s + 1), &x);
            let a = if cfg.use_attention {
                fa_block_forward(&x, &att.weights, &att.config)?
            } else {
                x.clone()
            };
            record(&format!("fa{}", s + 1), &a);
            attended.push(a);
        }

        let mut d = attended[3].clone();
        for s in (0..3).rev() {
            let target = &attended[s];
            let up = upsample_pow2(&d, target.height(), target.width())?;
            d = self.fuse[s].forward(&up)?.add(target)?;
            record(&format!("dec{}", s + 1), &d);
        }
        let skip = self.skip.forward(&attended[3])?;
        d = d.add(&upsample_pow2(&skip, d.height(), d.width())?)?;
        record("skip_merge", &d);

        let (ph, pw) = self.resolutions.prediction;
        let d = upsample_pow2(&d, ph, pw)?;
        let scores = self.classifier.forward(&d)?;
        record("scores", &scores);
        let out = resize_bilinear(&scores, cfg.input_height, cfg.input_width)?;
        record("output", &out);
        Ok(out)
    }

    /// Analytic MACs of one forward pass (1 MAC = 1 FLOP). Pooling,
    /// resizing, activations and additions are not counted.
    pub fn analytic_flops(&self) -> FlopsReport {
        let cfg = &self.config;
        let mut r = FlopsReport::default();
        let (mut h, mut w) = (cfg.input_height, cfg.input_width);
        if self.stem_pre_pool.is_some() {
            h /= 2;
            w /= 2;
        }
        r.push("conv0", CostKind::Convolution, self.stem.macs(h, w));
        let (mut h, mut w) = (self.resolutions.conv0.0 / 2, self.resolutions.conv0.1 / 2);
        for (s, b) in self.stages.iter().enumerate() {
            if b.pre_pool.is_some() {
                h /= 2;
                w /= 2;
            }
            let name = format!("res{}", s + 1);
            r.push(format!("{name}.conv1"), CostKind::Convolution, b.conv1.macs(h, w));
            if let Some(sc) = &b.shortcut {
                r.push(format!("{name}.shortcut"), CostKind::Convolution, sc.macs(h, w));
            }
            (h, w) = self.resolutions.stages[s];
            r.push(format!("{name}.conv2"), CostKind::Convolution, b.conv2.macs(h, w));
        }
        if cfg.use_attention {
            for s in 0..4 {
                let (h, w) = self.resolutions.stages[s];
                let shape = ModuleShape::new(cfg.stage_channels[s], h, w, cfg.attention_channels[s]);
                let fa = flops_fast_attention_module(shape).expect("validated config");
                for c in fa.components {
                    r.push(format!("fa{}.{}", s + 1, c.label), c.kind, c.flops);
                }
            }
        }
        for s in (0..3).rev() {
            let (h, w) = self.resolutions.stages[s];
            r.push(format!("fuse{}", s + 1), CostKind::Convolution, self.fuse[s].macs(h, w));
        }
        let (h4, w4) = self.resolutions.stages[3];
        r.push("skip", CostKind::Convolution, self.skip.macs(h4, w4));
        let (ph, pw) = self.resolutions.prediction;
        r.push("classifier", CostKind::Convolution, self.classifier.macs(ph, pw));
        r
    }
}

/// Seeded input image for the configured dimensions, entries in `[0, 1)`.
pub fn random_image(cfg: &NetConfig, seed: u64) -> FeatureMap {
    let (c, h, w) = (cfg.input_channels, cfg.input_height, cfg.input_width);
    let m: Matrix = crate::tensor::random_matrix(h * w, c, seed, Distribution::UNIT);
    FeatureMap::unflatten(&m, h, w).expect("consistent dims")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementRow {
    pub placement: ReductionStage,
    pub flops: u64,
    pub wall_time_s: f64,
}

/// One row per reduction placement, earliest first, with analytic MACs and
/// the median wall time of `repeats` forwards (after one warmup).
pub fn placement_study(base: &NetConfig, seed: u64, repeats: usize) -> Result<Vec<PlacementRow>> {
    let repeats = repeats.max(1);
    ReductionStage::ALL
        .iter()
        .map(|&placement| {
            let cfg = base.clone().with_reduction(placement, base.reduction_op);
            let net = build_network(&cfg, seed)?;
            let image = random_image(&cfg, seed ^ 0x1111);
            net.forward(&image)?;
            let mut times: Vec<f64> = (0..repeats)
                .map(|_| {
                    let start = Instant::now();
                    net.forward(&image).map(|_| start.elapsed().as_secs_f64())
                })
                .collect::<Result<_>>()?;
            times.sort_by(f64::total_cmp);
            Ok(PlacementRow {
                placement,
                flops: net.analytic_flops().total(),
                wall_time_s: times[times.len() / 2],
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct NetworkFile {
    config: NetConfig,
    seed: u64,
    weights: Vec<WeightRef>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightRef {
    name: String,
    file: String,
}

pub const NETWORK_MANIFEST: &str = "network.json";

/// Writes `network.json` (config, seed, weight file references) and one
/// tensor file per weight.
pub fn save_network(dir: impl AsRef<Path>, net: &Network) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut weights = Vec::new();
    for (name, m) in net.parameters() {
        let file = format!("{name}.fatn");
        save_matrix(dir.join(&file), m)?;
        weights.push(WeightRef { name, file });
    }
    let manifest = NetworkFile {
        config: net.config.clone(),
        seed: net.seed,
        weights,
    };
    let path = dir.join(NETWORK_MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

/// Rebuilds the structure from the stored config and loads every weight
/// from its referenced file.
pub fn load_network(dir: impl AsRef<Path>) -> Result<Network> {
    let dir = dir.as_ref();
    let path = dir.join(NETWORK_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let file: NetworkFile =
        serde_json::from_str(&text).map_err(|source| Error::Manifest { path: path.clone(), source })?;
    let mut net = build_network(&file.config, file.seed)?;
    let names: Vec<String> = net.parameters().into_iter().map(|(n, _)| n).collect();
    if names.len() != file.weights.len() || names.iter().zip(&file.weights).any(|(n, r)| *n != r.name) {
        return Err(Error::Config(format!(
            "{}: weight list does not match the configured architecture",
            path.display()
        )));
    }
    for (slot, r) in net.parameters_mut().into_iter().zip(&file.weights) {
        let m: Matrix = load_matrix(dir.join(&r.file))?;
        if m.shape() != slot.shape() {
            return Err(Error::shape(
                "load_network",
                format!("{} {}x{}", r.name, slot.rows(), slot.cols()),
                format!("{}x{}", m.rows(), m.cols()),
            ));
        }
        *slot = m;
    }
    Ok(net)
}
