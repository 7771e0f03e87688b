//! Spatial-temporal fast attention over a sliding window of frames.
//!
//! Each frame contributes a `c′×C` context `K̂ᵀ·V`, computed once when the
//! frame arrives and kept in a ring of the last `t` frames. Attending for
//! the current query is then
//!
//! ```text
//! Y = (1/n) · Q̂ · Σ_{frames in ring} K̂ᵢᵀ·Vᵢ
//! ```
//!
//! so the matrix-product cost per frame does not depend on `t`; only the
//! `(t − 1)` additions of `c′×C` contexts do. The sum is rebuilt from the
//! ring on every call rather than maintained incrementally, which keeps it
//! free of add/subtract drift.

use std::cell::Cell;
use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attention::{cosine_attention_quadratic, AttentionInputs};
use crate::error::{Error, Result};
use crate::flops::{CostKind, FlopsReport};
use crate::tensor::{
    load_matrix, measure, save_matrix, Distribution, Matrix, OpCounts, Real, SeededRng,
};

#[derive(Debug, Clone, PartialEq)]
pub struct FrameContext {
    /// `K̂ᵀ·V` for one frame, `c′×C`.
    pub context: Matrix,
    pub frame_index: u64,
}

/// Prefactor applied to the summed context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowScale {
    /// `1/n`, independent of how many frames are summed.
    #[default]
    PerFrame,
    /// `1/(t·n)` with `t` the number of frames currently in the ring.
    WindowAverage,
}

/// Ring of per-frame contexts for one stream at fixed `(n, c′, C)`.
///
/// Single writer: `attend` must not race `push_frame` on the same cache.
#[derive(Debug, Clone)]
pub struct FrameCache {
    window: usize,
    attention_channels: usize,
    channels: usize,
    spatial_size: usize,
    ring: VecDeque<FrameContext>,
    next_index: u64,
    scale: WindowScale,
    eps: f64,
    last_push: OpCounts,
    last_attend: Cell<OpCounts>,
}

impl FrameCache {
    pub fn new(window: usize, attention_channels: usize, channels: usize, spatial_size: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::InvalidArgument("window t must be >= 1".into()));
        }
        if attention_channels == 0 || channels == 0 || spatial_size == 0 {
            return Err(Error::InvalidArgument(format!(
                "stream dimensions must be positive, got n={spatial_size} c′={attention_channels} C={channels}"
            )));
        }
        Ok(Self {
            window,
            attention_channels,
            channels,
            spatial_size,
            ring: VecDeque::with_capacity(window),
            next_index: 0,
            scale: WindowScale::PerFrame,
            eps: f64::DEFAULT_EPS,
            last_push: OpCounts::default(),
            last_attend: Cell::new(OpCounts::default()),
        })
    }

    pub fn with_scale(mut self, scale: WindowScale) -> Self {
        self.scale = scale;
        self
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn contexts(&self) -> impl Iterator<Item = &FrameContext> {
        self.ring.iter()
    }

    /// Indices of the frames currently in the window, oldest first.
    pub fn frame_indices(&self) -> Vec<u64> {
        self.ring.iter().map(|f| f.frame_index).collect()
    }

    fn check(&self, op: &'static str, name: &str, m: &Matrix, cols: usize) -> Result<()> {
        if m.shape() != (self.spatial_size, cols) {
            return Err(Error::shape(
                op,
                format!("{name} {}x{cols}", self.spatial_size),
                format!("{name} {}x{}", m.rows(), m.cols()),
            ));
        }
        Ok(())
    }

    /// Stores `K̂ᵀ·V` for a new frame, evicting the oldest when full.
    pub fn push_frame(&mut self, key: &Matrix, value: &Matrix) -> Result<()> {
        self.check("push_frame", "key", key, self.attention_channels)?;
        self.check("push_frame", "value", value, self.channels)?;
        let (context, counts) = measure(|| {
            key.l2_normalize_rows(self.eps)
                .transpose()
                .matmul(value)
                .expect("shapes checked")
        });
        if self.ring.len() == self.window {
            self.ring.pop_front();
        }
        self.ring.push_back(FrameContext {
            context,
            frame_index: self.next_index,
        });
        self.next_index += 1;
        self.last_push = counts;
        Ok(())
    }

    /// Sum of all contexts in the ring, rebuilt from scratch.
    pub fn context_sum(&self) -> Result<Matrix> {
        let mut frames = self.ring.iter();
        let first = frames
            .next()
            .ok_or_else(|| Error::State("attend on an empty frame cache".into()))?;
        let mut sum = first.context.clone();
        for f in frames {
            sum.add_assign(&f.context)?;
        }
        Ok(sum)
    }

    /// `(1/n)·Q̂·Σ contexts` for the current query.
    pub fn attend(&self, query: &Matrix) -> Result<Matrix> {
        self.check("attend", "query", query, self.attention_channels)?;
        let (out, counts) = measure(|| -> Result<Matrix> {
            let sum = self.context_sum()?;
            let y = query.l2_normalize_rows(self.eps).matmul(&sum)?;
            let denom = match self.scale {
                WindowScale::PerFrame => self.spatial_size,
                WindowScale::WindowAverage => self.spatial_size * self.ring.len(),
            };
            Ok(y.scale(1.0 / denom as f64))
        });
        self.last_attend.set(counts);
        out
    }

    /// Measured cost of the most recent `push_frame` + `attend` cycle.
    pub fn per_frame_cost(&self) -> FlopsReport {
        let attend = self.last_attend.get();
        FlopsReport::default()
            .with("context", CostKind::AttentionCore, self.last_push.macs)
            .with("query_context", CostKind::AttentionCore, attend.macs)
            .with("context_sum", CostKind::Addition, attend.adds)
    }
}

/// Direct evaluation with the `n×n` cosine affinity against each frame:
/// `Σᵢ (1/n)·(Q̂·K̂ᵢᵀ)·Vᵢ`. Cost grows linearly in the number of frames.
pub fn spatiotemporal_attention_quadratic(query: &Matrix, frames: &[(Matrix, Matrix)]) -> Result<Matrix> {
    let mut total: Option<Matrix> = None;
    for (key, value) in frames {
        let inputs = AttentionInputs::new(query.clone(), key.clone(), value.clone())?;
        let y = cosine_attention_quadratic(&inputs);
        match total.as_mut() {
            None => total = Some(y),
            Some(t) => t.add_assign(&y)?,
        }
    }
    total.ok_or_else(|| Error::State("no frames to attend over".into()))
}

/// Dimensions of a stream fixture on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamManifest {
    pub n: usize,
    pub c_prime: usize,
    pub channels: usize,
    pub t: usize,
    pub frames: usize,
}

pub const STREAM_MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq)]
pub struct StreamFrame {
    pub key: Matrix,
    pub value: Matrix,
    pub query: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamFixture {
    pub manifest: StreamManifest,
    pub frames: Vec<StreamFrame>,
}

fn frame_path(dir: &Path, index: usize, part: &str) -> PathBuf {
    dir.join(format!("frame_{index:04}.{part}"))
}

impl StreamFixture {
    /// Seeded frames with standard-normal entries.
    pub fn generate(manifest: StreamManifest, seed: u64) -> Result<Self> {
        if manifest.n == 0 || manifest.c_prime == 0 || manifest.channels == 0 || manifest.t == 0 {
            return Err(Error::InvalidArgument(format!(
                "stream dimensions must be positive: {manifest:?}"
            )));
        }
        let mut rng = SeededRng::new(seed);
        let d = Distribution::standard_normal();
        let frames = (0..manifest.frames)
            .map(|_| StreamFrame {
                key: rng.matrix(manifest.n, manifest.c_prime, d),
                value: rng.matrix(manifest.n, manifest.channels, d),
                query: rng.matrix(manifest.n, manifest.c_prime, d),
            })
            .collect();
        Ok(Self { manifest, frames })
    }

    /// Writes `manifest.json` and `frame_NNNN.{key,value,query}` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, f) in self.frames.iter().enumerate() {
            save_matrix(frame_path(dir, i, "key"), &f.key)?;
            save_matrix(frame_path(dir, i, "value"), &f.value)?;
            save_matrix(frame_path(dir, i, "query"), &f.query)?;
        }
        let path = dir.join(STREAM_MANIFEST);
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    /// Loads from a manifest path; frames are resolved next to it.
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let path = manifest_path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: StreamManifest = serde_json::from_str(&text).map_err(|source| Error::Manifest {
            path: path.to_path_buf(),
            source,
        })?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let frames = (0..manifest.frames)
            .map(|i| -> Result<StreamFrame> {
                let frame = StreamFrame {
                    key: load_matrix(frame_path(dir, i, "key"))?,
                    value: load_matrix(frame_path(dir, i, "value"))?,
                    query: load_matrix(frame_path(dir, i, "query"))?,
                };
                let expect = |part: &str, m: &Matrix, cols: usize| {
                    if m.shape() != (manifest.n, cols) {
                        Err(Error::shape(
                            "StreamFixture::load",
                            format!("{} {}x{cols}", frame_path(dir, i, part).display(), manifest.n),
                            format!("{}x{}", m.rows(), m.cols()),
                        ))
                    } else {
                        Ok(())
                    }
                };
                expect("key", &frame.key, manifest.c_prime)?;
                expect("value", &frame.value, manifest.channels)?;
                expect("query", &frame.query, manifest.c_prime)?;
                Ok(frame)
            })
            .collect::<Result<_>>()?;
        Ok(Self { manifest, frames })
    }
}

/// Outcome of streaming one frame through a cache.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStep {
    pub frame_index: usize,
    pub output: Matrix,
    pub cost: FlopsReport,
}

/// Pushes every frame in order and attends with its query.
pub fn run_stream(fixture: &StreamFixture, window: usize) -> Result<Vec<FrameStep>> {
    let m = fixture.manifest;
    let mut cache = FrameCache::new(window, m.c_prime, m.channels, m.n)?;
    fixture
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            cache.push_frame(&f.key, &f.value)?;
            let output = cache.attend(&f.query)?;
            Ok(FrameStep {
                frame_index: i,
                output,
                cost: cache.per_frame_cost(),
            })
        })
        .collect()
}

/// Largest relative deviation of [`run_stream`] from the quadratic
/// per-frame evaluation over the same windows.
pub fn check_stream(fixture: &StreamFixture, window: usize) -> Result<f64> {
    let steps = run_stream(fixture, window)?;
    let mut worst = 0.0f64;
    for step in &steps {
        let lo = (step.frame_index + 1).saturating_sub(window);
        let frames: Vec<(Matrix, Matrix)> = fixture.frames[lo..=step.frame_index]
            .iter()
            .map(|f| (f.key.clone(), f.value.clone()))
            .collect();
        let oracle = spatiotemporal_attention_quadratic(&fixture.frames[step.frame_index].query, &frames)?;
        worst = worst.max(step.output.rel_diff(&oracle).expect("same shape"));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::fast_attention;
    use crate::tensor::random_matrix;

    fn frame(n: usize, cp: usize, c: usize, seed: u64) -> (Matrix, Matrix) {
        let d = Distribution::standard_normal();
        (random_matrix(n, cp, seed, d), random_matrix(n, c, seed + 1, d))
    }

    #[test]
    fn new_cache_is_empty() {
        let cache = FrameCache::new(2, 32, 128, 4096).unwrap();
        assert!(cache.is_empty());
        assert_eq!(cache.window(), 2);
        assert!(FrameCache::new(0, 1, 1, 1).is_err());
    }

    #[test]
    fn ring_keeps_last_t() {
        let mut cache = FrameCache::new(3, 2, 3, 5).unwrap();
        for i in 0..5 {
            let (k, v) = frame(5, 2, 3, i * 10);
            cache.push_frame(&k, &v).unwrap();
            assert!(cache.len() <= 3);
        }
        assert_eq!(cache.frame_indices(), vec![2, 3, 4]);
    }

    #[test]
    fn empty_cache_refuses_attend() {
        let cache = FrameCache::new(1, 2, 3, 4).unwrap();
        let err = cache.attend(&Matrix::zeros(4, 2)).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut cache = FrameCache::new(2, 2, 3, 4).unwrap();
        assert!(cache.push_frame(&Matrix::zeros(5, 2), &Matrix::zeros(5, 3)).is_err());
        assert!(cache.push_frame(&Matrix::zeros(4, 3), &Matrix::zeros(4, 3)).is_err());
        assert!(cache.push_frame(&Matrix::zeros(4, 2), &Matrix::zeros(4, 2)).is_err());
    }

    #[test]
    fn single_frame_matches_fast_attention_exactly() {
        let (k, v) = frame(16, 4, 6, 1);
        let q = random_matrix::<f64>(16, 4, 3, Distribution::standard_normal());
        let mut cache = FrameCache::new(1, 4, 6, 16).unwrap();
        cache.push_frame(&k, &v).unwrap();
        let expected = fast_attention(&AttentionInputs::new(q.clone(), k, v).unwrap());
        assert_eq!(cache.attend(&q).unwrap(), expected);
    }

    #[test]
    fn duplicate_frames_double_the_output() {
        let (k, v) = frame(8, 3, 2, 5);
        let q = random_matrix::<f64>(8, 3, 7, Distribution::standard_normal());
        let mut one = FrameCache::new(1, 3, 2, 8).unwrap();
        one.push_frame(&k, &v).unwrap();
        let mut two = FrameCache::new(2, 3, 2, 8).unwrap();
        two.push_frame(&k, &v).unwrap();
        two.push_frame(&k, &v).unwrap();
        // x + x == 2x exactly, and scaling by 2 commutes with rounding.
        assert_eq!(two.attend(&q).unwrap(), one.attend(&q).unwrap().scale(2.0));
    }

    #[test]
    fn window_average_scale() {
        let (k, v) = frame(8, 3, 2, 5);
        let q = random_matrix::<f64>(8, 3, 7, Distribution::standard_normal());
        let mut per = FrameCache::new(4, 3, 2, 8).unwrap();
        let mut avg = FrameCache::new(4, 3, 2, 8).unwrap().with_scale(WindowScale::WindowAverage);
        for _ in 0..4 {
            per.push_frame(&k, &v).unwrap();
            avg.push_frame(&k, &v).unwrap();
        }
        let rel = avg.attend(&q).unwrap().scale(4.0).rel_diff(&per.attend(&q).unwrap()).unwrap();
        assert!(rel < 1e-15);
    }

    #[test]
    fn zero_value_frame_has_zero_context() {
        let mut cache = FrameCache::new(2, 2, 3, 4).unwrap();
        let (k, _) = frame(4, 2, 3, 9);
        cache.push_frame(&k, &Matrix::zeros(4, 3)).unwrap();
        assert_eq!(cache.contexts().next().unwrap().context.max_abs(), 0.0);
    }

    #[test]
    fn push_cost_is_closed_form() {
        let (n, cp, c) = (12, 3, 5);
        let mut cache = FrameCache::new(4, cp, c, n).unwrap();
        for i in 0..6 {
            let (k, v) = frame(n, cp, c, i);
            cache.push_frame(&k, &v).unwrap();
            cache.attend(&k).unwrap();
            let cost = cache.per_frame_cost();
            assert_eq!(cost.get("context"), Some((n * cp * c) as u64));
            assert_eq!(cost.get("query_context"), Some((n * cp * c) as u64));
            let held = (i as usize + 1).min(4) as u64;
            assert_eq!(cost.get("context_sum"), Some((held - 1) * (cp * c) as u64));
        }
    }

    #[test]
    fn fixture_roundtrip_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = StreamManifest { n: 6, c_prime: 2, channels: 3, t: 2, frames: 3 };
        let fx = StreamFixture::generate(manifest, 4).unwrap();
        fx.save(dir.path()).unwrap();
        let back = StreamFixture::load(dir.path().join(STREAM_MANIFEST)).unwrap();
        assert_eq!(back, fx);

        let missing = dir.path().join("frame_0001.value");
        fs::remove_file(&missing).unwrap();
        let err = StreamFixture::load(dir.path().join(STREAM_MANIFEST)).unwrap_err();
        assert!(err.to_string().contains("frame_0001.value"), "{err}");
    }
}
