//! Timing sweeps behind `fastattn bench`.

use std::collections::BTreeMap;
use std::hint::black_box;
use std::time::Instant;

use fastattn::attention::{
    cosine_attention_quadratic, dot_attention_unnormalized, fast_attention, softmax_attention, AttentionInputs,
};
use fastattn::streaming::{spatiotemporal_attention_quadratic, FrameCache};
use fastattn::tensor::{measure, random_matrix, Dtype};
use fastattn::{Distribution, Matrix, Real};
use serde::Serialize;

use crate::args::Variant;
use crate::error::{usage, CliResult};

pub const MIN_REPEATS: usize = 5;
pub const DEFAULT_BUDGET_BYTES: u64 = 2 << 30;
pub const CSV_HEADER: &str = "variant,n,C,cprime,t,macs,wall_time_s,seed";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRecord {
    pub variant: String,
    pub n: usize,
    #[serde(rename = "C")]
    pub channels: usize,
    pub cprime: usize,
    pub t: usize,
    pub macs: u64,
    /// Median over the timed repeats.
    pub wall_time_s: f64,
    pub seed: u64,
}

/// Baseline time over fast time for one grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Speedup {
    pub n: usize,
    #[serde(rename = "C")]
    pub channels: usize,
    pub cprime: usize,
    pub t: usize,
    pub baseline: String,
    pub variant: String,
    pub speedup: f64,
}

#[derive(Debug, Clone)]
pub struct BenchGrid {
    pub n: Vec<usize>,
    pub channels: Vec<usize>,
    pub cprime: Vec<usize>,
    pub t: Vec<usize>,
    pub variants: Vec<Variant>,
    pub repeats: usize,
    pub budget_bytes: u64,
    pub seed: u64,
}

impl BenchGrid {
    /// Every (variant, n, C, c′, t) point in run order.
    fn points(&self) -> Vec<(Variant, usize, usize, usize, usize)> {
        let mut out = Vec::new();
        for &n in &self.n {
            for &c in &self.channels {
                for &cp in &self.cprime {
                    for &v in &self.variants {
                        let ts: &[usize] = if v.is_streaming() { &self.t } else { &[1] };
                        for &t in ts {
                            out.push((v, n, c, cp, t));
                        }
                    }
                }
            }
        }
        out
    }

    fn validate(&self, dtype: Dtype) -> CliResult<()> {
        if self.repeats < MIN_REPEATS {
            return Err(usage(format!("--repeats must be at least {MIN_REPEATS}, got {}", self.repeats)));
        }
        let all = [&self.n, &self.channels, &self.cprime, &self.t];
        if all.iter().any(|v| v.is_empty()) || self.variants.is_empty() {
            return Err(usage("benchmark grid is empty"));
        }
        if all.iter().any(|v| v.contains(&0)) {
            return Err(usage("grid sizes must be >= 1"));
        }
        if dtype == Dtype::F32 && self.variants.iter().any(|v| v.is_streaming()) {
            return Err(usage("stream variants run in double precision only; drop them or use --dtype f64"));
        }
        for &v in self.variants.iter().filter(|v| v.is_quadratic()) {
            for &n in &self.n {
                let bytes = (n as u64) * (n as u64) * dtype.size_of() as u64;
                if bytes > self.budget_bytes {
                    return Err(usage(format!(
                        "variant {} at n={n} needs a {n}x{n} affinity of {bytes} bytes, over the {} byte budget; \
                         lower n or raise --budget-bytes",
                        v.name(),
                        self.budget_bytes
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub dtype: &'static str,
    pub repeats: usize,
    pub records: Vec<BenchRecord>,
    pub speedups: Vec<Speedup>,
}

/// Median of `repeats` timed calls after one untimed warmup, plus the MACs
/// the warmup performed.
pub fn time_median<R>(repeats: usize, mut f: impl FnMut() -> R) -> (f64, u64) {
    let (r, counts) = measure(&mut f);
    black_box(r);
    let mut times: Vec<f64> = (0..repeats.max(1))
        .map(|_| {
            let start = Instant::now();
            black_box(f());
            start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE)
        })
        .collect();
    times.sort_by(f64::total_cmp);
    (times[times.len() / 2], counts.macs)
}

fn inputs<T: Real>(n: usize, c: usize, cp: usize, seed: u64) -> CliResult<AttentionInputs<T>> {
    let d = Distribution::standard_normal();
    Ok(AttentionInputs::new(
        random_matrix(n, cp, seed, d),
        random_matrix(n, cp, seed ^ 0x5555, d),
        random_matrix(n, c, seed ^ 0xaaaa, d),
    )?)
}

fn run_point<T: Real>(v: Variant, n: usize, c: usize, cp: usize, t: usize, repeats: usize, seed: u64) -> CliResult<(f64, u64)> {
    if v.is_streaming() {
        return run_stream_point(v, n, c, cp, t, repeats, seed);
    }
    let inp = inputs::<T>(n, c, cp, seed)?;
    Ok(match v {
        Variant::Softmax => time_median(repeats, || softmax_attention(&inp)),
        Variant::CosineQuadratic => time_median(repeats, || cosine_attention_quadratic(&inp)),
        Variant::Fast => time_median(repeats, || fast_attention(&inp)),
        Variant::Dot => time_median(repeats, || dot_attention_unnormalized(&inp)),
        Variant::StreamFast | Variant::StreamNaive => unreachable!("handled above"),
    })
}

/// One new frame against a full window of `t`: the fast path pushes the
/// frame's context and attends, the naive path evaluates every frame.
fn run_stream_point(v: Variant, n: usize, c: usize, cp: usize, t: usize, repeats: usize, seed: u64) -> CliResult<(f64, u64)> {
    let d = Distribution::standard_normal();
    let frames: Vec<(Matrix, Matrix)> = (0..t as u64)
        .map(|i| {
            (
                random_matrix(n, cp, seed.wrapping_add(2 * i), d),
                random_matrix(n, c, seed.wrapping_add(2 * i + 1), d),
            )
        })
        .collect();
    let query: Matrix = random_matrix(n, cp, seed ^ 0x5151, d);
    match v {
        Variant::StreamFast => {
            let mut cache = FrameCache::new(t, cp, c, n)?;
            for (k, val) in &frames[..t - 1] {
                cache.push_frame(k, val)?;
            }
            let (k, val) = &frames[t - 1];
            let mut step = || -> fastattn::Result<Matrix> {
                cache.push_frame(k, val)?;
                cache.attend(&query)
            };
            step()?;
            Ok(time_median(repeats, || step().expect("validated shapes")))
        }
        _ => {
            spatiotemporal_attention_quadratic(&query, &frames)?;
            Ok(time_median(repeats, || {
                spatiotemporal_attention_quadratic(&query, &frames).expect("validated shapes")
            }))
        }
    }
}

/// Runs the grid point by point; timed work never overlaps.
pub fn run_bench<T: Real>(grid: &BenchGrid) -> CliResult<BenchReport> {
    grid.validate(T::DTYPE)?;
    let mut records = Vec::new();
    for (v, n, c, cp, t) in grid.points() {
        let (wall, macs) = run_point::<T>(v, n, c, cp, t, grid.repeats, grid.seed)?;
        records.push(BenchRecord {
            variant: v.name().to_string(),
            n,
            channels: c,
            cprime: cp,
            t,
            macs,
            wall_time_s: wall,
            seed: grid.seed,
        });
    }
    let speedups = speedups(&records);
    Ok(BenchReport {
        dtype: if T::DTYPE == Dtype::F32 { "f32" } else { "f64" },
        repeats: grid.repeats,
        records,
        speedups,
    })
}

/// softmax/fast and stream_naive/stream_fast time ratios where both ran.
pub fn speedups(records: &[BenchRecord]) -> Vec<Speedup> {
    let mut by_point: BTreeMap<(usize, usize, usize, usize), Vec<&BenchRecord>> = BTreeMap::new();
    for r in records {
        by_point.entry((r.n, r.channels, r.cprime, r.t)).or_default().push(r);
    }
    let mut out = Vec::new();
    for ((n, c, cp, t), rs) in by_point {
        let find = |name: &str| rs.iter().find(|r| r.variant == name);
        for (base, fast) in [("softmax", "fast"), ("stream_naive", "stream_fast")] {
            if let (Some(b), Some(f)) = (find(base), find(fast)) {
                out.push(Speedup {
                    n,
                    channels: c,
                    cprime: cp,
                    t,
                    baseline: base.to_string(),
                    variant: fast.to_string(),
                    speedup: b.wall_time_s / f.wall_time_s,
                });
            }
        }
    }
    out
}

impl BenchReport {
    pub fn text(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .records
            .iter()
            .map(|r| {
                vec![
                    r.variant.clone(),
                    r.n.to_string(),
                    r.channels.to_string(),
                    r.cprime.to_string(),
                    r.t.to_string(),
                    r.macs.to_string(),
                    format!("{:.6}", r.wall_time_s),
                ]
            })
            .collect();
        let mut out = format!("dtype {}, median of {} repeats after one warmup\n", self.dtype, self.repeats);
        out.push_str(&crate::render::table(
            &["variant", "n", "C", "cprime", "t", "macs", "wall_time_s"],
            &rows,
        ));
        if !self.speedups.is_empty() {
            out.push('\n');
            let rows: Vec<Vec<String>> = self
                .speedups
                .iter()
                .map(|s| {
                    vec![
                        format!("{}/{}", s.baseline, s.variant),
                        s.n.to_string(),
                        s.channels.to_string(),
                        s.cprime.to_string(),
                        s.t.to_string(),
                        format!("{:.2}x", s.speedup),
                    ]
                })
                .collect();
            out.push_str(&crate::render::table(&["speedup", "n", "C", "cprime", "t", "factor"], &rows));
        }
        out
    }
}
