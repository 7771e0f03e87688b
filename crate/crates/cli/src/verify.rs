//! Invariant suites behind `fastattn verify`.
//!
//! Every check is deterministic for a given seed: no timings, no thread
//! count dependence. Details print measured value next to the tolerance so
//! a failing line is its own diff.

use std::path::Path;

use fastattn::attention::{
    cosine_affinity, cosine_attention_quadratic, dot_affinity, fast_attention, fast_attention_backward,
    softmax_attention, AttentionInputs,
};
use fastattn::fa_block::{fa_block_forward, init_fa_weights, self_attention_block_forward, FABlockConfig};
use fastattn::flops::{
    flops_fast_attention_module, flops_self_attention_module, flops_spatiotemporal, table1_rows, CostKind,
    ModuleShape, SpatioTemporalMethod,
};
use fastattn::streaming::{check_stream, run_stream, StreamFixture, StreamManifest};
use fastattn::tensor::{load_matrix, measure, random_matrix, save_matrix, RawTensor};
use fastattn::toynet::{build_network, random_image, NetConfig, ReductionOp, ReductionStage};
use fastattn::{Distribution, FeatureMap, Matrix, SeededRng};
use serde::Serialize;

use crate::args::Suite;
use crate::error::CliResult;

pub const EQUIVALENCE_TOLERANCE: f64 = 1e-10;
pub const EQUIVALENCE_INSTANCES: usize = 200;
pub const EQUIVALENCE_SIZES: [usize; 10] = [1, 3, 8, 17, 64, 100, 256, 513, 1024, 4096];
pub const AFFINITY_SLACK: f64 = 1e-12;
pub const GRADIENT_TOLERANCE: f64 = 1e-6;
pub const GRADIENT_STEP: f64 = 1e-5;
pub const GRADIENT_INSTANCES: u64 = 20;
pub const STREAM_TOLERANCE: f64 = 1e-12;
pub const STREAM_WINDOWS: [usize; 5] = [1, 2, 3, 4, 8];
pub const COST_RATIO_LIMIT: f64 = 0.06;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub suite: &'static str,
    pub check: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(suite: &'static str, check: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            suite,
            check: check.into(),
            passed,
            detail: detail.into(),
        }
    }

    fn at_most(suite: &'static str, check: impl Into<String>, value: f64, tol: f64, context: &str) -> Self {
        let detail = if context.is_empty() {
            format!("value={value:.3e} tol={tol:.0e}")
        } else {
            format!("value={value:.3e} tol={tol:.0e} {context}")
        };
        Self::new(suite, check, value <= tol, detail)
    }
}

/// Suites in the order `all` runs them.
pub const ALL_SUITES: [Suite; 9] = [
    Suite::Tensor,
    Suite::Equivalence,
    Suite::Boundedness,
    Suite::Gradients,
    Suite::Cost,
    Suite::Streaming,
    Suite::Flops,
    Suite::Table1,
    Suite::Toynet,
];

pub fn run_suite(suite: Suite, seed: u64) -> CliResult<Vec<Check>> {
    match suite {
        Suite::Tensor => tensor(seed),
        Suite::Equivalence => equivalence(seed),
        Suite::Boundedness => boundedness(seed),
        Suite::Gradients => gradients(seed),
        Suite::Cost => cost(seed),
        Suite::Streaming => streaming(seed),
        Suite::Flops => flops(),
        Suite::Table1 => Ok(table1()),
        Suite::Toynet => toynet(seed),
        Suite::All => {
            let mut out = Vec::new();
            for s in ALL_SUITES {
                out.extend(run_suite(s, seed)?);
            }
            Ok(out)
        }
    }
}

/// Independent stream per suite and purpose.
fn derive(seed: u64, tag: u64) -> u64 {
    SeededRng::new(seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)).next_u64()
}

fn normal_inputs(n: usize, cp: usize, c: usize, std_dev: f64, rng: &mut SeededRng) -> CliResult<AttentionInputs> {
    let d = Distribution::Normal { mean: 0.0, std_dev };
    let q = rng.matrix(n, cp, d);
    let k = rng.matrix(n, cp, d);
    let v = rng.matrix(n, c, d);
    Ok(AttentionInputs::new(q, k, v)?)
}

fn tensor(seed: u64) -> CliResult<Vec<Check>> {
    const S: &str = "tensor";
    let d = Distribution::standard_normal();
    let a: Matrix = random_matrix(7, 5, derive(seed, 10), d);
    let b: Matrix = random_matrix(5, 3, derive(seed, 11), d);
    let product = a.matmul(&b)?;
    let triple = Matrix::from_fn(7, 3, |i, j| {
        let mut acc = 0.0;
        for p in 0..5 {
            acc += a.get(i, p) * b.get(p, j);
        }
        acc
    });
    let mut out = vec![Check::new(
        S,
        "matmul_equals_triple_loop",
        product == triple,
        "7x5 · 5x3, exact equality",
    )];

    let a: Matrix = random_matrix(96, 48, derive(seed, 12), d);
    let b: Matrix = random_matrix(48, 40, derive(seed, 13), d);
    out.push(Check::new(
        S,
        "par_matmul_bit_identical",
        a.matmul(&b)? == a.par_matmul(&b)?,
        "96x48 · 48x40",
    ));

    let bytes = RawTensor::from(&a).encode();
    let back: Matrix = RawTensor::decode(&bytes)?.into_matrix()?;
    let same_bits = back.data().iter().zip(a.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    out.push(Check::new(
        S,
        "tensor_file_roundtrip",
        back.shape() == a.shape() && same_bits,
        format!("{} bytes, bit-exact", bytes.len()),
    ));

    let x: Matrix = random_matrix(4, 4, derive(seed, 14), Distribution::UNIT);
    let y: Matrix = random_matrix(4, 4, derive(seed, 14), Distribution::UNIT);
    let z: Matrix = random_matrix(4, 4, derive(seed, 15), Distribution::UNIT);
    let in_range = x.data().iter().all(|v| (0.0..1.0).contains(v));
    out.push(Check::new(
        S,
        "rng_deterministic",
        x == y && x != z && in_range,
        "same seed equal, new seed differs, uniform in [0,1)",
    ));

    let s = random_matrix::<f64>(16, 9, derive(seed, 16), Distribution::symmetric(30.0)).softmax_rows();
    let worst = s
        .iter_rows()
        .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    out.push(Check::at_most(S, "softmax_rows_sum_to_one", worst, 1e-14, ""));

    let norm = a.l2_normalize_rows(1e-12);
    let worst = norm.row_norms().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    out.push(Check::at_most(S, "normalized_rows_unit_length", worst, 1e-14, ""));
    Ok(out)
}

fn equivalence(seed: u64) -> CliResult<Vec<Check>> {
    let mut rng = SeededRng::new(derive(seed, 20));
    let mut worst = 0.0f64;
    let mut worst_at = (0, 0, 0);
    for i in 0..EQUIVALENCE_INSTANCES {
        let n = EQUIVALENCE_SIZES[i % EQUIVALENCE_SIZES.len()];
        let c = 1 + (rng.next_u64() % 16) as usize;
        let cp = 1 + (rng.next_u64() % 8) as usize;
        let std_dev = 10f64.powf(rng.sample(Distribution::symmetric(2.0)));
        let inp = normal_inputs(n, cp, c, std_dev, &mut rng)?;
        let rel = fast_attention(&inp)
            .rel_diff(&cosine_attention_quadratic(&inp))
            .expect("same shape");
        if rel > worst || i == 0 {
            worst = rel;
            worst_at = (n, c, cp);
        }
    }
    let (n, c, cp) = worst_at;
    Ok(vec![Check::at_most(
        "equivalence",
        "fast_equals_quadratic",
        worst,
        EQUIVALENCE_TOLERANCE,
        &format!(
            "instances={EQUIVALENCE_INSTANCES} max_n={} worst_at=n{n}/C{c}/c'{cp}",
            EQUIVALENCE_SIZES.iter().max().unwrap()
        ),
    )])
}

fn boundedness(seed: u64) -> CliResult<Vec<Check>> {
    const S: &str = "boundedness";
    let mut rng = SeededRng::new(derive(seed, 30));
    let mut worst = 0.0f64;
    for i in 0..20 {
        let std_dev = 10f64.powi(i % 7 - 3);
        let inp = normal_inputs(128, 5, 2, std_dev, &mut rng)?;
        worst = worst.max(cosine_affinity(&inp).max_abs());
    }
    let mut out = vec![Check::new(
        S,
        "cosine_affinity_in_unit_interval",
        worst <= 1.0 + AFFINITY_SLACK,
        format!("max|a|={worst:.17} bound=1+{AFFINITY_SLACK:.0e} instances=20"),
    )];

    let (inp, max) = unboundedness_witness(seed)?;
    let cos_max = cosine_affinity(&inp).max_abs();
    out.push(Check::new(
        S,
        "dot_affinity_exceeds_one",
        max > 1.0 && cos_max <= 1.0 + AFFINITY_SLACK,
        format!("query rows at norm 10: max|q·k|={max:.3} max|cos|={cos_max:.6}"),
    ));
    Ok(out)
}

/// Seeded inputs with every query row rescaled to norm 10, and the largest
/// unnormalized affinity magnitude they produce.
pub fn unboundedness_witness(seed: u64) -> CliResult<(AttentionInputs, f64)> {
    let mut rng = SeededRng::new(derive(seed, 31));
    let base = normal_inputs(16, 4, 3, 1.0, &mut rng)?;
    let q = base.query().l2_normalize_rows(1e-12).scale(10.0);
    let inp = AttentionInputs::new(q, base.key().clone(), base.value().clone())?;
    let max = dot_affinity(&inp).max_abs();
    Ok((inp, max))
}

fn cosine_loss(q: &Matrix, k: &Matrix, v: &Matrix, g: &Matrix) -> f64 {
    let inp = AttentionInputs::new(q.clone(), k.clone(), v.clone()).expect("shapes fixed");
    let y = cosine_attention_quadratic(&inp);
    y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
}

fn central_difference(which: usize, args: [&Matrix; 3], g: &Matrix, h: f64) -> Matrix {
    let target = args[which];
    Matrix::from_fn(target.rows(), target.cols(), |i, j| {
        let x = target.get(i, j);
        let bump = |delta: f64| {
            let mut a = args.map(Clone::clone);
            a[which] = target.with_entry(i, j, x + delta);
            cosine_loss(&a[0], &a[1], &a[2], g)
        };
        (bump(h) - bump(-h)) / (2.0 * h)
    })
}

/// Largest `max|analytic − numeric| / max(‖analytic‖∞, ‖numeric‖∞)` over
/// all three gradients of `count` seeded n=6, C=3, c′=2 instances.
pub fn gradient_error(seed: u64, count: u64) -> CliResult<f64> {
    let mut worst = 0.0f64;
    for s in 0..count {
        let mut rng = SeededRng::new(derive(seed, 40 + s));
        let inp = normal_inputs(6, 2, 3, 1.0, &mut rng)?;
        let g = rng.matrix(6, 3, Distribution::standard_normal());
        let grads = fast_attention_backward(&inp, &g)?;
        let args = [inp.query(), inp.key(), inp.value()];
        for (which, analytic) in [&grads.d_query, &grads.d_key, &grads.d_value].into_iter().enumerate() {
            let numeric = central_difference(which, args, &g, GRADIENT_STEP);
            let scale = analytic.max_abs().max(numeric.max_abs());
            worst = worst.max(analytic.max_abs_diff(&numeric).expect("same shape") / scale);
        }
    }
    Ok(worst)
}

fn gradients(seed: u64) -> CliResult<Vec<Check>> {
    const S: &str = "gradients";
    let worst = gradient_error(seed, GRADIENT_INSTANCES)?;
    let mut out = vec![Check::at_most(
        S,
        "analytic_matches_central_differences",
        worst,
        GRADIENT_TOLERANCE,
        &format!("instances={GRADIENT_INSTANCES} step={GRADIENT_STEP:.0e}"),
    )];

    let mut rng = SeededRng::new(derive(seed, 39));
    let inp = normal_inputs(5, 3, 4, 1.0, &mut rng)?;
    let g = rng.matrix(5, 4, Distribution::standard_normal());
    let grads = fast_attention_backward(&inp, &g)?;
    let qh = inp.query().l2_normalize_rows(1e-12);
    let kh = inp.key().l2_normalize_rows(1e-12);
    let expected = kh.matmul(&qh.transpose().matmul(&g)?)?.scale(1.0 / 5.0);
    let rel = grads.d_value.rel_diff(&expected).expect("same shape");
    out.push(Check::at_most(S, "value_gradient_identity", rel, 1e-13, ""));
    Ok(out)
}

/// Counted MACs of the fast and softmax cores at `(n, C, c′)`.
pub fn counted_core_macs(n: usize, c: usize, cp: usize, seed: u64) -> CliResult<(u64, u64)> {
    let mut rng = SeededRng::new(seed);
    let inp = normal_inputs(n, cp, c, 1.0, &mut rng)?;
    let (_, fast) = measure(|| fast_attention(&inp));
    let (_, slow) = measure(|| softmax_attention(&inp));
    Ok((fast.macs, slow.macs))
}

fn cost(seed: u64) -> CliResult<Vec<Check>> {
    const S: &str = "cost";
    let (n, c, cp) = (4096u64, 64u64, 32u64);
    let (fast, slow) = counted_core_macs(n as usize, c as usize, cp as usize, derive(seed, 50))?;
    let mut out = vec![
        Check::new(
            S,
            "fast_core_macs_closed_form",
            fast == 2 * n * cp * c,
            format!("counted={fast} expected=2·n·c'·C={}", 2 * n * cp * c),
        ),
        Check::new(
            S,
            "softmax_core_macs_closed_form",
            slow == n * n * (cp + c),
            format!("counted={slow} expected=n²(c'+C)={}", n * n * (cp + c)),
        ),
        Check::at_most(
            S,
            "counted_ratio_n4096_c64",
            fast as f64 / slow as f64,
            COST_RATIO_LIMIT,
            "fast/softmax core",
        ),
    ];

    let (channels, cp, h, w) = (16, 8, 8, 16);
    let x = random_map(channels, h, w, derive(seed, 51));
    let weights = init_fa_weights(channels, cp, derive(seed, 52))?;
    let cfg = FABlockConfig::new(channels).with_attention_channels(cp);
    let shape = ModuleShape::new(channels, h, w, cp);
    let (_, fast) = measure(|| fa_block_forward(&x, &weights, &cfg));
    let (_, slow) = measure(|| self_attention_block_forward(&x, &weights, &cfg));
    let fast_model = flops_fast_attention_module(shape)?.total();
    let slow_model = flops_self_attention_module(shape)?.total();
    out.push(Check::new(
        S,
        "fast_module_model_equals_counter",
        fast.macs == fast_model,
        format!("counted={} model={fast_model} (C=16 c'=8 8x16)", fast.macs),
    ));
    out.push(Check::new(
        S,
        "self_module_model_equals_counter",
        slow.macs == slow_model,
        format!("counted={} model={slow_model} (C=16 c'=8 8x16)", slow.macs),
    ));
    out.push(Check::at_most(
        S,
        "module_ratio_n4096_c64",
        fastattn::flops::flops_ratio(ModuleShape::new(64, 64, 64, 32))?,
        COST_RATIO_LIMIT,
        "fast/self module, 64x64",
    ));
    Ok(out)
}

fn random_map(channels: usize, h: usize, w: usize, seed: u64) -> FeatureMap {
    let m: Matrix = random_matrix(h * w, channels, seed, Distribution::standard_normal());
    FeatureMap::unflatten(&m, h, w).expect("consistent dims")
}

pub fn stream_fixture(seed: u64) -> CliResult<StreamFixture> {
    let manifest = StreamManifest {
        n: 64,
        c_prime: 8,
        channels: 16,
        t: 2,
        frames: 8,
    };
    Ok(StreamFixture::generate(manifest, derive(seed, 60))?)
}

fn streaming(seed: u64) -> CliResult<Vec<Check>> {
    const S: &str = "streaming";
    let fixture = stream_fixture(seed)?;
    let mut out = Vec::new();
    let mut cores = Vec::new();
    for t in STREAM_WINDOWS {
        let dev = check_stream(&fixture, t)?;
        out.push(Check::at_most(S, format!("stream_equals_batch_t{t}"), dev, STREAM_TOLERANCE, "8 frames"));
        let steps = run_stream(&fixture, t)?;
        cores.push(steps.last().expect("8 frames").cost.total_of(CostKind::AttentionCore));
    }
    let m = fixture.manifest;
    let expected = 2 * (m.n * m.c_prime * m.channels) as u64;
    out.push(Check::new(
        S,
        "core_macs_constant_in_t",
        cores.iter().all(|&c| c == expected),
        format!("per-frame core MACs {cores:?} expected {expected}"),
    ));
    let shape = ModuleShape::new(m.channels, 8, 8, m.c_prime);
    let core = |t| -> CliResult<u64> {
        Ok(flops_spatiotemporal(shape, t, SpatioTemporalMethod::Naive)?.total_of(CostKind::AttentionCore))
    };
    let (two, four) = (core(2)?, core(4)?);
    out.push(Check::new(
        S,
        "naive_core_linear_in_t",
        four == 2 * two,
        format!("t=2: {two} t=4: {four}"),
    ));
    Ok(out)
}

fn flops() -> CliResult<Vec<Check>> {
    const S: &str = "flops";
    let mut out = Vec::new();
    let mut sums_ok = true;
    for c in fastattn::flops::table1::CHANNELS {
        let shape = ModuleShape::new(c, 128, 256, 32);
        for r in [flops_self_attention_module(shape)?, flops_fast_attention_module(shape)?] {
            sums_ok &= r.total() == r.components.iter().map(|x| x.flops).sum::<u64>();
        }
    }
    out.push(Check::new(S, "total_equals_component_sum", sums_ok, "both modules, six widths"));

    let small = ModuleShape::new(64, 32, 32, 32);
    let tall = ModuleShape::new(64, 64, 32, 32);
    let quad = |s| -> CliResult<u64> { Ok(flops_self_attention_module(s)?.total_of(CostKind::AttentionCore)) };
    let lin = |s| -> CliResult<u64> { Ok(flops_fast_attention_module(s)?.total_of(CostKind::AttentionCore)) };
    out.push(Check::new(
        S,
        "self_core_quadruples_when_height_doubles",
        quad(tall)? == 4 * quad(small)?,
        format!("{} -> {}", quad(small)?, quad(tall)?),
    ));
    out.push(Check::new(
        S,
        "fast_core_doubles_when_height_doubles",
        lin(tall)? == 2 * lin(small)?,
        format!("{} -> {}", lin(small)?, lin(tall)?),
    ));

    let st = |t| -> CliResult<u64> {
        Ok(flops_spatiotemporal(small, t, SpatioTemporalMethod::Fast)?.total_of(CostKind::AttentionCore))
    };
    out.push(Check::new(
        S,
        "spatiotemporal_fast_core_free_of_t",
        st(1)? == lin(small)? && st(8)? == st(1)?,
        format!("t=1: {} t=8: {} module: {}", st(1)?, st(8)?, lin(small)?),
    ));
    Ok(out)
}

fn table1() -> Vec<Check> {
    use fastattn::flops::table1::{FAST_TOLERANCE, SELF_TOLERANCE};
    const S: &str = "table1";
    let mut out = Vec::new();
    for r in table1_rows() {
        let c = r.channels;
        out.push(Check::new(
            S,
            format!("self_c{c}_within_3pct"),
            r.self_within_tolerance(),
            format!(
                "model={:.3} published={} deviation={:+.2}% tol=±{:.0}%",
                r.self_attention_gflops,
                r.self_attention_published,
                100.0 * r.self_attention_deviation,
                100.0 * SELF_TOLERANCE
            ),
        ));
        out.push(Check::new(
            S,
            format!("fast_c{c}_within_10pct"),
            r.fast_within_tolerance(),
            format!(
                "model={:.4} published={} deviation={:+.2}% tol=±{:.0}%",
                r.fast_attention_gflops,
                r.fast_attention_published,
                100.0 * r.fast_attention_deviation,
                100.0 * FAST_TOLERANCE
            ),
        ));
        out.push(Check::new(
            S,
            format!("ratio_c{c}_at_most_0.06"),
            r.ratio <= COST_RATIO_LIMIT,
            format!("fast/self={:.5} limit={COST_RATIO_LIMIT}", r.ratio),
        ));
    }
    out
}

fn toynet(seed: u64) -> CliResult<Vec<Check>> {
    const S: &str = "toynet";
    let mut out = Vec::new();
    let net_seed = derive(seed, 70);
    let image_seed = derive(seed, 71);
    for op in ReductionOp::ALL {
        let mut shapes_ok = true;
        let mut counter_ok = true;
        let mut flops = Vec::new();
        for stage in ReductionStage::ALL {
            let cfg = NetConfig::default().with_reduction(stage, op);
            let net = build_network(&cfg, net_seed)?;
            let image = random_image(&cfg, image_seed);
            let (y, counts) = measure(|| net.forward(&image));
            let y = y?;
            shapes_ok &= y.dims() == (cfg.num_classes, cfg.input_height, cfg.input_width) && y.is_finite();
            let model = net.analytic_flops().total();
            counter_ok &= counts.macs == model;
            flops.push(model);
        }
        let name = op.name();
        out.push(Check::new(
            S,
            format!("output_shape_{name}"),
            shapes_ok,
            "19x64x128 for all six placements",
        ));
        out.push(Check::new(
            S,
            format!("model_equals_counter_{name}"),
            counter_ok,
            "analytic MACs == counted MACs, six placements",
        ));
        out.push(Check::new(
            S,
            format!("flops_decrease_earlier_{name}"),
            flops.windows(2).all(|p| p[0] < p[1]),
            format!("Conv0..None {flops:?}"),
        ));
        let gaps: Vec<u64> = flops.windows(2).map(|p| p[1].saturating_sub(p[0])).collect();
        let last = gaps[gaps.len() - 1];
        out.push(Check::new(
            S,
            format!("res4_gap_smallest_{name}"),
            gaps[..gaps.len() - 1].iter().all(|&g| g > last),
            format!("adjacent gaps {gaps:?}"),
        ));
    }

    let cfg = NetConfig::default();
    let image = random_image(&cfg, image_seed);
    let net = build_network(&cfg, net_seed)?;
    let zero = net.map_weights(|_| 0.0).forward(&image)?;
    out.push(Check::new(
        S,
        "zero_weights_zero_scores",
        zero.data().iter().all(|&v| v == 0.0),
        "no biases",
    ));
    let (a, ta) = net.forward_traced(&image)?;
    let plain = build_network(&NetConfig { use_attention: false, ..cfg }, net_seed)?;
    let (b, tb) = plain.forward_traced(&image)?;
    let same_shapes = ta
        .activations
        .iter()
        .zip(&tb.activations)
        .all(|((na, fa), (nb, fb))| na == nb && fa.dims() == fb.dims());
    out.push(Check::new(
        S,
        "identity_attention_keeps_shapes",
        same_shapes && a != b,
        format!("{} activations compared", ta.activations.len()),
    ));
    let again = build_network(&NetConfig::default(), net_seed)?.forward(&image)?;
    out.push(Check::new(S, "forward_deterministic", again == a, "rebuild and rerun"));
    Ok(out)
}

pub const FIXTURE_FILES: [&str; 4] = ["query.fatn", "key.fatn", "value.fatn", "expected.fatn"];
pub const FIXTURE_PERTURBATION: f64 = 1e-3;

/// Writes seeded inputs and the fast-attention output. With `broken`,
/// `expected[0,0]` is shifted by [`FIXTURE_PERTURBATION`].
pub fn emit_fixture(dir: &Path, seed: u64, broken: bool) -> CliResult<()> {
    let mut rng = SeededRng::new(derive(seed, 80));
    let inp = normal_inputs(64, 4, 8, 1.0, &mut rng)?;
    let mut expected = fast_attention(&inp);
    if broken {
        expected = expected.with_entry(0, 0, expected.get(0, 0) + FIXTURE_PERTURBATION);
    }
    std::fs::create_dir_all(dir).map_err(|e| fastattn::Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let [q, k, v, y] = FIXTURE_FILES.map(|f| dir.join(f));
    save_matrix(q, inp.query())?;
    save_matrix(k, inp.key())?;
    save_matrix(v, inp.value())?;
    save_matrix(y, &expected)?;
    Ok(())
}

pub fn fixture(dir: &Path) -> CliResult<Vec<Check>> {
    const S: &str = "fixture";
    let [q, k, v, y] = FIXTURE_FILES.map(|f| dir.join(f));
    let inp = AttentionInputs::new(load_matrix(q)?, load_matrix(k)?, load_matrix(v)?)?;
    let expected: Matrix = load_matrix(&y)?;
    let fast = fast_attention(&inp);
    if fast.shape() != expected.shape() {
        return Ok(vec![Check::new(
            S,
            "golden_shape",
            false,
            format!("expected.fatn {:?} vs computed {:?}", expected.shape(), fast.shape()),
        )]);
    }
    let quad = cosine_attention_quadratic(&inp);
    let locate = |m: &Matrix| {
        let mut at = (0, 0, 0.0f64);
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                let d = (m.get(i, j) - expected.get(i, j)).abs();
                if d > at.2 {
                    at = (i, j, d);
                }
            }
        }
        format!("worst entry ({}, {}) off by {:.3e}", at.0, at.1, at.2)
    };
    Ok(vec![
        Check::at_most(
            S,
            "golden_fast_output",
            fast.rel_diff(&expected).expect("same shape"),
            EQUIVALENCE_TOLERANCE,
            &locate(&fast),
        ),
        Check::at_most(
            S,
            "golden_quadratic_output",
            quad.rel_diff(&expected).expect("same shape"),
            EQUIVALENCE_TOLERANCE,
            &locate(&quad),
        ),
    ])
}
