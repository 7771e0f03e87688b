use fastattn::attention::{fast_attention, AttentionInputs};
use fastattn::fa_block::{
    channel_sweep_report, fa_block_forward, init_fa_weights, self_attention_block_forward,
    FABlockConfig, FAWeights,
};
use fastattn::flops::{flops_fast_attention_module, flops_self_attention_module, CostKind, ModuleShape};
use fastattn::tensor::{measure, random_matrix, Distribution, FeatureMap, Matrix};

fn input(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap {
    let m = random_matrix(h * w, c, seed, Distribution::standard_normal());
    FeatureMap::unflatten(&m, h, w).unwrap()
}

#[test]
fn forward_equals_hand_composed_pipeline() {
    let x = input(16, 8, 8, 21);
    let w = init_fa_weights(16, 4, 22).unwrap();
    let cfg = FABlockConfig::new(16).with_attention_channels(4);
    let out = fa_block_forward(&x, &w, &cfg).unwrap();

    let flat = x.flatten();
    let q = flat.matmul(&w.w_query).unwrap();
    let k = flat.matmul(&w.w_key).unwrap();
    let v = flat.matmul(&w.w_value).unwrap().map(|a| a.max(0.0));
    let y = fast_attention(&AttentionInputs::new(q, k, v).unwrap());
    let y = y.matmul(&w.w_out).unwrap().add(&flat).unwrap();
    let expected = FeatureMap::unflatten(&y, 8, 8).unwrap();

    let diff = out.flatten().max_abs_diff(&expected.flatten()).unwrap();
    assert!(diff <= 1e-12, "{diff}");
}

#[test]
fn normalization_flag_is_moot_for_unit_projections() {
    // W_q, W_k select the first c′ channels and those channels are unit-norm
    // per pixel, so Q and K arrive normalized.
    let (c, cp, h, w) = (8, 3, 5, 6);
    let raw = random_matrix::<f64>(h * w, c, 31, Distribution::standard_normal());
    let head = Matrix::from_fn(h * w, cp, |i, j| raw.get(i, j)).l2_normalize_rows(1e-12);
    let x_flat = Matrix::from_fn(h * w, c, |i, j| if j < cp { head.get(i, j) } else { raw.get(i, j) });
    let x = FeatureMap::unflatten(&x_flat, h, w).unwrap();
    let select = Matrix::from_fn(c, cp, |i, j| if i == j { 1.0 } else { 0.0 });
    let mut weights = init_fa_weights(c, cp, 32).unwrap();
    weights.w_query = select.clone();
    weights.w_key = select;

    let on = FABlockConfig::new(c).with_attention_channels(cp);
    let off = FABlockConfig { normalize: false, ..on };
    let a = fa_block_forward(&x, &weights, &on).unwrap().flatten();
    let b = fa_block_forward(&x, &weights, &off).unwrap().flatten();
    assert!(a.rel_diff(&b).unwrap() <= 1e-10);
}

#[test]
fn output_is_finite_for_extreme_inputs() {
    let x = input(8, 4, 4, 41).map(|v| v * 1e150);
    let w = init_fa_weights(8, 4, 42).unwrap();
    let cfg = FABlockConfig {
        use_residual: false,
        ..FABlockConfig::new(8).with_attention_channels(4)
    };
    assert!(fa_block_forward(&x, &w, &cfg).unwrap().is_finite());
}

fn core_macs(
    forward: fn(&FeatureMap, &FAWeights, &FABlockConfig) -> fastattn::Result<FeatureMap>,
    x: &FeatureMap,
    w: &FAWeights,
    cfg: &FABlockConfig,
) -> u64 {
    let (_, total) = measure(|| forward(x, w, cfg).unwrap());
    let n = x.spatial_size() as u64;
    let (c, cp) = (cfg.channels as u64, cfg.attention_channels as u64);
    total.macs - (2 * n * c * cp + 2 * n * c * c)
}

#[test]
fn core_cost_linear_vs_quadratic_in_n() {
    let (c, cp) = (8, 4);
    let w = init_fa_weights(c, cp, 51).unwrap();
    let cfg = FABlockConfig::new(c).with_attention_channels(cp);
    let small = input(c, 8, 8, 52);
    let large = input(c, 16, 16, 53);
    let fast = (
        core_macs(fa_block_forward, &small, &w, &cfg),
        core_macs(fa_block_forward, &large, &w, &cfg),
    );
    let slow = (
        core_macs(self_attention_block_forward, &small, &w, &cfg),
        core_macs(self_attention_block_forward, &large, &w, &cfg),
    );
    assert_eq!(fast.1, 4 * fast.0);
    assert_eq!(slow.1, 16 * slow.0);
}

#[test]
fn analytic_model_equals_instrumented_counter() {
    for (c, cp, h, w) in [(8, 4, 6, 10), (16, 16, 4, 4), (32, 8, 12, 7), (5, 1, 1, 9)] {
        let x = input(c, h, w, (c * h) as u64);
        let weights = init_fa_weights(c, cp, 7).unwrap();
        let cfg = FABlockConfig::new(c).with_attention_channels(cp);
        let shape = ModuleShape::new(c, h, w, cp);
        let (_, fast) = measure(|| fa_block_forward(&x, &weights, &cfg).unwrap());
        let (_, slow) = measure(|| self_attention_block_forward(&x, &weights, &cfg).unwrap());
        assert_eq!(fast.macs, flops_fast_attention_module(shape).unwrap().total());
        assert_eq!(slow.macs, flops_self_attention_module(shape).unwrap().total());
    }
}

#[test]
fn channel_sweep_closed_forms() {
    let x = input(128, 64, 64, 61);
    let rows = channel_sweep_report(&x, &[8, 16, 32, 64, 128], 3).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows.windows(2).all(|p| p[0].total_macs < p[1].total_macs));
    let r32 = rows.iter().find(|r| r.attention_channels == 32).unwrap();
    let r64 = rows.iter().find(|r| r.attention_channels == 64).unwrap();
    // 2·n·c′·C with n = 4096, c′ = 32, C = 128.
    assert_eq!(r32.core_macs, 33_554_432);
    let n = 64 * 64u64;
    let qk = |cp: u64| 2 * n * 128 * cp;
    assert_eq!(qk(64) + r64.core_macs, 2 * (qk(32) + r32.core_macs));
    let analytic = flops_fast_attention_module(ModuleShape::new(128, 64, 64, 32)).unwrap();
    assert_eq!(analytic.total_of(CostKind::AttentionCore), r32.core_macs);
    assert!(rows.iter().all(|r| r.wall_time_s > 0.0));
}
