use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use fastattn::fa_block::{fa_block_forward, init_fa_weights, FABlockConfig};
use fastattn::tensor::random_matrix;
use fastattn::toynet::{build_network, random_image, NetConfig, ReductionOp, ReductionStage};
use fastattn::{Distribution, FeatureMap, Matrix};

fn matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul");
    for size in [64, 256] {
        let a: Matrix = random_matrix(size, size, 1, Distribution::UNIT);
        let b: Matrix = random_matrix(size, size, 2, Distribution::UNIT);
        g.bench_function(BenchmarkId::new("serial", size), |bch| bch.iter(|| black_box(&a).matmul(&b).unwrap()));
        g.bench_function(BenchmarkId::new("rayon", size), |bch| {
            bch.iter(|| black_box(&a).par_matmul(&b).unwrap())
        });
    }
    g.finish();
}

fn fa_block(c: &mut Criterion) {
    let channels = 128;
    let m: Matrix = random_matrix(64 * 64, channels, 3, Distribution::standard_normal());
    let x = FeatureMap::unflatten(&m, 64, 64).unwrap();
    let mut g = c.benchmark_group("fa_block_64x64_c128");
    g.sample_size(10);
    for cp in [8, 16, 32, 64] {
        let w = init_fa_weights(channels, cp, 4).unwrap();
        let cfg = FABlockConfig::new(channels).with_attention_channels(cp);
        g.bench_function(BenchmarkId::new("cprime", cp), |b| b.iter(|| fa_block_forward(black_box(&x), &w, &cfg).unwrap()));
    }
    g.finish();
}

fn toynet(c: &mut Criterion) {
    let mut g = c.benchmark_group("toynet_forward_64x128");
    g.sample_size(10);
    for stage in ReductionStage::ALL {
        let cfg = NetConfig::default().with_reduction(stage, ReductionOp::StridedConv);
        let net = build_network(&cfg, 5).unwrap();
        let image = random_image(&cfg, 6);
        g.bench_function(stage.name(), |b| b.iter(|| net.forward(black_box(&image)).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, matmul, fa_block, toynet);
criterion_main!(benches);
