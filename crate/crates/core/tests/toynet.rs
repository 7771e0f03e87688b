use fastattn::tensor::{load_feature_map, measure};
use fastattn::toynet::{
    build_network, load_network, placement_study, random_image, save_network, NetConfig, ReductionOp,
    ReductionStage,
};
use fastattn::FeatureMap;

fn all_configs() -> Vec<NetConfig> {
    let mut out = Vec::new();
    for op in ReductionOp::ALL {
        for stage in ReductionStage::ALL {
            out.push(NetConfig::default().with_reduction(stage, op));
        }
    }
    out
}

#[test]
fn output_shape_is_input_by_classes_for_every_placement_and_op() {
    for cfg in all_configs() {
        let net = build_network(&cfg, 3).unwrap();
        let out = net.forward(&random_image(&cfg, 4)).unwrap();
        assert_eq!(out.dims(), (19, 64, 128), "{:?}/{:?}", cfg.reduction_stage, cfg.reduction_op);
        assert!(out.is_finite());
    }
}

#[test]
fn identity_attention_changes_values_not_shapes() {
    for cfg in all_configs() {
        let image = random_image(&cfg, 4);
        let (a, ta) = build_network(&cfg, 3).unwrap().forward_traced(&image).unwrap();
        let plain = NetConfig { use_attention: false, ..cfg.clone() };
        let (b, tb) = build_network(&plain, 3).unwrap().forward_traced(&image).unwrap();
        assert_eq!(a.dims(), b.dims());
        assert_ne!(a, b);
        for ((na, fa), (nb, fb)) in ta.activations.iter().zip(&tb.activations) {
            assert_eq!(na, nb);
            assert_eq!(fa.dims(), fb.dims(), "{na}");
        }
    }
}

#[test]
fn zero_weights_give_zero_scores() {
    let cfg = NetConfig::default();
    let net = build_network(&cfg, 9).unwrap().map_weights(|_| 0.0);
    let out = net.forward(&random_image(&cfg, 1)).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn forward_is_deterministic() {
    let cfg = NetConfig::default().with_reduction(ReductionStage::Res2, ReductionOp::AvgPool);
    let image = random_image(&cfg, 11);
    let a = build_network(&cfg, 5).unwrap().forward(&image).unwrap();
    let b = build_network(&cfg, 5).unwrap().forward(&image).unwrap();
    assert_eq!(a, b);
}

#[test]
fn concurrent_forwards_match_sequential() {
    let cfg = NetConfig::default();
    let net = build_network(&cfg, 5).unwrap();
    let image = random_image(&cfg, 11);
    let expected = net.forward(&image).unwrap();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..4).map(|_| s.spawn(|| net.forward(&image).unwrap())).collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), expected);
        }
    });
}

#[test]
fn dumped_activations_match_resolution_table() {
    let dir = tempfile::tempdir().unwrap();
    for stage in ReductionStage::ALL {
        let cfg = NetConfig::default().with_reduction(stage, ReductionOp::StridedConv);
        let net = build_network(&cfg, 2).unwrap();
        let (_, trace) = net.forward_traced(&random_image(&cfg, 8)).unwrap();
        let sub = dir.path().join(stage.name());
        trace.save(&sub).unwrap();
        let res = net.resolutions();
        let load = |name: &str| -> FeatureMap { load_feature_map(sub.join(format!("{name}.fatn"))).unwrap() };

        let (h, w) = res.conv0;
        assert_eq!(load("conv0").dims(), (16, h, w));
        for s in 0..4 {
            let (h, w) = res.stages[s];
            let c = cfg.stage_channels[s];
            for name in [format!("res{}", s + 1), format!("fa{}", s + 1)] {
                let fm = load(&name);
                assert_eq!(fm.dims(), (c, h, w), "{stage:?} {name}");
                assert!(fm.is_finite());
            }
        }
        for s in 0..3 {
            let (h, w) = res.stages[s];
            assert_eq!(load(&format!("dec{}", s + 1)).dims(), (cfg.stage_channels[s], h, w));
        }
        let (ph, pw) = res.prediction;
        assert_eq!((ph, pw), (16, 32));
        assert_eq!(load("scores").dims(), (19, ph, pw));
        assert_eq!(load("output").dims(), (19, 64, 128));
    }
}

#[test]
fn analytic_flops_equal_counted_macs() {
    for cfg in all_configs() {
        let net = build_network(&cfg, 1).unwrap();
        let image = random_image(&cfg, 1);
        let (_, counts) = measure(|| net.forward(&image).unwrap());
        assert_eq!(
            counts.macs,
            net.analytic_flops().total(),
            "{:?}/{:?}",
            cfg.reduction_stage,
            cfg.reduction_op
        );
    }
}

#[test]
fn flops_strictly_decrease_as_reduction_moves_earlier() {
    for op in ReductionOp::ALL {
        let flops: Vec<u64> = ReductionStage::ALL
            .iter()
            .map(|&s| {
                let cfg = NetConfig::default().with_reduction(s, op);
                build_network(&cfg, 1).unwrap().analytic_flops().total()
            })
            .collect();
        assert!(flops.windows(2).all(|p| p[0] < p[1]), "{op:?}: {flops:?}");
        let gaps: Vec<u64> = flops.windows(2).map(|p| p[1] - p[0]).collect();
        let last = *gaps.last().unwrap();
        assert!(gaps[..gaps.len() - 1].iter().all(|&g| g > last), "{op:?}: {gaps:?}");
    }
}

#[test]
fn placement_study_has_one_row_per_placement() {
    let rows = placement_study(&NetConfig::default(), 7, 1).unwrap();
    assert_eq!(rows.len(), 6);
    let order: Vec<_> = rows.iter().map(|r| r.placement).collect();
    assert_eq!(order, ReductionStage::ALL);
    assert!(rows.iter().all(|r| r.wall_time_s > 0.0));
    assert!(rows[0].flops < rows[1].flops && rows[1].flops < rows[5].flops);
}

#[test]
fn network_roundtrips_through_json_and_tensor_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = NetConfig::default().with_reduction(ReductionStage::Res1, ReductionOp::StridedConv);
    let net = build_network(&cfg, 21).unwrap().map_weights(|v| v * 0.5);
    save_network(dir.path(), &net).unwrap();
    let back = load_network(dir.path()).unwrap();
    assert_eq!(back, net);
    let json = std::fs::read_to_string(dir.path().join("network.json")).unwrap();
    assert!(json.contains("\"res1.shortcut.fatn\""));

    std::fs::remove_file(dir.path().join("fa2.w_key.fatn")).unwrap();
    let err = load_network(dir.path()).unwrap_err().to_string();
    assert!(err.contains("fa2.w_key.fatn"), "{err}");
}
