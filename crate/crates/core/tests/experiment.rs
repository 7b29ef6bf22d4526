use std::f64::consts::PI;

use perforated::autograd::Activation;
use perforated::data::{encode_idx_images, encode_idx_labels, gen_two_spirals, load_idx, Split, SplitFractions};
use perforated::experiment::{run_sweep, DatasetSpec, SweepConfig, SWEEP_HEADER};
use perforated::network::{ModelGraph, NetworkSpec};
use perforated::pb::{cycle_param_count, PbConfig};
use perforated::Error;
use proptest::prelude::*;

fn small_sweep() -> (SweepConfig, perforated::data::Dataset) {
    let ds = DatasetSpec::TwoSpirals {
        n_per_class: 40,
        turns: 1.0,
        noise: 0.05,
    }
    .build(3, SplitFractions::default())
    .unwrap();
    let mut cfg = SweepConfig::new(NetworkSpec::mlp(&[2, 8, 8, 2], Activation::Tanh, 1.0, 0));
    cfg.width_multipliers = vec![1.0, 0.5];
    cfg.cycles = vec![0, 2];
    cfg.seeds = vec![1];
    cfg.pb = PbConfig {
        max_normal_epochs: 30,
        candidate_epochs: 10,
        ..PbConfig::default()
    };
    (cfg, ds)
}

#[test]
fn sweep_rows_cardinality_and_order() {
    let (cfg, ds) = small_sweep();
    let result = run_sweep(&cfg, &ds).unwrap();
    assert_eq!(result.points.len(), 4);
    assert!(result.failures.is_empty());
    let keys: Vec<(f64, usize)> = result
        .points
        .iter()
        .map(|p| (p.width_multiplier, p.dendrite_cycles))
        .collect();
    assert_eq!(keys, [(0.5, 0), (0.5, 2), (1.0, 0), (1.0, 2)]);
    let csv = result.to_csv(false);
    assert_eq!(csv.lines().next(), Some(SWEEP_HEADER));
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().nth(1).unwrap().ends_with(','), "wall time left empty");
}

#[test]
fn sweep_params_match_closed_form() {
    let (cfg, ds) = small_sweep();
    let result = run_sweep(&cfg, &ds).unwrap();
    for p in &result.points {
        let spec = cfg.base.with_width(p.width_multiplier);
        let model = ModelGraph::build(&spec).unwrap();
        let grown: usize = model
            .hidden_layers()
            .into_iter()
            .map(|l| {
                let (n, d) = model.host_dims(l).unwrap();
                (0..p.dendrite_cycles)
                    .map(|c| cycle_param_count(n, d, c, true))
                    .sum::<usize>()
            })
            .sum();
        assert_eq!(p.params, spec.param_count().unwrap() + grown, "{}", p.run_id);
    }
}

#[test]
fn sweep_is_deterministic_regardless_of_scheduling() {
    let (mut cfg, ds) = small_sweep();
    let a = run_sweep(&cfg, &ds).unwrap().to_csv(false);
    let b = run_sweep(&cfg, &ds).unwrap().to_csv(false);
    cfg.parallel = false;
    let c = run_sweep(&cfg, &ds).unwrap().to_csv(false);
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn failing_cells_are_recorded_and_skipped() {
    let (mut cfg, ds) = small_sweep();
    // Unbounded activations with this rate overflow within a few steps.
    cfg.base = NetworkSpec::mlp(&[2, 8, 8, 2], Activation::Relu, 1.0, 0);
    cfg.pb.lr_main = 1e300;
    let result = run_sweep(&cfg, &ds).unwrap();
    assert_eq!(result.points.len() + result.failures.len(), 4);
    assert!(!result.failures.is_empty());
    for f in &result.failures {
        assert!(result.points.iter().all(|p| p.run_id != f.run_id));
        assert!(f.message.contains("non-finite"), "{}", f.message);
    }
    assert_eq!(result.failures_csv().lines().count(), result.failures.len() + 1);
}

#[test]
fn invalid_sweeps_rejected() {
    let (mut cfg, ds) = small_sweep();
    cfg.width_multipliers = vec![1.5];
    assert!(matches!(run_sweep(&cfg, &ds), Err(Error::Config(_))));
    let (mut cfg, ds) = small_sweep();
    cfg.seeds.clear();
    assert!(matches!(run_sweep(&cfg, &ds), Err(Error::Config(_))));
}

#[test]
fn spiral_points_follow_the_formula() {
    let n = 25;
    let ds = gen_two_spirals(n, 1.75, 0.0, 0).unwrap();
    for k in 0..2 {
        for i in 0..n {
            let t = i as f64 / n as f64;
            let r = 0.2 + 0.8 * t;
            let theta = 2.0 * PI * 1.75 * t + k as f64 * PI;
            let row = ds.features.row(k * n + i);
            assert!((row[0] - r * theta.cos()).abs() < 1e-12);
            assert!((row[1] - r * theta.sin()).abs() < 1e-12);
            assert_eq!(ds.labels[k * n + i], k);
        }
    }
    assert_eq!(
        gen_two_spirals(n, 1.75, 0.05, 9).unwrap(),
        gen_two_spirals(n, 1.75, 0.05, 9).unwrap()
    );
    assert!(matches!(gen_two_spirals(0, 1.0, 0.0, 0), Err(Error::Config(_))));
    assert!(matches!(gen_two_spirals(3, 0.0, 0.0, 0), Err(Error::Config(_))));
}

#[test]
fn idx_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let pixels: Vec<u8> = (0..3 * 2 * 2).map(|i| (i * 20) as u8).collect();
    let images = dir.path().join("images.idx");
    let labels = dir.path().join("labels.idx");
    std::fs::write(&images, encode_idx_images(3, 2, 2, &pixels)).unwrap();
    std::fs::write(&labels, encode_idx_labels(&[0, 2, 1])).unwrap();
    let ds = load_idx(&images, &labels).unwrap();
    assert_eq!(ds.sample_shape, vec![2, 2, 1]);
    assert_eq!(ds.n_classes, 3);
    assert_eq!(
        ds.features.row(1),
        &[80.0 / 255.0, 100.0 / 255.0, 120.0 / 255.0, 140.0 / 255.0]
    );

    std::fs::write(&labels, encode_idx_labels(&[0, 1])).unwrap();
    assert!(matches!(load_idx(&images, &labels), Err(Error::Format(_))));
    let mut bad = encode_idx_images(3, 2, 2, &pixels);
    bad[3] = 0x01;
    std::fs::write(&images, &bad).unwrap();
    match load_idx(&images, &labels) {
        Err(Error::Format(m)) => assert!(m.contains("0x00000801"), "{m}"),
        other => panic!("{other:?}"),
    }
    let truncated = encode_idx_images(3, 2, 2, &pixels);
    std::fs::write(&images, &truncated[..truncated.len() - 1]).unwrap();
    assert!(matches!(load_idx(&images, &labels), Err(Error::Format(_))));
}

proptest! {
    #[test]
    fn splits_are_disjoint_and_exhaustive(n in 3usize..400, train in 0.2f64..0.8, seed in any::<u64>()) {
        let rest = 1.0 - train;
        let f = SplitFractions { train, val: rest / 2.0, test: rest / 2.0 };
        let split = Split::new(n, f, seed).unwrap();
        let mut all: Vec<usize> = split.train.iter().chain(&split.val).chain(&split.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(Split::new(n, f, seed).unwrap(), split);
    }
}
