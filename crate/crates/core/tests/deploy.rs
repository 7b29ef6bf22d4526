use perforated::autograd::Activation;
use perforated::deploy::{
    bench_throughput, cost_per_billion, format_usd, reference_rows, render_csv, required_replicas, speedup, CostModel,
};
use perforated::network::{ModelGraph, NetworkSpec};
use perforated::Error;
use proptest::prelude::*;

/// Independent arithmetic: dollars per hour over units per hour, per 1e9.
fn oracle(hourly: f64, tps: f64) -> f64 {
    let units_per_hour = tps * 60.0 * 60.0;
    hourly / units_per_hour * 1_000_000_000.0
}

fn within_last_digit(value: f64, printed: &str) -> bool {
    let p: f64 = printed.parse().unwrap();
    (value - p).abs() <= 1e-4 + 5e-5
}

#[test]
fn published_costs() {
    let cases = [
        (0.31, 1_581_885.0, "0.0544"),
        (0.31, 59_604_227.0, "0.0014"),
        (0.17, 107_001.0, "0.4413"),
        (0.17, 16_319_841.0, "0.0028"),
    ];
    for (hourly, tps, published) in cases {
        let c = cost_per_billion(hourly, tps).unwrap();
        assert!((c - oracle(hourly, tps)).abs() <= 1e-15, "{c}");
        assert!(
            within_last_digit(c, published),
            "{hourly} {tps}: {} vs {published}",
            format_usd(c)
        );
    }
    assert_eq!(format_usd(cost_per_billion(0.31, 1_581_885.0).unwrap()), "0.0544");
    assert_eq!(format_usd(cost_per_billion(0.17, 107_001.0).unwrap()), "0.4413");
    // Computes to 0.002894; the published value is one unit lower in the last digit.
    assert_eq!(format_usd(cost_per_billion(0.17, 16_319_841.0).unwrap()), "0.0029");
}

#[test]
fn published_ratios() {
    assert_eq!(required_replicas(16_000_000.0, 1_581_885.0).unwrap(), 11);
    assert_eq!(required_replicas(16_000_000.0, 16_319_841.0).unwrap(), 1);
    let s = speedup(16_319_841.0, 107_001.0).unwrap();
    assert_eq!(format!("{s:.2}"), "152.52");
    let rounded_costs = speedup(0.0544, 0.0014).unwrap();
    assert_eq!(format!("{rounded_costs:.2}"), "38.86");
    assert_eq!(rounded_costs.floor(), 38.0);
    let exact = cost_per_billion(0.31, 1_581_885.0).unwrap() / cost_per_billion(0.31, 59_604_227.0).unwrap();
    assert_eq!(exact.round(), 38.0);
}

#[test]
fn degenerate_inputs() {
    assert_eq!(cost_per_billion(3.60, 1_000_000.0).unwrap(), 1.0);
    assert!(matches!(cost_per_billion(-0.1, 5.0), Err(Error::Domain(_))));
    assert!(matches!(cost_per_billion(0.1, 0.0), Err(Error::Domain(_))));
    assert!(matches!(speedup(1.0, 0.0), Err(Error::Domain(_))));
    assert!(matches!(CostModel::new(f64::NAN, 1.0), Err(Error::Domain(_))));
    assert!(required_replicas(0.0, 1.0).is_err());
}

#[test]
fn reference_table_csv() {
    let csv = render_csv(&reference_rows()).unwrap();
    let costs: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(5).unwrap()).collect();
    assert_eq!(costs, ["0.0544", "0.0014", "0.4413", "0.0029"]);
}

#[test]
fn bench_contract() {
    let spec = NetworkSpec::mlp(&[4, 16, 3], Activation::Relu, 1.0, 0);
    let model = ModelGraph::build(&spec).unwrap();
    let single = bench_throughput(&model, &[8], 0.5, false).unwrap();
    assert_eq!(single.optimal_batch, Some(8));
    let sweep = bench_throughput(&model, &[1, 16], 0.5, false).unwrap();
    for row in &sweep.rows {
        assert!(row.error.is_none());
        assert!(row.wall_time_s >= 0.5);
        assert!(row.units_per_s > 0.0);
        let expected = (row.batch_size * row.iterations) as f64 / row.wall_time_s;
        assert!((row.units_per_s - expected).abs() <= 1e-9 * expected);
    }
    assert!(bench_throughput(&model, &[4, 4], 0.5, false).is_err());
    assert!(bench_throughput(&model, &[4], 0.1, false).is_err());
}

proptest! {
    #[test]
    fn cost_is_homogeneous(hourly in 1e-3f64..1e3, tps in 1.0f64..1e9) {
        let c = cost_per_billion(hourly, tps).unwrap();
        prop_assert_eq!(cost_per_billion(2.0 * hourly, tps).unwrap(), 2.0 * c);
        prop_assert_eq!(cost_per_billion(hourly, 2.0 * tps).unwrap(), c / 2.0);
    }

    #[test]
    fn replicas_are_monotone(target in 1.0f64..1e9, per in 1.0f64..1e8, grow in 1.0f64..10.0) {
        let n = required_replicas(target, per).unwrap();
        prop_assert!(required_replicas(target * grow, per).unwrap() >= n);
        prop_assert!(required_replicas(target, per * grow).unwrap() <= n);
        prop_assert!(n as f64 * per >= target);
    }
}

#[test]
fn narrow_model_is_at_least_as_fast() {
    // Width 0.125 has about 1/50 of the multiply-adds, far beyond timing noise.
    let spec = NetworkSpec::mlp(&[64, 256, 256, 10], Activation::Relu, 1.0, 0);
    let wide = ModelGraph::build(&spec).unwrap();
    let narrow = ModelGraph::build(&spec.with_width(0.125)).unwrap();
    let w = bench_throughput(&wide, &[64], 0.5, false).unwrap();
    let n = bench_throughput(&narrow, &[64], 0.5, false).unwrap();
    assert!(n.best_units_per_s() >= w.best_units_per_s(), "{n:?} vs {w:?}");
}
