//! Built-in invariant checks, run by `perforated verify`.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::autograd::{grad_check, Activation, Tape};
use crate::data::gen_blobs;
use crate::deploy::{cost_per_billion, format_usd, required_replicas};
use crate::error::Result;
use crate::network::{GroupSelector, ModelGraph, NetworkSpec, ParamRole, TaskLoss};
use crate::pb::{
    correlation_score, pb_train, select_and_integrate, spawn_candidates, CandidateInputs, DendriteUnit, ErrorMatrix,
    PbConfig, Phase,
};
use crate::rng::{self, derive_seed_idx};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn normal(r: &mut rng::Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| StandardNormal.sample(r)).collect()).expect("non-empty shape")
}

fn one_hot(r: &mut rng::Rng, rows: usize, classes: usize) -> Tensor {
    let mut t = Tensor::zeros(vec![rows, classes]);
    for i in 0..rows {
        let c = r.random_range(0..classes);
        t.data_mut()[i * classes + c] = 1.0;
    }
    t
}

fn layer_gradients(seeds: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for s in 0..seeds {
        let mut r = rng::rng(derive_seed_idx(1, "verify-grad", s));
        let x = normal(&mut r, vec![4, 3]);
        let w = normal(&mut r, vec![3, 5]);
        let b = normal(&mut r, vec![5]);
        let y = one_hot(&mut r, 4, 5);
        let net = |tape: &mut Tape, x: crate::autograd::Var, w: crate::autograd::Var| {
            let bv = tape.constant(b.clone());
            let z = tape.matmul(x, w)?;
            let z = tape.add_bias(z, bv)?;
            let a = tape.activation(z, Activation::Tanh);
            tape.softmax_cross_entropy(a, &y)
        };
        worst = worst.max(grad_check(
            |tape, xv| {
                let wv = tape.constant(w.clone());
                net(tape, xv, wv)
            },
            &x,
            1e-5,
        )?);
        worst = worst.max(grad_check(
            |tape, wv| {
                let xv = tape.constant(x.clone());
                net(tape, xv, wv)
            },
            &w,
            1e-5,
        )?);
    }
    Ok(worst)
}

fn candidate_gradients(seeds: u64) -> Result<f64> {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for s in 0..seeds {
        let mut r = rng::rng(derive_seed_idx(1, "verify-candidate", s));
        let inputs = CandidateInputs {
            patterns: normal(&mut r, vec![12, 3]),
            prior: Vec::new(),
            positions: 1,
            cascade: false,
        };
        let e = ErrorMatrix::new(normal(&mut r, vec![12, 2]))?;
        let unit = DendriteUnit {
            host_layer: 0,
            neuron: 0,
            cycle: 0,
            weights: normal(&mut r, vec![3]).into_data(),
            bias: StandardNormal.sample(&mut r),
            activation: Activation::Tanh,
            frozen: false,
        };
        let (_, gw, gb) = unit.score_gradient(&inputs, &e)?;
        let analytic: Vec<f64> = gw.into_iter().chain([gb]).collect();
        for (k, a) in analytic.into_iter().enumerate() {
            let probe = |delta: f64| -> Result<f64> {
                let mut u = unit.clone();
                if k < 3 {
                    u.weights[k] += delta;
                } else {
                    u.bias += delta;
                }
                u.score(&inputs, &e)
            };
            let numeric = (probe(h)? - probe(-h)?) / (2.0 * h);
            worst = worst.max((a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs()));
        }
    }
    Ok(worst)
}

fn correlation_oracle(instances: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for s in 0..instances {
        let mut r = rng::rng(derive_seed_idx(1, "verify-corr", s));
        let p = r.random_range(1..=32);
        let o = r.random_range(1..=8);
        let v: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut r)).collect();
        let e = normal(&mut r, vec![p, o]);
        let fast = correlation_score(&v, &ErrorMatrix::new(e.clone())?)?;
        let v_mean = v.iter().sum::<f64>() / p as f64;
        let mut slow = 0.0;
        for j in 0..o {
            let e_mean = (0..p).map(|i| e.at(i, j)).sum::<f64>() / p as f64;
            let mut acc = 0.0;
            for (i, vi) in v.iter().enumerate() {
                acc += (vi - v_mean) * (e.at(i, j) - e_mean);
            }
            slow += acc.abs();
        }
        worst = worst.max((fast - slow).abs());
    }
    Ok(worst)
}

fn grow_one_cycle(model: &mut ModelGraph, x: &Tensor, targets: &Tensor, seed: u64) -> Result<()> {
    let config = PbConfig::default();
    let out = model.forward(x)?;
    let e = ErrorMatrix::from_outputs(&out, targets, TaskLoss::CrossEntropy)?;
    for layer in model.hidden_layers() {
        let inputs = CandidateInputs::capture(model, layer, x, config.cascade_dendrites)?;
        let mut state = spawn_candidates(
            model,
            layer,
            &config,
            derive_seed_idx(seed, "verify-spawn", layer as u64),
        )?;
        state.evaluate(&inputs, &e)?;
        select_and_integrate(model, &mut state)?;
    }
    Ok(())
}

fn closed_form(model: &ModelGraph, cycles: usize) -> usize {
    let base = model.count_params(false);
    let grown: usize = model
        .hidden_layers()
        .into_iter()
        .map(|l| {
            let (n, d) = model.host_dims(l).expect("hidden layer");
            (0..cycles).map(|c| n * (d + c + 1) + n).sum::<usize>()
        })
        .sum();
    base + grown
}

fn integration_checks(out: &mut Vec<Check>) -> Result<()> {
    let spec = NetworkSpec::mlp(&[3, 8, 6, 2], Activation::Tanh, 1.0, 11);
    let mut model = ModelGraph::build(&spec)?;
    let mut r = rng::rng(rng::derive_seed(1, "verify-integrate"));
    let x = normal(&mut r, vec![40, 3]);
    let y = one_hot(&mut r, 40, 2);
    let probe = normal(&mut r, vec![100, 3]);

    let mut max_diff: f64 = 0.0;
    let mut counts_ok = true;
    for cycle in 1..=3 {
        let before = model.forward(&probe)?;
        grow_one_cycle(&mut model, &x, &y, cycle)?;
        let after = model.forward(&probe)?;
        max_diff = max_diff.max(before.max_abs_diff(&after));
        counts_ok &= model.count_params(true) == closed_form(&model, cycle as usize);
    }
    out.push(check(
        "zero-impact integration",
        max_diff == 0.0,
        format!("max |before - after| = {max_diff:e} over 100 inputs, 3 cycles"),
    ));
    out.push(check(
        "parameter accounting",
        counts_ok,
        format!("count_params = {} after 3 cycles", model.count_params(true)),
    ));

    let mut bare = ModelGraph::build(&spec)?;
    let mut grown = bare.clone();
    grow_one_cycle(&mut grown, &x, &y, 99)?;
    bare.loss_and_grad(&x, &y, TaskLoss::CrossEntropy)?;
    grown.loss_and_grad(&x, &y, TaskLoss::CrossEntropy)?;
    let same = bare
        .groups()
        .iter()
        .zip(grown.groups())
        .all(|(a, b)| a.tensor.grad() == b.tensor.grad());
    let dendrite_inputs_untouched = grown
        .groups()
        .iter()
        .filter(|g| g.role == ParamRole::DendriteInput)
        .all(|g| g.tensor.grad().is_none());
    out.push(check(
        "perforation",
        same && dendrite_inputs_untouched,
        "main gradients with u = 0 equal the dendrite-free gradients".into(),
    ));
    Ok(())
}

fn freeze_check() -> Result<Check> {
    let ds = gen_blobs(40, 3, 2.0, 0.6, 5)?;
    let (train, val) = (ds.train()?, ds.val()?);
    let mut model = ModelGraph::build(&NetworkSpec::mlp(&[2, 6, 3], Activation::Tanh, 1.0, 3))?;
    let config = PbConfig {
        max_cycles: 2,
        stop_on_plateau: false,
        max_normal_epochs: 20,
        candidate_epochs: 10,
        ..PbConfig::default()
    };
    let report = pb_train(&mut model, &train, &val, TaskLoss::CrossEntropy, &config)?;
    let dendrite_ok = report
        .phases
        .iter()
        .filter(|p| p.phase == Phase::DendriteTraining)
        .all(|p| p.main_digest_start == p.main_digest_end);
    let normal_ok = report
        .phases
        .iter()
        .filter(|p| p.phase == Phase::NormalTraining)
        .all(|p| p.dendrite_input_digest_start == p.dendrite_input_digest_end);
    let digest = model.digest(GroupSelector::DendriteInput);
    Ok(check(
        "freeze invariance",
        dendrite_ok && normal_ok,
        format!(
            "{} phases checked, dendrite input digest {digest:016x}",
            report.phases.len()
        ),
    ))
}

fn cost_check() -> Result<Check> {
    let table = [
        (0.31, 1_581_885.0, "0.0544"),
        (0.31, 59_604_227.0, "0.0014"),
        (0.17, 107_001.0, "0.4413"),
    ];
    let mut ok = true;
    for (hourly, tps, expected) in table {
        ok &= format_usd(cost_per_billion(hourly, tps)?) == expected;
    }
    let last = cost_per_billion(0.17, 16_319_841.0)?;
    ok &= (last - 0.0028).abs() <= 1.5e-4;
    ok &= required_replicas(16_000_000.0, 1_581_885.0)? == 11;
    ok &= required_replicas(16_000_000.0, 16_319_841.0)? == 1;
    Ok(check(
        "cost arithmetic",
        ok,
        format!("c2-standard-4 reduced model: {}", format_usd(last)),
    ))
}

/// Runs every check. Errors inside a check count as failures.
pub fn run_checks() -> Vec<Check> {
    let mut out = Vec::new();
    let mut push_result = |name: &'static str, r: Result<f64>, tol: f64| {
        out.push(match r {
            Ok(v) => check(name, v < tol, format!("worst error {v:e} (tolerance {tol:e})")),
            Err(e) => check(name, false, e.to_string()),
        });
    };
    push_result("autograd finite differences", layer_gradients(20), 1e-4);
    push_result("candidate score gradient", candidate_gradients(20), 1e-4);
    push_result("correlation oracle", correlation_oracle(1000), 1e-12);
    if let Err(e) = integration_checks(&mut out) {
        out.push(check("integration", false, e.to_string()));
    }
    for c in [freeze_check(), cost_check()] {
        out.push(c.unwrap_or_else(|e| check("runtime", false, e.to_string())));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_checks() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
