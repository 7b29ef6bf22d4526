//! The alternating-phase training loop.
//!
//! Normal phases train the host network (and dendrite output weights) on
//! the task loss with patience-based early stopping and best-weight
//! restoration. Dendrite phases freeze all of that, grow candidate
//! dendrites against the frozen network's residual error and install the
//! winners. The loop ends after `max_cycles` dendrite cycles, or earlier
//! when a cycle fails to raise the best validation accuracy.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::Activation;
use crate::data::{accuracy, LabeledSet};
use crate::error::{Error, Result};
use crate::network::{GroupSelector, ModelGraph, ParamSnapshot, TaskLoss};
use crate::pb::candidate::{candidate_step, select_and_integrate, spawn_candidates, target_layers, CandidateInputs};
use crate::pb::residual::ErrorMatrix;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PbConfig {
    /// Candidates trained per host neuron each cycle.
    pub pool_size: usize,
    /// Upper bound on candidate-training epochs per dendrite phase.
    pub candidate_epochs: usize,
    /// Upper bound on epochs per normal phase.
    pub max_normal_epochs: usize,
    pub patience_normal: usize,
    pub patience_dendrite: usize,
    /// Minimum absolute validation-accuracy gain that counts as improvement.
    pub epsilon: f64,
    /// Relative gain in total candidate score that counts as improvement.
    pub score_epsilon: f64,
    pub max_cycles: usize,
    /// End the loop as soon as a cycle does not improve validation accuracy.
    pub stop_on_plateau: bool,
    pub lr_main: f64,
    pub lr_candidate: f64,
    pub batch_size: usize,
    pub cascade_dendrites: bool,
    /// Host layers; all hidden parameterised layers when unset.
    pub target_layers: Option<Vec<usize>>,
    /// Dendrite nonlinearity; defaults to the host layer's activation.
    pub dendrite_activation: Option<Activation>,
    pub seed: u64,
}

impl Default for PbConfig {
    fn default() -> Self {
        Self {
            pool_size: 4,
            candidate_epochs: 100,
            max_normal_epochs: 2000,
            patience_normal: 10,
            patience_dendrite: 10,
            epsilon: 1e-4,
            score_epsilon: 1e-4,
            max_cycles: 3,
            stop_on_plateau: true,
            lr_main: 0.05,
            lr_candidate: 0.01,
            batch_size: 32,
            cascade_dendrites: true,
            target_layers: None,
            dendrite_activation: None,
            seed: 0,
        }
    }
}

impl PbConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("pool_size", self.pool_size),
            ("candidate_epochs", self.candidate_epochs),
            ("max_normal_epochs", self.max_normal_epochs),
            ("patience_normal", self.patience_normal),
            ("patience_dendrite", self.patience_dendrite),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        let rates = [("lr_main", self.lr_main), ("lr_candidate", self.lr_candidate)];
        if let Some((name, v)) = rates.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!("{name} must be positive, got {v}")));
        }
        if !(self.epsilon >= 0.0 && self.score_epsilon >= 0.0) {
            return Err(Error::Config("improvement thresholds must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    NormalTraining,
    DendriteTraining,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::NormalTraining => "normal",
            Phase::DendriteTraining => "dendrite",
        }
    }
}

/// Where the controller is. Only [`pb_train`] moves it between phases.
#[derive(Clone, Debug)]
pub struct PhaseState {
    pub phase: Phase,
    pub cycle: usize,
    pub best_val: f64,
    pub epochs_without_improvement: usize,
    best_weights: Option<ParamSnapshot>,
}

impl PhaseState {
    fn new() -> Self {
        Self {
            phase: Phase::NormalTraining,
            cycle: 0,
            best_val: f64::NEG_INFINITY,
            epochs_without_improvement: 0,
            best_weights: None,
        }
    }

    fn enter_dendrite_phase(&mut self) {
        debug_assert_eq!(self.phase, Phase::NormalTraining);
        self.phase = Phase::DendriteTraining;
        self.cycle += 1;
    }

    fn enter_normal_phase(&mut self) {
        self.phase = Phase::NormalTraining;
        self.epochs_without_improvement = 0;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub cycle: usize,
    pub phase: Phase,
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub params: usize,
    pub wall_time_s: f64,
    /// Digest of the main parameter groups after the epoch.
    pub main_digest: u64,
    /// Best total candidate score (dendrite epochs only).
    pub candidate_score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseSummary {
    pub cycle: usize,
    pub phase: Phase,
    pub epochs: usize,
    pub start_val: f64,
    pub best_val: f64,
    /// Digests over the groups that existed when the phase began.
    pub main_digest_start: u64,
    pub main_digest_end: u64,
    pub dendrite_input_digest_start: u64,
    pub dendrite_input_digest_end: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub phases: Vec<PhaseSummary>,
    pub cycles_completed: usize,
    pub stopped_on_plateau: bool,
    pub best_val_acc: f64,
    pub final_train_acc: f64,
    pub final_params: usize,
}

pub const REPORT_HEADER: &str = "cycle,phase,epoch,train_loss,train_acc,val_acc,params,wall_time_s";

impl TrainReport {
    /// One row per epoch. Wall time is left empty unless `timing` is set,
    /// which keeps the file reproducible byte for byte.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for e in &self.epochs {
            let wall = if timing {
                format!("{:.4}", e.wall_time_s)
            } else {
                String::new()
            };
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.4},{:.4},{},{}",
                e.cycle,
                e.phase.label(),
                e.epoch,
                e.train_loss,
                e.train_acc,
                e.val_acc,
                e.params,
                wall
            );
        }
        out
    }

    /// Best validation accuracy after each completed cycle (index 0 is the
    /// initial normal phase).
    pub fn best_val_per_cycle(&self) -> Vec<f64> {
        self.phases
            .iter()
            .filter(|p| p.phase == Phase::NormalTraining)
            .map(|p| p.best_val)
            .collect()
    }
}

/// Mean loss and accuracy of the model on a whole set.
pub fn evaluate(model: &ModelGraph, set: &LabeledSet, loss: TaskLoss) -> Result<(f64, f64)> {
    let out = model.forward(&set.x)?;
    let (l, _) = loss.evaluate(&out, &set.targets)?;
    Ok((l, accuracy(&out, &set.labels)))
}

struct Run<'a> {
    model: &'a mut ModelGraph,
    train: &'a LabeledSet,
    val: &'a LabeledSet,
    loss: TaskLoss,
    config: &'a PbConfig,
    state: PhaseState,
    report: TrainReport,
    started: Instant,
}

impl Run<'_> {
    fn begin_summary(&self) -> (usize, u64, u64) {
        (
            self.model.groups().len(),
            self.model.digest(GroupSelector::Main),
            self.model.digest(GroupSelector::DendriteInput),
        )
    }

    fn end_summary(&mut self, begin: (usize, u64, u64), epochs: usize, start_val: f64) {
        let (groups, main, dinput) = begin;
        self.report.phases.push(PhaseSummary {
            cycle: self.state.cycle,
            phase: self.state.phase,
            epochs,
            start_val,
            best_val: self.state.best_val,
            main_digest_start: main,
            main_digest_end: self.model.digest_first(GroupSelector::Main, groups),
            dendrite_input_digest_start: dinput,
            dendrite_input_digest_end: self.model.digest_first(GroupSelector::DendriteInput, groups),
        });
    }

    fn record(&mut self, epoch: usize, train_loss: f64, train_acc: f64, val_acc: f64, score: Option<f64>) {
        self.report.epochs.push(EpochRecord {
            cycle: self.state.cycle,
            phase: self.state.phase,
            epoch,
            train_loss,
            train_acc,
            val_acc,
            params: self.model.count_params(true),
            wall_time_s: self.started.elapsed().as_secs_f64(),
            main_digest: self.model.digest(GroupSelector::Main),
            candidate_score: score,
        });
    }

    fn normal_phase(&mut self) -> Result<()> {
        self.state.enter_normal_phase();
        let begin = self.begin_summary();
        self.model.set_trainable(GroupSelector::Main, true);
        let (_, start_val) = evaluate(self.model, self.val, self.loss)?;
        self.state.best_val = start_val;
        self.state.best_weights = Some(self.model.snapshot());

        let mut r = rng::rng(rng::derive_seed_idx(
            self.config.seed,
            "normal",
            self.state.cycle as u64,
        ));
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        let mut epochs = 0;
        for epoch in 1..=self.config.max_normal_epochs {
            epochs = epoch;
            order.shuffle(&mut r);
            let mut loss_sum = 0.0;
            for chunk in order.chunks(self.config.batch_size) {
                let batch = self.train.select(chunk)?;
                let (l, _) = self.model.loss_and_grad(&batch.x, &batch.targets, self.loss)?;
                self.model.sgd_step(self.config.lr_main);
                loss_sum += l * chunk.len() as f64;
            }
            self.model.zero_grad();
            let train_loss = loss_sum / self.train.len() as f64;
            if !train_loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss at cycle {} epoch {epoch}",
                    self.state.cycle
                )));
            }
            let (_, train_acc) = evaluate(self.model, self.train, self.loss)?;
            let (_, val_acc) = evaluate(self.model, self.val, self.loss)?;
            self.record(epoch, train_loss, train_acc, val_acc, None);

            if val_acc > self.state.best_val + self.config.epsilon {
                self.state.best_val = val_acc;
                self.state.best_weights = Some(self.model.snapshot());
                self.state.epochs_without_improvement = 0;
            } else {
                self.state.epochs_without_improvement += 1;
                if self.state.epochs_without_improvement >= self.config.patience_normal {
                    break;
                }
            }
        }
        if let Some(best) = &self.state.best_weights {
            self.model.restore(best)?;
        }
        self.end_summary(begin, epochs, start_val);
        Ok(())
    }

    fn dendrite_phase(&mut self, targets: &[usize]) -> Result<()> {
        self.state.enter_dendrite_phase();
        let begin = self.begin_summary();
        self.model.set_trainable(GroupSelector::Main, false);
        let cycle = self.state.cycle as u64;

        let train_out = self.model.forward(&self.train.x)?;
        let (train_loss, _) = self.loss.evaluate(&train_out, &self.train.targets)?;
        let train_acc = accuracy(&train_out, &self.train.labels);
        let (_, val_acc) = evaluate(self.model, self.val, self.loss)?;
        let full_error = ErrorMatrix::from_outputs(&train_out, &self.train.targets, self.loss)?;

        let mut layers = Vec::with_capacity(targets.len());
        for &layer in targets {
            let inputs = CandidateInputs::capture(self.model, layer, &self.train.x, self.config.cascade_dendrites)?;
            let seed = rng::derive_seed_idx(self.config.seed, "spawn", cycle * 1024 + layer as u64);
            let mut state = spawn_candidates(self.model, layer, self.config, seed)?;
            state.evaluate(&inputs, &full_error)?;
            layers.push((inputs, state));
        }
        let total = |layers: &[(CandidateInputs, _)]| -> f64 {
            layers
                .iter()
                .map(|(_, s): &(_, crate::pb::CandidateState)| s.best_total())
                .sum()
        };
        let mut best_total = total(&layers);

        let mut r = rng::rng(rng::derive_seed_idx(self.config.seed, "candidates", cycle));
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        let mut stale = 0;
        let mut epochs = 0;
        for epoch in 1..=self.config.candidate_epochs {
            epochs = epoch;
            order.shuffle(&mut r);
            for chunk in order.chunks(self.config.batch_size) {
                let e = ErrorMatrix::from_outputs(
                    &train_out.select_rows(chunk)?,
                    &self.train.targets.select_rows(chunk)?,
                    self.loss,
                )?;
                for (inputs, state) in &mut layers {
                    let batch = inputs.select_samples(chunk)?;
                    candidate_step(state, &batch, &e, self.config.lr_candidate)?;
                }
            }
            for (inputs, state) in &mut layers {
                state.evaluate(inputs, &full_error)?;
            }
            let now = total(&layers);
            self.record(epoch, train_loss, train_acc, val_acc, Some(now));
            if now > best_total * (1.0 + self.config.score_epsilon) {
                best_total = now;
                stale = 0;
            } else {
                stale += 1;
                if stale >= self.config.patience_dendrite {
                    break;
                }
            }
        }
        for (_, state) in &mut layers {
            select_and_integrate(self.model, state)?;
        }
        self.state.best_val = val_acc;
        self.end_summary(begin, epochs, val_acc);
        Ok(())
    }
}

/// Runs the alternating freeze/train loop on `model`.
///
/// Cycle 0 is plain training. Each later cycle is a dendrite phase
/// followed by a normal phase; `max_cycles = 0` is exactly a baseline run.
pub fn pb_train(
    model: &mut ModelGraph,
    train: &LabeledSet,
    val: &LabeledSet,
    loss: TaskLoss,
    config: &PbConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    let targets = target_layers(model, config)?;
    let mut run = Run {
        model,
        train,
        val,
        loss,
        config,
        state: PhaseState::new(),
        report: TrainReport {
            epochs: Vec::new(),
            phases: Vec::new(),
            cycles_completed: 0,
            stopped_on_plateau: false,
            best_val_acc: 0.0,
            final_train_acc: 0.0,
            final_params: 0,
        },
        started: Instant::now(),
    };

    run.normal_phase()?;
    let mut previous_best = run.state.best_val;
    for _ in 0..config.max_cycles {
        if targets.is_empty() {
            break;
        }
        run.dendrite_phase(&targets)?;
        run.normal_phase()?;
        run.report.cycles_completed = run.state.cycle;
        let gain = run.state.best_val - previous_best;
        previous_best = previous_best.max(run.state.best_val);
        if config.stop_on_plateau && gain < config.epsilon {
            run.report.stopped_on_plateau = true;
            break;
        }
    }

    let (_, train_acc) = evaluate(run.model, train, loss)?;
    run.report.best_val_acc = run.state.best_val;
    run.report.final_train_acc = train_acc;
    run.report.final_params = run.model.count_params(true);
    Ok(run.report)
}
