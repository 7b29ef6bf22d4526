//! End-to-end runs and width x dendrite-cycle compression sweeps.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{gen_blobs, gen_two_spirals, load_idx, Dataset, SplitFractions};
use crate::error::{Error, Result};
use crate::network::{ModelGraph, NetworkSpec, TaskLoss};
use crate::pb::{evaluate, pb_train, PbConfig, TrainReport};
use crate::rng::derive_seed;

/// Dataset selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    TwoSpirals {
        n_per_class: usize,
        turns: f64,
        noise: f64,
    },
    Blobs {
        n_per_class: usize,
        n_classes: usize,
        center_radius: f64,
        sigma: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::TwoSpirals {
            n_per_class: 500,
            turns: 1.75,
            noise: 0.05,
        }
    }
}

impl DatasetSpec {
    /// Generates or loads the data, then splits it with a seed derived from
    /// `seed`.
    pub fn build(&self, seed: u64, fractions: SplitFractions) -> Result<Dataset> {
        let data_seed = derive_seed(seed, "data");
        let mut ds = match self {
            DatasetSpec::TwoSpirals {
                n_per_class,
                turns,
                noise,
            } => gen_two_spirals(*n_per_class, *turns, *noise, data_seed)?,
            DatasetSpec::Blobs {
                n_per_class,
                n_classes,
                center_radius,
                sigma,
            } => gen_blobs(*n_per_class, *n_classes, *center_radius, *sigma, data_seed)?,
            DatasetSpec::Idx { images, labels } => load_idx(images, labels)?,
        };
        ds.resplit(fractions, derive_seed(seed, "split"))?;
        Ok(ds)
    }
}

/// One trained configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub run_id: String,
    pub seed: u64,
    pub width_multiplier: f64,
    pub dendrite_cycles: usize,
    pub params: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub wall_time_s: f64,
}

pub const SWEEP_HEADER: &str =
    "run_id,seed,width_multiplier,dendrite_cycles,params,train_acc,val_acc,test_acc,wall_time_s";

impl RunRecord {
    pub fn csv_row(&self, timing: bool) -> String {
        let wall = if timing {
            format!("{:.4}", self.wall_time_s)
        } else {
            String::new()
        };
        format!(
            "{},{},{},{},{},{:.4},{:.4},{:.4},{}",
            self.run_id,
            self.seed,
            self.width_multiplier,
            self.dendrite_cycles,
            self.params,
            self.train_acc,
            self.val_acc,
            self.test_acc,
            wall
        )
    }
}

pub struct RunOutcome {
    pub record: RunRecord,
    pub report: TrainReport,
    pub model: ModelGraph,
}

pub fn run_id(width_multiplier: f64, cycles: usize, seed: u64) -> String {
    format!("w{width_multiplier}-c{cycles}-s{seed}")
}

/// Builds `spec` with an initialisation seed derived from `seed`, trains it
/// with `config` (`max_cycles = 0` for a baseline) and evaluates the test
/// split once on the restored best-validation weights.
pub fn train_eval(spec: &NetworkSpec, dataset: &Dataset, config: &PbConfig, seed: u64) -> Result<RunOutcome> {
    let started = Instant::now();
    let mut model = ModelGraph::build(&spec.with_seed(derive_seed(seed, "init")))?;
    let train = dataset.train()?;
    let val = dataset.val()?;
    let test = dataset.test()?;
    let config = PbConfig {
        seed: derive_seed(seed, "train"),
        ..config.clone()
    };
    let report = pb_train(&mut model, &train, &val, TaskLoss::CrossEntropy, &config)?;
    let (_, test_acc) = evaluate(&model, &test, TaskLoss::CrossEntropy)?;
    let record = RunRecord {
        run_id: run_id(spec.width_multiplier, report.cycles_completed, seed),
        seed,
        width_multiplier: spec.width_multiplier,
        dendrite_cycles: report.cycles_completed,
        params: model.count_params(true),
        train_acc: report.final_train_acc,
        val_acc: report.best_val_acc,
        test_acc,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    Ok(RunOutcome { record, report, model })
}

fn default_multipliers() -> Vec<f64> {
    vec![1.0, 0.5, 0.25, 0.125]
}

fn default_cycles() -> Vec<usize> {
    vec![0, 1, 2, 3]
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_parallel() -> bool {
    true
}

/// Grid of widths x dendrite cycles x seeds over one base architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: NetworkSpec,
    #[serde(default = "default_multipliers")]
    pub width_multipliers: Vec<f64>,
    #[serde(default = "default_cycles")]
    pub cycles: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub pb: PbConfig,
    #[serde(default = "default_parallel")]
    pub parallel: bool,
}

impl SweepConfig {
    pub fn new(base: NetworkSpec) -> Self {
        Self {
            base,
            width_multipliers: default_multipliers(),
            cycles: default_cycles(),
            seeds: default_seeds(),
            pb: PbConfig::default(),
            parallel: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(m) = self.width_multipliers.iter().find(|&&m| !(m > 0.0 && m <= 1.0)) {
            return Err(Error::Config(format!("width multiplier {m} outside (0, 1]")));
        }
        if self.width_multipliers.is_empty() || self.cycles.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config(
                "sweep needs at least one multiplier, cycle count and seed".into(),
            ));
        }
        self.pb.validate()?;
        self.base.resolve().map(|_| ())
    }

    /// Cells in output order: multiplier, then cycles, then seed, ascending.
    pub fn cells(&self) -> Vec<(f64, usize, u64)> {
        let mut ms = self.width_multipliers.clone();
        ms.sort_by(f64::total_cmp);
        ms.dedup();
        let mut cs = self.cycles.clone();
        cs.sort_unstable();
        cs.dedup();
        let mut ss = self.seeds.clone();
        ss.sort_unstable();
        ss.dedup();
        let mut cells = Vec::new();
        for &m in &ms {
            for &c in &cs {
                for &s in &ss {
                    cells.push((m, c, s));
                }
            }
        }
        cells
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellFailure {
    pub run_id: String,
    pub message: String,
}

/// Smallest dendrite-augmented point per width that matches the full-width
/// baseline's validation accuracy for the same seed.
#[derive(Clone, Debug, PartialEq)]
pub struct FrontierPoint {
    pub width_multiplier: f64,
    pub run_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub points: Vec<RunRecord>,
    pub failures: Vec<CellFailure>,
    pub frontier: Vec<FrontierPoint>,
}

impl SweepResult {
    pub fn to_csv(&self, timing: bool) -> String {
        let mut out = String::from(SWEEP_HEADER);
        out.push('\n');
        for p in &self.points {
            out.push_str(&p.csv_row(timing));
            out.push('\n');
        }
        out
    }

    pub fn failures_csv(&self) -> String {
        let mut out = String::from("run_id,error\n");
        for f in &self.failures {
            let _ = writeln!(out, "{},\"{}\"", f.run_id, f.message.replace('"', "'"));
        }
        out
    }

    pub fn point(&self, width_multiplier: f64, cycles: usize, seed: u64) -> Option<&RunRecord> {
        self.points
            .iter()
            .find(|p| p.width_multiplier == width_multiplier && p.dendrite_cycles == cycles && p.seed == seed)
    }
}

fn frontier(points: &[RunRecord], multipliers: &[f64]) -> Vec<FrontierPoint> {
    let mut ms = multipliers.to_vec();
    ms.sort_by(f64::total_cmp);
    ms.dedup();
    ms.into_iter()
        .map(|m| {
            let best = points
                .iter()
                .filter(|p| p.width_multiplier == m && p.dendrite_cycles > 0)
                .filter(|p| {
                    points
                        .iter()
                        .find(|b| b.width_multiplier == 1.0 && b.dendrite_cycles == 0 && b.seed == p.seed)
                        .is_some_and(|b| p.val_acc >= b.val_acc)
                })
                .min_by_key(|p| p.params);
            FrontierPoint {
                width_multiplier: m,
                run_id: best.map(|p| p.run_id.clone()),
            }
        })
        .collect()
}

/// Trains every cell independently. A cell with `c` cycles runs exactly `c`
/// dendrite cycles. Failed cells are reported separately and the sweep
/// carries on.
pub fn run_sweep(config: &SweepConfig, dataset: &Dataset) -> Result<SweepResult> {
    config.validate()?;
    let cells = config.cells();
    let run_cell = |&(m, c, s): &(f64, usize, u64)| {
        let pb = PbConfig {
            max_cycles: c,
            stop_on_plateau: false,
            ..config.pb.clone()
        };
        train_eval(&config.base.with_width(m), dataset, &pb, s)
            .map(|o| o.record)
            .map_err(|e| CellFailure {
                run_id: run_id(m, c, s),
                message: e.to_string(),
            })
    };
    let results: Vec<_> = if config.parallel {
        cells.par_iter().map(run_cell).collect()
    } else {
        cells.iter().map(run_cell).collect()
    };
    let mut points = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(p) => points.push(p),
            Err(f) => failures.push(f),
        }
    }
    let frontier = frontier(&points, &config.width_multipliers);
    Ok(SweepResult {
        points,
        failures,
        frontier,
    })
}
