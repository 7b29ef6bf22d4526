//! Forward-pass throughput over a batch-size sweep.

use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::ModelGraph;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub batch_size: usize,
    /// Samples per second; each sample stands in for one input unit.
    pub units_per_s: f64,
    pub wall_time_s: f64,
    pub iterations: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub rows: Vec<BenchRow>,
    pub optimal_batch: Option<usize>,
    pub parallel: bool,
}

impl BenchResult {
    pub fn best_units_per_s(&self) -> f64 {
        self.rows.iter().map(|r| r.units_per_s).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("batch_size,units_per_s,wall_time_s,iterations,error\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.1},{:.4},{},{}\n",
                r.batch_size,
                r.units_per_s,
                r.wall_time_s,
                r.iterations,
                r.error.as_deref().unwrap_or("")
            ));
        }
        out
    }
}

fn forward_batch(model: &ModelGraph, x: &Tensor, parallel: bool) -> Result<()> {
    if !parallel || x.rows() < 2 {
        model.forward(x).map(|_| ())
    } else {
        let threads = rayon::current_num_threads().max(1);
        let per = x.rows().div_ceil(threads);
        let chunks: Vec<Vec<usize>> = (0..x.rows())
            .collect::<Vec<_>>()
            .chunks(per)
            .map(<[usize]>::to_vec)
            .collect();
        chunks
            .par_iter()
            .try_for_each(|rows| model.forward(&x.select_rows(rows)?).map(|_| ()))
    }
}

/// For each batch size, one warm-up pass followed by repeated forward
/// passes until `min_duration_s` has elapsed. Sizes must be strictly
/// increasing.
pub fn bench_throughput(
    model: &ModelGraph,
    batch_sizes: &[usize],
    min_duration_s: f64,
    parallel: bool,
) -> Result<BenchResult> {
    if batch_sizes.is_empty() || batch_sizes.windows(2).any(|w| w[0] >= w[1]) || batch_sizes[0] == 0 {
        return Err(Error::Config(format!(
            "batch sizes {batch_sizes:?} must be positive and strictly increasing"
        )));
    }
    if !(min_duration_s.is_finite() && min_duration_s >= 0.5) {
        return Err(Error::Config(format!("min duration {min_duration_s}s is below 0.5s")));
    }
    let mut r = rng::rng(rng::derive_seed(0, "bench-inputs"));
    let width = model.input_len();
    let mut rows = Vec::with_capacity(batch_sizes.len());
    for &b in batch_sizes {
        let data: Vec<f64> = (0..b * width).map(|_| StandardNormal.sample(&mut r)).collect();
        let x = Tensor::new(vec![b, width], data)?;
        let outcome = forward_batch(model, &x, parallel).and_then(|_| {
            let start = Instant::now();
            let mut iterations = 0;
            loop {
                forward_batch(model, &x, parallel)?;
                iterations += 1;
                let elapsed = start.elapsed().as_secs_f64();
                if elapsed >= min_duration_s {
                    return Ok((iterations, elapsed));
                }
            }
        });
        rows.push(match outcome {
            Ok((iterations, elapsed)) => BenchRow {
                batch_size: b,
                units_per_s: (b * iterations) as f64 / elapsed,
                wall_time_s: elapsed,
                iterations,
                error: None,
            },
            Err(e) => BenchRow {
                batch_size: b,
                units_per_s: 0.0,
                wall_time_s: 0.0,
                iterations: 0,
                error: Some(e.to_string()),
            },
        });
    }
    let optimal_batch = rows
        .iter()
        .filter(|r| r.error.is_none())
        .fold(None::<&BenchRow>, |best, r| match best {
            Some(b) if b.units_per_s >= r.units_per_s => Some(b),
            _ => Some(r),
        })
        .map(|r| r.batch_size);
    Ok(BenchResult {
        rows,
        optimal_batch,
        parallel,
    })
}
