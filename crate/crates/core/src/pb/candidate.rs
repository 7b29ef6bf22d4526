//! Candidate dendrites: spawning, correlation ascent and integration.

use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;

use crate::autograd::{Activation, Tape};
use crate::error::{Error, Result};
use crate::network::ModelGraph;
use crate::pb::controller::PbConfig;
use crate::pb::correlation::covariances;
use crate::pb::residual::ErrorMatrix;
use crate::rng;
use crate::tensor::Tensor;

/// One dendrite unit for a single host neuron. Weights cover the host
/// layer's presynaptic inputs, followed by this neuron's earlier dendrites
/// when cascading.
#[derive(Clone, Debug, PartialEq)]
pub struct DendriteUnit {
    pub host_layer: usize,
    pub neuron: usize,
    pub cycle: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub activation: Activation,
    pub frozen: bool,
}

/// What candidates on one host layer see, recorded from the frozen network.
#[derive(Clone, Debug)]
pub struct CandidateInputs {
    /// Pattern matrix the host layer multiplies, `[samples * positions, d]`.
    pub patterns: Tensor,
    /// Outputs of installed dendrites on this layer, one `[rows, n]` per cycle.
    pub prior: Vec<Tensor>,
    /// Spatial positions per sample (1 for fully connected hosts).
    pub positions: usize,
    pub cascade: bool,
}

impl CandidateInputs {
    /// Runs the model on `x` and captures the inputs of host `layer`.
    pub fn capture(model: &ModelGraph, layer: usize, x: &Tensor, cascade: bool) -> Result<Self> {
        let mut tape = Tape::new();
        let trace = model.trace(&mut tape, x)?;
        let pat = trace.patterns[layer].ok_or_else(|| Error::Config(format!("layer {layer} has no neurons")))?;
        let patterns = tape.value(pat).clone();
        let (prior, cascade) = match model.dendrite_block(layer) {
            Some(b) => (b.outputs(model.groups(), &patterns), b.cascade),
            None => (Vec::new(), cascade),
        };
        Ok(Self {
            patterns,
            prior,
            positions: trace.positions[layer],
            cascade,
        })
    }

    pub fn samples(&self) -> usize {
        self.patterns.rows() / self.positions
    }

    pub fn width(&self) -> usize {
        self.patterns.cols() + if self.cascade { self.prior.len() } else { 0 }
    }

    /// Keeps the rows belonging to the given samples, in that order.
    pub fn select_samples(&self, samples: &[usize]) -> Result<Self> {
        let rows: Vec<usize> = samples
            .iter()
            .flat_map(|&s| s * self.positions..(s + 1) * self.positions)
            .collect();
        Ok(Self {
            patterns: self.patterns.select_rows(&rows)?,
            prior: self.prior.iter().map(|t| t.select_rows(&rows)).collect::<Result<_>>()?,
            positions: self.positions,
            cascade: self.cascade,
        })
    }
}

impl DendriteUnit {
    fn net(&self, inputs: &CandidateInputs, row: usize) -> f64 {
        let d = inputs.patterns.cols();
        let mut net = self.bias;
        for (x, w) in inputs.patterns.row(row).iter().zip(&self.weights[..d]) {
            net += x * w;
        }
        if inputs.cascade {
            let n = inputs.prior.first().map_or(0, |t| t.cols());
            for (prev, w) in inputs.prior.iter().zip(&self.weights[d..]) {
                net += w * prev.data()[row * n + self.neuron];
            }
        }
        net
    }

    fn check(&self, inputs: &CandidateInputs) -> Result<()> {
        if self.weights.len() != inputs.width() {
            return Err(Error::Dimension(format!(
                "unit has {} weights, inputs are {} wide",
                self.weights.len(),
                inputs.width()
            )));
        }
        Ok(())
    }

    /// Output `V_p` per sample, averaged over spatial positions.
    pub fn outputs(&self, inputs: &CandidateInputs) -> Result<Vec<f64>> {
        self.check(inputs)?;
        let l = inputs.positions;
        Ok((0..inputs.samples())
            .map(|p| {
                (p * l..(p + 1) * l)
                    .map(|r| self.activation.apply(self.net(inputs, r)))
                    .sum::<f64>()
                    / l as f64
            })
            .collect())
    }

    pub fn score(&self, inputs: &CandidateInputs, e: &ErrorMatrix) -> Result<f64> {
        crate::pb::correlation_score(&self.outputs(inputs)?, e)
    }

    /// Correlation score and its gradient `(dS/dw, dS/db)`:
    /// `dS/dw_k = sum_o sign(cov_o) sum_p (E[p][o] - mean E_o) f'(net_p) in_{p,k}`.
    pub fn score_gradient(&self, inputs: &CandidateInputs, e: &ErrorMatrix) -> Result<(f64, Vec<f64>, f64)> {
        self.check(inputs)?;
        let l = inputs.positions;
        let d = inputs.patterns.cols();
        let n = inputs.prior.first().map_or(0, |t| t.cols());
        let nets: Vec<f64> = (0..inputs.patterns.rows()).map(|r| self.net(inputs, r)).collect();
        let acts: Vec<f64> = nets.iter().map(|&z| self.activation.apply(z)).collect();
        let v: Vec<f64> = acts.chunks(l).map(|c| c.iter().sum::<f64>() / l as f64).collect();
        let cov = covariances(&v, e)?;
        let score = cov.iter().map(|c| c.abs()).sum();
        let signs: Vec<f64> = cov
            .iter()
            .map(|&c| {
                if c > 0.0 {
                    1.0
                } else if c < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
            .collect();

        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = 0.0;
        for p in 0..v.len() {
            let coef: f64 = signs.iter().enumerate().map(|(o, s)| s * e.centered(p, o)).sum();
            if coef == 0.0 {
                continue;
            }
            for r in p * l..(p + 1) * l {
                let g = coef * self.activation.derivative(nets[r], acts[r]) / l as f64;
                for (gk, x) in gw.iter_mut().zip(inputs.patterns.row(r)) {
                    *gk += g * x;
                }
                if inputs.cascade {
                    for (c, prev) in inputs.prior.iter().enumerate() {
                        gw[d + c] += g * prev.data()[r * n + self.neuron];
                    }
                }
                gb += g;
            }
        }
        Ok((score, gw, gb))
    }
}

/// Candidate pools for every neuron of one host layer.
#[derive(Clone, Debug)]
pub struct CandidateState {
    pub host_layer: usize,
    pub cycle: usize,
    pub activation: Activation,
    pub cascade: bool,
    /// `pool[neuron][candidate]`
    pub pool: Vec<Vec<DendriteUnit>>,
    /// Per-candidate outputs `V` from the last [`CandidateState::evaluate`].
    pub values: Vec<Vec<Vec<f64>>>,
    /// Per-candidate correlation scores `S`.
    pub scores: Vec<Vec<f64>>,
}

impl CandidateState {
    pub fn neurons(&self) -> usize {
        self.pool.len()
    }

    /// Recomputes `V` and `S` for every candidate.
    pub fn evaluate(&mut self, inputs: &CandidateInputs, e: &ErrorMatrix) -> Result<()> {
        let evaluated: Vec<(Vec<Vec<f64>>, Vec<f64>)> = self
            .pool
            .par_iter()
            .map(|units| {
                let mut vals = Vec::with_capacity(units.len());
                let mut scores = Vec::with_capacity(units.len());
                for u in units {
                    let v = u.outputs(inputs)?;
                    scores.push(crate::pb::correlation_score(&v, e)?);
                    vals.push(v);
                }
                Ok((vals, scores))
            })
            .collect::<Result<_>>()?;
        (self.values, self.scores) = evaluated.into_iter().unzip();
        Ok(())
    }

    /// Index of the best-scoring candidate per neuron (first on ties).
    pub fn best(&self) -> Vec<usize> {
        self.scores
            .iter()
            .map(|s| (0..s.len()).fold(0, |b, j| if s[j] > s[b] { j } else { b }))
            .collect()
    }

    /// Sum over neurons of the best candidate score.
    pub fn best_total(&self) -> f64 {
        self.scores.iter().map(|s| s.iter().copied().fold(0.0, f64::max)).sum()
    }
}

/// Target layers of `config`, validated against the model.
pub fn target_layers(model: &ModelGraph, config: &PbConfig) -> Result<Vec<usize>> {
    let hidden = model.hidden_layers();
    match &config.target_layers {
        None => Ok(hidden),
        Some(layers) => {
            if let Some(bad) = layers.iter().find(|l| !hidden.contains(l)) {
                return Err(Error::Config(format!(
                    "layer {bad} cannot host dendrites (eligible: {hidden:?})"
                )));
            }
            Ok(layers.clone())
        }
    }
}

/// Creates `pool_size` Glorot-initialised candidates per neuron of `layer`.
/// The model is not modified.
pub fn spawn_candidates(model: &ModelGraph, layer: usize, config: &PbConfig, seed: u64) -> Result<CandidateState> {
    if !target_layers(model, config)?.contains(&layer) {
        return Err(Error::Config(format!("layer {layer} is not a dendrite target")));
    }
    let (n, d) = model.host_dims(layer)?;
    let (cycle, cascade, activation) = match model.dendrite_block(layer) {
        Some(b) => (b.cycle_count(), b.cascade, b.activation),
        None => (
            0,
            config.cascade_dendrites,
            config
                .dendrite_activation
                .or_else(|| model.activation_after(layer))
                .unwrap_or(Activation::Tanh),
        ),
    };
    let width = d + if cascade { cycle } else { 0 };
    let limit = (6.0 / (width + 1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite glorot limit");
    let mut r = rng::rng(seed);
    let pool: Vec<Vec<DendriteUnit>> = (0..n)
        .map(|neuron| {
            (0..config.pool_size)
                .map(|_| DendriteUnit {
                    host_layer: layer,
                    neuron,
                    cycle,
                    weights: (0..width).map(|_| dist.sample(&mut r)).collect(),
                    bias: 0.0,
                    activation,
                    frozen: false,
                })
                .collect()
        })
        .collect();
    Ok(CandidateState {
        host_layer: layer,
        cycle,
        activation,
        cascade,
        scores: vec![vec![0.0; config.pool_size]; n],
        values: Vec::new(),
        pool,
    })
}

/// One gradient-ascent step on `S` for every unfrozen candidate.
pub fn candidate_step(state: &mut CandidateState, inputs: &CandidateInputs, e: &ErrorMatrix, lr: f64) -> Result<()> {
    state.pool.par_iter_mut().try_for_each(|units| {
        for u in units.iter_mut().filter(|u| !u.frozen) {
            let (_, gw, gb) = u.score_gradient(inputs, e)?;
            for (w, g) in u.weights.iter_mut().zip(gw) {
                *w += lr * g;
            }
            u.bias += lr * gb;
        }
        Ok(())
    })
}

/// Installs the best candidate of every neuron as a new dendrite cycle.
/// The installed input weights are frozen for good and the new output
/// weights are exactly zero, so the network function is unchanged.
pub fn select_and_integrate(model: &mut ModelGraph, state: &mut CandidateState) -> Result<()> {
    if state.pool.is_empty() || state.pool.iter().any(Vec::is_empty) {
        return Err(Error::Usage("cannot integrate an empty candidate pool".into()));
    }
    let installed = model.dendrite_block(state.host_layer).map_or(0, |b| b.cycle_count());
    if installed != state.cycle {
        return Err(Error::Usage(format!(
            "candidates were spawned for cycle {} but layer {} now has {installed} cycles",
            state.cycle, state.host_layer
        )));
    }
    let best = state.best();
    let width = state.pool[0][0].weights.len();
    let mut w = Vec::with_capacity(state.neurons() * width);
    let mut b = Vec::with_capacity(state.neurons());
    for (units, &j) in state.pool.iter_mut().zip(&best) {
        let chosen = &mut units[j];
        chosen.frozen = true;
        w.extend_from_slice(&chosen.weights);
        b.push(chosen.bias);
    }
    model.install_dendrite_cycle(
        state.host_layer,
        state.activation,
        state.cascade,
        Tensor::new(vec![state.neurons(), width], w)?,
        Tensor::vector(b)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkSpec;

    fn model() -> ModelGraph {
        ModelGraph::build(&NetworkSpec::mlp(&[2, 8, 2], Activation::Tanh, 1.0, 5)).unwrap()
    }

    #[test]
    fn pool_shape() {
        let m = model();
        let cfg = PbConfig::default();
        let s = spawn_candidates(&m, 0, &cfg, 1).unwrap();
        assert_eq!(s.pool.len(), 8);
        assert!(s
            .pool
            .iter()
            .all(|p| p.len() == 4 && p.iter().all(|u| u.weights.len() + 1 == 3)));
        let again = spawn_candidates(&m, 0, &cfg, 1).unwrap();
        assert_eq!(s.pool, again.pool);
    }

    #[test]
    fn output_layer_is_not_eligible() {
        let m = model();
        assert!(matches!(
            spawn_candidates(&m, 2, &PbConfig::default(), 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn empty_pool_cannot_integrate() {
        let mut m = model();
        let cfg = PbConfig {
            pool_size: 1,
            ..PbConfig::default()
        };
        let mut s = spawn_candidates(&m, 0, &cfg, 1).unwrap();
        s.pool.clear();
        assert!(matches!(select_and_integrate(&mut m, &mut s), Err(Error::Usage(_))));
    }

    #[test]
    fn integration_adds_closed_form_params() {
        let mut m = model();
        let before = m.count_params(true);
        let mut s = spawn_candidates(&m, 0, &PbConfig::default(), 1).unwrap();
        select_and_integrate(&mut m, &mut s).unwrap();
        assert_eq!(m.count_params(true), before + 32);
        assert_eq!(m.count_params(false), before);
    }
}
