//! Installed dendrites and their forward semantics.
//!
//! A dendrite unit sits between a host neuron and that neuron's presynaptic
//! inputs. Its own input weights are frozen once installed; the host
//! neuron adds `u * D(x)` to its pre-activation, where `u` is an ordinary
//! trainable weight. `D(x)` enters the tape as a constant, so the task
//! gradient reaches `u` but never flows back through the dendrite.

use serde::{Deserialize, Serialize};

use crate::autograd::Activation;
use crate::network::ParamGroup;
use crate::tensor::Tensor;

/// Parameter-group indices of one installed cycle of a [`DendriteBlock`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DendriteCycle {
    /// `[neurons, inputs (+ cycle when cascading)]`
    pub input_weight: usize,
    /// `[neurons]`
    pub input_bias: usize,
    /// `[neurons]`, the host-side weights `u`.
    pub output_weight: usize,
}

/// All dendrites attached to one host layer: one unit per neuron per cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DendriteBlock {
    pub host_layer: usize,
    pub neurons: usize,
    /// Presynaptic pattern width `d` (patch length for convolutions).
    pub inputs: usize,
    pub activation: Activation,
    /// Later dendrites of a neuron also read that neuron's earlier dendrites.
    pub cascade: bool,
    pub cycles: Vec<DendriteCycle>,
}

/// Parameters added by one cycle on a layer with `neurons` hosts, `inputs`
/// presynaptic values and `prior` earlier cycles.
pub fn cycle_param_count(neurons: usize, inputs: usize, prior: usize, cascade: bool) -> usize {
    let width = inputs + if cascade { prior } else { 0 };
    neurons * (width + 1) + neurons
}

impl DendriteBlock {
    pub fn cycle_count(&self) -> usize {
        self.cycles.len()
    }

    /// Input weight count of a unit installed at `cycle`.
    pub fn input_width(&self, cycle: usize) -> usize {
        self.inputs + if self.cascade { cycle } else { 0 }
    }

    /// Dendrite outputs for every installed cycle, each `[rows, neurons]`,
    /// given the host layer's pattern matrix `[rows, inputs]`.
    pub fn outputs(&self, groups: &[ParamGroup], patterns: &Tensor) -> Vec<Tensor> {
        let rows = patterns.rows();
        let n = self.neurons;
        let mut outs: Vec<Tensor> = Vec::with_capacity(self.cycles.len());
        for (c, cyc) in self.cycles.iter().enumerate() {
            let w = groups[cyc.input_weight].tensor.data();
            let b = groups[cyc.input_bias].tensor.data();
            let width = self.input_width(c);
            let mut data = vec![0.0; rows * n];
            for r in 0..rows {
                let x = patterns.row(r);
                for i in 0..n {
                    let wi = &w[i * width..(i + 1) * width];
                    let mut net = b[i];
                    for (xv, wv) in x.iter().zip(&wi[..self.inputs]) {
                        net += xv * wv;
                    }
                    if self.cascade {
                        for (prev, wv) in outs.iter().zip(&wi[self.inputs..]) {
                            net += wv * prev.data()[r * n + i];
                        }
                    }
                    data[r * n + i] = self.activation.apply(net);
                }
            }
            outs.push(Tensor::new(vec![rows, n], data).expect("dendrite output shape"));
        }
        outs
    }

    pub fn param_count(&self) -> usize {
        (0..self.cycles.len())
            .map(|c| cycle_param_count(self.neurons, self.inputs, c, self.cascade))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_count() {
        assert_eq!(cycle_param_count(8, 2, 0, true), 32);
        assert_eq!(cycle_param_count(8, 2, 2, true), 48);
        assert_eq!(cycle_param_count(8, 2, 2, false), 32);
    }
}
