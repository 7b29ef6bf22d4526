use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::autograd::Activation;
use crate::autograd::{Tape, Var};
use crate::error::{dim_err, Error, Result};
use crate::network::spec::{LayerSpec, NetworkSpec};
use crate::pb::dendrite::{DendriteBlock, DendriteCycle};
use crate::rng;
use crate::tensor::Tensor;

/// What a parameter tensor does in its layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Weight,
    Bias,
    DendriteInput,
    DendriteOutput,
}

/// Selects parameter groups for freezing and hashing.
///
/// `Main` covers layer weights and biases plus the dendrite output weights,
/// which are trained alongside the host neurons.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupSelector {
    Main,
    DendriteInput,
    DendriteOutput,
}

impl GroupSelector {
    pub fn matches(self, role: ParamRole) -> bool {
        match self {
            GroupSelector::Main => matches!(role, ParamRole::Weight | ParamRole::Bias | ParamRole::DendriteOutput),
            GroupSelector::DendriteInput => role == ParamRole::DendriteInput,
            GroupSelector::DendriteOutput => role == ParamRole::DendriteOutput,
        }
    }
}

/// A named parameter tensor. `locked` groups ignore [`ModelGraph::set_trainable`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup {
    pub name: String,
    pub layer: usize,
    pub role: ParamRole,
    pub tensor: Tensor,
    pub locked: bool,
}

/// Values of every parameter group, used for best-weight restoration.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSnapshot(Vec<Vec<f64>>);

/// The recorded forward pass of a model.
#[derive(Debug)]
pub struct Trace {
    pub output: Var,
    /// Tape leaf per parameter group (`None` for dendrite input groups).
    pub params: Vec<Option<Var>>,
    /// Per layer: the pattern matrix a parameterised layer multiplies.
    pub patterns: Vec<Option<Var>>,
    /// Per layer: spatial positions per sample in the pattern matrix.
    pub positions: Vec<usize>,
}

/// Task loss on the network output.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskLoss {
    #[default]
    CrossEntropy,
    SquaredError,
}

impl TaskLoss {
    pub fn evaluate(self, output: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
        match self {
            TaskLoss::CrossEntropy => crate::autograd::softmax_cross_entropy(output, targets),
            TaskLoss::SquaredError => crate::autograd::squared_error(output, targets),
        }
    }

    fn record(self, tape: &mut Tape, output: Var, targets: &Tensor) -> Result<Var> {
        match self {
            TaskLoss::CrossEntropy => tape.softmax_cross_entropy(output, targets),
            TaskLoss::SquaredError => tape.squared_error(output, targets),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct LayerParams {
    weight: usize,
    bias: usize,
}

/// An instantiated network: resolved layers, parameter groups and any
/// attached dendrite blocks.
#[derive(Clone, Debug)]
pub struct ModelGraph {
    spec: NetworkSpec,
    layers: Vec<LayerSpec>,
    layer_params: Vec<Option<LayerParams>>,
    groups: Vec<ParamGroup>,
    dendrites: Vec<DendriteBlock>,
}

fn glorot(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut rng::Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite glorot limit");
    let n = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    let mut t = Tensor::new(shape, data).expect("glorot shape");
    t.set_requires_grad(true);
    t
}

impl ModelGraph {
    /// Instantiates `spec` with Glorot-uniform weights and zero biases drawn
    /// from `spec.seed`.
    pub fn build(spec: &NetworkSpec) -> Result<Self> {
        let layers = spec.resolve()?;
        let mut rng = rng::rng(spec.seed);
        let mut groups = Vec::new();
        let mut layer_params = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            let (w, out) = match *layer {
                LayerSpec::FullyConnected { in_dim, out_dim } => {
                    (glorot(vec![in_dim, out_dim], in_dim, out_dim, &mut rng), out_dim)
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    ..
                } => (
                    glorot(
                        vec![3, 3, in_channels, out_channels],
                        9 * in_channels,
                        9 * out_channels,
                        &mut rng,
                    ),
                    out_channels,
                ),
                _ => {
                    layer_params.push(None);
                    continue;
                }
            };
            let mut b = Tensor::zeros(vec![out]);
            b.set_requires_grad(true);
            groups.push(ParamGroup {
                name: format!("layer{i}.weight"),
                layer: i,
                role: ParamRole::Weight,
                tensor: w,
                locked: false,
            });
            groups.push(ParamGroup {
                name: format!("layer{i}.bias"),
                layer: i,
                role: ParamRole::Bias,
                tensor: b,
                locked: false,
            });
            layer_params.push(Some(LayerParams {
                weight: groups.len() - 2,
                bias: groups.len() - 1,
            }));
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
            layer_params,
            groups,
            dendrites: Vec::new(),
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Layers after width scaling.
    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn groups_mut(&mut self) -> &mut [ParamGroup] {
        &mut self.groups
    }

    pub fn dendrites(&self) -> &[DendriteBlock] {
        &self.dendrites
    }

    pub fn dendrite_block(&self, layer: usize) -> Option<&DendriteBlock> {
        self.dendrites.iter().find(|b| b.host_layer == layer)
    }

    pub fn input_len(&self) -> usize {
        self.spec.input_len()
    }

    pub fn hidden_layers(&self) -> Vec<usize> {
        self.spec.hidden_layers()
    }

    /// `(neurons, presynaptic inputs)` of a parameterised layer.
    pub fn host_dims(&self, layer: usize) -> Result<(usize, usize)> {
        match self.layers.get(layer) {
            Some(&LayerSpec::FullyConnected { in_dim, out_dim }) => Ok((out_dim, in_dim)),
            Some(&LayerSpec::Conv2d {
                in_channels,
                out_channels,
                ..
            }) => Ok((out_channels, 9 * in_channels)),
            _ => Err(Error::Config(format!("layer {layer} has no neurons"))),
        }
    }

    /// The activation applied right after `layer`, if any.
    pub fn activation_after(&self, layer: usize) -> Option<Activation> {
        match self.layers.get(layer + 1) {
            Some(LayerSpec::Activation { activation }) => Some(*activation),
            _ => None,
        }
    }

    /// Records the forward pass of a batch `x` of shape `[batch, input_len]`.
    pub fn trace(&self, tape: &mut Tape, x: &Tensor) -> Result<Trace> {
        if x.rank() != 2 || x.cols() != self.input_len() {
            return dim_err(format!(
                "input {:?} does not match [batch, {}]",
                x.shape(),
                self.input_len()
            ));
        }
        let batch = x.rows();
        let params: Vec<Option<Var>> = self
            .groups
            .iter()
            .map(|g| (g.role != ParamRole::DendriteInput).then(|| tape.leaf(&g.tensor)))
            .collect();
        let mut patterns = vec![None; self.layers.len()];
        let mut positions = vec![1; self.layers.len()];

        let mut sample_shape = self.spec.input_shape.clone();
        let mut full = vec![batch];
        full.extend(&sample_shape);
        let mut h = tape.constant(x.clone().reshape(full)?);

        for (i, layer) in self.layers.iter().enumerate() {
            let next_shape = layer.output_shape(i, &sample_shape)?;
            h = match *layer {
                LayerSpec::FullyConnected { .. } | LayerSpec::Conv2d { .. } => {
                    let lp = self.layer_params[i].expect("parameterised layer");
                    let (w, b) = (params[lp.weight].unwrap(), params[lp.bias].unwrap());
                    let (pat, w) = match *layer {
                        LayerSpec::Conv2d {
                            in_channels,
                            out_channels,
                            stride,
                            padding,
                        } => {
                            positions[i] = next_shape[0] * next_shape[1];
                            let cols = tape.im2col(h, stride, padding)?;
                            (cols, tape.reshape(w, vec![9 * in_channels, out_channels])?)
                        }
                        _ => (h, w),
                    };
                    patterns[i] = Some(pat);
                    let z = tape.matmul(pat, w)?;
                    let mut z = tape.add_bias(z, b)?;
                    if let Some(block) = self.dendrite_block(i) {
                        let outs = block.outputs(&self.groups, tape.value(pat));
                        for (d, cyc) in outs.into_iter().zip(&block.cycles) {
                            let d = tape.constant(d);
                            let u = params[cyc.output_weight].unwrap();
                            let contrib = tape.mul_bias(d, u)?;
                            z = tape.add(z, contrib)?;
                        }
                    }
                    let mut out_shape = vec![batch];
                    out_shape.extend(&next_shape);
                    tape.reshape(z, out_shape)?
                }
                LayerSpec::Activation { activation } => tape.activation(h, activation),
                LayerSpec::Flatten => tape.reshape(h, vec![batch, next_shape[0]])?,
                LayerSpec::GlobalAvgPool => tape.global_avg_pool(h)?,
            };
            sample_shape = next_shape;
        }
        if sample_shape.len() != 1 {
            return dim_err(format!(
                "network output per sample is {sample_shape:?}, expected a vector"
            ));
        }
        Ok(Trace {
            output: h,
            params,
            patterns,
            positions,
        })
    }

    /// Forward pass without gradient bookkeeping.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let t = self.trace(&mut tape, x)?;
        Ok(tape.value(t.output).clone())
    }

    /// Forward + backward of the task loss. Trainable groups receive a
    /// gradient buffer; frozen groups are left without one.
    pub fn loss_and_grad(&mut self, x: &Tensor, targets: &Tensor, loss: TaskLoss) -> Result<(f64, Tensor)> {
        let mut tape = Tape::new();
        let t = self.trace(&mut tape, x)?;
        let l = loss.record(&mut tape, t.output, targets)?;
        let value = tape.value(l).data()[0];
        let output = tape.value(t.output).clone();
        let mut grads = tape.backward(l)?;
        for (g, var) in self.groups.iter_mut().zip(&t.params) {
            match var.filter(|_| g.tensor.requires_grad()) {
                Some(v) => {
                    let grad = grads.take(v).unwrap_or_else(|| vec![0.0; g.tensor.numel()]);
                    g.tensor.set_grad(grad)?;
                }
                None => g.tensor.clear_grad(),
            }
        }
        Ok((value, output))
    }

    /// Plain gradient descent on every trainable group holding a gradient.
    pub fn sgd_step(&mut self, lr: f64) {
        for g in &mut self.groups {
            if !g.tensor.requires_grad() {
                continue;
            }
            let Some(grad) = g.tensor.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            for (w, d) in g.tensor.data_mut().iter_mut().zip(grad) {
                *w -= lr * d;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.groups.iter_mut().for_each(|g| g.tensor.clear_grad());
    }

    pub fn count_params(&self, include_dendrites: bool) -> usize {
        self.groups
            .iter()
            .filter(|g| include_dendrites || matches!(g.role, ParamRole::Weight | ParamRole::Bias))
            .map(|g| g.tensor.numel())
            .sum()
    }

    /// Sets `requires_grad` on every unlocked group matching `selector`.
    pub fn set_trainable(&mut self, selector: GroupSelector, flag: bool) {
        for g in &mut self.groups {
            if selector.matches(g.role) && !g.locked {
                g.tensor.set_requires_grad(flag);
            }
        }
    }

    /// FNV-1a digest of the raw bits of every group matching `selector`.
    pub fn digest(&self, selector: GroupSelector) -> u64 {
        self.digest_first(selector, self.groups.len())
    }

    /// As [`digest`](Self::digest), restricted to the first `groups` groups.
    pub fn digest_first(&self, selector: GroupSelector, groups: usize) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for g in self.groups.iter().take(groups).filter(|g| selector.matches(g.role)) {
            for v in g.tensor.data() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0000_0100_0000_01B3);
                }
            }
        }
        h
    }

    pub fn snapshot(&self) -> ParamSnapshot {
        ParamSnapshot(self.groups.iter().map(|g| g.tensor.data().to_vec()).collect())
    }

    pub fn restore(&mut self, snap: &ParamSnapshot) -> Result<()> {
        if snap.0.len() != self.groups.len()
            || snap
                .0
                .iter()
                .zip(&self.groups)
                .any(|(s, g)| s.len() != g.tensor.numel())
        {
            return Err(Error::Usage("snapshot does not match model structure".into()));
        }
        for (g, s) in self.groups.iter_mut().zip(&snap.0) {
            g.tensor.data_mut().copy_from_slice(s);
        }
        Ok(())
    }

    /// Installs one dendrite cycle on `layer`. Input weights are locked and
    /// frozen; the output weights start at exactly zero and follow the host
    /// layer's trainable flag.
    pub fn install_dendrite_cycle(
        &mut self,
        layer: usize,
        activation: Activation,
        cascade: bool,
        input_weight: Tensor,
        input_bias: Tensor,
    ) -> Result<()> {
        let (n, d) = self.host_dims(layer)?;
        let lp = self.layer_params[layer].expect("host layer has params");
        let host_trainable = self.groups[lp.weight].tensor.requires_grad();
        let block_idx = match self.dendrites.iter().position(|b| b.host_layer == layer) {
            Some(i) => {
                if self.dendrites[i].cascade != cascade || self.dendrites[i].activation != activation {
                    return Err(Error::Config(format!(
                        "layer {layer} already carries dendrites with different settings"
                    )));
                }
                i
            }
            None => {
                self.dendrites.push(DendriteBlock {
                    host_layer: layer,
                    neurons: n,
                    inputs: d,
                    activation,
                    cascade,
                    cycles: Vec::new(),
                });
                self.dendrites.len() - 1
            }
        };
        let c = self.dendrites[block_idx].cycle_count();
        let width = self.dendrites[block_idx].input_width(c);
        if input_weight.shape() != [n, width] || input_bias.shape() != [n] {
            return dim_err(format!(
                "dendrite cycle {c} on layer {layer} needs [{n}, {width}] and [{n}], got {:?} and {:?}",
                input_weight.shape(),
                input_bias.shape()
            ));
        }
        let mut push = |name: &str, role, mut tensor: Tensor, locked: bool| {
            tensor.set_requires_grad(!locked && host_trainable);
            self.groups.push(ParamGroup {
                name: format!("layer{layer}.dendrite{c}.{name}"),
                layer,
                role,
                tensor,
                locked,
            });
            self.groups.len() - 1
        };
        let cycle = DendriteCycle {
            input_weight: push("input_weight", ParamRole::DendriteInput, input_weight, true),
            input_bias: push("input_bias", ParamRole::DendriteInput, input_bias, true),
            output_weight: push(
                "output_weight",
                ParamRole::DendriteOutput,
                Tensor::zeros(vec![n]),
                false,
            ),
        };
        self.dendrites[block_idx].cycles.push(cycle);
        Ok(())
    }
}
