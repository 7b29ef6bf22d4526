use serde::{Deserialize, Serialize};

use crate::autograd::Activation;
use crate::error::{Error, Result};

fn one() -> usize {
    1
}

fn unit_multiplier() -> f64 {
    1.0
}

/// One layer of a declarative architecture. Convolutions are always 3x3
/// and operate on NHWC activations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    FullyConnected {
        in_dim: usize,
        out_dim: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default = "one")]
        padding: usize,
    },
    Activation {
        activation: Activation,
    },
    Flatten,
    GlobalAvgPool,
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::FullyConnected { .. } | LayerSpec::Conv2d { .. })
    }

    fn out_width(&self) -> Option<usize> {
        match *self {
            LayerSpec::FullyConnected { out_dim, .. } => Some(out_dim),
            LayerSpec::Conv2d { out_channels, .. } => Some(out_channels),
            _ => None,
        }
    }

    fn with_out_width(&self, width: usize) -> LayerSpec {
        let mut l = self.clone();
        match &mut l {
            LayerSpec::FullyConnected { out_dim, .. } => *out_dim = width,
            LayerSpec::Conv2d { out_channels, .. } => *out_channels = width,
            _ => {}
        }
        l
    }

    /// Shape of one sample after this layer, given the incoming sample shape.
    pub fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |what: String| Err(Error::Config(format!("layer {index}: {what}")));
        match *self {
            LayerSpec::FullyConnected { in_dim, out_dim } => {
                if input != [in_dim] {
                    return bad(format!("fully_connected expects [{in_dim}], receives {input:?}"));
                }
                if out_dim == 0 {
                    return bad("out_dim must be positive".into());
                }
                Ok(vec![out_dim])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                stride,
                padding,
            } => {
                if input.len() != 3 || input[2] != in_channels {
                    return bad(format!("conv2d expects [h, w, {in_channels}], receives {input:?}"));
                }
                if out_channels == 0 || stride == 0 {
                    return bad("out_channels and stride must be positive".into());
                }
                let (h, w) = (input[0] + 2 * padding, input[1] + 2 * padding);
                if h < 3 || w < 3 {
                    return bad(format!("3x3 kernel does not fit {input:?} with padding {padding}"));
                }
                Ok(vec![(h - 3) / stride + 1, (w - 3) / stride + 1, out_channels])
            }
            LayerSpec::Activation { .. } => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::GlobalAvgPool => {
                if input.len() != 3 {
                    return bad(format!("global_avg_pool expects [h, w, c], receives {input:?}"));
                }
                Ok(vec![input[2]])
            }
        }
    }

    /// Closed-form trainable parameter count of the layer.
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::FullyConnected { in_dim, out_dim } => in_dim * out_dim + out_dim,
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                ..
            } => 9 * in_channels * out_channels + out_channels,
            _ => 0,
        }
    }
}

/// A declarative architecture plus the width multiplier applied to its
/// hidden widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Shape of one input sample: `[features]` or `[height, width, channels]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    #[serde(default = "unit_multiplier")]
    pub width_multiplier: f64,
    #[serde(default)]
    pub seed: u64,
}

/// `max(1, round(dim * m))`.
pub fn scale_width(dim: usize, multiplier: f64) -> usize {
    ((dim as f64 * multiplier).round() as usize).max(1)
}

impl NetworkSpec {
    /// Fully connected stack `dims[0] -> dims[1] -> ... -> dims[last]` with
    /// `activation` after every hidden layer.
    pub fn mlp(dims: &[usize], activation: Activation, width_multiplier: f64, seed: u64) -> Self {
        let mut layers = Vec::new();
        for (i, w) in dims.windows(2).enumerate() {
            layers.push(LayerSpec::FullyConnected {
                in_dim: w[0],
                out_dim: w[1],
            });
            if i + 2 < dims.len() {
                layers.push(LayerSpec::Activation { activation });
            }
        }
        NetworkSpec {
            input_shape: vec![dims[0]],
            layers,
            width_multiplier,
            seed,
        }
    }

    pub fn with_width(&self, width_multiplier: f64) -> Self {
        NetworkSpec {
            width_multiplier,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        NetworkSpec { seed, ..self.clone() }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    fn last_param_layer(&self) -> Option<usize> {
        self.layers.iter().rposition(LayerSpec::has_params)
    }

    /// Checks the declared chain and returns the layers with hidden widths
    /// scaled and input dims re-chained. Input and output widths are never
    /// scaled.
    pub fn resolve(&self) -> Result<Vec<LayerSpec>> {
        let m = self.width_multiplier;
        if !(m > 0.0 && m <= 1.0) {
            return Err(Error::Config(format!("width multiplier {m} outside (0, 1]")));
        }
        if !matches!(self.input_shape.len(), 1 | 3) || self.input_shape.contains(&0) {
            return Err(Error::Config(format!(
                "input shape {:?} must be [features] or [h, w, c]",
                self.input_shape
            )));
        }
        let last = self
            .last_param_layer()
            .ok_or_else(|| Error::Config("network has no parameterised layer".into()))?;

        let mut shape = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer.output_shape(i, &shape)?;
        }

        let mut shape = self.input_shape.clone();
        let mut resolved = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut l = match layer.out_width() {
                Some(w) if i != last => layer.with_out_width(scale_width(w, m)),
                _ => layer.clone(),
            };
            match &mut l {
                LayerSpec::FullyConnected { in_dim, .. } => *in_dim = shape[0],
                LayerSpec::Conv2d { in_channels, .. } => *in_channels = shape[2],
                _ => {}
            }
            shape = l.output_shape(i, &shape)?;
            resolved.push(l);
        }
        Ok(resolved)
    }

    /// Parameter count of the (scaled) network without dendrites.
    pub fn param_count(&self) -> Result<usize> {
        Ok(self.resolve()?.iter().map(LayerSpec::param_count).sum())
    }

    /// Parameterised layers eligible to host dendrites: every one except the
    /// output layer.
    pub fn hidden_layers(&self) -> Vec<usize> {
        let last = self.last_param_layer();
        (0..self.layers.len())
            .filter(|&i| self.layers[i].has_params() && Some(i) != last)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_counts() {
        let s = NetworkSpec::mlp(&[2, 8, 2], Activation::Tanh, 1.0, 0);
        assert_eq!(s.param_count().unwrap(), 42);
        assert_eq!(s.with_width(0.5).param_count().unwrap(), 22);
    }

    #[test]
    fn conv_count() {
        let l = LayerSpec::Conv2d {
            in_channels: 3,
            out_channels: 8,
            stride: 1,
            padding: 1,
        };
        assert_eq!(l.param_count(), 224);
        assert_eq!(LayerSpec::FullyConnected { in_dim: 4, out_dim: 3 }.param_count(), 15);
    }

    #[test]
    fn scaling_rounds_with_floor_one() {
        assert_eq!(scale_width(16, 0.125), 2);
        assert_eq!(scale_width(3, 0.125), 1);
        assert_eq!(scale_width(10, 0.25), 3);
    }

    #[test]
    fn chain_break_names_layer() {
        let mut s = NetworkSpec::mlp(&[2, 8, 2], Activation::Relu, 1.0, 0);
        s.layers[2] = LayerSpec::FullyConnected { in_dim: 7, out_dim: 2 };
        let msg = s.resolve().unwrap_err().to_string();
        assert!(msg.contains("layer 2"), "{msg}");
    }

    #[test]
    fn conv_chain_rescales_following_dense() {
        let s = NetworkSpec {
            input_shape: vec![4, 4, 1],
            layers: vec![
                LayerSpec::Conv2d {
                    in_channels: 1,
                    out_channels: 8,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::Activation {
                    activation: Activation::Relu,
                },
                LayerSpec::Flatten,
                LayerSpec::FullyConnected {
                    in_dim: 128,
                    out_dim: 3,
                },
            ],
            width_multiplier: 0.5,
            seed: 0,
        };
        let r = s.resolve().unwrap();
        assert_eq!(r[3], LayerSpec::FullyConnected { in_dim: 64, out_dim: 3 });
        assert_eq!(s.hidden_layers(), vec![0]);
    }

    #[test]
    fn rejects_bad_multiplier() {
        let s = NetworkSpec::mlp(&[2, 8, 2], Activation::Relu, 0.0, 0);
        assert!(s.resolve().is_err());
        assert!(s.with_width(1.5).resolve().is_err());
    }

    #[test]
    fn json_layers() {
        let l: LayerSpec = serde_json::from_str(r#"{"kind":"conv2d","in_channels":1,"out_channels":4}"#).unwrap();
        assert_eq!(
            l,
            LayerSpec::Conv2d {
                in_channels: 1,
                out_channels: 4,
                stride: 1,
                padding: 1
            }
        );
        assert!(
            serde_json::from_str::<LayerSpec>(r#"{"kind":"fully_connected","in_dim":1,"out_dim":2,"bogus":1}"#)
                .is_err()
        );
    }
}
