use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::ops::{self, BatchNormCache, Mode};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Per-sample activation shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureShape {
    Seq { channels: usize, len: usize },
    Flat(usize),
}

impl FeatureShape {
    pub fn size(self) -> usize {
        match self {
            FeatureShape::Seq { channels, len } => channels * len,
            FeatureShape::Flat(n) => n,
        }
    }
}

impl fmt::Display for FeatureShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureShape::Seq { channels, len } => write!(f, "[{channels} x {len}]"),
            FeatureShape::Flat(n) => write!(f, "[{n}]"),
        }
    }
}

/// Architecture description of one layer; parameters are created by
/// [`Layer::build`] once the input shape is known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv1d { out_channels: usize, kernel: usize },
    Relu,
    MaxPool1d { window: usize, stride: usize },
    BatchNorm1d,
    Dropout { rate: f64 },
    Dense { out_features: usize },
    Flatten,
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv1d {
                out_channels,
                kernel,
            } => write!(f, "conv1d:{out_channels}:{kernel}"),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::MaxPool1d { window, stride } => write!(f, "maxpool:{window}:{stride}"),
            LayerSpec::BatchNorm1d => f.write_str("batchnorm"),
            LayerSpec::Dropout { rate } => write!(f, "dropout:{rate}"),
            LayerSpec::Dense { out_features } => write!(f, "dense:{out_features}"),
            LayerSpec::Flatten => f.write_str("flatten"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').map(str::trim).collect();
        let bad = || Error::InvalidConfig(format!("invalid layer `{}`", s.trim()));
        let int = |p: &str| p.parse::<usize>().map_err(|_| bad());
        let spec = match parts.as_slice() {
            ["conv1d", o, k] => LayerSpec::Conv1d {
                out_channels: int(o)?,
                kernel: int(k)?,
            },
            ["relu"] => LayerSpec::Relu,
            ["maxpool", w, s] => LayerSpec::MaxPool1d {
                window: int(w)?,
                stride: int(s)?,
            },
            ["batchnorm"] => LayerSpec::BatchNorm1d,
            ["dropout", r] => LayerSpec::Dropout {
                rate: r.parse().map_err(|_| bad())?,
            },
            ["dense", o] => LayerSpec::Dense {
                out_features: int(o)?,
            },
            ["flatten"] => LayerSpec::Flatten,
            _ => return Err(bad()),
        };
        Ok(spec)
    }
}

/// Parses a comma-separated layer list such as `conv1d:16:9, relu, flatten, dense:14`.
pub fn parse_architecture(s: &str) -> Result<Vec<LayerSpec>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect()
}

pub fn format_architecture(specs: &[LayerSpec]) -> String {
    specs
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// Weights, bias and their most recent gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weights: Tensor,
    pub bias: Tensor,
    pub grad_weights: Tensor,
    pub grad_bias: Tensor,
}

impl Affine {
    /// Fan-in scaled uniform weights (He), zero bias.
    fn he_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let limit = (6.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
        let out = shape[0];
        Affine {
            weights: Tensor::new(shape.to_vec(), data).expect("valid shape"),
            bias: Tensor::zeros(&[out]),
            grad_weights: Tensor::zeros(shape),
            grad_bias: Tensor::zeros(&[out]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
}

impl BatchNorm {
    fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            grad_gamma: vec![0.0; channels],
            grad_beta: vec![0.0; channels],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv1d(Affine),
    Relu,
    MaxPool1d { window: usize, stride: usize },
    BatchNorm1d(BatchNorm),
    Dropout { rate: f64 },
    Dense(Affine),
    Flatten,
}

/// Intermediate values a training-mode forward pass keeps for backward.
#[derive(Debug, Clone)]
pub(crate) enum Cache {
    Input(Tensor),
    MaxPool { input_shape: Vec<usize>, argmax: Vec<usize> },
    BatchNorm(BatchNormCache),
    Dropout(Option<Vec<f64>>),
    Flatten(Vec<usize>),
}

impl Layer {
    /// Instantiates `spec` for `input`, returning the layer and its output shape.
    pub fn build<R: Rng + ?Sized>(
        spec: &LayerSpec,
        input: FeatureShape,
        rng: &mut R,
    ) -> Result<(Layer, FeatureShape)> {
        let mismatch = |need: &str| {
            Error::ShapeMismatch(format!("`{spec}` needs {need} input, got {input}"))
        };
        let zero = || Error::InvalidConfig(format!("`{spec}`: sizes must be >= 1"));
        Ok(match (*spec, input) {
            (LayerSpec::Conv1d { out_channels, kernel }, FeatureShape::Seq { channels, len }) => {
                if out_channels == 0 || kernel == 0 {
                    return Err(zero());
                }
                if kernel > len {
                    return Err(mismatch(&format!("length >= {kernel}")));
                }
                let layer = Affine::he_uniform(&[out_channels, channels, kernel], channels * kernel, rng);
                (
                    Layer::Conv1d(layer),
                    FeatureShape::Seq {
                        channels: out_channels,
                        len: len - kernel + 1,
                    },
                )
            }
            (LayerSpec::Conv1d { .. }, _) => return Err(mismatch("a sequence")),
            (LayerSpec::Relu, s) => (Layer::Relu, s),
            (LayerSpec::MaxPool1d { window, stride }, FeatureShape::Seq { channels, len }) => {
                if window == 0 || stride == 0 {
                    return Err(zero());
                }
                if window > len {
                    return Err(mismatch(&format!("length >= {window}")));
                }
                (
                    Layer::MaxPool1d { window, stride },
                    FeatureShape::Seq {
                        channels,
                        len: (len - window) / stride + 1,
                    },
                )
            }
            (LayerSpec::MaxPool1d { .. }, _) => return Err(mismatch("a sequence")),
            (LayerSpec::BatchNorm1d, s) => {
                let channels = match s {
                    FeatureShape::Seq { channels, .. } => channels,
                    FeatureShape::Flat(n) => n,
                };
                (Layer::BatchNorm1d(BatchNorm::new(channels)), s)
            }
            (LayerSpec::Dropout { rate }, s) => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::InvalidConfig(format!(
                        "dropout rate must be in [0, 1), got {rate}"
                    )));
                }
                (Layer::Dropout { rate }, s)
            }
            (LayerSpec::Dense { out_features }, FeatureShape::Flat(n)) => {
                if out_features == 0 {
                    return Err(zero());
                }
                (
                    Layer::Dense(Affine::he_uniform(&[out_features, n], n, rng)),
                    FeatureShape::Flat(out_features),
                )
            }
            (LayerSpec::Dense { .. }, _) => return Err(mismatch("a flat")),
            (LayerSpec::Flatten, s) => (Layer::Flatten, FeatureShape::Flat(s.size())),
        })
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv1d(a) => LayerSpec::Conv1d {
                out_channels: a.weights.shape()[0],
                kernel: a.weights.shape()[2],
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::MaxPool1d { window, stride } => LayerSpec::MaxPool1d {
                window: *window,
                stride: *stride,
            },
            Layer::BatchNorm1d(_) => LayerSpec::BatchNorm1d,
            Layer::Dropout { rate } => LayerSpec::Dropout { rate: *rate },
            Layer::Dense(a) => LayerSpec::Dense {
                out_features: a.weights.shape()[0],
            },
            Layer::Flatten => LayerSpec::Flatten,
        }
    }

    /// Training-mode forward pass; keeps what backward needs.
    pub(crate) fn forward_train<R: Rng + ?Sized>(
        &mut self,
        x: &Tensor,
        rng: &mut R,
    ) -> Result<(Tensor, Cache)> {
        Ok(match self {
            Layer::Conv1d(a) => (
                ops::conv1d_forward(x, &a.weights, &a.bias)?,
                Cache::Input(x.clone()),
            ),
            Layer::Relu => (ops::relu(x), Cache::Input(x.clone())),
            Layer::MaxPool1d { window, stride } => {
                let (y, argmax) = ops::maxpool1d(x, *window, *stride)?;
                (
                    y,
                    Cache::MaxPool {
                        input_shape: x.shape().to_vec(),
                        argmax,
                    },
                )
            }
            Layer::BatchNorm1d(bn) => {
                let (y, cache) = ops::batchnorm1d(
                    x,
                    &bn.gamma,
                    &bn.beta,
                    &mut bn.running_mean,
                    &mut bn.running_var,
                    Mode::Train,
                )?;
                (y, Cache::BatchNorm(cache.expect("train mode returns a cache")))
            }
            Layer::Dropout { rate } => {
                let (y, mask) = ops::dropout(x, *rate, Mode::Train, rng)?;
                (y, Cache::Dropout(mask))
            }
            Layer::Dense(a) => (
                ops::dense_forward(x, &a.weights, &a.bias)?,
                Cache::Input(x.clone()),
            ),
            Layer::Flatten => (flatten(x)?, Cache::Flatten(x.shape().to_vec())),
        })
    }

    /// Evaluation-mode forward pass: dropout off, batch norm on running stats.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv1d(a) => ops::conv1d_forward(x, &a.weights, &a.bias),
            Layer::Relu => Ok(ops::relu(x)),
            Layer::MaxPool1d { window, stride } => Ok(ops::maxpool1d(x, *window, *stride)?.0),
            Layer::BatchNorm1d(bn) => {
                let (mut rm, mut rv) = (bn.running_mean.clone(), bn.running_var.clone());
                Ok(ops::batchnorm1d(x, &bn.gamma, &bn.beta, &mut rm, &mut rv, Mode::Eval)?.0)
            }
            Layer::Dropout { .. } => Ok(x.clone()),
            Layer::Dense(a) => ops::dense_forward(x, &a.weights, &a.bias),
            Layer::Flatten => flatten(x),
        }
    }

    /// Stores parameter gradients and returns the input gradient when requested.
    pub(crate) fn backward(
        &mut self,
        cache: &Cache,
        grad_out: &Tensor,
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        let stale = || Error::ShapeMismatch("layer cache does not match layer kind".into());
        Ok(match (self, cache) {
            (Layer::Conv1d(a), Cache::Input(x)) => {
                let g = ops::conv1d_backward(x, &a.weights, grad_out, need_input_grad)?;
                a.grad_weights = g.weights;
                a.grad_bias = g.bias;
                g.input
            }
            (Layer::Dense(a), Cache::Input(x)) => {
                let g = ops::dense_backward(x, &a.weights, grad_out, need_input_grad)?;
                a.grad_weights = g.weights;
                a.grad_bias = g.bias;
                g.input
            }
            (Layer::Relu, Cache::Input(x)) => Some(ops::relu_backward(x, grad_out)),
            (Layer::MaxPool1d { .. }, Cache::MaxPool { input_shape, argmax }) => {
                Some(ops::maxpool1d_backward(input_shape, argmax, grad_out))
            }
            (Layer::BatchNorm1d(bn), Cache::BatchNorm(c)) => {
                let g = ops::batchnorm1d_backward(c, &bn.gamma, grad_out)?;
                bn.grad_gamma = g.gamma;
                bn.grad_beta = g.beta;
                Some(g.input)
            }
            (Layer::Dropout { .. }, Cache::Dropout(mask)) => {
                Some(ops::dropout_backward(mask.as_deref(), grad_out))
            }
            (Layer::Flatten, Cache::Flatten(shape)) => Some(grad_out.clone().reshape(shape.clone())?),
            _ => return Err(stale()),
        })
    }

    /// Learnable parameters paired with their gradients, in file order.
    pub fn params_and_grads(&mut self) -> Vec<(&mut [f64], &[f64])> {
        match self {
            Layer::Conv1d(a) | Layer::Dense(a) => vec![
                (a.weights.data_mut(), a.grad_weights.data()),
                (a.bias.data_mut(), a.grad_bias.data()),
            ],
            Layer::BatchNorm1d(bn) => vec![
                (bn.gamma.as_mut_slice(), bn.grad_gamma.as_slice()),
                (bn.beta.as_mut_slice(), bn.grad_beta.as_slice()),
            ],
            _ => Vec::new(),
        }
    }

    /// Every stored tensor (learnable parameters, then buffers), in file order.
    pub fn state(&self) -> Vec<&[f64]> {
        match self {
            Layer::Conv1d(a) | Layer::Dense(a) => vec![a.weights.data(), a.bias.data()],
            Layer::BatchNorm1d(bn) => vec![&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var],
            _ => Vec::new(),
        }
    }

    pub fn state_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Conv1d(a) | Layer::Dense(a) => vec![a.weights.data_mut(), a.bias.data_mut()],
            Layer::BatchNorm1d(bn) => vec![
                &mut bn.gamma,
                &mut bn.beta,
                &mut bn.running_mean,
                &mut bn.running_var,
            ],
            _ => Vec::new(),
        }
    }
}

fn flatten(x: &Tensor) -> Result<Tensor> {
    let batch = x.shape()[0];
    let n = x.len() / batch;
    x.clone().reshape(vec![batch, n])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_strings_round_trip() {
        let s = "conv1d:16:9,batchnorm,relu,maxpool:2:2,dropout:0.3,flatten,dense:128";
        let specs = parse_architecture(s).unwrap();
        assert_eq!(specs.len(), 7);
        assert_eq!(format_architecture(&specs), s);
        assert!(parse_architecture("conv1d:16").is_err());
        assert!(parse_architecture("softmax").is_err());
    }

    #[test]
    fn build_checks_shapes() {
        let mut rng = crate::types::RngSeed(1).rng();
        let seq = FeatureShape::Seq { channels: 1, len: 8 };
        let conv = LayerSpec::Conv1d { out_channels: 4, kernel: 3 };
        let (_, out) = Layer::build(&conv, seq, &mut rng).unwrap();
        assert_eq!(out, FeatureShape::Seq { channels: 4, len: 6 });
        assert!(Layer::build(&conv, FeatureShape::Flat(8), &mut rng).is_err());
        let dense = LayerSpec::Dense { out_features: 3 };
        assert!(Layer::build(&dense, seq, &mut rng).is_err());
        assert!(Layer::build(&LayerSpec::Dropout { rate: 1.0 }, seq, &mut rng).is_err());
        let big = LayerSpec::MaxPool1d { window: 9, stride: 1 };
        assert!(Layer::build(&big, seq, &mut rng).is_err());
    }
}
