use rand::Rng;

use super::layers::{Cache, FeatureShape, Layer, LayerSpec};
use super::ops::{self, Mode};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::types::{RngSeed, Spectrum, INPUT_LENGTH, N_CLASSES};

/// Two conv blocks, then a dense head with dropout.
pub fn default_architecture() -> Vec<LayerSpec> {
    use LayerSpec::*;
    vec![
        Conv1d { out_channels: 16, kernel: 9 },
        BatchNorm1d,
        Relu,
        MaxPool1d { window: 2, stride: 2 },
        Conv1d { out_channels: 32, kernel: 9 },
        BatchNorm1d,
        Relu,
        MaxPool1d { window: 2, stride: 2 },
        Dropout { rate: 0.3 },
        Flatten,
        Dense { out_features: 128 },
        Relu,
        Dropout { rate: 0.5 },
        Dense { out_features: N_CLASSES },
    ]
}

/// Sequential 1D CNN over single-channel spectra.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    input_length: usize,
    n_classes: usize,
    caches: Vec<Cache>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
            && self.input_length == other.input_length
            && self.n_classes == other.n_classes
    }
}

impl Network {
    /// Builds and initializes the layer stack, rejecting any sequence whose
    /// shapes do not compose into `n_classes` logits.
    pub fn new(
        input_length: usize,
        n_classes: usize,
        specs: &[LayerSpec],
        seed: RngSeed,
    ) -> Result<Self> {
        if input_length == 0 || n_classes == 0 {
            return Err(Error::InvalidConfig(
                "input length and class count must be >= 1".into(),
            ));
        }
        let mut rng = seed.rng();
        let mut shape = FeatureShape::Seq {
            channels: 1,
            len: input_length,
        };
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let (layer, out) = Layer::build(spec, shape, &mut rng).map_err(|e| match e {
                Error::ShapeMismatch(m) => Error::ShapeMismatch(format!("layer {i}: {m}")),
                other => other,
            })?;
            layers.push(layer);
            shape = out;
        }
        if shape != FeatureShape::Flat(n_classes) {
            return Err(Error::ShapeMismatch(format!(
                "network outputs {shape}, expected [{n_classes}] logits"
            )));
        }
        Ok(Network {
            layers,
            input_length,
            n_classes,
            caches: Vec::new(),
        })
    }

    /// Default stack on 404-point inputs and 14 classes.
    pub fn with_default_architecture(seed: RngSeed) -> Result<Self> {
        Network::new(INPUT_LENGTH, N_CLASSES, &default_architecture(), seed)
    }

    pub fn input_length(&self) -> usize {
        self.input_length
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Zeroes the weights and bias of the final dense layer, so every
    /// input maps to uniform probabilities.
    pub fn zero_head(&mut self) {
        if let Some(Layer::Dense(a)) = self.layers.iter_mut().rev().find(|l| matches!(l, Layer::Dense(_))) {
            a.weights.data_mut().fill(0.0);
            a.bias.data_mut().fill(0.0);
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        match *x.shape() {
            [_, 1, len] if len == self.input_length => Ok(()),
            _ => Err(Error::ShapeMismatch(format!(
                "network expects [batch, 1, {}], got {:?}",
                self.input_length,
                x.shape()
            ))),
        }
    }

    /// Forward pass. Training mode retains intermediates for [`Network::backward`]
    /// and updates batch-norm running statistics.
    pub fn forward<R: Rng + ?Sized>(&mut self, x: &Tensor, mode: Mode, rng: &mut R) -> Result<Tensor> {
        self.caches.clear();
        if mode == Mode::Eval {
            return self.infer(x);
        }
        self.check_input(x)?;
        let mut act = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            let (out, cache) = layer.forward_train(&act, rng)?;
            caches.push(cache);
            act = out;
        }
        self.caches = caches;
        Ok(act)
    }

    /// Evaluation-mode forward pass on a shared network.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut act = x.clone();
        for layer in &self.layers {
            act = layer.infer(&act)?;
        }
        Ok(act)
    }

    /// Reverse-mode pass from the gradient of the logits. Parameter
    /// gradients are stored on the layers; returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        Ok(self.backward_impl(grad_out, true)?.expect("input gradient requested"))
    }

    pub(crate) fn backward_impl(&mut self, grad_out: &Tensor, need_input_grad: bool) -> Result<Option<Tensor>> {
        if self.caches.len() != self.layers.len() {
            return Err(Error::BackwardBeforeForward);
        }
        let caches = std::mem::take(&mut self.caches);
        let mut grad = grad_out.clone();
        for (i, (layer, cache)) in self.layers.iter_mut().zip(&caches).enumerate().rev() {
            let need = i > 0 || need_input_grad;
            match layer.backward(cache, &grad, need)? {
                Some(g) => grad = g,
                None => return Ok(None),
            }
        }
        Ok(Some(grad))
    }

    /// Mean cross-entropy on a batch, leaving parameter gradients on the layers.
    pub fn loss_and_gradients<R: Rng + ?Sized>(
        &mut self,
        x: &Tensor,
        labels: &[usize],
        rng: &mut R,
    ) -> Result<f64> {
        let logits = self.forward(x, Mode::Train, rng)?;
        let ce = ops::softmax_cross_entropy(&logits, labels)?;
        self.backward_impl(&ce.grad_logits, false)?;
        Ok(ce.loss)
    }

    pub fn params_and_grads(&mut self) -> Vec<(&mut [f64], &[f64])> {
        self.layers
            .iter_mut()
            .flat_map(Layer::params_and_grads)
            .collect()
    }

    /// Learnable parameter count.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv1d(a) | Layer::Dense(a) => a.weights.len() + a.bias.len(),
                Layer::BatchNorm1d(bn) => 2 * bn.gamma.len(),
                _ => 0,
            })
            .sum()
    }

    /// Stacks spectra into a `[batch, 1, len]` input tensor.
    pub fn batch_input(&self, spectra: &[&Spectrum]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(spectra.len() * self.input_length);
        for s in spectra {
            if s.len() != self.input_length {
                return Err(Error::ShapeMismatch(format!(
                    "spectrum has {} points, network expects {}",
                    s.len(),
                    self.input_length
                )));
            }
            data.extend_from_slice(s.values());
        }
        Tensor::new(vec![spectra.len(), 1, self.input_length], data)
    }

    /// Class probabilities for one normalized spectrum, in evaluation mode.
    pub fn predict_proba(&self, s: &Spectrum) -> Result<Vec<f64>> {
        Ok(self.predict_proba_batch(&[s])?.pop().expect("one row"))
    }

    pub fn predict_proba_batch(&self, spectra: &[&Spectrum]) -> Result<Vec<Vec<f64>>> {
        if spectra.iter().any(|s| !s.is_normalized()) {
            return Err(Error::NotNormalized);
        }
        let mut out = Vec::with_capacity(spectra.len());
        for chunk in spectra.chunks(64) {
            let logits = self.infer(&self.batch_input(chunk)?)?;
            let probs = ops::softmax(&logits)?;
            out.extend(probs.data().chunks_exact(self.n_classes).map(<[f64]>::to_vec));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spectrum(seed: u64) -> Spectrum {
        let mut rng = RngSeed(seed).rng();
        let values = (0..INPUT_LENGTH).map(|_| rng.random_range(1.0..=100.0)).collect();
        Spectrum::new(values, 4000.0, 1400.0, true).unwrap()
    }

    #[test]
    fn default_network_builds() {
        let net = Network::with_default_architecture(RngSeed(0)).unwrap();
        assert_eq!(net.layers().len(), 14);
        // 1*16*9+16 + 2*16 + 16*32*9+32 + 2*32 + 3040*128+128 + 128*14+14
        assert_eq!(net.param_count(), 160 + 32 + 4640 + 64 + 389_248 + 1806);
    }

    #[test]
    fn rejects_non_composing_stacks() {
        let bad = [LayerSpec::Flatten, LayerSpec::Conv1d { out_channels: 2, kernel: 3 }];
        assert!(Network::new(10, 3, &bad, RngSeed(0)).is_err());
        let wrong_head = [LayerSpec::Flatten, LayerSpec::Dense { out_features: 5 }];
        assert!(Network::new(10, 3, &wrong_head, RngSeed(0)).is_err());
        let no_flatten = [LayerSpec::Conv1d { out_channels: 3, kernel: 10 }];
        assert!(Network::new(10, 3, &no_flatten, RngSeed(0)).is_err());
    }

    #[test]
    fn zero_head_is_uniform() {
        let mut net = Network::with_default_architecture(RngSeed(5)).unwrap();
        net.zero_head();
        let p = net.predict_proba(&spectrum(1)).unwrap();
        assert_eq!(p.len(), 14);
        assert!(p.iter().all(|v| (v - 1.0 / 14.0).abs() < 1e-15));
    }

    #[test]
    fn probabilities_sum_to_one_and_repeat() {
        let net = Network::with_default_architecture(RngSeed(6)).unwrap();
        let s = spectrum(2);
        let p = net.predict_proba(&s).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|&v| v >= 0.0));
        assert_eq!(p, net.predict_proba(&s).unwrap());
    }

    #[test]
    fn predict_checks_length_and_normalization() {
        let net = Network::with_default_architecture(RngSeed(6)).unwrap();
        let short = Spectrum::new(vec![50.0; 10], 4000.0, 1400.0, true).unwrap();
        assert!(net.predict_proba(&short).is_err());
        let raw = Spectrum::new(vec![50.0; 404], 4000.0, 1400.0, false).unwrap();
        assert!(matches!(net.predict_proba(&raw), Err(Error::NotNormalized)));
    }

    #[test]
    fn backward_requires_forward() {
        let mut net = Network::with_default_architecture(RngSeed(6)).unwrap();
        assert!(matches!(
            net.backward(&Tensor::zeros(&[1, 14])),
            Err(Error::BackwardBeforeForward)
        ));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut net = Network::with_default_architecture(RngSeed(7)).unwrap();
        let (a, b) = (spectrum(3), spectrum(4));
        let x = net.batch_input(&[&a, &b]).unwrap();
        let mut rng = RngSeed(1).rng();
        net.forward(&x, Mode::Train, &mut rng).unwrap();
        let gx = net.backward(&Tensor::zeros(&[2, 14])).unwrap();
        assert!(gx.data().iter().all(|&g| g == 0.0));
        for (_, g) in net.params_and_grads() {
            assert!(g.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn train_and_eval_agree_without_dropout_or_batchnorm() {
        let specs = [
            LayerSpec::Conv1d { out_channels: 3, kernel: 5 },
            LayerSpec::Relu,
            LayerSpec::MaxPool1d { window: 3, stride: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { out_features: 14 },
        ];
        let mut net = Network::new(404, 14, &specs, RngSeed(8)).unwrap();
        let (a, b) = (spectrum(5), spectrum(6));
        let x = net.batch_input(&[&a, &b]).unwrap();
        let mut rng = RngSeed(2).rng();
        let train = net.forward(&x, Mode::Train, &mut rng).unwrap();
        assert_eq!(train, net.infer(&x).unwrap());
    }
}
