//! One-vs-rest linear SVM trained by seeded stochastic subgradient descent.
//!
//! Each class gets a binary problem
//!
//! ```text
//! J(w, b) = λ/2 (|w|² + b²) + 1/n Σ max(0, 1 − y_i (w·z_i + b)),   λ = 1 / (C n)
//! ```
//!
//! over standardized features `z = (x − μ) / σ`. The step size follows the
//! Pegasos schedule `η_t = 1 / (λ t)`, and the returned weights are the
//! average of the iterates visited during the last epoch. Standardization
//! is folded back so the stored model scores raw spectra as `w·x + b`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuralnet::Tensor;
use crate::types::{Dataset, RngSeed, Spectrum, N_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    pub epochs: usize,
    pub seed: RngSeed,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            epochs: 100,
            seed: RngSeed(0),
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidConfig(format!("C must be > 0, got {}", self.c)));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-class linear scores `w_c·x + b_c` on raw spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvmModel {
    weights: Tensor,
    biases: Tensor,
}

impl LinearSvmModel {
    pub fn new(weights: Tensor, biases: Tensor) -> Result<Self> {
        weights.expect_rank(2, "svm weights")?;
        if biases.shape() != [weights.shape()[0]] {
            return Err(Error::ShapeMismatch(format!(
                "svm weights {:?} vs biases {:?}",
                weights.shape(),
                biases.shape()
            )));
        }
        if weights.data().iter().chain(biases.data()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("svm parameters must be finite".into()));
        }
        Ok(LinearSvmModel { weights, biases })
    }

    pub fn zeros(n_classes: usize, n_features: usize) -> Self {
        LinearSvmModel {
            weights: Tensor::zeros(&[n_classes, n_features]),
            biases: Tensor::zeros(&[n_classes]),
        }
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn biases(&self) -> &Tensor {
        &self.biases
    }

    pub fn n_classes(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn n_features(&self) -> usize {
        self.weights.shape()[1]
    }

    /// Frobenius norm of the weight matrix.
    pub fn weight_norm(&self) -> f64 {
        self.weights.sq_norm().sqrt()
    }
}

/// `score_c = w_c·x + b_c`; the ranking of these scores defines SVM Top-K.
pub fn svm_scores(m: &LinearSvmModel, s: &Spectrum) -> Result<Vec<f64>> {
    if s.len() != m.n_features() {
        return Err(Error::ShapeMismatch(format!(
            "spectrum has {} points, model expects {}",
            s.len(),
            m.n_features()
        )));
    }
    if !s.is_normalized() {
        return Err(Error::NotNormalized);
    }
    let x = s.values();
    Ok(m.weights
        .data()
        .chunks_exact(m.n_features())
        .zip(m.biases.data())
        .map(|(w, b)| b + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        .collect())
}

/// Binary regularized hinge objective `J(w, b)` for labels `y ∈ {−1, +1}`.
pub fn hinge_objective(w: &[f64], b: f64, xs: &[&[f64]], ys: &[f64], lambda: f64) -> f64 {
    let reg = 0.5 * lambda * (w.iter().map(|v| v * v).sum::<f64>() + b * b);
    let loss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (1.0 - y * (dot(w, x) + b)).max(0.0))
        .sum();
    reg + loss / xs.len() as f64
}

/// A subgradient of [`hinge_objective`]; exact wherever no margin equals 1.
pub fn hinge_subgradient(w: &[f64], b: f64, xs: &[&[f64]], ys: &[f64], lambda: f64) -> (Vec<f64>, f64) {
    let n = xs.len() as f64;
    let mut gw: Vec<f64> = w.iter().map(|v| lambda * v).collect();
    let mut gb = lambda * b;
    for (x, &y) in xs.iter().zip(ys) {
        if y * (dot(w, x) + b) < 1.0 {
            for (g, xv) in gw.iter_mut().zip(x.iter()) {
                *g -= y * xv / n;
            }
            gb -= y / n;
        }
    }
    (gw, gb)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Trains one binary problem per class. Deterministic given `cfg.seed`.
pub fn svm_train(data: &Dataset, cfg: &SvmConfig) -> Result<LinearSvmModel> {
    cfg.validate()?;
    let d = data.spectrum_len().ok_or(Error::EmptyDataset)?;
    data.ensure_normalized(d)?;
    let n = data.len();

    let mut mean = vec![0.0; d];
    for s in data.samples() {
        for (m, v) in mean.iter_mut().zip(s.spectrum.values()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut sd = vec![0.0; d];
    for s in data.samples() {
        for ((acc, v), m) in sd.iter_mut().zip(s.spectrum.values()).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    for v in &mut sd {
        *v = (*v / n as f64).sqrt();
        if *v < 1e-12 {
            *v = 1.0;
        }
    }
    let z: Vec<Vec<f64>> = data
        .samples()
        .iter()
        .map(|s| {
            s.spectrum
                .values()
                .iter()
                .zip(&mean)
                .zip(&sd)
                .map(|((v, m), s)| (v - m) / s)
                .collect()
        })
        .collect();
    let labels: Vec<usize> = data.samples().iter().map(|s| s.label.index()).collect();

    let lambda = 1.0 / (cfg.c * n as f64);
    // bias stored in the last slot of each row
    let width = d + 1;
    let mut w = vec![0.0; N_CLASSES * width];
    let mut avg = vec![0.0; N_CLASSES * width];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = cfg.seed.rng();
    let mut t = 0u64;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let last = epoch + 1 == cfg.epochs;
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let shrink = 1.0 - eta * lambda;
            let zi = &z[i];
            for (k, row) in w.chunks_exact_mut(width).enumerate() {
                let y = if labels[i] == k { 1.0 } else { -1.0 };
                let margin = y * (dot(&row[..d], zi) + row[d]);
                row.iter_mut().for_each(|v| *v *= shrink);
                if margin < 1.0 {
                    let step = eta * y;
                    for (wv, zv) in row[..d].iter_mut().zip(zi) {
                        *wv += step * zv;
                    }
                    row[d] += step;
                }
            }
            if last {
                for (a, v) in avg.iter_mut().zip(&w) {
                    *a += v;
                }
            }
        }
    }
    avg.iter_mut().for_each(|a| *a /= n as f64);

    let mut weights = Vec::with_capacity(N_CLASSES * d);
    let mut biases = Vec::with_capacity(N_CLASSES);
    for row in avg.chunks_exact(width) {
        let mut b = row[d];
        for j in 0..d {
            let wj = row[j] / sd[j];
            weights.push(wj);
            b -= wj * mean[j];
        }
        biases.push(b);
    }
    LinearSvmModel::new(
        Tensor::new(vec![N_CLASSES, d], weights)?,
        Tensor::new(vec![N_CLASSES], biases)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{FunctionalGroup, LabeledSpectrum};
    use rand::Rng;

    fn toy(n_per: usize, seed: u64) -> Dataset {
        let mut rng = RngSeed(seed).rng();
        let mut samples = Vec::new();
        for (g, level) in [(FunctionalGroup::Ester, 20.0), (FunctionalGroup::Nitro, 80.0)] {
            for i in 0..n_per {
                let values = (0..16)
                    .map(|j| if j < 8 { level } else { 100.0 - level } + rng.random_range(-5.0..5.0))
                    .collect();
                samples.push(LabeledSpectrum {
                    spectrum: Spectrum::new(values, 4000.0, 1400.0, true).unwrap(),
                    label: g,
                    source_id: format!("{g}-{i}"),
                });
            }
        }
        Dataset::new(samples, "toy").unwrap()
    }

    fn accuracy(m: &LinearSvmModel, d: &Dataset) -> f64 {
        let hits = d
            .samples()
            .iter()
            .filter(|s| {
                let sc = svm_scores(m, &s.spectrum).unwrap();
                let best = (0..sc.len()).fold(0, |b, i| if sc[i] > sc[b] { i } else { b });
                best == s.label.index()
            })
            .count();
        hits as f64 / d.len() as f64
    }

    #[test]
    fn separable_toy_is_learned() {
        let d = toy(30, 1);
        let m = svm_train(&d, &SvmConfig::default()).unwrap();
        assert_eq!(accuracy(&m, &d), 1.0);
    }

    #[test]
    fn same_seed_same_model() {
        let d = toy(20, 2);
        let cfg = SvmConfig { epochs: 10, seed: RngSeed(4), ..Default::default() };
        assert_eq!(svm_train(&d, &cfg).unwrap(), svm_train(&d, &cfg).unwrap());
    }

    #[test]
    fn weight_norm_shrinks_with_c() {
        let d = toy(20, 3);
        let norms: Vec<f64> = [1.0, 1e-1, 1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&c| svm_train(&d, &SvmConfig { c, epochs: 20, ..Default::default() }).unwrap().weight_norm())
            .collect();
        for w in norms.windows(2) {
            assert!(w[1] < w[0], "{norms:?}");
        }
        assert!(norms[4] < 0.1 * norms[0], "{norms:?}");
    }

    #[test]
    fn empty_and_bad_config() {
        assert!(matches!(svm_train(&Dataset::empty("e"), &SvmConfig::default()), Err(Error::EmptyDataset)));
        assert!(svm_train(&toy(2, 1), &SvmConfig { c: 0.0, ..Default::default() }).is_err());
    }

    #[test]
    fn zero_model_and_homogeneity() {
        let s = Spectrum::new(vec![3.0; 5], 4000.0, 1400.0, true).unwrap();
        assert_eq!(svm_scores(&LinearSvmModel::zeros(14, 5), &s).unwrap(), vec![0.0; 14]);
        let mut rng = RngSeed(8).rng();
        let w: Vec<f64> = (0..70).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..14).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = LinearSvmModel::new(Tensor::new(vec![14, 5], w.clone()).unwrap(), Tensor::new(vec![14], b.clone()).unwrap()).unwrap();
        let m2 = LinearSvmModel::new(
            Tensor::new(vec![14, 5], w.iter().map(|v| 2.0 * v).collect()).unwrap(),
            Tensor::new(vec![14], b.iter().map(|v| 2.0 * v).collect()).unwrap(),
        )
        .unwrap();
        let (s1, s2) = (svm_scores(&m, &s).unwrap(), svm_scores(&m2, &s).unwrap());
        for (a, b) in s1.iter().zip(&s2) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
        let argmax = |v: &[f64]| (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b });
        assert_eq!(argmax(&s1), argmax(&s2));
        let short = Spectrum::new(vec![3.0; 4], 4000.0, 1400.0, true).unwrap();
        assert!(svm_scores(&m, &short).is_err());
    }

    #[test]
    fn subgradient_matches_finite_differences() {
        let mut rng = RngSeed(11).rng();
        let xs: Vec<Vec<f64>> = (0..25).map(|_| (0..6).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let ys: Vec<f64> = (0..25).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let xr: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let lambda = 0.05;
        let h = 1e-5;
        for _ in 0..20 {
            let w: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b = rng.random_range(-0.5..0.5);
            // skip draws where a margin sits within h-scale of the kink
            let near_kink = xr.iter().zip(&ys).any(|(x, y)| (y * (dot(&w, x) + b) - 1.0).abs() < 1e-3);
            if near_kink {
                continue;
            }
            let (gw, gb) = hinge_subgradient(&w, b, &xr, &ys, lambda);
            for j in 0..=6 {
                let f = |delta: f64| {
                    let mut w2 = w.clone();
                    let mut b2 = b;
                    if j < 6 { w2[j] += delta } else { b2 += delta }
                    hinge_objective(&w2, b2, &xr, &ys, lambda)
                };
                let fd = (f(h) - f(-h)) / (2.0 * h);
                let an = if j < 6 { gw[j] } else { gb };
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                assert!(rel < 1e-4, "coord {j}: {an} vs {fd}");
            }
        }
    }
}
