//! Independent reference implementations and helpers shared by the
//! integration tests. Everything here is written as plain loops over
//! nested vectors so it shares no code with the library kernels.

#![allow(dead_code)]

use fgnet::neuralnet::Tensor;
use fgnet::{Dataset, FunctionalGroup, LabeledSpectrum, RngSeed, Spectrum};
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared absolutely; finite differences
/// cannot resolve relative error below it.
pub const GRAD_FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_FLOOR)
}

pub fn random_tensor<R: Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Cross-correlation, valid padding, plain index arithmetic.
pub fn naive_conv1d(x: &Tensor, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (bs, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (o, k) = (w.shape()[0], w.shape()[2]);
    let lo = l - k + 1;
    let mut y = Vec::new();
    for bi in 0..bs {
        for oi in 0..o {
            for t in 0..lo {
                let mut s = b.data()[oi];
                for ci in 0..c {
                    for ki in 0..k {
                        s += w.data()[oi * c * k + ci * k + ki] * x.data()[bi * c * l + ci * l + t + ki];
                    }
                }
                y.push(s);
            }
        }
    }
    y
}

/// Max pooling keeping the first maximum in each window.
pub fn naive_maxpool(x: &Tensor, window: usize, stride: usize) -> (Vec<f64>, Vec<usize>) {
    let (bs, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let lo = (l - window) / stride + 1;
    let (mut y, mut arg) = (Vec::new(), Vec::new());
    for row in 0..bs * c {
        for t in 0..lo {
            let start = row * l + t * stride;
            let mut best = start;
            for i in start..start + window {
                if x.data()[i] > x.data()[best] {
                    best = i;
                }
            }
            y.push(x.data()[best]);
            arg.push(best);
        }
    }
    (y, arg)
}

pub fn naive_svm_scores(w: &[Vec<f64>], b: &[f64], x: &[f64]) -> Vec<f64> {
    w.iter()
        .zip(b)
        .map(|(row, bias)| {
            let mut s = *bias;
            for i in 0..x.len() {
                s += row[i] * x[i];
            }
            s
        })
        .collect()
}

/// Sorts classes by (score desc, index asc) and looks up the label's slot.
pub fn naive_top_k(scores: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let mut hits = 0;
    for (row, &label) in scores.iter().zip(labels) {
        let mut order: Vec<usize> = (0..row.len()).collect();
        order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
        if order[..k].contains(&label) {
            hits += 1;
        }
    }
    100.0 * hits as f64 / scores.len() as f64
}

pub fn spectrum(values: Vec<f64>) -> Spectrum {
    Spectrum::new(values, 4000.0, 1400.0, true).unwrap()
}

/// Normalized random spectra whose label is encoded as a bump position.
pub fn bump_dataset(per_class: usize, len: usize, classes: usize, seed: u64, tag: &str) -> Dataset {
    let mut rng = RngSeed(seed).rng();
    let mut samples = Vec::new();
    for c in 0..classes {
        for i in 0..per_class {
            let center = (c as f64 + 0.5) * len as f64 / classes as f64;
            let values = (0..len)
                .map(|t| {
                    let d = (t as f64 - center) / 2.0;
                    (95.0 - 80.0 * (-d * d).exp() + rng.random_range(-2.0..2.0)).clamp(1.0, 100.0)
                })
                .collect();
            samples.push(LabeledSpectrum {
                spectrum: spectrum(values),
                label: FunctionalGroup::from_index(c).unwrap(),
                source_id: format!("{tag}-{c}-{i}"),
            });
        }
    }
    Dataset::new(samples, tag).unwrap()
}

/// Dataset with the given per-class counts and arbitrary constant spectra.
pub fn counted_dataset(counts: &[usize], tag: &str) -> Dataset {
    let mut samples = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        for i in 0..n {
            samples.push(LabeledSpectrum {
                spectrum: spectrum(vec![50.0; 4]),
                label: FunctionalGroup::from_index(c).unwrap(),
                source_id: format!("{c}-{i}"),
            });
        }
    }
    Dataset::new(samples, tag).unwrap()
}

/// Per-class sample counts of the reference FTIR collection, in priority order.
pub const REFERENCE_COUNTS: [usize; 14] = [537, 333, 948, 371, 357, 183, 277, 952, 100, 100, 49, 100, 228, 159];
