//! Forward and backward kernels for every layer kind.
//!
//! Sequence tensors are `[batch, channels, len]`, flat tensors
//! `[batch, features]`.

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn dims3(x: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    x.expect_rank(3, what)?;
    Ok((x.shape()[0], x.shape()[1], x.shape()[2]))
}

/// Valid (unpadded) cross-correlation.
pub fn conv1d_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (batch, in_ch, len) = dims3(input, "conv1d input")?;
    let (out_ch, w_in, k) = dims3(weights, "conv1d weights")?;
    if w_in != in_ch || bias.shape() != [out_ch] {
        return Err(Error::ShapeMismatch(format!(
            "conv1d: input {:?}, weights {:?}, bias {:?}",
            input.shape(),
            weights.shape(),
            bias.shape()
        )));
    }
    if len < k {
        return Err(Error::ShapeMismatch(format!(
            "conv1d: input length {len} shorter than kernel {k}"
        )));
    }
    let out_len = len - k + 1;
    let (x, w) = (input.data(), weights.data());
    let mut out = vec![0.0; batch * out_ch * out_len];
    for b in 0..batch {
        for o in 0..out_ch {
            let row = &mut out[(b * out_ch + o) * out_len..][..out_len];
            row.fill(bias.data()[o]);
            for c in 0..in_ch {
                let xin = &x[(b * in_ch + c) * len..][..len];
                for j in 0..k {
                    let wv = w[(o * in_ch + c) * k + j];
                    for (y, xv) in row.iter_mut().zip(&xin[j..j + out_len]) {
                        *y += wv * xv;
                    }
                }
            }
        }
    }
    Tensor::new(vec![batch, out_ch, out_len], out)
}

pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn conv1d_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    need_input_grad: bool,
) -> Result<ConvGrads> {
    let (batch, in_ch, len) = dims3(input, "conv1d input")?;
    let (out_ch, _, k) = dims3(weights, "conv1d weights")?;
    let out_len = len - k + 1;
    if grad_out.shape() != [batch, out_ch, out_len] {
        return Err(Error::ShapeMismatch(format!(
            "conv1d backward: grad {:?}, expected {:?}",
            grad_out.shape(),
            [batch, out_ch, out_len]
        )));
    }
    let (x, w, g) = (input.data(), weights.data(), grad_out.data());
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; out_ch];
    let mut gx = if need_input_grad {
        vec![0.0; x.len()]
    } else {
        Vec::new()
    };
    for b in 0..batch {
        for o in 0..out_ch {
            let grow = &g[(b * out_ch + o) * out_len..][..out_len];
            gb[o] += grow.iter().sum::<f64>();
            for c in 0..in_ch {
                let xin = &x[(b * in_ch + c) * len..][..len];
                for j in 0..k {
                    let widx = (o * in_ch + c) * k + j;
                    gw[widx] += grow
                        .iter()
                        .zip(&xin[j..j + out_len])
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                }
                if need_input_grad {
                    let gxin = &mut gx[(b * in_ch + c) * len..][..len];
                    for j in 0..k {
                        let wv = w[(o * in_ch + c) * k + j];
                        for (d, gv) in gxin[j..j + out_len].iter_mut().zip(grow) {
                            *d += wv * gv;
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: if need_input_grad {
            Some(Tensor::new(input.shape().to_vec(), gx)?)
        } else {
            None
        },
        weights: Tensor::new(weights.shape().to_vec(), gw)?,
        bias: Tensor::new(vec![out_ch], gb)?,
    })
}

/// `y = x W^T + b` with `W` of shape `[out, in]`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    input.expect_rank(2, "dense input")?;
    weights.expect_rank(2, "dense weights")?;
    let (batch, n_in) = (input.shape()[0], input.shape()[1]);
    let n_out = weights.shape()[0];
    if weights.shape()[1] != n_in || bias.shape() != [n_out] {
        return Err(Error::ShapeMismatch(format!(
            "dense: input {:?}, weights {:?}, bias {:?}",
            input.shape(),
            weights.shape(),
            bias.shape()
        )));
    }
    let mut out = Vec::with_capacity(batch * n_out);
    for xrow in input.data().chunks_exact(n_in) {
        for (wrow, bv) in weights.data().chunks_exact(n_in).zip(bias.data()) {
            out.push(bv + dot(wrow, xrow));
        }
    }
    Tensor::new(vec![batch, n_out], out)
}

pub struct DenseGrads {
    pub input: Option<Tensor>,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    need_input_grad: bool,
) -> Result<DenseGrads> {
    let (batch, n_in) = (input.shape()[0], input.shape()[1]);
    let n_out = weights.shape()[0];
    if grad_out.shape() != [batch, n_out] {
        return Err(Error::ShapeMismatch(format!(
            "dense backward: grad {:?}, expected {:?}",
            grad_out.shape(),
            [batch, n_out]
        )));
    }
    let mut gw = vec![0.0; n_out * n_in];
    let mut gb = vec![0.0; n_out];
    let mut gx = if need_input_grad {
        vec![0.0; batch * n_in]
    } else {
        Vec::new()
    };
    for b in 0..batch {
        let xrow = &input.data()[b * n_in..][..n_in];
        let grow = &grad_out.data()[b * n_out..][..n_out];
        for (o, &gv) in grow.iter().enumerate() {
            if gv == 0.0 {
                continue;
            }
            gb[o] += gv;
            axpy(gv, xrow, &mut gw[o * n_in..][..n_in]);
            if need_input_grad {
                axpy(gv, &weights.data()[o * n_in..][..n_in], &mut gx[b * n_in..][..n_in]);
            }
        }
    }
    Ok(DenseGrads {
        input: if need_input_grad {
            Some(Tensor::new(vec![batch, n_in], gx)?)
        } else {
            None
        },
        weights: Tensor::new(vec![n_out, n_in], gw)?,
        bias: Tensor::new(vec![n_out], gb)?,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators let the compiler vectorize
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
}

/// Gradient passes where the forward input was positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data).expect("shape preserved")
}

/// Returns pooled values and the flat input index of each window maximum
/// (first occurrence on ties).
pub fn maxpool1d(x: &Tensor, window: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let (batch, ch, len) = dims3(x, "maxpool1d input")?;
    if window == 0 || stride == 0 {
        return Err(Error::InvalidConfig("maxpool window and stride must be >= 1".into()));
    }
    if window > len {
        return Err(Error::ShapeMismatch(format!(
            "maxpool window {window} exceeds length {len}"
        )));
    }
    let out_len = (len - window) / stride + 1;
    let mut out = Vec::with_capacity(batch * ch * out_len);
    let mut argmax = Vec::with_capacity(batch * ch * out_len);
    for (r, row) in x.data().chunks_exact(len).enumerate() {
        for t in 0..out_len {
            let start = t * stride;
            let mut best = start;
            for i in start + 1..start + window {
                if row[i] > row[best] {
                    best = i;
                }
            }
            out.push(row[best]);
            argmax.push(r * len + best);
        }
    }
    Ok((Tensor::new(vec![batch, ch, out_len], out)?, argmax))
}

pub fn maxpool1d_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut gx = Tensor::zeros(input_shape);
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        gx.data_mut()[i] += g;
    }
    gx
}

/// Per-channel view of a `[batch, ch, len]` or `[batch, features]` tensor.
fn bn_dims(x: &Tensor) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [b, c, l] => Ok((b, c, l)),
        [b, c] => Ok((b, c, 1)),
        _ => Err(Error::ShapeMismatch(format!(
            "batchnorm expects rank 2 or 3, got {:?}",
            x.shape()
        ))),
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub x_hat: Tensor,
    pub inv_std: Vec<f64>,
}

/// Batch normalization. Training mode normalizes with batch statistics
/// (biased variance) and folds them into the running averages:
/// `running = 0.9 * running + 0.1 * batch`.
pub fn batchnorm1d(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &mut [f64],
    running_var: &mut [f64],
    mode: Mode,
) -> Result<(Tensor, Option<BatchNormCache>)> {
    let (batch, ch, len) = bn_dims(x)?;
    if gamma.len() != ch || beta.len() != ch {
        return Err(Error::ShapeMismatch(format!(
            "batchnorm has {} channels, input has {ch}",
            gamma.len()
        )));
    }
    let data = x.data();
    let idx = |b: usize, c: usize, t: usize| (b * ch + c) * len + t;
    let mut out = vec![0.0; data.len()];
    match mode {
        Mode::Eval => {
            for c in 0..ch {
                let inv = 1.0 / (running_var[c] + BN_EPS).sqrt();
                for b in 0..batch {
                    for t in 0..len {
                        let i = idx(b, c, t);
                        out[i] = gamma[c] * (data[i] - running_mean[c]) * inv + beta[c];
                    }
                }
            }
            Ok((Tensor::new(x.shape().to_vec(), out)?, None))
        }
        Mode::Train => {
            let n = batch * len;
            if n < 2 {
                return Err(Error::InsufficientBatch(n));
            }
            let mut x_hat = vec![0.0; data.len()];
            let mut inv_std = vec![0.0; ch];
            for c in 0..ch {
                let mut sum = 0.0;
                for b in 0..batch {
                    sum += data[idx(b, c, 0)..idx(b, c, 0) + len].iter().sum::<f64>();
                }
                let mean = sum / n as f64;
                let mut sq = 0.0;
                for b in 0..batch {
                    sq += data[idx(b, c, 0)..idx(b, c, 0) + len]
                        .iter()
                        .map(|v| (v - mean) * (v - mean))
                        .sum::<f64>();
                }
                let var = sq / n as f64;
                let inv = 1.0 / (var + BN_EPS).sqrt();
                inv_std[c] = inv;
                for b in 0..batch {
                    for t in 0..len {
                        let i = idx(b, c, t);
                        x_hat[i] = (data[i] - mean) * inv;
                        out[i] = gamma[c] * x_hat[i] + beta[c];
                    }
                }
                running_mean[c] = BN_MOMENTUM * running_mean[c] + (1.0 - BN_MOMENTUM) * mean;
                running_var[c] = BN_MOMENTUM * running_var[c] + (1.0 - BN_MOMENTUM) * var;
            }
            Ok((
                Tensor::new(x.shape().to_vec(), out)?,
                Some(BatchNormCache {
                    x_hat: Tensor::new(x.shape().to_vec(), x_hat)?,
                    inv_std,
                }),
            ))
        }
    }
}

pub struct BatchNormGrads {
    pub input: Tensor,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

pub fn batchnorm1d_backward(
    cache: &BatchNormCache,
    gamma: &[f64],
    grad_out: &Tensor,
) -> Result<BatchNormGrads> {
    let (batch, ch, len) = bn_dims(&cache.x_hat)?;
    let xh = cache.x_hat.data();
    let g = grad_out.data();
    let n = (batch * len) as f64;
    let idx = |b: usize, c: usize, t: usize| (b * ch + c) * len + t;
    let mut gx = vec![0.0; xh.len()];
    let mut ggamma = vec![0.0; ch];
    let mut gbeta = vec![0.0; ch];
    for c in 0..ch {
        let (mut sum_g, mut sum_gx) = (0.0, 0.0);
        for b in 0..batch {
            for t in 0..len {
                let i = idx(b, c, t);
                sum_g += g[i];
                sum_gx += g[i] * xh[i];
            }
        }
        ggamma[c] = sum_gx;
        gbeta[c] = sum_g;
        let scale = gamma[c] * cache.inv_std[c] / n;
        for b in 0..batch {
            for t in 0..len {
                let i = idx(b, c, t);
                gx[i] = scale * (n * g[i] - sum_g - xh[i] * sum_gx);
            }
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::new(grad_out.shape().to_vec(), gx)?,
        gamma: ggamma,
        beta: gbeta,
    })
}

/// Inverted dropout. Returns the output and, in training mode with a
/// non-zero rate, the multiplicative mask (0 or `1 / (1 - rate)`).
pub fn dropout<R: Rng + ?Sized>(
    x: &Tensor,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidConfig(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok((Tensor::new(x.shape().to_vec(), data)?, Some(mask)))
}

pub fn dropout_backward(mask: Option<&[f64]>, grad_out: &Tensor) -> Tensor {
    match mask {
        None => grad_out.clone(),
        Some(mask) => {
            let data = grad_out.data().iter().zip(mask).map(|(g, m)| g * m).collect();
            Tensor::new(grad_out.shape().to_vec(), data).expect("shape preserved")
        }
    }
}

#[derive(Debug, Clone)]
pub struct CrossEntropy {
    pub loss: f64,
    pub probabilities: Tensor,
    pub grad_logits: Tensor,
}

/// Row-wise softmax with the maximum subtracted first.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    logits.expect_rank(2, "softmax logits")?;
    let n = logits.shape()[1];
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(n) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / sum));
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Mean negative log-likelihood of `labels` under softmax(`logits`), with
/// its gradient `(softmax - onehot) / batch`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<CrossEntropy> {
    logits.expect_rank(2, "cross-entropy logits")?;
    let (batch, n) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != batch {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for batch of {batch}",
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= n) {
        return Err(Error::LabelOutOfRange {
            label,
            n_classes: n,
        });
    }
    let probabilities = softmax(logits)?;
    let mut loss = 0.0;
    let mut grad = probabilities.data().to_vec();
    for (b, (row, &label)) in logits.data().chunks_exact(n).zip(labels).enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        grad[b * n + label] -= 1.0;
    }
    for g in &mut grad {
        *g /= batch as f64;
    }
    Ok(CrossEntropy {
        loss: loss / batch as f64,
        probabilities,
        grad_logits: Tensor::new(vec![batch, n], grad)?,
    })
}
