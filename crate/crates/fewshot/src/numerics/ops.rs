//! Pure forward implementations of the differentiable operations.
//!
//! The tape delegates to these for its forward pass, so the standalone
//! contracts and the recorded graph share one code path.

use rand::Rng;

use super::{Mode, NumericsError, Result, Tensor};

/// Affine map `input · weightsᵀ + bias`.
///
/// `input` has shape `[..., d_in]`, `weights` is `[d_out, d_in]`, `bias` is
/// `[d_out]`; the output keeps the leading extents and replaces the trailing
/// one with `d_out`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if weights.rank() != 2 {
        return Err(NumericsError::ShapeMismatch {
            op: "dense_forward(weights)",
            left: weights.shape().to_vec(),
            right: vec![0, 0],
        });
    }
    let d_out = weights.shape()[0];
    let d_in = weights.shape()[1];
    if input.rank() == 0 || *input.shape().last().unwrap() != d_in {
        return Err(NumericsError::ShapeMismatch {
            op: "dense_forward(input)",
            left: input.shape().to_vec(),
            right: weights.shape().to_vec(),
        });
    }
    if bias.shape() != [d_out] {
        return Err(NumericsError::ShapeMismatch {
            op: "dense_forward(bias)",
            left: bias.shape().to_vec(),
            right: vec![d_out],
        });
    }
    let rows = input.len() / d_in;
    let mut out = Vec::with_capacity(rows * d_out);
    let w = weights.data();
    let b = bias.data();
    for r in 0..rows {
        let x = &input.data()[r * d_in..(r + 1) * d_in];
        for o in 0..d_out {
            let wrow = &w[o * d_in..(o + 1) * d_in];
            let mut acc = b[o];
            for (xi, wi) in x.iter().zip(wrow) {
                acc += xi * wi;
            }
            out.push(acc);
        }
    }
    let mut shape = input.shape().to_vec();
    *shape.last_mut().unwrap() = d_out;
    Tensor::new(shape, out)
}

/// Elementwise `max(0, x)`; the subgradient at 0 is taken as 0.
pub fn relu(input: &Tensor) -> Tensor {
    map(input, |x| x.max(0.0))
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    map(input, |x| 1.0 / (1.0 + (-x).exp()))
}

pub fn tanh(input: &Tensor) -> Tensor {
    map(input, f64::tanh)
}

fn map(input: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = input.data().iter().map(|&x| f(x)).collect();
    Tensor::new(input.shape().to_vec(), data).expect("shape preserved")
}

/// Inverted-dropout mask: each element is 0 with probability `p`, otherwise
/// `1/(1-p)`, so eval mode is the identity.
pub fn dropout_mask(shape: &[usize], p: f64, rng: &mut impl Rng) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(NumericsError::InvalidProbability(p));
    }
    let n: usize = shape.iter().product();
    let keep = 1.0 / (1.0 - p);
    let data = (0..n)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// Standalone dropout as an eager tensor op.
pub fn dropout(input: &Tensor, p: f64, mode: Mode, rng: &mut impl Rng) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(NumericsError::InvalidProbability(p));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok(input.clone());
    }
    let mask = dropout_mask(input.shape(), p, rng)?;
    let data = input
        .data()
        .iter()
        .zip(mask.data())
        .map(|(x, m)| x * m)
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// 1-D convolution over positions with same padding.
///
/// `input` is `[len, c_in]`, `kernel` is `[filters, k, c_in]`, `bias` is
/// `[filters]`; output is `[len, filters]`. Positions outside the input are
/// treated as zeros, so words shorter than the kernel are handled by padding.
pub fn conv1d_same(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (len, c_in) = (input.shape()[0], input.shape()[1]);
    let (filters, k, kc) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    if kc != c_in {
        return Err(NumericsError::ShapeMismatch {
            op: "conv1d_same",
            left: input.shape().to_vec(),
            right: kernel.shape().to_vec(),
        });
    }
    let off = k / 2;
    let mut out = vec![0.0; len * filters];
    for p in 0..len {
        for f in 0..filters {
            let mut acc = bias.data()[f];
            for t in 0..k {
                let q = p + t;
                if q < off || q - off >= len {
                    continue;
                }
                let q = q - off;
                let xrow = &input.data()[q * c_in..(q + 1) * c_in];
                let wrow = &kernel.data()[(f * k + t) * c_in..(f * k + t + 1) * c_in];
                for (x, w) in xrow.iter().zip(wrow) {
                    acc += x * w;
                }
            }
            out[p * filters + f] = acc;
        }
    }
    Tensor::new(vec![len, filters], out)
}

/// Max pooling over adjacent position pairs (width 2, stride 2); an odd tail
/// position pools alone. Returns the pooled tensor and the winning flat index
/// per output element (for the backward scatter).
pub fn maxpool_pairs(input: &Tensor) -> (Tensor, Vec<usize>) {
    let (len, c) = (input.shape()[0], input.shape()[1]);
    let out_len = len.div_ceil(2);
    let mut out = vec![0.0; out_len * c];
    let mut arg = vec![0; out_len * c];
    for p in 0..out_len {
        for j in 0..c {
            let a = 2 * p;
            let first = input.data()[a * c + j];
            let (val, idx) = if a + 1 < len {
                let second = input.data()[(a + 1) * c + j];
                if second > first {
                    (second, (a + 1) * c + j)
                } else {
                    (first, a * c + j)
                }
            } else {
                (first, a * c + j)
            };
            out[p * c + j] = val;
            arg[p * c + j] = idx;
        }
    }
    (Tensor::new(vec![out_len, c], out).unwrap(), arg)
}

/// Columnwise reduction over axis 0 of a `[rows, cols]` tensor.
/// Returns the reduced vector and, for min/max, the winning row per column.
pub enum RowReduce {
    Mean,
    Max,
    Min,
}

pub fn reduce_rows(input: &Tensor, how: RowReduce) -> (Tensor, Vec<usize>) {
    let (rows, cols) = (input.shape()[0], input.shape()[1]);
    let mut out = vec![0.0; cols];
    let mut arg = vec![0; cols];
    match how {
        RowReduce::Mean => {
            for r in 0..rows {
                for j in 0..cols {
                    out[j] += input.data()[r * cols + j];
                }
            }
            for v in &mut out {
                *v /= rows as f64;
            }
        }
        RowReduce::Max | RowReduce::Min => {
            let want_max = matches!(how, RowReduce::Max);
            for j in 0..cols {
                let mut best = input.data()[j];
                let mut best_r = 0;
                for r in 1..rows {
                    let v = input.data()[r * cols + j];
                    if (want_max && v > best) || (!want_max && v < best) {
                        best = v;
                        best_r = r;
                    }
                }
                out[j] = best;
                arg[j] = best_r;
            }
        }
    }
    (Tensor::from_vec(out), arg)
}

/// Numerically stable log-sum-exp of a vector (max-shifted).
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
