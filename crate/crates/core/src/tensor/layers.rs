use rand::Rng;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Max-pooled output with the flat input index each output came from.
#[derive(Debug, Clone)]
pub struct Pooled<T: Scalar> {
    pub output: Tensor<T>,
    pub argmax: Vec<u32>,
}

/// 2-wide, stride-2 max pooling over the trailing `rank` axes of a
/// `(C, spatial...)` tensor. Ties go to the first cell in row-major order.
pub fn maxpool<T: Scalar>(input: &Tensor<T>, rank: usize) -> Result<Pooled<T>> {
    let shape = input.shape();
    if shape.len() != rank + 1 {
        return Err(Error::ShapeMismatch(format!(
            "pooling over {rank} axes needs a rank-{} tensor, got {shape:?}",
            rank + 1
        )));
    }
    for (a, &m) in shape[1..].iter().enumerate() {
        if m % 2 != 0 {
            return Err(Error::IndivisibleExtent { axis: a, extent: m });
        }
    }
    let lead = 3 - rank;
    let mut ie = [1usize; 3];
    ie[lead..].copy_from_slice(&shape[1..]);
    let win = |a: usize| if a < lead { 1 } else { 2 };
    let oe = [ie[0] / win(0), ie[1] / win(1), ie[2] / win(2)];
    let channels = shape[0];
    let in_plane = ie[0] * ie[1] * ie[2];
    let out_plane = oe[0] * oe[1] * oe[2];

    let mut out = Vec::with_capacity(channels * out_plane);
    let mut argmax = Vec::with_capacity(channels * out_plane);
    let data = input.data();
    for c in 0..channels {
        let base = c * in_plane;
        for oz in 0..oe[0] {
            for oy in 0..oe[1] {
                for ox in 0..oe[2] {
                    let mut best_i = usize::MAX;
                    let mut best = T::ZERO;
                    for dz in 0..win(0) {
                        for dy in 0..win(1) {
                            for dx in 0..win(2) {
                                let i = base
                                    + ((oz * win(0) + dz) * ie[1] + oy * win(1) + dy) * ie[2]
                                    + ox * win(2)
                                    + dx;
                                if best_i == usize::MAX || data[i] > best {
                                    best = data[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_i as u32);
                }
            }
        }
    }
    let mut out_shape = vec![channels];
    out_shape.extend_from_slice(&oe[lead..]);
    Ok(Pooled {
        output: Tensor::from_vec(&out_shape, out)?,
        argmax,
    })
}

/// Routes each output gradient to the input cell that won the max.
pub fn maxpool_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    argmax: &[u32],
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return Err(Error::ShapeMismatch("pool gradient / argmax length".into()));
    }
    let mut g = Tensor::zeros(input_shape);
    let gd = g.data_mut();
    for (&i, &v) in argmax.iter().zip(grad_out.data()) {
        gd[i as usize] += v;
    }
    Ok(g)
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

/// Gradient of [`relu`]; `input` is the forward input (or output, which has
/// the same positive support).
pub fn relu_backward<T: Scalar>(grad_out: &Tensor<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.shape() != input.shape() {
        return Err(Error::ShapeMismatch("relu gradient shape".into()));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > T::ZERO { g } else { T::ZERO })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// `y = W x + b` with `W: (out, in)`, `x` flattened to length `in`.
pub fn linear<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n_out, n_in) = linear_dims(input, weights, bias)?;
    let x = input.data();
    let w = weights.data();
    let y = (0..n_out)
        .map(|o| {
            let row = &w[o * n_in..(o + 1) * n_in];
            row.iter().zip(x).fold(bias.data()[o], |acc, (&a, &b)| acc + a * b)
        })
        .collect();
    Tensor::from_vec(&[n_out], y)
}

fn linear_dims<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<(usize, usize)> {
    if weights.rank() != 2 {
        return Err(Error::ShapeMismatch(format!("linear weights {:?}", weights.shape())));
    }
    let (n_out, n_in) = (weights.shape()[0], weights.shape()[1]);
    if input.len() != n_in || bias.shape() != [n_out] {
        return Err(Error::ShapeMismatch(format!(
            "linear {n_in}->{n_out} with input of {} and bias {:?}",
            input.len(),
            bias.shape()
        )));
    }
    Ok((n_out, n_in))
}

#[derive(Debug, Clone)]
pub struct LinearGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn linear_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weights: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let (n_out, n_in) = (weights.shape()[0], weights.shape()[1]);
    if grad_out.len() != n_out || input.len() != n_in {
        return Err(Error::ShapeMismatch("linear gradient shapes".into()));
    }
    let x = input.data();
    let gy = grad_out.data();
    let w = weights.data();
    let mut gw = vec![T::ZERO; n_out * n_in];
    let mut gx = vec![T::ZERO; n_in];
    for o in 0..n_out {
        let g = gy[o];
        let row = &w[o * n_in..(o + 1) * n_in];
        for (i, (gwi, &xi)) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x).enumerate() {
            *gwi = g * xi;
            gx[i] += row[i] * g;
        }
    }
    Ok(LinearGrads {
        input: Tensor::from_vec(input.shape(), gx)?,
        weights: Tensor::from_vec(weights.shape(), gw)?,
        bias: Tensor::from_vec(&[n_out], gy.to_vec())?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Eval,
}

/// Inverted dropout. Returns the output and the per-element multiplier
/// (0 or `1/(1-rate)`) used for the backward pass; eval mode is the
/// identity and returns no mask.
pub fn dropout<T: Scalar, R: Rng>(
    input: &Tensor<T>,
    rate: f64,
    mode: DropoutMode,
    rng: &mut R,
) -> (Tensor<T>, Option<Vec<T>>) {
    assert!((0.0..1.0).contains(&rate), "dropout rate {rate} outside [0, 1)");
    if mode == DropoutMode::Eval || rate == 0.0 {
        return (input.clone(), None);
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..input.len())
        .map(|_| if rng.gen::<f64>() < rate { T::ZERO } else { keep })
        .collect();
    let data = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    (Tensor::from_vec(input.shape(), data).expect("same shape"), Some(mask))
}

/// Max-subtracted softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits
        .iter()
        .copied()
        .fold(logits[0], |m, v| if v > m { v } else { m });
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum = exps.iter().fold(T::ZERO, |a, &b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of the softmax of `logits` against class `label`.
/// Returns `(loss, d loss / d logits)`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if let Some(&bad) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLogit(bad.to_f64()));
    }
    if label >= logits.len() {
        return Err(Error::ShapeMismatch(format!(
            "label {label} for {} classes",
            logits.len()
        )));
    }
    let max = logits
        .iter()
        .copied()
        .fold(logits[0], |m, v| if v > m { v } else { m });
    let sum = logits.iter().fold(T::ZERO, |a, &v| a + (v - max).exp());
    // log p_label = (z_label - max) - log sum
    let loss = sum.ln() - (logits[label] - max);
    let mut grad = softmax(logits);
    grad[label] -= T::ONE;
    Ok((loss, grad))
}
