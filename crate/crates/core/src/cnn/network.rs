//! Forward and backward passes of the conv-conv-dense network.
//!
//! The first layer is computed as an im2col patch matrix times the filter bank
//! (one GEMM per chunk of samples), which is also how its weight gradient is
//! accumulated. The second layer is small enough for direct loops. Batches
//! are cut into fixed-size chunks that may run on any number of threads; the
//! per-chunk partial sums are always combined in chunk order, so results do
//! not depend on the thread count.

use rayon::prelude::*;

use super::model::CnnModel;
use super::ops::{sigmoid, softplus};
use crate::error::{Error, Result};
use crate::stimulus::Frame;

/// Samples per work unit in batched passes.
pub const CHUNK: usize = 32;

/// Penalty strengths of the training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularization {
    /// Coefficient on the sum of squared weights (biases excluded).
    pub l2_weights: f64,
    /// Coefficient on the summed absolute dense-layer inputs.
    pub l1_activations: f64,
}

impl Regularization {
    pub const NONE: Regularization = Regularization {
        l2_weights: 0.0,
        l1_activations: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.l2_weights >= 0.0 && self.l1_activations >= 0.0) {
            return Err(Error::Domain(format!("penalties must be non-negative: {self:?}")));
        }
        Ok(())
    }
}

impl Default for Regularization {
    fn default() -> Self {
        Self {
            l2_weights: 1e-3,
            l1_activations: 1e-3,
        }
    }
}

/// Every intermediate activation of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    /// First-layer pre-activations, `[K1][h1 * w1]`.
    pub pre1: Vec<f64>,
    pub act1: Vec<f64>,
    /// Second-layer pre-activations, `[K2][h2 * w2]`.
    pub pre2: Vec<f64>,
    /// Rectified second-layer output, i.e. the dense-layer input.
    pub act2: Vec<f64>,
    /// Dense output before softplus.
    pub z: f64,
    pub rate: f64,
}

/// Predicted rate for one frame plus the activations needed for backprop.
pub fn forward(model: &CnnModel, frame: &Frame) -> Result<(f64, ForwardCache)> {
    let frames = [frame];
    let patches = im2col(model, &frames)?;
    let cache = forward_chunk(model, &patches, 1)
        .pop()
        .expect("one sample in, one cache out");
    Ok((cache.rate, cache))
}

/// Per-sample objective: `rate - label * ln(rate)` plus the weight and
/// activation penalties.
pub fn poisson_objective(
    rate: f64,
    label: u8,
    model: &CnnModel,
    reg: &Regularization,
    dense_inputs: &[f64],
) -> Result<f64> {
    if !(rate > 0.0) {
        return Err(Error::Domain(format!("rate must be positive, got {rate}")));
    }
    reg.validate()?;
    Ok(poisson_nll(rate, label)
        + reg.l2_weights * model.sum_squared_weights()
        + reg.l1_activations * dense_inputs.iter().map(|a| a.abs()).sum::<f64>())
}

#[inline]
fn poisson_nll(rate: f64, label: u8) -> f64 {
    if label == 0 {
        rate
    } else {
        rate - f64::from(label) * rate.ln()
    }
}

/// Gradient of the per-sample objective with respect to every parameter.
pub fn backward(model: &CnnModel, frame: &Frame, label: u8, reg: &Regularization) -> Result<CnnModel> {
    let (_, grads) = batch_gradient(model, &[frame], &[label], reg)?;
    Ok(grads)
}

/// Mean objective over a batch and its gradient.
pub fn batch_gradient(
    model: &CnnModel,
    frames: &[&Frame],
    labels: &[u8],
    reg: &Regularization,
) -> Result<(f64, CnnModel)> {
    if frames.len() != labels.len() || frames.is_empty() {
        return Err(Error::Shape(format!(
            "{} frames and {} labels in batch",
            frames.len(),
            labels.len()
        )));
    }
    reg.validate()?;
    let partials: Vec<(f64, CnnModel)> = frames
        .par_chunks(CHUNK)
        .zip(labels.par_chunks(CHUNK))
        .map(|(f, l)| {
            let patches = im2col(model, f)?;
            let caches = forward_chunk(model, &patches, f.len());
            let mut grads = model.zeros_like();
            let loss = backward_chunk(model, &patches, &caches, l, reg, &mut grads)?;
            Ok((loss, grads))
        })
        .collect::<Result<_>>()?;

    let mut loss = 0.0;
    let mut grads = model.zeros_like();
    for (l, g) in &partials {
        loss += l;
        grads.add_scaled(g, 1.0)?;
    }
    let n = frames.len() as f64;
    loss /= n;
    grads.scale(1.0 / n);
    if reg.l2_weights > 0.0 {
        loss += reg.l2_weights * model.sum_squared_weights();
        let g = [&mut grads.conv1_weight, &mut grads.conv2_weight, &mut grads.dense_weight];
        for (gt, wt) in g.into_iter().zip(model.weights()) {
            gt.add_scaled(wt, 2.0 * reg.l2_weights)?;
        }
    }
    Ok((loss, grads))
}

/// Mean objective over a batch, without gradients.
pub fn batch_objective(model: &CnnModel, frames: &[&Frame], labels: &[u8], reg: &Regularization) -> Result<f64> {
    if frames.len() != labels.len() || frames.is_empty() {
        return Err(Error::Shape(format!(
            "{} frames and {} labels in batch",
            frames.len(),
            labels.len()
        )));
    }
    reg.validate()?;
    let partials: Vec<f64> = frames
        .par_chunks(CHUNK)
        .zip(labels.par_chunks(CHUNK))
        .map(|(f, l)| {
            let patches = im2col(model, f)?;
            forward_chunk(model, &patches, f.len())
                .iter()
                .zip(l)
                .map(|(c, &y)| {
                    if !(c.rate > 0.0) {
                        return Err(Error::Domain(format!("rate must be positive, got {}", c.rate)));
                    }
                    Ok(poisson_nll(c.rate, y) + reg.l1_activations * c.act2.iter().sum::<f64>())
                })
                .sum::<Result<f64>>()
        })
        .collect::<Result<_>>()?;
    Ok(partials.iter().sum::<f64>() / frames.len() as f64 + reg.l2_weights * model.sum_squared_weights())
}

/// Predicted rates for a slice of frames, computed chunk by chunk.
pub fn rates(model: &CnnModel, frames: &[&Frame]) -> Result<Vec<f64>> {
    let chunks: Vec<Vec<f64>> = frames
        .par_chunks(CHUNK)
        .map(|f| {
            let patches = im2col(model, f)?;
            Ok(forward_chunk(model, &patches, f.len()).into_iter().map(|c| c.rate).collect())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

/// Rectified first-layer maps for one frame, `[K1][h1 * w1]`.
pub fn conv1_activations(model: &CnnModel, frame: &Frame) -> Result<Vec<f64>> {
    let patches = im2col(model, &[frame])?;
    let (h1, w1) = model.arch.conv1_out();
    let k1 = model.arch.conv1_filters;
    let mut out = vec![0.0; h1 * w1 * k1];
    conv1_gemm(model, &patches, 1, &mut out);
    let mut act = vec![0.0; k1 * h1 * w1];
    for p in 0..h1 * w1 {
        for k in 0..k1 {
            act[k * h1 * w1 + p] = (out[p * k1 + k] + model.conv1_bias.data()[k]).max(0.0);
        }
    }
    Ok(act)
}

/// Patch matrix `[B][h1 * w1][f1 * f1]` of a chunk of frames.
fn im2col(model: &CnnModel, frames: &[&Frame]) -> Result<Vec<f64>> {
    let arch = &model.arch;
    let (h1, w1) = arch.conv1_out();
    let f = arch.conv1_size;
    let taps = f * f;
    let mut patches = vec![0.0; frames.len() * h1 * w1 * taps];
    for (b, frame) in frames.iter().enumerate() {
        if frame.height() != arch.input_height || frame.width() != arch.input_width {
            return Err(Error::Shape(format!(
                "network expects {}x{} frames, got {}x{}",
                arch.input_width,
                arch.input_height,
                frame.width(),
                frame.height()
            )));
        }
        let px = frame.pixels();
        let w = frame.width();
        let sample = &mut patches[b * h1 * w1 * taps..(b + 1) * h1 * w1 * taps];
        for (p, patch) in sample.chunks_exact_mut(taps).enumerate() {
            let (y, x) = (p / w1, p % w1);
            for i in 0..f {
                let src = &px[(y + i) * w + x..(y + i) * w + x + f];
                patch[i * f..(i + 1) * f]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(d, &s)| *d = f64::from(s));
            }
        }
    }
    Ok(patches)
}

/// `out[B*P][K1] = patches[B*P][T] * W1^T`, without bias.
fn conv1_gemm(model: &CnnModel, patches: &[f64], batch: usize, out: &mut [f64]) {
    let arch = &model.arch;
    let (h1, w1) = arch.conv1_out();
    let rows = batch * h1 * w1;
    let taps = arch.conv1_size * arch.conv1_size;
    let k1 = arch.conv1_filters;
    debug_assert_eq!(patches.len(), rows * taps);
    debug_assert_eq!(out.len(), rows * k1);
    // SAFETY: the slices hold exactly rows*taps, taps*k1 and rows*k1 values
    // and the strides below address them in bounds.
    unsafe {
        matrixmultiply::dgemm(
            rows,
            taps,
            k1,
            1.0,
            patches.as_ptr(),
            taps as isize,
            1,
            model.conv1_weight.data().as_ptr(),
            1,
            taps as isize,
            0.0,
            out.as_mut_ptr(),
            k1 as isize,
            1,
        );
    }
}

fn forward_chunk(model: &CnnModel, patches: &[f64], batch: usize) -> Vec<ForwardCache> {
    let arch = &model.arch;
    let (h1, w1) = arch.conv1_out();
    let (h2, w2) = arch.conv2_out();
    let (k1, k2, f2) = (arch.conv1_filters, arch.conv2_filters, arch.conv2_size);
    let p1 = h1 * w1;
    let mut out1 = vec![0.0; batch * p1 * k1];
    conv1_gemm(model, patches, batch, &mut out1);
    let b1 = model.conv1_bias.data();
    let w2t = model.conv2_weight.data();
    let b2 = model.conv2_bias.data();
    let dense = model.dense_weight.data();

    (0..batch)
        .map(|b| {
            let rows = &out1[b * p1 * k1..(b + 1) * p1 * k1];
            let mut pre1 = vec![0.0; k1 * p1];
            for (p, row) in rows.chunks_exact(k1).enumerate() {
                for k in 0..k1 {
                    pre1[k * p1 + p] = row[k] + b1[k];
                }
            }
            let act1: Vec<f64> = pre1.iter().map(|&v| v.max(0.0)).collect();

            let mut pre2 = vec![0.0; k2 * h2 * w2];
            for (kk, plane) in pre2.chunks_exact_mut(h2 * w2).enumerate() {
                plane.fill(b2[kk]);
                for c in 0..k1 {
                    let src = &act1[c * p1..(c + 1) * p1];
                    for i in 0..f2 {
                        for j in 0..f2 {
                            let wv = w2t[((kk * k1 + c) * f2 + i) * f2 + j];
                            for y in 0..h2 {
                                let s = &src[(y + i) * w1 + j..(y + i) * w1 + j + w2];
                                plane[y * w2..(y + 1) * w2]
                                    .iter_mut()
                                    .zip(s)
                                    .for_each(|(d, &a)| *d += wv * a);
                            }
                        }
                    }
                }
            }
            let act2: Vec<f64> = pre2.iter().map(|&v| v.max(0.0)).collect();
            let z = dense.iter().zip(&act2).map(|(w, a)| w * a).sum::<f64>() + model.dense_bias.data()[0];
            ForwardCache {
                pre1,
                act1,
                pre2,
                act2,
                z,
                rate: softplus(z),
            }
        })
        .collect()
}

/// Adds summed (not averaged) data-term and activation-penalty gradients of a
/// chunk into `grads` and returns the summed loss of those terms.
fn backward_chunk(
    model: &CnnModel,
    patches: &[f64],
    caches: &[ForwardCache],
    labels: &[u8],
    reg: &Regularization,
    grads: &mut CnnModel,
) -> Result<f64> {
    let arch = model.arch;
    let (h1, w1) = arch.conv1_out();
    let (h2, w2) = arch.conv2_out();
    let (k1, k2, f2) = (arch.conv1_filters, arch.conv2_filters, arch.conv2_size);
    let p1 = h1 * w1;
    let p2 = h2 * w2;
    let batch = caches.len();
    let w2t = model.conv2_weight.data();
    let dense = model.dense_weight.data();
    let mut dpre1_rows = vec![0.0; batch * p1 * k1];
    let mut loss = 0.0;

    for (b, (cache, &label)) in caches.iter().zip(labels).enumerate() {
        let rate = cache.rate;
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::Domain(format!("rate must be positive and finite, got {rate}")));
        }
        loss += poisson_nll(rate, label) + reg.l1_activations * cache.act2.iter().sum::<f64>();
        let y = f64::from(label);
        let s = sigmoid(cache.z);
        let dz = s - y * s / rate;

        grads.dense_bias.data_mut()[0] += dz;
        grads
            .dense_weight
            .data_mut()
            .iter_mut()
            .zip(&cache.act2)
            .for_each(|(g, a)| *g += dz * a);

        let dpre2: Vec<f64> = cache
            .pre2
            .iter()
            .zip(dense)
            .map(|(&pre, &w)| if pre > 0.0 { dz * w + reg.l1_activations } else { 0.0 })
            .collect();

        let gb2 = grads.conv2_bias.data_mut();
        for kk in 0..k2 {
            gb2[kk] += dpre2[kk * p2..(kk + 1) * p2].iter().sum::<f64>();
        }

        let mut dact1 = vec![0.0; k1 * p1];
        let gw2 = grads.conv2_weight.data_mut();
        for kk in 0..k2 {
            let d = &dpre2[kk * p2..(kk + 1) * p2];
            for c in 0..k1 {
                let src = &cache.act1[c * p1..(c + 1) * p1];
                let dst = &mut dact1[c * p1..(c + 1) * p1];
                for i in 0..f2 {
                    for j in 0..f2 {
                        let widx = ((kk * k1 + c) * f2 + i) * f2 + j;
                        let wv = w2t[widx];
                        let mut gw = 0.0;
                        for yy in 0..h2 {
                            let off = (yy + i) * w1 + j;
                            let drow = &d[yy * w2..(yy + 1) * w2];
                            gw += src[off..off + w2]
                                .iter()
                                .zip(drow)
                                .map(|(a, g)| a * g)
                                .sum::<f64>();
                            dst[off..off + w2]
                                .iter_mut()
                                .zip(drow)
                                .for_each(|(o, g)| *o += wv * g);
                        }
                        gw2[widx] += gw;
                    }
                }
            }
        }

        let rows = &mut dpre1_rows[b * p1 * k1..(b + 1) * p1 * k1];
        let gb1 = grads.conv1_bias.data_mut();
        for c in 0..k1 {
            let mut acc = 0.0;
            for p in 0..p1 {
                let g = if cache.pre1[c * p1 + p] > 0.0 { dact1[c * p1 + p] } else { 0.0 };
                rows[p * k1 + c] = g;
                acc += g;
            }
            gb1[c] += acc;
        }
    }

    let rows = batch * p1;
    let taps = arch.conv1_size * arch.conv1_size;
    let gw1 = grads.conv1_weight.data_mut();
    debug_assert_eq!(gw1.len(), k1 * taps);
    // SAFETY: dW1[K1][T] += dpre1^T[K1][rows] * patches[rows][T]; all three
    // buffers have exactly the sizes implied by these strides.
    unsafe {
        matrixmultiply::dgemm(
            k1,
            rows,
            taps,
            1.0,
            dpre1_rows.as_ptr(),
            1,
            k1 as isize,
            patches.as_ptr(),
            taps as isize,
            1,
            1.0,
            gw1.as_mut_ptr(),
            taps as isize,
            1,
        );
    }
    Ok(loss)
}
