//! Elementwise nonlinearities and the reference valid convolution.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Valid-mode multi-channel 2D cross-correlation.
///
/// `input` is `[C, H, W]`, `filters` is `[K, C, f, f]`, `biases` has length
/// `K`; the result is `[K, H - f + 1, W - f + 1]`.
pub fn conv2d_valid(input: &Tensor, filters: &Tensor, biases: &[f64]) -> Result<Tensor> {
    let (&[c, h, w], &[k, fc, fh, fw]) = (input.shape(), filters.shape()) else {
        return Err(Error::Shape(format!(
            "conv2d_valid expects [C,H,W] input and [K,C,f,f] filters, got {:?} and {:?}",
            input.shape(),
            filters.shape()
        )));
    };
    if fc != c {
        return Err(Error::Shape(format!("input has {c} channels, filters expect {fc}")));
    }
    if fh > h || fw > w || fh == 0 || fw == 0 {
        return Err(Error::Shape(format!("{fh}x{fw} filter does not fit a {h}x{w} input")));
    }
    if biases.len() != k {
        return Err(Error::Shape(format!("{} biases for {k} filters", biases.len())));
    }
    let (oh, ow) = (h - fh + 1, w - fw + 1);
    let x = input.data();
    let f = filters.data();
    let mut out = vec![0.0; k * oh * ow];
    for (kk, plane) in out.chunks_exact_mut(oh * ow).enumerate() {
        plane.fill(biases[kk]);
        for cc in 0..c {
            for i in 0..fh {
                for j in 0..fw {
                    let wv = f[((kk * c + cc) * fh + i) * fw + j];
                    if wv == 0.0 {
                        continue;
                    }
                    for y in 0..oh {
                        let src = &x[(cc * h + y + i) * w + j..(cc * h + y + i) * w + j + ow];
                        let dst = &mut plane[y * ow..(y + 1) * ow];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += wv * s);
                    }
                }
            }
        }
    }
    Tensor::new(vec![k, oh, ow], out)
}

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function, the derivative of [`softplus`].
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_scalar_scaling() {
        let input = Tensor::filled(vec![1, 2, 2], 1.0);
        let filt = Tensor::filled(vec![1, 1, 1, 1], 2.0);
        let out = conv2d_valid(&input, &filt, &[0.0]).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert_eq!(out.data(), &[2.0; 4]);
    }

    #[test]
    fn conv_sliding_sums() {
        let input = Tensor::new(vec![1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let filt = Tensor::filled(vec![1, 1, 2, 2], 1.0);
        let out = conv2d_valid(&input, &filt, &[0.0]).unwrap();
        assert_eq!(out.data(), &[12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn conv_zero_filter_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = Tensor::new(vec![2, 5, 4], (0..40).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
        let filt = Tensor::zeros(vec![3, 2, 2, 2]);
        let out = conv2d_valid(&input, &filt, &[0.5, -1.0, 2.0]).unwrap();
        assert_eq!(out.shape(), &[3, 4, 3]);
        for (k, plane) in out.data().chunks(12).enumerate() {
            assert!(plane.iter().all(|&v| v == [0.5, -1.0, 2.0][k]));
        }
    }

    #[test]
    fn conv_shape_errors() {
        let input = Tensor::zeros(vec![1, 3, 3]);
        assert!(conv2d_valid(&input, &Tensor::zeros(vec![1, 1, 4, 4]), &[0.0]).is_err());
        assert!(conv2d_valid(&input, &Tensor::zeros(vec![1, 2, 2, 2]), &[0.0]).is_err());
        assert!(conv2d_valid(&input, &Tensor::zeros(vec![2, 1, 2, 2]), &[0.0]).is_err());
        assert!(conv2d_valid(&Tensor::zeros(vec![3, 3]), &Tensor::zeros(vec![1, 1, 2, 2]), &[0.0]).is_err());
    }

    #[test]
    fn relu_values() {
        let t = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::filled(vec![2, 2], -0.5);
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let t = Tensor::new(vec![17], (0..17).map(|_| rng.gen_range(-5.0..5.0)).collect()).unwrap();
            assert_eq!(relu(&relu(&t)), relu(&t));
        }
    }

    #[test]
    fn softplus_values() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(100.0) - 100.0).abs() < 1e-9);
        assert!(softplus(-800.0) >= 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let x: f64 = rng.gen_range(-40.0..40.0);
            assert!((softplus(x) - softplus(-x) - x).abs() < 1e-12, "{x}");
        }
    }

    #[test]
    fn sigmoid_is_softplus_slope() {
        for &x in &[-20.0, -2.0, 0.0, 0.3, 7.0] {
            let h = 1e-6;
            let fd = (softplus(x + h) - softplus(x - h)) / (2.0 * h);
            assert!((fd - sigmoid(x)).abs() < 1e-8);
        }
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
