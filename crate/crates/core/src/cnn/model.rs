use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Layer geometry of the conv-conv-dense network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub input_height: usize,
    pub input_width: usize,
    pub conv1_filters: usize,
    pub conv1_size: usize,
    pub conv2_filters: usize,
    pub conv2_size: usize,
}

impl Architecture {
    /// 8 filters of 15x15 followed by 4 of 7x7.
    pub fn with_defaults(input_height: usize, input_width: usize) -> Self {
        Self {
            input_height,
            input_width,
            conv1_filters: 8,
            conv1_size: 15,
            conv2_filters: 4,
            conv2_size: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let Architecture {
            input_height: h,
            input_width: w,
            conv1_filters: k1,
            conv1_size: f1,
            conv2_filters: k2,
            conv2_size: f2,
        } = *self;
        if [h, w, k1, f1, k2, f2].contains(&0) {
            return Err(Error::Shape(format!("architecture has a zero dimension: {self:?}")));
        }
        let need = f1 + f2 - 1;
        if h < need || w < need {
            return Err(Error::Shape(format!(
                "a {w}x{h} input cannot feed {f1}x{f1} then {f2}x{f2} valid convolutions (need {need}x{need})"
            )));
        }
        Ok(())
    }

    /// `(height, width)` of each first-layer map.
    pub fn conv1_out(&self) -> (usize, usize) {
        (
            self.input_height - self.conv1_size + 1,
            self.input_width - self.conv1_size + 1,
        )
    }

    /// `(height, width)` of each second-layer map.
    pub fn conv2_out(&self) -> (usize, usize) {
        let (h, w) = self.conv1_out();
        (h - self.conv2_size + 1, w - self.conv2_size + 1)
    }

    pub fn dense_len(&self) -> usize {
        let (h, w) = self.conv2_out();
        self.conv2_filters * h * w
    }
}

/// Parameters of the network. Also used to hold gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub arch: Architecture,
    /// `[K1, 1, f1, f1]`
    pub conv1_weight: Tensor,
    /// `[K1]`
    pub conv1_bias: Tensor,
    /// `[K2, K1, f2, f2]`
    pub conv2_weight: Tensor,
    /// `[K2]`
    pub conv2_bias: Tensor,
    /// `[K2, h2, w2]`, matching the flattened second-layer output.
    pub dense_weight: Tensor,
    /// `[1]`
    pub dense_bias: Tensor,
}

pub const PARAM_NAMES: [&str; 6] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "dense.weight",
    "dense.bias",
];

impl CnnModel {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let (h2, w2) = arch.conv2_out();
        Ok(Self {
            arch,
            conv1_weight: Tensor::zeros(vec![arch.conv1_filters, 1, arch.conv1_size, arch.conv1_size]),
            conv1_bias: Tensor::zeros(vec![arch.conv1_filters]),
            conv2_weight: Tensor::zeros(vec![
                arch.conv2_filters,
                arch.conv1_filters,
                arch.conv2_size,
                arch.conv2_size,
            ]),
            conv2_bias: Tensor::zeros(vec![arch.conv2_filters]),
            dense_weight: Tensor::zeros(vec![arch.conv2_filters, h2, w2]),
            dense_bias: Tensor::zeros(vec![1]),
        })
    }

    /// Gaussian weights with standard deviation `1/sqrt(fan_in)` per layer, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_ins = [
            arch.conv1_size * arch.conv1_size,
            arch.conv1_filters * arch.conv2_size * arch.conv2_size,
            arch.dense_len(),
        ];
        let layers = [
            &mut model.conv1_weight,
            &mut model.conv2_weight,
            &mut model.dense_weight,
        ];
        for (w, fan_in) in layers.into_iter().zip(fan_ins) {
            let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt())
                .map_err(|e| Error::Config(e.to_string()))?;
            w.data_mut().iter_mut().for_each(|v| *v = normal.sample(&mut rng));
        }
        Ok(model)
    }

    /// Assembles a model from named tensors, checking every shape against `arch`.
    pub fn from_tensors(arch: Architecture, tensors: [Tensor; 6]) -> Result<Self> {
        let reference = Self::zeros(arch)?;
        for ((name, expected), got) in reference.tensors().into_iter().zip(&tensors) {
            if expected.shape() != got.shape() {
                return Err(Error::Shape(format!(
                    "{name}: expected shape {:?}, got {:?}",
                    expected.shape(),
                    got.shape()
                )));
            }
        }
        let [conv1_weight, conv1_bias, conv2_weight, conv2_bias, dense_weight, dense_bias] = tensors;
        Ok(Self {
            arch,
            conv1_weight,
            conv1_bias,
            conv2_weight,
            conv2_bias,
            dense_weight,
            dense_bias,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.arch).expect("architecture already validated")
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 6] {
        [
            (PARAM_NAMES[0], &self.conv1_weight),
            (PARAM_NAMES[1], &self.conv1_bias),
            (PARAM_NAMES[2], &self.conv2_weight),
            (PARAM_NAMES[3], &self.conv2_bias),
            (PARAM_NAMES[4], &self.dense_weight),
            (PARAM_NAMES[5], &self.dense_bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.conv1_weight,
            &mut self.conv1_bias,
            &mut self.conv2_weight,
            &mut self.conv2_bias,
            &mut self.dense_weight,
            &mut self.dense_bias,
        ]
    }

    /// Weight tensors only (no biases).
    pub fn weights(&self) -> [&Tensor; 3] {
        [&self.conv1_weight, &self.conv2_weight, &self.dense_weight]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Parameter at a flat index running through [`CnnModel::tensors`] in order.
    pub fn param(&self, index: usize) -> f64 {
        let (t, i) = self.locate(index);
        self.tensors()[t].1.data()[i]
    }

    pub fn param_mut(&mut self, index: usize) -> &mut f64 {
        let (t, i) = self.locate(index);
        &mut self.tensors_mut()[t].data_mut()[i]
    }

    /// `(tensor name, offset within tensor)` of a flat parameter index.
    pub fn param_name(&self, index: usize) -> (&'static str, usize) {
        let (t, i) = self.locate(index);
        (PARAM_NAMES[t], i)
    }

    fn locate(&self, mut index: usize) -> (usize, usize) {
        for (t, (_, tensor)) in self.tensors().iter().enumerate() {
            if index < tensor.len() {
                return (t, index);
            }
            index -= tensor.len();
        }
        panic!("parameter index out of range");
    }

    /// Row-major `f1 x f1` weights of first-layer filter `k`.
    pub fn conv1_filter(&self, k: usize) -> &[f64] {
        let n = self.arch.conv1_size * self.arch.conv1_size;
        &self.conv1_weight.data()[k * n..(k + 1) * n]
    }

    /// L2 norm of every first-layer filter.
    pub fn conv1_filter_norms(&self) -> Vec<f64> {
        (0..self.arch.conv1_filters)
            .map(|k| self.conv1_filter(k).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }

    pub fn sum_squared_weights(&self) -> f64 {
        self.weights().iter().map(|t| t.sum_squares()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.all_finite())
    }

    /// Elementwise `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &CnnModel, alpha: f64) -> Result<()> {
        if self.arch != other.arch {
            return Err(Error::Shape("architectures differ".into()));
        }
        for (a, (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_scaled(b, alpha)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for t in self.tensors_mut() {
            t.scale(alpha);
        }
    }
}
