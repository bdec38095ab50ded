use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CodclError, Result};
use crate::scalar::Scalar;

/// Layer sizes of the reference backbone and predictor head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Node feature dimension `d`.
    pub feature_dim: usize,
    /// Time-encoding dimension `d_t`.
    pub time_dim: usize,
    pub hidden_dim: usize,
    /// Embedding dimension `d_h`.
    pub embed_dim: usize,
}

impl ModelDims {
    pub fn new(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            time_dim: 16,
            hidden_dim: 128,
            embed_dim: 64,
        }
    }

    /// Backbone input: `[features | neighbor mean | time encoding]`.
    pub fn input_dim(&self) -> usize {
        2 * self.feature_dim + self.time_dim
    }
}

/// Dense tensor, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::lit(rng.random_range(-bound..=bound))).collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }
}

/// Names of the trainable tensors, in storage order.
pub const TRAINABLE: [&str; 12] = [
    "time.freq",
    "time.phase",
    "encoder.w1",
    "encoder.b1",
    "encoder.w2",
    "encoder.b2",
    "head.w1",
    "head.b1",
    "head.bn_gamma",
    "head.bn_beta",
    "head.w2",
    "head.b2",
];

/// Normalization statistics tracked outside gradient descent.
pub const BUFFERS: [&str; 2] = ["head.bn_running_mean", "head.bn_running_var"];

/// Every learnable tensor plus the normalization running statistics.
///
/// The same struct doubles as the gradient container and the Adam moment
/// store; buffers are ignored in those roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters<T> {
    pub dims: ModelDims,
    pub time_freq: Tensor<T>,
    pub time_phase: Tensor<T>,
    pub enc_w1: Tensor<T>,
    pub enc_b1: Tensor<T>,
    pub enc_w2: Tensor<T>,
    pub enc_b2: Tensor<T>,
    pub head_w1: Tensor<T>,
    pub head_b1: Tensor<T>,
    pub bn_gamma: Tensor<T>,
    pub bn_beta: Tensor<T>,
    pub head_w2: Tensor<T>,
    pub head_b2: Tensor<T>,
    pub bn_running_mean: Tensor<T>,
    pub bn_running_var: Tensor<T>,
}

impl<T: Scalar> ModelParameters<T> {
    /// Uniform fan-in initialization (`U(-1/sqrt(fan_in), 1/sqrt(fan_in))`) for
    /// weight matrices, zero biases, unit normalization scale, and geometric
    /// time frequencies `10^(-9 i / (d_t - 1))`.
    pub fn init(dims: ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ModelDims {
            time_dim,
            hidden_dim,
            embed_dim,
            ..
        } = dims;
        let input = dims.input_dim();
        let fan = |n: usize| 1.0 / (n.max(1) as f64).sqrt();
        let freq = (0..time_dim)
            .map(|i| {
                let e = if time_dim > 1 {
                    9.0 * i as f64 / (time_dim - 1) as f64
                } else {
                    0.0
                };
                T::lit(10f64.powf(-e))
            })
            .collect();
        Self {
            dims,
            time_freq: Tensor {
                shape: vec![time_dim],
                data: freq,
            },
            time_phase: Tensor::zeros(&[time_dim]),
            enc_w1: Tensor::uniform(&[hidden_dim, input], fan(input), &mut rng),
            enc_b1: Tensor::zeros(&[hidden_dim]),
            enc_w2: Tensor::uniform(&[embed_dim, hidden_dim], fan(hidden_dim), &mut rng),
            enc_b2: Tensor::zeros(&[embed_dim]),
            head_w1: Tensor::uniform(&[embed_dim, embed_dim], fan(embed_dim), &mut rng),
            head_b1: Tensor::zeros(&[embed_dim]),
            bn_gamma: Tensor::filled(&[embed_dim], T::one()),
            bn_beta: Tensor::zeros(&[embed_dim]),
            head_w2: Tensor::uniform(&[embed_dim], fan(embed_dim), &mut rng),
            head_b2: Tensor::zeros(&[1]),
            bn_running_mean: Tensor::zeros(&[embed_dim]),
            bn_running_var: Tensor::filled(&[embed_dim], T::one()),
        }
    }

    /// Same shapes, all zeros (gradient / moment container).
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, t) in out.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x = T::zero());
        }
        out
    }

    pub fn trainable(&self) -> [(&'static str, &Tensor<T>); 12] {
        [
            (TRAINABLE[0], &self.time_freq),
            (TRAINABLE[1], &self.time_phase),
            (TRAINABLE[2], &self.enc_w1),
            (TRAINABLE[3], &self.enc_b1),
            (TRAINABLE[4], &self.enc_w2),
            (TRAINABLE[5], &self.enc_b2),
            (TRAINABLE[6], &self.head_w1),
            (TRAINABLE[7], &self.head_b1),
            (TRAINABLE[8], &self.bn_gamma),
            (TRAINABLE[9], &self.bn_beta),
            (TRAINABLE[10], &self.head_w2),
            (TRAINABLE[11], &self.head_b2),
        ]
    }

    pub fn trainable_mut(&mut self) -> [(&'static str, &mut Tensor<T>); 12] {
        [
            (TRAINABLE[0], &mut self.time_freq),
            (TRAINABLE[1], &mut self.time_phase),
            (TRAINABLE[2], &mut self.enc_w1),
            (TRAINABLE[3], &mut self.enc_b1),
            (TRAINABLE[4], &mut self.enc_w2),
            (TRAINABLE[5], &mut self.enc_b2),
            (TRAINABLE[6], &mut self.head_w1),
            (TRAINABLE[7], &mut self.head_b1),
            (TRAINABLE[8], &mut self.bn_gamma),
            (TRAINABLE[9], &mut self.bn_beta),
            (TRAINABLE[10], &mut self.head_w2),
            (TRAINABLE[11], &mut self.head_b2),
        ]
    }

    /// Trainable tensors followed by buffers.
    pub fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        let mut v: Vec<_> = self.trainable().into_iter().collect();
        v.push((BUFFERS[0], &self.bn_running_mean));
        v.push((BUFFERS[1], &self.bn_running_var));
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        let Self {
            time_freq,
            time_phase,
            enc_w1,
            enc_b1,
            enc_w2,
            enc_b2,
            head_w1,
            head_b1,
            bn_gamma,
            bn_beta,
            head_w2,
            head_b2,
            bn_running_mean,
            bn_running_var,
            ..
        } = self;
        vec![
            (TRAINABLE[0], time_freq),
            (TRAINABLE[1], time_phase),
            (TRAINABLE[2], enc_w1),
            (TRAINABLE[3], enc_b1),
            (TRAINABLE[4], enc_w2),
            (TRAINABLE[5], enc_b2),
            (TRAINABLE[6], head_w1),
            (TRAINABLE[7], head_b1),
            (TRAINABLE[8], bn_gamma),
            (TRAINABLE[9], bn_beta),
            (TRAINABLE[10], head_w2),
            (TRAINABLE[11], head_b2),
            (BUFFERS[0], bn_running_mean),
            (BUFFERS[1], bn_running_var),
        ]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors().into_iter().find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors_mut().into_iter().find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable().iter().map(|(_, t)| t.len()).sum()
    }

    /// Errors with the parameter name if any trainable entry is not finite.
    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in self.trainable() {
            if t.data.iter().any(|x| !x.is_finite()) {
                return Err(CodclError::NonFiniteGradient(name.to_string()));
            }
        }
        Ok(())
    }

    /// Converts every tensor to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ModelParameters<U> {
        let c = |t: &Tensor<T>| Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|x| U::lit(x.as_f64())).collect(),
        };
        ModelParameters {
            dims: self.dims,
            time_freq: c(&self.time_freq),
            time_phase: c(&self.time_phase),
            enc_w1: c(&self.enc_w1),
            enc_b1: c(&self.enc_b1),
            enc_w2: c(&self.enc_w2),
            enc_b2: c(&self.enc_b2),
            head_w1: c(&self.head_w1),
            head_b1: c(&self.head_b1),
            bn_gamma: c(&self.bn_gamma),
            bn_beta: c(&self.bn_beta),
            head_w2: c(&self.head_w2),
            head_b2: c(&self.head_b2),
            bn_running_mean: c(&self.bn_running_mean),
            bn_running_var: c(&self.bn_running_var),
        }
    }

    /// Infers dimensions from tensor shapes, checking that they are consistent.
    pub(crate) fn from_named(mut named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut take = |name: &str| -> Result<Tensor<T>> {
            let pos = named
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| CodclError::Checkpoint(format!("missing tensor `{name}`")))?;
            Ok(named.swap_remove(pos).1)
        };
        let time_freq = take("time.freq")?;
        let enc_w1 = take("encoder.w1")?;
        let enc_w2 = take("encoder.w2")?;
        if enc_w1.shape.len() != 2 || enc_w2.shape.len() != 2 || time_freq.shape.len() != 1 {
            return Err(CodclError::Checkpoint("bad tensor rank".into()));
        }
        let time_dim = time_freq.shape[0];
        let hidden_dim = enc_w1.shape[0];
        let input = enc_w1.shape[1];
        let embed_dim = enc_w2.shape[0];
        if input < time_dim || (input - time_dim) % 2 != 0 {
            return Err(CodclError::Checkpoint("encoder input width inconsistent".into()));
        }
        let dims = ModelDims {
            feature_dim: (input - time_dim) / 2,
            time_dim,
            hidden_dim,
            embed_dim,
        };
        let reference = Self::init(dims, 0);
        let mut out = Self {
            dims,
            time_freq,
            time_phase: take("time.phase")?,
            enc_w1,
            enc_b1: take("encoder.b1")?,
            enc_w2,
            enc_b2: take("encoder.b2")?,
            head_w1: take("head.w1")?,
            head_b1: take("head.b1")?,
            bn_gamma: take("head.bn_gamma")?,
            bn_beta: take("head.bn_beta")?,
            head_w2: take("head.w2")?,
            head_b2: take("head.b2")?,
            bn_running_mean: take("head.bn_running_mean")?,
            bn_running_var: take("head.bn_running_var")?,
        };
        for ((name, want), (_, got)) in reference.tensors().into_iter().zip(out.tensors_mut()) {
            if want.shape != got.shape || got.data.len() != want.data.len() {
                return Err(CodclError::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    got.shape, want.shape
                )));
            }
        }
        Ok(out)
    }
}
