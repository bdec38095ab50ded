use serde::{Deserialize, Serialize};

use crate::error::{CodclError, Result};
use crate::scalar::Scalar;

use super::backprop::{gradients, Batch, GradientOutput};
use super::params::ModelParameters;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Losses<T> {
    pub factual: T,
    pub contrastive: T,
    pub total: T,
}

/// How counterfactual pairs enter the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CfMode {
    /// InfoNCE over factual, counterfactual and negative edges.
    Contrastive,
    /// Binary cross-entropy on the counterfactual edge against its observed state.
    Binary,
    /// Counterfactuals ignored; `α` forced to 1.
    Off,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    pub disable_counterfactual: bool,
    pub disable_time_encoding: bool,
    pub disable_contrastive: bool,
    /// Consumed by the augmentation stage, which then draws counterfactuals uniformly.
    pub disable_similarity: bool,
}

impl Ablations {
    pub fn cf_mode(&self) -> CfMode {
        if self.disable_counterfactual {
            CfMode::Off
        } else if self.disable_contrastive {
            CfMode::Binary
        } else {
            CfMode::Contrastive
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig<T> {
    pub alpha: T,
    pub temperature: T,
    pub batch_size: usize,
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    pub seed: u64,
    pub ablations: Ablations,
    /// Number of recent neighbors `K` fed to the backbone.
    pub recent_k: usize,
    pub epochs: usize,
    pub patience: usize,
    pub bn_momentum: T,
    /// Re-run the counterfactual search at every epoch instead of once.
    pub refresh_counterfactuals: bool,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            alpha: T::lit(0.5),
            temperature: T::lit(0.5),
            batch_size: 200,
            learning_rate: T::lit(1e-3),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            epsilon: T::lit(1e-8),
            seed: 0,
            ablations: Ablations::default(),
            recent_k: 20,
            epochs: 50,
            patience: 5,
            bn_momentum: T::lit(0.1),
            refresh_counterfactuals: false,
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > T::zero()) {
            return Err(CodclError::config("train.temperature must be positive"));
        }
        if !(self.alpha >= T::zero() && self.alpha <= T::one()) {
            return Err(CodclError::config("train.alpha must lie in [0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(CodclError::config("train.batch_size must be positive"));
        }
        if !(self.learning_rate >= T::zero()) || !self.learning_rate.is_finite() {
            return Err(CodclError::config("train.learning_rate must be finite and non-negative"));
        }
        let unit = |x: T| x >= T::zero() && x < T::one();
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(CodclError::config("Adam moments must lie in [0, 1)"));
        }
        if !(self.epsilon > T::zero()) {
            return Err(CodclError::config("Adam epsilon must be positive"));
        }
        if !(self.bn_momentum >= T::zero() && self.bn_momentum <= T::one()) {
            return Err(CodclError::config("normalization momentum must lie in [0, 1]"));
        }
        if self.epochs == 0 {
            return Err(CodclError::config("train.epochs must be positive"));
        }
        Ok(())
    }

    pub fn use_time(&self) -> bool {
        !self.ablations.disable_time_encoding
    }
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: ModelParameters<T>,
    pub v: ModelParameters<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParameters<T>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

fn apply_adam<T: Scalar>(params: &mut ModelParameters<T>, grads: &ModelParameters<T>, state: &mut AdamState<T>, cfg: &TrainConfig<T>) {
    state.step += 1;
    let step = i32::try_from(state.step).unwrap_or(i32::MAX);
    let c1 = T::one() - cfg.beta1.powi(step);
    let c2 = T::one() - cfg.beta2.powi(step);
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let trainable = params.trainable_mut();
    let g = grads.trainable();
    let m = state.m.trainable_mut();
    let v = state.v.trainable_mut();
    for (((p, g), m), v) in trainable.into_iter().zip(g).zip(m).zip(v) {
        for i in 0..p.1.data.len() {
            let gi = g.1.data[i];
            let mi = b1 * m.1.data[i] + (T::one() - b1) * gi;
            let vi = b2 * v.1.data[i] + (T::one() - b2) * gi * gi;
            m.1.data[i] = mi;
            v.1.data[i] = vi;
            p.1.data[i] -= cfg.learning_rate * (mi / c1) / ((vi / c2).sqrt() + cfg.epsilon);
        }
    }
}

fn update_running_stats<T: Scalar>(params: &mut ModelParameters<T>, out: &GradientOutput<T>, momentum: T) {
    let n = out.rows;
    let unbias = if n > 1 {
        T::from_usize_lossy(n) / T::from_usize_lossy(n - 1)
    } else {
        T::one()
    };
    let keep = T::one() - momentum;
    for (rm, m) in params.bn_running_mean.data.iter_mut().zip(&out.batch_mean) {
        *rm = keep * *rm + momentum * *m;
    }
    for (rv, v) in params.bn_running_var.data.iter_mut().zip(&out.batch_var) {
        *rv = keep * *rv + momentum * *v * unbias;
    }
}

/// One Adam step on the total loss; also advances the normalization running statistics.
pub fn train_step<T: Scalar>(
    params: &mut ModelParameters<T>,
    batch: &Batch<T>,
    state: &mut AdamState<T>,
    config: &TrainConfig<T>,
) -> Result<Losses<T>> {
    let out = gradients(
        params,
        batch,
        config.alpha,
        config.temperature,
        config.ablations.cf_mode(),
        config.use_time(),
    )?;
    update_running_stats(params, &out, config.bn_momentum);
    apply_adam(params, &out.grads, state, config);
    Ok(out.losses)
}

/// Owns the parameters and optimizer state for a training run.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    params: ModelParameters<T>,
    state: AdamState<T>,
    config: TrainConfig<T>,
    steps: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(params: ModelParameters<T>, config: TrainConfig<T>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            state: AdamState::new(&params),
            params,
            config,
            steps: 0,
        })
    }

    pub fn step(&mut self, batch: &Batch<T>) -> Result<Losses<T>> {
        let idx = self.steps;
        let losses = train_step(&mut self.params, batch, &mut self.state, &self.config).map_err(|e| match e {
            CodclError::NonFinite { what, .. } => CodclError::NonFinite { batch: idx, what },
            other => other,
        })?;
        self.steps += 1;
        Ok(losses)
    }

    pub fn params(&self) -> &ModelParameters<T> {
        &self.params
    }

    pub fn config(&self) -> &TrainConfig<T> {
        &self.config
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn into_params(self) -> ModelParameters<T> {
        self.params
    }
}
