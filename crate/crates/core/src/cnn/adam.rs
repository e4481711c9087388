use super::model::CnnModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of a flat parameter slice. `step` is the
/// 1-based index of this update.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    first: &mut [f64],
    second: &mut [f64],
    step: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || first.len() != n || second.len() != n {
        return Err(Error::Shape(format!(
            "adam: {n} params, {} grads, {} / {} moments",
            grads.len(),
            first.len(),
            second.len()
        )));
    }
    let t = step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..n {
        let g = grads[i];
        first[i] = cfg.beta1 * first[i] + (1.0 - cfg.beta1) * g;
        second[i] = cfg.beta2 * second[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = first[i] / c1;
        let v_hat = second[i] / c2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

/// Optimizer state for a [`CnnModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub config: AdamConfig,
    pub first_moment: CnnModel,
    pub second_moment: CnnModel,
    pub step: u64,
}

impl TrainState {
    pub fn new(model: &CnnModel, config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: model.zeros_like(),
            second_moment: model.zeros_like(),
            step: 0,
        }
    }

    /// Applies one update to `params` using `grads`.
    pub fn step(&mut self, params: &mut CnnModel, grads: &CnnModel) -> Result<()> {
        if params.arch != grads.arch || params.arch != self.first_moment.arch {
            return Err(Error::Shape("adam: parameter, gradient and state architectures differ".into()));
        }
        self.step += 1;
        let moments = self
            .first_moment
            .tensors_mut()
            .into_iter()
            .zip(self.second_moment.tensors_mut());
        for ((p, (_, g)), (m, v)) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(moments) {
            adam_update(
                p.data_mut(),
                g.data(),
                m.data_mut(),
                v.data_mut(),
                self.step,
                &self.config,
            )?;
        }
        Ok(())
    }
}
