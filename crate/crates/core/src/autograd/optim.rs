use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decoupled-weight-decay Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    /// Global gradient-norm clip threshold; off unless set.
    pub max_grad_norm: Option<f32>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            max_grad_norm: None,
        }
    }
}

impl AdamWConfig {
    /// Learning rate used for the small desk-scale models.
    pub fn desk_scale() -> Self {
        AdamWConfig {
            learning_rate: 3e-4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.learning_rate, self.beta1, self.beta2, self.eps, self.weight_decay]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.learning_rate < 0.0 || self.eps <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::invalid(format!("invalid optimizer hyperparameters {self:?}")));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("betas must lie in [0, 1)"));
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::invalid(format!("max_grad_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    steps: u64,
    first: Vec<f32>,
    second: Vec<f32>,
}

/// Optimizer state keyed by parameter name.
///
/// Moment buffers are created the first time a parameter is updated, so a
/// parameter that stays frozen never owns any.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub hyper: AdamWConfig,
    step_count: u64,
    moments: BTreeMap<String, Moments>,
}

/// One parameter handed to [`adamw_step`].
pub struct ParamUpdate<'a> {
    pub name: &'a str,
    pub value: &'a mut [f32],
    pub grad: Option<&'a [f32]>,
}

impl OptimState {
    pub fn new(hyper: AdamWConfig) -> Result<Self> {
        hyper.validate()?;
        Ok(OptimState {
            hyper,
            step_count: 0,
            moments: BTreeMap::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn has_moments(&self, name: &str) -> bool {
        self.moments.contains_key(name)
    }

    pub fn first_moment(&self, name: &str) -> Option<&[f32]> {
        self.moments.get(name).map(|m| m.first.as_slice())
    }

    pub fn second_moment(&self, name: &str) -> Option<&[f32]> {
        self.moments.get(name).map(|m| m.second.as_slice())
    }
}

/// One AdamW update over `params`. Validation happens before any value is
/// touched, so a failed call leaves parameters and state unchanged.
pub fn adamw_step(params: &mut [ParamUpdate<'_>], state: &mut OptimState) -> Result<()> {
    for p in params.iter() {
        match p.grad {
            None => {
                return Err(Error::State(format!("missing gradient for parameter {}", p.name)));
            }
            Some(g) if g.len() != p.value.len() => {
                return Err(Error::State(format!(
                    "gradient for {} has {} values, parameter has {}",
                    p.name,
                    g.len(),
                    p.value.len()
                )));
            }
            Some(_) => {}
        }
    }
    let h = state.hyper;
    let clip = match h.max_grad_norm {
        Some(max) => {
            let norm = params
                .iter()
                .flat_map(|p| p.grad.unwrap().iter())
                .map(|g| (*g as f64) * (*g as f64))
                .sum::<f64>()
                .sqrt() as f32;
            if norm > max {
                max / (norm + 1e-6)
            } else {
                1.0
            }
        }
        None => 1.0,
    };

    for p in params.iter_mut() {
        let grad = p.grad.unwrap();
        let m = state.moments.entry(p.name.to_string()).or_insert_with(|| Moments {
            steps: 0,
            first: vec![0.0; grad.len()],
            second: vec![0.0; grad.len()],
        });
        m.steps += 1;
        let bc1 = 1.0 - h.beta1.powi(m.steps as i32);
        let bc2 = 1.0 - h.beta2.powi(m.steps as i32);
        for i in 0..grad.len() {
            let g = grad[i] * clip;
            m.first[i] = h.beta1 * m.first[i] + (1.0 - h.beta1) * g;
            m.second[i] = h.beta2 * m.second[i] + (1.0 - h.beta2) * g * g;
            let mhat = m.first[i] / bc1;
            let vhat = m.second[i] / bc2;
            let v = &mut p.value[i];
            *v -= h.learning_rate * h.weight_decay * *v;
            *v -= h.learning_rate * mhat / (vhat.sqrt() + h.eps);
        }
    }
    state.step_count += 1;
    Ok(())
}
