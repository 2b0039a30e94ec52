//! Adaptive-moment optimizer with decoupled weight decay and global
//! gradient-norm clipping.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::checkpoint::OptimizerState;
use crate::model::params::{Array, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global L2 clip on the gradient; 0 disables.
    pub grad_clip: f64,
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates every parameter selected by `trainable` that received a
    /// gradient.
    pub fn step(
        &mut self,
        params: &ParamStore,
        grads: &GradStore,
        trainable: impl Fn(&str) -> bool,
    ) -> Result<StepStats> {
        let mut active = Vec::new();
        let mut sq = 0.0f64;
        for (name, var) in params.iter() {
            if !trainable(name) {
                continue;
            }
            if let Some(g) = grads.get(var.as_tensor()) {
                sq += g
                    .sqr()?
                    .sum_all()?
                    .to_dtype(DType::F64)?
                    .to_scalar::<f64>()?;
                active.push((name, var, g));
            }
        }
        let grad_norm = sq.sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::InvalidInput(format!(
                "non-finite gradient norm {grad_norm}"
            )));
        }
        let c = self.config;
        let clipped = c.grad_clip > 0.0 && grad_norm > c.grad_clip;
        let g_scale = if clipped {
            c.grad_clip / grad_norm
        } else {
            1.0
        };

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (name, var, g) in active {
            let g = (g * g_scale)?;
            let m_prev = match self.first.get(name) {
                Some(m) => m.clone(),
                None => g.zeros_like()?,
            };
            let v_prev = match self.second.get(name) {
                Some(v) => v.clone(),
                None => g.zeros_like()?,
            };
            let m = ((m_prev * c.beta1)? + (&g * (1.0 - c.beta1))?)?;
            let v = ((v_prev * c.beta2)? + (g.sqr()? * (1.0 - c.beta2))?)?;
            let update = ((&m / bc1)? / ((&v / bc2)?.sqrt()? + c.eps)?)?;
            let p = var.as_tensor();
            let decayed = (p * (1.0 - c.learning_rate * c.weight_decay))?;
            var.set(&(decayed - (update * c.learning_rate)?)?)?;
            self.first.insert(name.to_string(), m);
            self.second.insert(name.to_string(), v);
        }
        Ok(StepStats { grad_norm, clipped })
    }

    pub fn state(&self) -> Result<OptimizerState> {
        let to_arrays = |m: &BTreeMap<String, Tensor>| -> Result<BTreeMap<String, Array>> {
            m.iter()
                .map(|(k, t)| Ok((k.clone(), Array::from_tensor(t)?)))
                .collect()
        };
        Ok(OptimizerState {
            step: self.step,
            settings: serde_json::to_value(self.config)?,
            first: to_arrays(&self.first)?,
            second: to_arrays(&self.second)?,
        })
    }

    pub fn from_state(state: &OptimizerState, dtype: DType) -> Result<Self> {
        let config: AdamWConfig = serde_json::from_value(state.settings.clone())?;
        let to_tensors = |m: &BTreeMap<String, Array>| -> Result<BTreeMap<String, Tensor>> {
            m.iter()
                .map(|(k, a)| Ok((k.clone(), a.to_tensor(dtype)?)))
                .collect()
        };
        Ok(Self {
            config,
            step: state.step,
            first: to_tensors(&state.first)?,
            second: to_tensors(&state.second)?,
        })
    }
}
