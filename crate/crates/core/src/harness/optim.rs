//! AdamW with warmup-cosine schedule and global-norm clipping.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use candle_core::backprop::GradStore;
use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::{scalar, ParamStore};

use super::config::OptimizerConfig;

/// Learning rate at 1-based `step` of `max_steps`.
pub fn learning_rate(cfg: &OptimizerConfig, step: usize, max_steps: usize) -> f64 {
    let base = cfg.learning_rate;
    if cfg.warmup_steps > 0 && step <= cfg.warmup_steps {
        return base * step as f64 / cfg.warmup_steps as f64;
    }
    let span = max_steps.saturating_sub(cfg.warmup_steps).max(1) as f64;
    let progress = ((step.saturating_sub(cfg.warmup_steps)) as f64 / span).min(1.0);
    let floor = base * cfg.min_lr_ratio;
    floor + (base - floor) * 0.5 * (1.0 + (PI * progress).cos())
}

pub struct AdamW {
    config: OptimizerConfig,
    step: usize,
    m: HashMap<String, Tensor>,
    v: HashMap<String, Tensor>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub learning_rate: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

impl AdamW {
    pub fn new(config: &OptimizerConfig) -> Self {
        Self {
            config: config.clone(),
            step: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Global L2 norm of the gradients of every variable in `store`.
    pub fn grad_norm(store: &ParamStore, grads: &GradStore) -> Result<f64> {
        let mut sq = 0.0;
        for (_, var) in store.iter() {
            if let Some(g) = grads.get(var.as_tensor()) {
                sq += scalar(&g.sqr()?.sum_all()?)?;
            }
        }
        Ok(sq.sqrt())
    }

    pub fn step(&mut self, store: &ParamStore, grads: &GradStore, max_steps: usize) -> Result<UpdateStats> {
        let norm = Self::grad_norm(store, grads)?;
        if !norm.is_finite() {
            return Err(Error::NonFinite("gradient norm".into()));
        }
        let clip = if self.config.clip_norm > 0.0 && norm > self.config.clip_norm {
            self.config.clip_norm / norm
        } else {
            1.0
        };
        self.step += 1;
        let t = self.step as i32;
        let lr = learning_rate(&self.config, self.step, max_steps);
        let (b1, b2) = (self.config.beta1, self.config.beta2);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for (name, var) in store.iter() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let g = (g.detach() * clip)?;
            let m = match self.m.get(name) {
                Some(m) => ((m * b1)? + (&g * (1.0 - b1))?)?,
                None => (&g * (1.0 - b1))?,
            };
            let v = match self.v.get(name) {
                Some(v) => ((v * b2)? + (g.sqr()? * (1.0 - b2))?)?,
                None => (g.sqr()? * (1.0 - b2))?,
            };
            let denom = ((&v / bc2)?.sqrt()? + self.config.eps)?;
            let update = ((&m / bc1)? / denom)?;
            let w = var.as_tensor();
            let mut next = (w - (update * lr)?)?;
            // decoupled decay on matrices only; biases, norms and tables are left alone
            if self.config.weight_decay > 0.0 && w.rank() >= 2 && !name.contains("norm") {
                next = (next - (w * (lr * self.config.weight_decay))?)?;
            }
            var.set(&next.detach())?;
            self.m.insert(name.clone(), m.detach());
            self.v.insert(name.clone(), v.detach());
        }
        Ok(UpdateStats {
            learning_rate: lr,
            grad_norm: norm,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut all: HashMap<String, Tensor> = HashMap::new();
        for (k, t) in &self.m {
            all.insert(format!("m.{k}"), t.clone());
        }
        for (k, t) in &self.v {
            all.insert(format!("v.{k}"), t.clone());
        }
        if all.is_empty() {
            // safetensors files need at least one tensor
            all.insert("empty".into(), Tensor::zeros(1, candle_core::DType::F32, &candle_core::Device::Cpu)?);
        }
        candle_core::safetensors::save(&all, path.as_ref())?;
        Ok(())
    }

    pub fn load(config: &OptimizerConfig, path: impl AsRef<Path>, step: usize) -> Result<Self> {
        let all = candle_core::safetensors::load(path.as_ref(), &candle_core::Device::Cpu)?;
        let mut opt = Self::new(config);
        opt.step = step;
        for (k, t) in all {
            if let Some(name) = k.strip_prefix("m.") {
                opt.m.insert(name.to_string(), t);
            } else if let Some(name) = k.strip_prefix("v.") {
                opt.v.insert(name.to_string(), t);
            }
        }
        Ok(opt)
    }
}
