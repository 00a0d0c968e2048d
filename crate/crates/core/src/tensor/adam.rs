use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamConfig {
    pub fn with_lr(lr: f32) -> Self {
        AdamConfig { lr, ..Default::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam moments for one [`ParamSet`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    names: Vec<String>,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Result<Self> {
        if !(config.lr > 0.0) || !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) {
            return Err(Error::Invalid(format!("bad Adam hyper-parameters {config:?}")));
        }
        Ok(AdamState {
            config,
            step: 0,
            names: params.names().map(str::to_string).collect(),
            m: params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
            v: params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every parameter from its stored gradient; gradients
    /// are cleared afterwards.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if params.len() != self.names.len() {
            return Err(Error::Invalid(format!(
                "optimizer tracks {} tensors, parameter set has {}",
                self.names.len(),
                params.len()
            )));
        }
        for (name, t) in params.iter() {
            if t.grad().is_none() {
                return Err(Error::MissingGrad(name.to_string()));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - (beta1 as f64).powi(self.step as i32);
        let bc2 = 1.0 - (beta2 as f64).powi(self.step as i32);
        let step_size = (lr as f64 / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        for (i, (name, t)) in params.iter_mut().enumerate() {
            if name != self.names[i] {
                return Err(Error::UnknownParam(name.to_string()));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            if m.len() != t.numel() {
                return Err(Error::shape("adam_step", format!("moment size {} for `{name}` of {} values", m.len(), t.numel())));
            }
            let grad = t.grad.take().expect("checked above");
            for (((p, g), mi), vi) in t.data.iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                *p -= step_size * *mi / (vi.sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(())
    }
}
