use crate::error::{contract_err, Result, XcnnError};
use crate::model::ParamStore;
use crate::tensor::Element;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(contract_err!("learning rate {} must be finite and >= 0", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(contract_err!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(contract_err!("weight decay {} must be >= 0", self.weight_decay));
        }
        Ok(())
    }
}

/// SGD with heavy-ball momentum and L2 weight decay.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub config: OptimConfig,
    /// One buffer per parameter slot; empty for non-trainable buffers.
    velocity: Vec<Vec<T>>,
}

impl<T: Element> Sgd<T> {
    pub fn new(config: OptimConfig, params: &ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let velocity = params
            .entries()
            .iter()
            .map(|e| if e.trainable { vec![T::zero(); e.tensor.len()] } else { Vec::new() })
            .collect();
        Ok(Sgd { config, velocity })
    }

    pub fn velocity(&self, slot: usize) -> &[T] {
        &self.velocity[slot]
    }

    pub fn velocity_mut(&mut self, slot: usize) -> &mut [T] {
        &mut self.velocity[slot]
    }

    /// `v ← m·v + g + wd·p; p ← p − lr·v`, then clears the gradients.
    ///
    /// A missing gradient counts as zero. Any non-finite gradient aborts the
    /// step before a single parameter is touched.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if self.velocity.len() != params.len() {
            return Err(contract_err!(
                "optimizer tracks {} slots, model has {}",
                self.velocity.len(),
                params.len()
            ));
        }
        for e in params.entries() {
            if let Some(g) = e.tensor.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    let norm = g.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
                    return Err(XcnnError::Numerical(format!(
                        "non-finite gradient in {} (norm {norm})",
                        e.name
                    )));
                }
            }
        }
        let (lr, m, wd) = (
            T::from_f64(self.config.lr),
            T::from_f64(self.config.momentum),
            T::from_f64(self.config.weight_decay),
        );
        for (e, v) in params.entries_mut().iter_mut().zip(&mut self.velocity) {
            if !e.trainable {
                continue;
            }
            let grad = e.tensor.take_grad();
            let data = e.tensor.data_mut();
            for i in 0..data.len() {
                let g = grad.as_ref().map_or(T::zero(), |g| g[i]);
                v[i] = m * v[i] + g + wd * data[i];
                data[i] = data[i] - lr * v[i];
            }
        }
        params.zero_grads();
        Ok(())
    }
}

/// Step decay: `base · gamma^(number of milestones ≤ epoch)`.
pub fn lr_schedule(base: f64, epoch: usize, milestones: &[usize], gamma: f64) -> f64 {
    let passed = milestones.iter().filter(|&&m| epoch >= m).count();
    base * gamma.powi(passed as i32)
}
