//! Per-channel batch normalization over `[N, C, H, W]`.

use crate::error::{contract_err, shape_err, Result};
use crate::tensor::{Element, Op, Tape, Tensor, Var};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// What backward needs. In eval mode the statistics are constants, so the
/// gradient with respect to the input is a plain per-channel scale.
#[derive(Debug)]
pub(crate) struct Saved<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    batch_stats: bool,
}

/// Batch statistics observed in one training forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased (n − 1) variance, as folded into running statistics.
    pub var: Vec<T>,
}

fn dims(x: &[usize], gamma: &[usize], beta: &[usize]) -> Result<(usize, usize, usize)> {
    if x.len() != 4 {
        return Err(shape_err!("batchnorm expects [N, C, H, W], got {x:?}"));
    }
    if gamma != [x[1]] || beta != [x[1]] {
        return Err(shape_err!(
            "batchnorm affine params {gamma:?}/{beta:?} for {} channels",
            x[1]
        ));
    }
    Ok((x[0], x[1], x[2] * x[3]))
}

fn normalize<T: Element>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    inv_std: &[T],
    keep_xhat: bool,
) -> (Vec<T>, Vec<T>) {
    let s = x.shape();
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = if keep_xhat { vec![T::zero(); x.len()] } else { Vec::new() };
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                let h = (x.data()[i] - mean[ch]) * inv_std[ch];
                out[i] = gamma[ch] * h + beta[ch];
                if keep_xhat {
                    xhat[i] = h;
                }
            }
        }
    }
    (out, xhat)
}

impl<T: Element> Tape<T> {
    /// Training-mode batch norm: normalizes with the batch's own statistics.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats<T>)> {
        let xv = self.value(x);
        let (n, c, hw) = dims(xv.shape(), self.shape(gamma), self.shape(beta))?;
        if n < 2 {
            return Err(contract_err!("batchnorm in train mode needs a batch of at least 2"));
        }
        let m = n * hw;
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                mean[ch] += xv.data()[off..off + hw].iter().map(|v| v.as_f64()).sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m as f64);
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                var[ch] += xv.data()[off..off + hw]
                    .iter()
                    .map(|v| (v.as_f64() - mean[ch]).powi(2))
                    .sum::<f64>();
            }
        }
        let inv_std: Vec<T> = var
            .iter()
            .map(|v| T::from_f64(1.0 / (v / m as f64 + eps).sqrt()))
            .collect();
        let mean_t: Vec<T> = mean.iter().map(|&v| T::from_f64(v)).collect();
        let keep = self.grad_enabled();
        let (out, xhat) = normalize(
            xv,
            self.value(gamma).data(),
            self.value(beta).data(),
            &mean_t,
            &inv_std,
            keep,
        );
        let stats = BatchStats {
            mean: mean_t,
            var: var.iter().map(|v| T::from_f64(v / (m - 1) as f64)).collect(),
        };
        let out = Tensor::from_vec(xv.shape(), out)?;
        let var_out = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved: Saved {
                    xhat,
                    inv_std,
                    batch_stats: true,
                },
            },
        );
        Ok((var_out, stats))
    }

    /// Eval-mode batch norm with fixed running statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: f64,
    ) -> Result<Var> {
        let xv = self.value(x);
        let (_, c, _) = dims(xv.shape(), self.shape(gamma), self.shape(beta))?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(shape_err!("running statistics do not match {c} channels"));
        }
        let inv_std: Vec<T> = running_var
            .iter()
            .map(|v| T::from_f64(1.0 / (v.as_f64() + eps).sqrt()))
            .collect();
        let keep = self.grad_enabled();
        let (out, xhat) = normalize(
            xv,
            self.value(gamma).data(),
            self.value(beta).data(),
            running_mean,
            &inv_std,
            keep,
        );
        let out = Tensor::from_vec(xv.shape(), out)?;
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved: Saved {
                    xhat,
                    inv_std,
                    batch_stats: false,
                },
            },
        ))
    }
}

pub(crate) struct BnGrads<T> {
    pub dx: Vec<T>,
    pub dgamma: Vec<T>,
    pub dbeta: Vec<T>,
}

pub(crate) fn backward<T: Element>(
    shape: &[usize],
    gamma: &[T],
    saved: &Saved<T>,
    dy: &[T],
) -> BnGrads<T> {
    let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
    let m = T::from_f64((n * hw) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                dgamma[ch] = dgamma[ch] + dy[i] * saved.xhat[i];
                dbeta[ch] = dbeta[ch] + dy[i];
            }
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let scale = gamma[ch] * saved.inv_std[ch];
            for i in off..off + hw {
                dx[i] = if saved.batch_stats {
                    scale * (dy[i] - (dbeta[ch] + saved.xhat[i] * dgamma[ch]) / m)
                } else {
                    scale * dy[i]
                };
            }
        }
    }
    BnGrads { dx, dgamma, dbeta }
}

/// `running ← (1 − momentum)·running + momentum·batch`.
pub fn update_running<T: Element>(
    running_mean: &mut [T],
    running_var: &mut [T],
    stats: &BatchStats<T>,
    momentum: f64,
) {
    let m = T::from_f64(momentum);
    let keep = T::one() - m;
    for (r, &b) in running_mean.iter_mut().zip(&stats.mean) {
        *r = keep * *r + m * b;
    }
    for (r, &b) in running_var.iter_mut().zip(&stats.var) {
        *r = keep * *r + m * b;
    }
}

/// Standalone batch-norm layer state.
#[derive(Debug, Clone)]
pub struct BatchNormState<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
    pub mode: BnMode,
}

impl<T: Element> BatchNormState<T> {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(BatchNormState {
            gamma: Tensor::create(&[channels], crate::tensor::Fill::Constant(1.0))?,
            beta: Tensor::zeros(&[channels])?,
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
            mode: BnMode::Train,
        })
    }

    /// Applies the layer; in train mode the running statistics are updated.
    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let gamma = tape.input(self.gamma.clone());
        let beta = tape.input(self.beta.clone());
        match self.mode {
            BnMode::Train => {
                let (y, stats) = tape.batchnorm_train(x, gamma, beta, self.eps)?;
                update_running(&mut self.running_mean, &mut self.running_var, &stats, self.momentum);
                Ok(y)
            }
            BnMode::Eval => {
                tape.batchnorm_eval(x, gamma, beta, &self.running_mean, &self.running_var, self.eps)
            }
        }
    }
}
