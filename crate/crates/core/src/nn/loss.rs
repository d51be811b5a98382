use crate::error::{contract_err, shape_err, Result};
use crate::tensor::{Element, Op, Tape, Tensor, Var};

/// Row-wise softmax of `[N, K]` logits, stabilized by max subtraction.
pub fn softmax_rows<T: Element>(logits: &[T], k: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        out.extend(row.iter().map(|&v| (v - max).exp()));
        let z: T = out[start..].iter().copied().sum();
        out[start..].iter_mut().for_each(|v| *v = *v / z);
    }
    out
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)` and the
/// probabilities it was computed from.
pub fn softmax_cross_entropy_forward<T: Element>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Vec<T>)> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(shape_err!(
            "cross entropy: logits {s:?} for {} labels",
            labels.len()
        ));
    }
    let k = s[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(contract_err!("label {bad} out of range for {k} classes"));
    }
    let mut total = T::zero();
    for (row, &y) in logits.data().chunks_exact(k).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        total = total + (lse - row[y]);
    }
    let probs = softmax_rows(logits.data(), k);
    Ok((total / T::from_f64(labels.len() as f64), probs))
}

pub(crate) fn softmax_cross_entropy_backward<T: Element>(
    probs: &[T],
    labels: &[usize],
    upstream: T,
) -> Vec<T> {
    let k = probs.len() / labels.len();
    let scale = upstream / T::from_f64(labels.len() as f64);
    let mut g: Vec<T> = probs.iter().map(|&p| p * scale).collect();
    for (i, &y) in labels.iter().enumerate() {
        g[i * k + y] = g[i * k + y] - scale;
    }
    g
}

impl<T: Element> Tape<T> {
    /// Scalar classification loss: mean over the batch of −log softmax(logits)[label].
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = softmax_cross_entropy_forward(self.value(logits), labels)?;
        let probs = if self.grad_enabled() { probs } else { Vec::new() };
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }
}
