//! Central-difference verification of tape gradients (64-bit only).

use super::{Tape, Tensor, Var};
use crate::error::{Result, XcnnError};

/// Denominator floor for the relative error, so that near-zero gradients are
/// compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-3;

/// One-sided slopes that disagree by more than this (relative) mark a
/// non-differentiable point (ReLU at 0, max-pool ties).
pub const KINK_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// Index of the worst element, if any was checked.
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Elements excluded because `f` is not differentiable there.
    pub kinks: Vec<usize>,
    pub tol: f64,
    pub passed: bool,
}

fn eval<F>(f: &F, x: &Tensor<f64>) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::no_grad();
    let xv = tape.constant(x.clone());
    let y = f(&mut tape, xv)?;
    let out = tape.value(y);
    if out.len() != 1 {
        return Err(XcnnError::Contract(format!(
            "gradcheck needs a scalar function, got shape {:?}",
            out.shape()
        )));
    }
    let v = out.data()[0];
    if !v.is_finite() {
        return Err(XcnnError::Numerical(format!("function value {v} is not finite")));
    }
    Ok(v)
}

/// Compares the tape gradient of scalar `f` at `x` with central differences
/// of step `eps`. Passes iff the max relative error is below `tol`.
pub fn gradcheck<F>(f: F, x: &Tensor<f64>, eps: f64, tol: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let y = f(&mut tape, xv)?;
    tape.backward(y)?;
    let analytic = match tape.grad(xv) {
        Some(g) => g.to_vec(),
        None => vec![0.0; x.len()],
    };
    if let Some(i) = analytic.iter().position(|g| !g.is_finite()) {
        return Err(XcnnError::Numerical(format!(
            "analytic gradient element {i} is not finite"
        )));
    }

    let f0 = eval(&f, x)?;
    let mut probe = x.clone();
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        kinks: Vec::new(),
        tol,
        passed: false,
    };
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let fp = eval(&f, &probe)?;
        probe.data_mut()[i] = orig - eps;
        let fm = eval(&f, &probe)?;
        probe.data_mut()[i] = orig;

        let (right, left) = ((fp - f0) / eps, (f0 - fm) / eps);
        if (right - left).abs() > KINK_TOL * 1f64.max(right.abs()).max(left.abs()) {
            report.kinks.push(i);
            continue;
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        report.checked += 1;
        if report.worst_index.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = Some(i);
        }
    }
    report.passed = report.max_rel_error < tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Fill;

    fn random(n: usize, seed: u64) -> Tensor<f64> {
        Tensor::create(&[n], Fill::Uniform { lo: -2.0, hi: 2.0, seed }).unwrap()
    }

    #[test]
    fn tanh_sum_passes_tight() {
        let r = gradcheck(
            |t, x| {
                let y = t.tanh(x);
                Ok(t.sum(y))
            },
            &random(16, 5),
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.checked, 16);
    }

    #[test]
    fn linear_sum_is_exact() {
        let r = gradcheck(|t, x| Ok(t.sum(x)), &random(10, 1), 1e-5, 1e-6).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn relu_kink_excluded() {
        let x = Tensor::from_f64s(&[4], &[-1.0, 0.0, 0.5, 2.0]).unwrap();
        let r = gradcheck(
            |t, x| {
                let y = t.relu(x);
                Ok(t.sum(y))
            },
            &x,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert_eq!(r.kinks, vec![1]);
        assert_eq!(r.checked, 3);
        assert!(r.passed);
    }

    #[test]
    fn wrong_gradient_fails() {
        // x·stop_grad(x): the tape sees half of the true gradient 2x
        let x = random(6, 2);
        let r = gradcheck(
            |t, x| {
                let c = t.constant(Tensor::from_vec(t.shape(x), t.value(x).data().to_vec())?);
                let y = t.mul(x, c)?;
                Ok(t.sum(y))
            },
            &x,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!r.passed, "treating x as constant must be caught: {r:?}");
    }

    #[test]
    fn non_scalar_rejected() {
        assert!(gradcheck(|_, x| Ok(x), &random(3, 0), 1e-5, 1e-6).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        let x = Tensor::from_f64s(&[1], &[f64::INFINITY]).unwrap();
        assert!(matches!(
            gradcheck(|t, x| Ok(t.sum(x)), &x, 1e-5, 1e-6),
            Err(XcnnError::Numerical(_))
        ));
    }
}
