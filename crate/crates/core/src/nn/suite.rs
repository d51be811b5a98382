//! Gradient check of every differentiable primitive on random small shapes.
//!
//! Each case differentiates `sum(layer(..) * r)` for a fixed random `r`, so
//! layers whose plain sum has a trivial gradient (batch norm, softmax) are
//! still exercised.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ConvGeom;
use crate::error::Result;
use crate::tensor::gradcheck::{gradcheck, GradcheckReport};
use crate::tensor::{Fill, Tape, Tensor, Var};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Upper bound on the element count of any checked tensor.
pub const MAX_ELEMENTS: usize = 64;

#[derive(Debug, Clone)]
pub struct SuiteCase {
    /// Layer and differentiated argument, e.g. `conv2d/weight`.
    pub name: String,
    pub shape: Vec<usize>,
    pub report: GradcheckReport,
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let seed = rng.random();
    Tensor::create(shape, Fill::Uniform { lo: -1.0, hi: 1.0, seed }).unwrap()
}

fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let r = Tensor::create(tape.shape(y), Fill::Gaussian { mean: 0.0, std: 1.0, seed })?;
    let r = tape.constant(r);
    let p = tape.mul(y, r)?;
    Ok(tape.sum(p))
}

struct Runner {
    rng: ChaCha8Rng,
    cases: Vec<SuiteCase>,
}

impl Runner {
    fn check<F>(&mut self, name: &str, x: Tensor<f64>, layer: F) -> Result<()>
    where
        F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
    {
        assert!(x.len() <= MAX_ELEMENTS, "{name}: {} elements", x.len());
        let seed = self.rng.random();
        let report = gradcheck(
            |t, v| {
                let y = layer(t, v)?;
                project(t, y, seed)
            },
            &x,
            STEP,
            TOLERANCE,
        )?;
        self.cases.push(SuiteCase {
            name: name.to_string(),
            shape: x.shape().to_vec(),
            report,
        });
        Ok(())
    }

    fn dim(&mut self, lo: usize, hi: usize) -> usize {
        self.rng.random_range(lo..=hi)
    }
}

/// Runs `rounds` random shapes per primitive and argument.
pub fn layer_suite(seed: u64, rounds: usize) -> Result<Vec<SuiteCase>> {
    let mut r = Runner {
        rng: ChaCha8Rng::seed_from_u64(seed),
        cases: Vec::new(),
    };
    for _ in 0..rounds {
        elementwise(&mut r)?;
        dense(&mut r)?;
        conv(&mut r)?;
        pooling(&mut r)?;
        normalization(&mut r)?;
        loss(&mut r)?;
    }
    Ok(r.cases)
}

fn elementwise(r: &mut Runner) -> Result<()> {
    let shape = [r.dim(1, 4), r.dim(1, 8)];
    let other = random(&shape, &mut r.rng);
    let x = random(&shape, &mut r.rng);
    for (name, op) in [("add", 0), ("sub", 1), ("mul", 2)] {
        let o = other.clone();
        r.check(name, x.clone(), move |t, v| {
            let c = t.constant(o.clone());
            match op {
                0 => t.add(v, c),
                1 => t.sub(c, v),
                _ => t.mul(v, c),
            }
        })?;
    }
    r.check("relu", x.clone(), |t, v| Ok(t.relu(v)))?;
    r.check("tanh", x.clone(), |t, v| Ok(t.tanh(v)))?;
    let flat = [shape[0] * shape[1]];
    r.check("reshape", x, move |t, v| t.reshape(v, &flat))
}

fn dense(r: &mut Runner) -> Result<()> {
    let (m, k, n) = (r.dim(1, 4), r.dim(1, 6), r.dim(1, 5));
    let a = random(&[m, k], &mut r.rng);
    let b = random(&[k, n], &mut r.rng);
    let bias = random(&[n], &mut r.rng);
    {
        let b = b.clone();
        r.check("matmul/lhs", a.clone(), move |t, v| {
            let c = t.constant(b.clone());
            t.matmul(v, c)
        })?;
    }
    {
        let a = a.clone();
        r.check("matmul/rhs", b.clone(), move |t, v| {
            let c = t.constant(a.clone());
            t.matmul(c, v)
        })?;
    }
    let (aa, bb, cc) = (a.clone(), b.clone(), bias.clone());
    r.check("linear/input", a.clone(), move |t, v| {
        let (w, b) = (t.constant(bb.clone()), t.constant(cc.clone()));
        t.linear(v, w, b)
    })?;
    let (bb, cc) = (b.clone(), bias.clone());
    let a2 = aa.clone();
    r.check("linear/weight", bb, move |t, v| {
        let (x, b) = (t.constant(a2.clone()), t.constant(cc.clone()));
        t.linear(x, v, b)
    })?;
    r.check("linear/bias", bias, move |t, v| {
        let (x, w) = (t.constant(aa.clone()), t.constant(b.clone()));
        t.linear(x, w, v)
    })
}

fn conv(r: &mut Runner) -> Result<()> {
    let (n, cin, cout) = (r.dim(1, 2), r.dim(1, 2), r.dim(1, 3));
    let k = [1, 2, 3][r.dim(0, 2)];
    let geom = ConvGeom {
        stride: r.dim(1, 2),
        pad: r.dim(0, 1),
    };
    let h = r.dim(k.max(2), 4);
    let wd = r.dim(k.max(2), 4);
    let x = random(&[n, cin, h, wd], &mut r.rng);
    let w = random(&[cout, cin, k, k], &mut r.rng);
    let b = random(&[cout], &mut r.rng);
    conv_triplet(r, "conv2d", x, w, b, move |t, x, w, b| t.conv2d(x, w, b, geom))?;

    let (n, cin, cout) = (r.dim(1, 2), r.dim(1, 3), r.dim(1, 2));
    let (h, wd) = (r.dim(1, 3), r.dim(1, 3));
    let x = random(&[n, cin, h, wd], &mut r.rng);
    let w = random(&[cin, cout, 2, 2], &mut r.rng);
    let b = random(&[cout], &mut r.rng);
    conv_triplet(r, "conv_transpose2x2", x, w, b, |t, x, w, b| t.conv_transpose2x2(x, w, b))
}

fn conv_triplet<F>(
    r: &mut Runner,
    name: &str,
    x: Tensor<f64>,
    w: Tensor<f64>,
    b: Tensor<f64>,
    op: F,
) -> Result<()>
where
    F: Fn(&mut Tape<f64>, Var, Var, Var) -> Result<Var> + Copy,
{
    let (w1, b1) = (w.clone(), b.clone());
    r.check(&format!("{name}/input"), x.clone(), move |t, v| {
        let (w, b) = (t.constant(w1.clone()), t.constant(b1.clone()));
        op(t, v, w, b)
    })?;
    let (x1, b1) = (x.clone(), b.clone());
    r.check(&format!("{name}/weight"), w.clone(), move |t, v| {
        let (x, b) = (t.constant(x1.clone()), t.constant(b1.clone()));
        op(t, x, v, b)
    })?;
    r.check(&format!("{name}/bias"), b, move |t, v| {
        let (x, w) = (t.constant(x.clone()), t.constant(w.clone()));
        op(t, x, w, v)
    })
}

fn pooling(r: &mut Runner) -> Result<()> {
    let shape = [r.dim(1, 2), r.dim(1, 2), 2 * r.dim(1, 2), 2 * r.dim(1, 2)];
    let x = random(&shape, &mut r.rng);
    r.check("avgpool2", x.clone(), |t, v| t.avgpool2(v))?;
    r.check("maxpool2", x, |t, v| t.maxpool2(v))
}

fn normalization(r: &mut Runner) -> Result<()> {
    let c = r.dim(1, 2);
    let shape = [r.dim(2, 3), c, r.dim(1, 3), r.dim(1, 3)];
    let x = random(&shape, &mut r.rng);
    let gamma = random(&[c], &mut r.rng);
    let beta = random(&[c], &mut r.rng);
    let eps = super::batchnorm::DEFAULT_EPS;
    let (g, b) = (gamma.clone(), beta.clone());
    r.check("batchnorm_train/input", x.clone(), move |t, v| {
        let (g, b) = (t.constant(g.clone()), t.constant(b.clone()));
        Ok(t.batchnorm_train(v, g, b, eps)?.0)
    })?;
    let (x1, b) = (x.clone(), beta.clone());
    r.check("batchnorm_train/gamma", gamma.clone(), move |t, v| {
        let (x, b) = (t.constant(x1.clone()), t.constant(b.clone()));
        Ok(t.batchnorm_train(x, v, b, eps)?.0)
    })?;
    let (x1, g) = (x.clone(), gamma.clone());
    r.check("batchnorm_train/beta", beta.clone(), move |t, v| {
        let (x, g) = (t.constant(x1.clone()), t.constant(g.clone()));
        Ok(t.batchnorm_train(x, g, v, eps)?.0)
    })?;
    let mean: Vec<f64> = (0..c).map(|i| 0.1 * i as f64).collect();
    let var: Vec<f64> = (0..c).map(|i| 0.5 + i as f64).collect();
    r.check("batchnorm_eval/input", x, move |t, v| {
        let (g, b) = (t.constant(gamma.clone()), t.constant(beta.clone()));
        t.batchnorm_eval(v, g, b, &mean, &var, eps)
    })
}

fn loss(r: &mut Runner) -> Result<()> {
    let (n, k) = (r.dim(1, 6), r.dim(2, 10));
    let labels: Vec<usize> = (0..n).map(|_| r.rng.random_range(0..k)).collect();
    let mut scaled = random(&[n, k], &mut r.rng);
    scaled.data_mut().iter_mut().for_each(|v| *v *= 3.0);
    r.check("softmax_cross_entropy", scaled, move |t, v| t.softmax_cross_entropy(v, &labels))
}
