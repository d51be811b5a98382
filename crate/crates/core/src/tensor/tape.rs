use super::{gemm, Element, MatRef, Tensor};
use crate::error::{contract_err, shape_err, Result};
use crate::nn::{batchnorm, conv, loss, pool};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Index of a trainable tensor inside a parameter store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// A recorded primitive. Saved buffers are whatever the backward rule needs.
#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Tanh(Var),
    Sum(Var),
    MatMul(Var, Var),
    Reshape(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: conv::ConvGeom,
    },
    ConvTranspose2x2 {
        x: Var,
        w: Var,
        b: Var,
    },
    AvgPool2(Var),
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: batchnorm::Saved<T>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param(_) => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Relu(a) | Op::Tanh(a) | Op::Sum(a) | Op::Reshape(a) | Op::AvgPool2(a) => vec![*a],
            Op::MaxPool2 { x, .. } => vec![*x],
            Op::Linear { x, w, b }
            | Op::Conv2d { x, w, b, .. }
            | Op::ConvTranspose2x2 { x, w, b } => vec![*x, *w, *b],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Per-step record of the forward computation.
///
/// A tape built with [`Tape::no_grad`] only computes values: nothing is saved
/// for a backward pass and [`Tape::backward`] is rejected. Build a fresh tape
/// (or [`clear`](Tape::clear) one) for every training step.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    pub fn no_grad() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    /// Records a constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    /// Records an input whose gradient is wanted after [`backward`](Tape::backward).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        let rg = self.grad_enabled;
        self.push_raw(value, Op::Leaf, rg)
    }

    /// Records a trainable parameter. Its gradient can be collected with
    /// [`take_param_grads`](Tape::take_param_grads).
    pub fn param(&mut self, id: ParamId, value: &Tensor<T>) -> Var {
        let mut v = value.clone();
        v.zero_grad();
        let rg = self.grad_enabled;
        self.push_raw(v, Op::Param(id), rg)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf or parameter node.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records the output of a primitive. When no input needs a gradient the
    /// saved buffers are dropped and the node becomes a plain value.
    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let rg = self.grad_enabled && op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        let op = if rg { op } else { Op::Leaf };
        self.push_raw(value, op, rg)
    }

    pub(crate) fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err!(
                "{what}: {:?} vs {:?} (no broadcasting)",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::from_vec(x.shape(), data).expect("shape already validated")
    }

    fn map(&self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let x = self.value(a);
        let data = x.data().iter().map(|&p| f(p)).collect();
        Tensor::from_vec(x.shape(), data).expect("shape already validated")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip_with(a, b, |p, q| p + q);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.zip_with(a, b, |p, q| p - q);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip_with(a, b, |p, q| p * q);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.map(a, |p| if p > T::zero() { p } else { T::zero() });
        self.push(out, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.map(a, |p| p.tanh());
        self.push(out, Op::Tanh(a))
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err!("matmul: {sa:?} x {sb:?}"));
        }
        let mut out = vec![T::zero(); sa[0] * sb[1]];
        gemm(
            MatRef::new(self.value(a).data(), sa[0], sa[1]),
            MatRef::new(self.value(b).data(), sb[0], sb[1]),
            T::zero(),
            &mut out,
        );
        let out = Tensor::from_vec(&[sa[0], sb[1]], out)?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn reshape(&mut self, a: Var, new_shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(new_shape)?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Collapses every axis after the first: `[N, ...] -> [N, F]`.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        let n = s[0];
        let f = s[1..].iter().product::<usize>().max(1);
        self.reshape(a, &[n, f])
    }

    /// Backpropagates from a scalar `loss`.
    ///
    /// Gradients accumulate into leaf and parameter nodes: calling this twice
    /// without clearing the tape doubles them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.grad_enabled {
            return Err(contract_err!("backward on a no-grad tape"));
        }
        if self.value(loss).len() != 1 {
            return Err(contract_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            ));
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaf_grads = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf | Op::Param(_)) {
                leaf_grads.push((i, g));
                continue;
            }
            let contribs = self.backward_op(&node.op, &node.value, g)?;
            for (var, cg) in contribs {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.iter_mut().zip(&cg).for_each(|(a, &b)| *a = *a + b),
                    slot @ None => *slot = Some(cg),
                }
            }
        }
        for (i, g) in leaf_grads {
            self.nodes[i].value.accumulate_grad(&g);
        }
        Ok(())
    }

    /// Drains the gradients accumulated on parameter nodes.
    ///
    /// A parameter recorded more than once yields one entry per use.
    pub fn take_param_grads(&mut self) -> Vec<(ParamId, Vec<T>)> {
        let mut out = Vec::new();
        for node in &mut self.nodes {
            if let Op::Param(id) = node.op {
                if let Some(g) = node.value.take_grad() {
                    out.push((id, g));
                }
            }
        }
        out
    }

    fn backward_op(
        &self,
        op: &Op<T>,
        out: &Tensor<T>,
        g: Vec<T>,
    ) -> Result<Vec<(Var, Vec<T>)>> {
        let val = |v: Var| self.value(v);
        let need = |v: Var| self.requires_grad(v);
        Ok(match op {
            Op::Leaf | Op::Param(_) => vec![],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g)],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.into_iter().map(|v| -v).collect())],
            Op::Mul(a, b) => {
                let ga = g.iter().zip(val(*b).data()).map(|(&g, &y)| g * y).collect();
                let gb = g.iter().zip(val(*a).data()).map(|(&g, &x)| g * x).collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::Relu(a) => {
                let ga = g
                    .iter()
                    .zip(val(*a).data())
                    .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                vec![(*a, ga)]
            }
            Op::Tanh(a) => {
                let ga = g
                    .iter()
                    .zip(out.data())
                    .map(|(&g, &y)| g * (T::one() - y * y))
                    .collect();
                vec![(*a, ga)]
            }
            Op::Sum(a) => vec![(*a, vec![g[0]; val(*a).len()])],
            Op::Reshape(a) => vec![(*a, g)],
            Op::MatMul(a, b) => {
                let (sa, sb) = (val(*a).shape(), val(*b).shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let dc = MatRef::new(&g, m, n);
                let mut res = Vec::new();
                if need(*a) {
                    let mut ga = vec![T::zero(); m * k];
                    gemm(dc, MatRef::new(val(*b).data(), k, n).t(), T::zero(), &mut ga);
                    res.push((*a, ga));
                }
                if need(*b) {
                    let mut gb = vec![T::zero(); k * n];
                    gemm(MatRef::new(val(*a).data(), m, k).t(), dc, T::zero(), &mut gb);
                    res.push((*b, gb));
                }
                res
            }
            Op::Linear { x, w, b } => {
                let grads = crate::nn::linear::backward(val(*x), val(*w), &g, need(*x), need(*w));
                let mut res = Vec::new();
                if let Some(gx) = grads.dx {
                    res.push((*x, gx));
                }
                if let Some(gw) = grads.dw {
                    res.push((*w, gw));
                }
                res.push((*b, grads.db));
                res
            }
            Op::Conv2d { x, w, b, geom } => {
                let grads = conv::conv2d_backward(val(*x), val(*w), *geom, &g, need(*x), need(*w));
                collect3((*x, grads.dx), (*w, grads.dw), (*b, Some(grads.db)))
            }
            Op::ConvTranspose2x2 { x, w, b } => {
                let grads = conv::conv_transpose2x2_backward(val(*x), val(*w), &g, need(*x), need(*w));
                collect3((*x, grads.dx), (*w, grads.dw), (*b, Some(grads.db)))
            }
            Op::AvgPool2(x) => vec![(*x, pool::avgpool2_backward(val(*x).shape(), &g))],
            Op::MaxPool2 { x, argmax } => {
                vec![(*x, pool::maxpool2_backward(val(*x).len(), argmax, &g))]
            }
            Op::BatchNorm { x, gamma, beta, saved } => {
                let grads = batchnorm::backward(val(*x).shape(), val(*gamma).data(), saved, &g);
                vec![(*x, grads.dx), (*gamma, grads.dgamma), (*beta, grads.dbeta)]
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => vec![(*logits, loss::softmax_cross_entropy_backward(probs, labels, g[0]))],
        })
    }
}

fn collect3<T>(
    a: (Var, Option<Vec<T>>),
    b: (Var, Option<Vec<T>>),
    c: (Var, Option<Vec<T>>),
) -> Vec<(Var, Vec<T>)> {
    [a, b, c]
        .into_iter()
        .filter_map(|(v, g)| g.map(|g| (v, g)))
        .collect()
}
