//! 2×2 stride-2 pooling. Odd trailing rows/columns are dropped (floor).

use crate::error::{shape_err, Result};
use crate::tensor::{Element, Op, Tape, Tensor, Var};

fn pooled_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() != 4 {
        return Err(shape_err!("pooling expects [N, C, H, W], got {shape:?}"));
    }
    let (h, w) = (shape[2], shape[3]);
    if h < 2 || w < 2 {
        return Err(shape_err!("pooling window 2x2 larger than input {h}x{w}"));
    }
    Ok((shape[0] * shape[1], h, w))
}

pub fn avgpool2_forward<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (planes, h, w) = pooled_dims(x.shape())?;
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            let (r0, r1) = (&src[2 * i * w..], &src[(2 * i + 1) * w..]);
            for j in 0..ow {
                let s = r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1];
                out.push(s * quarter);
            }
        }
    }
    let s = x.shape();
    Tensor::from_vec(&[s[0], s[1], oh, ow], out)
}

pub(crate) fn avgpool2_backward<T: Element>(in_shape: &[usize], dy: &[T]) -> Vec<T> {
    let (planes, h, w) = pooled_dims(in_shape).expect("validated in forward");
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        let g = &dy[p * oh * ow..(p + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                let v = g[i * ow + j] * quarter;
                for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    dst[(2 * i + a) * w + 2 * j + b] = v;
                }
            }
        }
    }
    dx
}

/// Max pooling; returns the output and, per output cell, the flat input
/// index that won. Ties go to the first index in row-major window order.
pub fn maxpool2_forward<T: Element>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (planes, h, w) = pooled_dims(x.shape())?;
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut argmax = Vec::with_capacity(planes * oh * ow);
    let data = x.data();
    for p in 0..planes {
        let base = p * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * w + 2 * j;
                for (a, b) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + a) * w + 2 * j + b;
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    let s = x.shape();
    Ok((Tensor::from_vec(&[s[0], s[1], oh, ow], out)?, argmax))
}

pub(crate) fn maxpool2_backward<T: Element>(in_len: usize, argmax: &[usize], dy: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); in_len];
    for (&i, &g) in argmax.iter().zip(dy) {
        dx[i] = dx[i] + g;
    }
    dx
}

impl<T: Element> Tape<T> {
    pub fn avgpool2(&mut self, x: Var) -> Result<Var> {
        let out = avgpool2_forward(self.value(x))?;
        Ok(self.push(out, Op::AvgPool2(x)))
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = maxpool2_forward(self.value(x))?;
        let argmax = if self.grad_enabled() { argmax } else { Vec::new() };
        Ok(self.push(out, Op::MaxPool2 { x, argmax }))
    }
}
