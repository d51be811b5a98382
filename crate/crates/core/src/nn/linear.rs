use crate::error::{shape_err, Result};
use crate::tensor::{gemm, Element, MatRef, Op, Tape, Tensor, Var};

/// `y = x·w + b` with `x: [N, F]`, `w: [F, O]`, `b: [O]`.
pub fn linear_forward<T: Element>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || b.shape() != [ws[1]] {
        return Err(shape_err!(
            "linear: input {xs:?}, weight {ws:?}, bias {:?}",
            b.shape()
        ));
    }
    let (n, o) = (xs[0], ws[1]);
    let mut out: Vec<T> = (0..n).flat_map(|_| b.data().iter().copied()).collect();
    gemm(
        MatRef::new(x.data(), n, xs[1]),
        MatRef::new(w.data(), ws[0], o),
        T::one(),
        &mut out,
    );
    Tensor::from_vec(&[n, o], out)
}

pub(crate) struct LinearGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Vec<T>,
}

pub(crate) fn backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &[T],
    need_dx: bool,
    need_dw: bool,
) -> LinearGrads<T> {
    let (n, f, o) = (x.shape()[0], x.shape()[1], w.shape()[1]);
    let dym = MatRef::new(dy, n, o);
    let dx = need_dx.then(|| {
        let mut dx = vec![T::zero(); n * f];
        gemm(dym, MatRef::new(w.data(), f, o).t(), T::zero(), &mut dx);
        dx
    });
    let dw = need_dw.then(|| {
        let mut dw = vec![T::zero(); f * o];
        gemm(MatRef::new(x.data(), n, f).t(), dym, T::zero(), &mut dw);
        dw
    });
    let mut db = vec![T::zero(); o];
    for row in dy.chunks_exact(o) {
        db.iter_mut().zip(row).for_each(|(a, &g)| *a = *a + g);
    }
    LinearGrads { dx, dw, db }
}

impl<T: Element> Tape<T> {
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = linear_forward(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(out, Op::Linear { x, w, b }))
    }
}
