//! 2-D convolution (im2col + GEMM) and the 2×2 stride-2 transposed convolution
//! used by the heatmap decoder.

use crate::error::{shape_err, Result, XcnnError};
use crate::tensor::{gemm, Element, MatRef, Op, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

impl Default for ConvGeom {
    fn default() -> Self {
        ConvGeom { stride: 1, pad: 0 }
    }
}

/// Output spatial size of a convolution, or an error when the padded input
/// is smaller than the kernel.
pub fn conv_output_dim(input: usize, kernel: usize, geom: ConvGeom) -> Result<usize> {
    if geom.stride == 0 {
        return Err(shape_err!("stride must be >= 1"));
    }
    let padded = input + 2 * geom.pad;
    if padded < kernel {
        return Err(shape_err!(
            "padded input {padded} smaller than kernel {kernel}"
        ));
    }
    Ok((padded - kernel) / geom.stride + 1)
}

struct ConvDims {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

impl ConvDims {
    fn new(x: &[usize], w: &[usize], b: Option<&[usize]>, geom: ConvGeom) -> Result<Self> {
        if x.len() != 4 || w.len() != 4 {
            return Err(shape_err!("conv2d expects 4-D input and weight, got {x:?} and {w:?}"));
        }
        if x[1] != w[1] {
            return Err(shape_err!(
                "conv2d channel mismatch: input has {} channels, weight expects {}",
                x[1],
                w[1]
            ));
        }
        if let Some(b) = b {
            if b != [w[0]] {
                return Err(shape_err!("conv2d bias {b:?} for {} output channels", w[0]));
            }
        }
        let oh = conv_output_dim(x[2], w[2], geom)?;
        let ow = conv_output_dim(x[3], w[3], geom)?;
        Ok(ConvDims {
            n: x[0],
            cin: x[1],
            h: x[2],
            w: x[3],
            cout: w[0],
            kh: w[2],
            kw: w[3],
            oh,
            ow,
        })
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn is_pointwise(&self, geom: ConvGeom) -> bool {
        self.kh == 1 && self.kw == 1 && geom.stride == 1 && geom.pad == 0
    }
}

/// Unrolls one `[C, H, W]` sample into a `[C·kh·kw, oh·ow]` matrix.
fn im2col<T: Element>(x: &[T], d: &ConvDims, geom: ConvGeom, col: &mut [T]) {
    let ohw = d.oh * d.ow;
    for c in 0..d.cin {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = ((c * d.kh + ky) * d.kw + kx) * ohw;
                let dst = &mut col[row..row + ohw];
                for oy in 0..d.oh {
                    let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                    let line = &mut dst[oy * d.ow..(oy + 1) * d.ow];
                    if iy < 0 || iy >= d.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                        *v = if ix < 0 || ix >= d.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `dx`.
fn col2im<T: Element>(col: &[T], d: &ConvDims, geom: ConvGeom, dx: &mut [T]) {
    let ohw = d.oh * d.ow;
    for c in 0..d.cin {
        let plane = &mut dx[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = ((c * d.kh + ky) * d.kw + kx) * ohw;
                let src = &col[row..row + ohw];
                for oy in 0..d.oh {
                    let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for ox in 0..d.ow {
                        let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                        if ix >= 0 && ix < d.w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * d.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    geom: ConvGeom,
) -> Result<Tensor<T>> {
    let d = ConvDims::new(x.shape(), w.shape(), Some(b.shape()), geom)?;
    let (ohw, k) = (d.oh * d.ow, d.k());
    let in_stride = d.cin * d.h * d.w;
    let out_stride = d.cout * ohw;
    let mut out = vec![T::zero(); d.n * out_stride];
    let pointwise = d.is_pointwise(geom);
    let mut col = if pointwise { Vec::new() } else { vec![T::zero(); k * ohw] };
    let wm = MatRef::new(w.data(), d.cout, k);
    for n in 0..d.n {
        let xs = &x.data()[n * in_stride..(n + 1) * in_stride];
        let ys = &mut out[n * out_stride..(n + 1) * out_stride];
        for (o, plane) in ys.chunks_exact_mut(ohw).enumerate() {
            plane.fill(b.data()[o]);
        }
        let cols: &[T] = if pointwise {
            xs
        } else {
            im2col(xs, &d, geom, &mut col);
            &col
        };
        gemm(wm, MatRef::new(cols, k, ohw), T::one(), ys);
    }
    Tensor::from_vec(&[d.n, d.cout, d.oh, d.ow], out)
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Vec<T>,
}

pub(crate) fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    geom: ConvGeom,
    dy: &[T],
    need_dx: bool,
    need_dw: bool,
) -> ConvGrads<T> {
    let d = ConvDims::new(x.shape(), w.shape(), None, geom).expect("validated in forward");
    let (ohw, k) = (d.oh * d.ow, d.k());
    let in_stride = d.cin * d.h * d.w;
    let out_stride = d.cout * ohw;
    let pointwise = d.is_pointwise(geom);

    let mut db = vec![T::zero(); d.cout];
    let mut dw = need_dw.then(|| vec![T::zero(); w.len()]);
    let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
    let mut col = vec![T::zero(); k * ohw];
    let wm = MatRef::new(w.data(), d.cout, k);

    for n in 0..d.n {
        let dys = &dy[n * out_stride..(n + 1) * out_stride];
        for (o, plane) in dys.chunks_exact(ohw).enumerate() {
            db[o] = db[o] + plane.iter().copied().sum::<T>();
        }
        let dym = MatRef::new(dys, d.cout, ohw);
        let xs = &x.data()[n * in_stride..(n + 1) * in_stride];
        if let Some(dw) = dw.as_mut() {
            let cols: &[T] = if pointwise {
                xs
            } else {
                im2col(xs, &d, geom, &mut col);
                &col
            };
            gemm(dym, MatRef::new(cols, k, ohw).t(), T::one(), dw);
        }
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx[n * in_stride..(n + 1) * in_stride];
            if pointwise {
                gemm(wm.t(), dym, T::zero(), dxs);
            } else {
                gemm(wm.t(), dym, T::zero(), &mut col);
                col2im(&col, &d, geom, dxs);
            }
        }
    }
    ConvGrads { dx, dw, db }
}

fn transpose_dims(x: &[usize], w: &[usize]) -> Result<(usize, usize, usize, usize, usize)> {
    if x.len() != 4 || w.len() != 4 {
        return Err(shape_err!(
            "transposed conv expects 4-D input and weight, got {x:?} and {w:?}"
        ));
    }
    if w[2] != 2 || w[3] != 2 {
        return Err(XcnnError::Unsupported(format!(
            "transposed conv supports only 2x2 kernels with stride 2, got {}x{}",
            w[2], w[3]
        )));
    }
    if x[1] != w[0] {
        return Err(shape_err!(
            "transposed conv channel mismatch: input has {} channels, weight expects {}",
            x[1],
            w[0]
        ));
    }
    Ok((x[0], x[1], x[2], x[3], w[1]))
}

/// Transposed convolution with a 2×2 kernel and stride 2 (no overlap).
///
/// Weight layout is `[Cin, Cout, 2, 2]`; output is `[N, Cout, 2H, 2W]`.
pub fn conv_transpose2x2_forward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, cin, h, wd, cout) = transpose_dims(x.shape(), w.shape())?;
    if b.shape() != [cout] {
        return Err(shape_err!("transposed conv bias {:?} for {cout} outputs", b.shape()));
    }
    let hw = h * wd;
    let (oh, ow) = (2 * h, 2 * wd);
    let mut out = vec![T::zero(); n * cout * oh * ow];
    let mut tmp = vec![T::zero(); cout * 4 * hw];
    let wm = MatRef::new(w.data(), cin, cout * 4);
    for s in 0..n {
        let xs = &x.data()[s * cin * hw..(s + 1) * cin * hw];
        gemm(wm.t(), MatRef::new(xs, cin, hw), T::zero(), &mut tmp);
        let ys = &mut out[s * cout * oh * ow..(s + 1) * cout * oh * ow];
        for o in 0..cout {
            let bias = b.data()[o];
            let plane = &mut ys[o * oh * ow..(o + 1) * oh * ow];
            for a in 0..2 {
                for bb in 0..2 {
                    let src = &tmp[(o * 4 + a * 2 + bb) * hw..(o * 4 + a * 2 + bb + 1) * hw];
                    for i in 0..h {
                        for j in 0..wd {
                            plane[(2 * i + a) * ow + 2 * j + bb] = src[i * wd + j] + bias;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, cout, oh, ow], out)
}

pub(crate) fn conv_transpose2x2_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &[T],
    need_dx: bool,
    need_dw: bool,
) -> ConvGrads<T> {
    let (n, cin, h, wd, cout) = transpose_dims(x.shape(), w.shape()).expect("validated in forward");
    let hw = h * wd;
    let (oh, ow) = (2 * h, 2 * wd);
    let mut db = vec![T::zero(); cout];
    let mut dw = need_dw.then(|| vec![T::zero(); w.len()]);
    let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
    let mut g = vec![T::zero(); cout * 4 * hw];
    let wm = MatRef::new(w.data(), cin, cout * 4);
    for s in 0..n {
        let dys = &dy[s * cout * oh * ow..(s + 1) * cout * oh * ow];
        for o in 0..cout {
            let plane = &dys[o * oh * ow..(o + 1) * oh * ow];
            db[o] = db[o] + plane.iter().copied().sum::<T>();
            for a in 0..2 {
                for bb in 0..2 {
                    let dst = &mut g[(o * 4 + a * 2 + bb) * hw..(o * 4 + a * 2 + bb + 1) * hw];
                    for i in 0..h {
                        for j in 0..wd {
                            dst[i * wd + j] = plane[(2 * i + a) * ow + 2 * j + bb];
                        }
                    }
                }
            }
        }
        let gm = MatRef::new(&g, cout * 4, hw);
        let xs = &x.data()[s * cin * hw..(s + 1) * cin * hw];
        if let Some(dw) = dw.as_mut() {
            gemm(MatRef::new(xs, cin, hw), gm.t(), T::one(), dw);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(wm, gm, T::zero(), &mut dx[s * cin * hw..(s + 1) * cin * hw]);
        }
    }
    ConvGrads { dx, dw, db }
}

impl<T: Element> Tape<T> {
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Result<Var> {
        let out = conv2d_forward(self.value(x), self.value(w), self.value(b), geom)?;
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }))
    }

    /// Upsampling "deconvolution": `[N, Cin, H, W] -> [N, Cout, 2H, 2W]`.
    pub fn conv_transpose2x2(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = conv_transpose2x2_forward(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(out, Op::ConvTranspose2x2 { x, w, b }))
    }
}
