//! Direct nested-loop reference implementations, independent of the
//! im2col/GEMM code paths they check.

#![allow(dead_code)]

/// `x[N,Cin,H,W]`, `w[Cout,Cin,K,K]`, `b[Cout]`; returns `(out, oh, ow)`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    (n, cin, h, w): (usize, usize, usize, usize),
    wt: &[f64],
    (cout, k): (usize, usize),
    b: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * cout * oh * ow];
    for bn in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xi = ((bn * cin + ci) * h + iy as usize) * w + ix as usize;
                                let wi = ((co * cin + ci) * k + ky) * k + kx;
                                acc += x[xi] * wt[wi];
                            }
                        }
                    }
                    out[((bn * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

/// 2×2 stride-2 transposed convolution as zero interleaving, padding by one
/// and a valid convolution with the spatially flipped, channel-swapped kernel.
/// `w` is `[Cin, Cout, 2, 2]`.
pub fn conv_transpose2x2(
    x: &[f64],
    (n, cin, h, w): (usize, usize, usize, usize),
    wt: &[f64],
    cout: usize,
    b: &[f64],
) -> Vec<f64> {
    let (uh, uw) = (2 * h + 1, 2 * w + 1);
    let mut up = vec![0.0; n * cin * uh * uw];
    for bn in 0..n {
        for c in 0..cin {
            for i in 0..h {
                for j in 0..w {
                    up[((bn * cin + c) * uh + 2 * i + 1) * uw + 2 * j + 1] =
                        x[((bn * cin + c) * h + i) * w + j];
                }
            }
        }
    }
    let mut flipped = vec![0.0; cout * cin * 4];
    for ci in 0..cin {
        for co in 0..cout {
            for a in 0..2 {
                for bb in 0..2 {
                    flipped[((co * cin + ci) * 2 + (1 - a)) * 2 + (1 - bb)] =
                        wt[((ci * cout + co) * 2 + a) * 2 + bb];
                }
            }
        }
    }
    conv2d(&up, (n, cin, uh, uw), &flipped, (cout, 2), b, 1, 0).0
}

/// Max over each 2×2 window by exhaustive scan, with the flat index of the
/// first maximum.
pub fn maxpool2(x: &[f64], (n, c, h, w): (usize, usize, usize, usize)) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::new();
    let mut arg = Vec::new();
    for p in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = (f64::NEG_INFINITY, 0);
                for dy in 0..2 {
                    for dx in 0..2 {
                        let i = (p * h + 2 * oy + dy) * w + 2 * ox + dx;
                        if x[i] > best.0 {
                            best = (x[i], i);
                        }
                    }
                }
                out.push(best.0);
                arg.push(best.1);
            }
        }
    }
    (out, arg)
}

/// Mean over rows of `−ln softmax(z)[y]`, straight from the definition.
pub fn cross_entropy(logits: &[f64], k: usize, labels: &[usize]) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    for (row, &y) in logits.chunks(k).zip(labels) {
        let denom: f64 = row.iter().map(|v| v.exp()).sum();
        total += -(row[y].exp() / denom).ln();
    }
    total / n as f64
}
