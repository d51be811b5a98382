mod common;

use common::oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xcnn_core::nn::suite::{layer_suite, MAX_ELEMENTS, TOLERANCE};
use xcnn_core::nn::{
    avgpool2_forward, conv2d_forward, conv_transpose2x2_forward, maxpool2_forward,
    softmax_cross_entropy_forward, ConvGeom,
};
use xcnn_core::{Fill, Tape, Tensor};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let seed = rng.random();
    Tensor::create(shape, Fill::Uniform { lo: -1.0, hi: 1.0, seed }).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn every_layer_matches_central_differences() {
    let cases = layer_suite(2024, 3).unwrap();
    assert!(cases.len() >= 20);
    for c in &cases {
        assert!(c.shape.iter().product::<usize>() <= MAX_ELEMENTS);
        assert!(
            c.report.passed && c.report.max_rel_error < TOLERANCE,
            "{} {:?}: {:?}",
            c.name,
            c.shape,
            c.report
        );
    }
}

#[test]
fn conv2d_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let (n, cin, cout) = (rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=4));
        let k = rng.random_range(1..=3);
        let (stride, pad) = (rng.random_range(1..=2), rng.random_range(0..=1));
        let (h, w) = (rng.random_range(k..=9), rng.random_range(k..=9));
        let x = random(&[n, cin, h, w], &mut rng);
        let wt = random(&[cout, cin, k, k], &mut rng);
        let b = random(&[cout], &mut rng);
        let got = conv2d_forward(&x, &wt, &b, ConvGeom { stride, pad }).unwrap();
        let (want, oh, ow) = oracle::conv2d(x.data(), (n, cin, h, w), wt.data(), (cout, k), b.data(), stride, pad);
        assert_eq!(got.shape(), &[n, cout, oh, ow]);
        assert!(max_abs_diff(got.data(), &want) < 1e-5);
    }
}

#[test]
fn conv2d_paper_sized_case() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[2, 3, 8, 8], &mut rng);
    let wt = random(&[4, 3, 3, 3], &mut rng);
    let b = random(&[4], &mut rng);
    let got = conv2d_forward(&x, &wt, &b, ConvGeom { stride: 1, pad: 1 }).unwrap();
    let (want, _, _) = oracle::conv2d(x.data(), (2, 3, 8, 8), wt.data(), (4, 3), b.data(), 1, 1);
    assert!(max_abs_diff(got.data(), &want) < 1e-5);
}

#[test]
fn transposed_conv_matches_interleave_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for i in 0..50 {
        let (n, cin, cout) = (rng.random_range(1..=2), rng.random_range(1..=4), rng.random_range(1..=3));
        let (h, w) = if i == 0 { (5, 5) } else { (rng.random_range(1..=6), rng.random_range(1..=6)) };
        let x = random(&[n, cin, h, w], &mut rng);
        let wt = random(&[cin, cout, 2, 2], &mut rng);
        let b = random(&[cout], &mut rng);
        let got = conv_transpose2x2_forward(&x, &wt, &b).unwrap();
        let want = oracle::conv_transpose2x2(x.data(), (n, cin, h, w), wt.data(), cout, b.data());
        assert_eq!(got.shape(), &[n, cout, 2 * h, 2 * w]);
        assert!(max_abs_diff(got.data(), &want) < 1e-5);
    }
}

#[test]
fn avgpool_then_quarter_deconv_restores_constant() {
    let x = Tensor::<f64>::create(&[1, 1, 6, 4], Fill::Constant(0.375)).unwrap();
    let pooled = avgpool2_forward(&x).unwrap();
    let w = Tensor::create(&[1, 1, 2, 2], Fill::Constant(0.25)).unwrap();
    let b = Tensor::zeros(&[1]).unwrap();
    let up = conv_transpose2x2_forward(&pooled, &w, &b).unwrap();
    // each output pixel is 0.375 / 4; four copies per window sum back to 0.375
    let restored: Vec<f64> = up.data().iter().map(|v| v * 4.0).collect();
    assert_eq!(up.shape(), x.shape());
    assert_eq!(restored, x.data());
}

#[test]
fn maxpool_matches_window_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let x = random(&[2, 3, 8, 8], &mut rng);
        let (got, arg) = maxpool2_forward(&x).unwrap();
        let (want, want_arg) = oracle::maxpool2(x.data(), (2, 3, 8, 8));
        assert_eq!(got.data(), want.as_slice());
        assert_eq!(arg, want_arg);
    }
}

#[test]
fn cross_entropy_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let (n, k) = (rng.random_range(1..=8), rng.random_range(2..=10));
        let z = random(&[n, k], &mut rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let (loss, _) = softmax_cross_entropy_forward(&z, &labels).unwrap();
        assert!((loss - oracle::cross_entropy(z.data(), k, &labels)).abs() < 1e-6);
    }
}

#[test]
fn matmul_sum_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random(&[3, 4], &mut rng);
    let b = random(&[4, 2], &mut rng);
    let report = xcnn_core::tensor::gradcheck::gradcheck(
        |t, v| {
            let c = t.constant(b.clone());
            let y = t.matmul(v, c)?;
            Ok(t.sum(y))
        },
        &a,
        1e-5,
        1e-6,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn backward_twice_doubles_layer_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random(&[2, 1, 4, 4], &mut rng);
    let w = random(&[2, 1, 3, 3], &mut rng);
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let wv = tape.input(w);
    let b = tape.constant(Tensor::zeros(&[2]).unwrap());
    let y = tape.conv2d(xv, wv, b, ConvGeom { stride: 1, pad: 1 }).unwrap();
    let y = tape.tanh(y);
    let loss = tape.sum(y);
    tape.backward(loss).unwrap();
    let once = tape.grad(wv).unwrap().to_vec();
    tape.backward(loss).unwrap();
    let twice = tape.grad(wv).unwrap();
    for (a, b) in once.iter().zip(twice) {
        assert_eq!(2.0 * a, *b);
    }
}
