use proptest::prelude::*;
use xcnn_core::model::{
    build_baseline, build_discriminator, build_generator, build_modified_xcnn, build_xcnn,
    DiscriminatorConfig, DiscriminatorKind, GeneratorConfig, Model, DISCRIMINATOR, GENERATOR,
};
use xcnn_core::{Fill, Tape, Tensor};

fn images(shape: &[usize], seed: u64) -> Tensor<f32> {
    Tensor::create(shape, Fill::Uniform { lo: -1.0, hi: 1.0, seed }).unwrap()
}

fn mnist_xcnn(seed: u64) -> Model<f32> {
    Model::new(build_xcnn(GeneratorConfig::MNIST, DiscriminatorConfig::mnist()).unwrap(), seed).unwrap()
}

#[test]
fn xcnn_forward_shapes() {
    let m = mnist_xcnn(1);
    let out = m.infer(&images(&[8, 1, 28, 28], 2)).unwrap();
    assert_eq!(out.output.shape(), &[8, 10]);
    assert_eq!(out.heatmap.unwrap().shape(), &[8, 1, 28, 28]);
}

#[test]
fn parameter_shapes_follow_declared_layouts() {
    let m = mnist_xcnn(0);
    let p = m.params();
    let shape = |n: &str| p.get(p.find(n).unwrap()).shape().to_vec();
    assert_eq!(shape("generator.0.weight"), [32, 1, 3, 3]);
    assert_eq!(shape("generator.3.weight"), [32, 1, 2, 2]);
    assert_eq!(shape("discriminator.10.weight"), [576, 10]);
    assert_eq!(m.num_parameters(), m.spec().num_parameters());
}

#[test]
fn zero_generator_gives_zero_heatmap() {
    let mut m = mnist_xcnn(3);
    for e in m.params_mut().entries_mut() {
        if e.name.starts_with(GENERATOR) {
            e.tensor.data_mut().fill(0.0);
        }
    }
    let h = m.infer(&images(&[2, 1, 28, 28], 4)).unwrap().heatmap.unwrap();
    assert!(h.data().iter().all(|&v| v == 0.0));
}

#[test]
fn odd_spatial_dims_rejected() {
    let spec = build_generator(GeneratorConfig::MNIST, [27, 27]).unwrap();
    let m = Model::<f32>::new(spec, 0).unwrap();
    assert!(m.infer(&images(&[1, 1, 27, 27], 0)).is_err());
}

#[test]
fn wrong_input_shape_rejected() {
    let m = mnist_xcnn(0);
    assert!(m.infer(&images(&[1, 3, 28, 28], 0)).is_err());
    assert!(m.infer(&images(&[1, 1, 32, 32], 0)).is_err());
}

#[test]
fn vgg16_on_single_channel_32x32() {
    let cfg = DiscriminatorConfig {
        in_channels: 1,
        ..DiscriminatorConfig::cifar(DiscriminatorKind::Vgg16)
    };
    let m = Model::<f32>::new(build_discriminator(cfg).unwrap(), 0).unwrap();
    let out = m.infer(&images(&[2, 1, 32, 32], 1)).unwrap();
    assert_eq!(out.output.shape(), &[2, 10]);
    assert!(out.heatmap.is_none());
}

#[test]
fn baseline_differs_only_in_first_layer() {
    for kind in [DiscriminatorKind::VggLite, DiscriminatorKind::Vgg16] {
        let disc = DiscriminatorConfig::cifar(kind);
        let base = build_baseline(disc).unwrap();
        let xcnn = build_xcnn(GeneratorConfig::CIFAR, disc).unwrap();
        let gen = build_generator(GeneratorConfig::CIFAR, [32, 32]).unwrap();

        let a = &base.section(DISCRIMINATOR).unwrap().layers;
        let b = &xcnn.section(DISCRIMINATOR).unwrap().layers;
        assert_eq!(a[1..], b[1..]);

        // first conv: (3 − 1) extra input channels × 32 or 64 filters × 3×3
        let first_out = match a[0] {
            xcnn_core::model::LayerSpec::Conv2d { out_channels, .. } => out_channels,
            _ => unreachable!(),
        };
        let disc_in_xcnn = xcnn.num_parameters() - gen.num_parameters();
        assert_eq!(base.num_parameters() - disc_in_xcnn, 2 * first_out * 9);
    }
}

#[test]
fn modified_with_identity_expand_matches_plain_bitwise() {
    let plain = mnist_xcnn(7);
    let spec = build_modified_xcnn(GeneratorConfig::MNIST, DiscriminatorConfig::mnist(), 1).unwrap();
    let mut modified = Model::<f32>::new(spec, 99).unwrap();
    let copied = modified.copy_matching_params(&plain);
    assert_eq!(copied, plain.params().len());
    modified.identity_expand().unwrap();

    let x = images(&[4, 1, 28, 28], 5);
    let a = plain.infer(&x).unwrap();
    let b = modified.infer(&x).unwrap();
    assert_eq!(a.output.data(), b.output.data());
    assert_eq!(a.heatmap.unwrap().data(), b.heatmap.unwrap().data());
}

#[test]
fn modified_feeds_c_channels_to_discriminator() {
    let disc = DiscriminatorConfig::cifar(DiscriminatorKind::VggLite);
    let m = Model::<f32>::new(build_modified_xcnn(GeneratorConfig::CIFAR, disc, 16).unwrap(), 0).unwrap();
    let mut tape = Tape::no_grad();
    let x = tape.constant(images(&[2, 3, 32, 32], 0));
    let out = m.forward_eval(&mut tape, x).unwrap();
    assert_eq!(tape.shape(out.heatmap.unwrap()), &[2, 1, 32, 32]);
    assert_eq!(tape.shape(out.output), &[2, 10]);
    let p = m.params();
    assert_eq!(p.get(p.find("discriminator.0.weight").unwrap()).shape(), &[32, 16, 3, 3]);
}

#[test]
fn eval_forward_is_pure_and_seeded_init_is_deterministic() {
    let x = images(&[3, 1, 28, 28], 11);
    let a = mnist_xcnn(5);
    let b = mnist_xcnn(5);
    let c = mnist_xcnn(6);
    let ya = a.infer(&x).unwrap().output;
    assert_eq!(ya.data(), a.infer(&x).unwrap().output.data());
    assert_eq!(ya.data(), b.infer(&x).unwrap().output.data());
    assert_ne!(ya.data(), c.infer(&x).unwrap().output.data());
}

#[test]
fn train_forward_moves_running_stats() {
    let disc = DiscriminatorConfig::cifar(DiscriminatorKind::VggLite);
    let mut m = Model::<f32>::new(build_baseline(disc).unwrap(), 0).unwrap();
    let id = m.params().find("discriminator.1.running_mean").unwrap();
    assert!(m.params().get(id).data().iter().all(|&v| v == 0.0));
    let mut tape = Tape::new();
    let x = tape.constant(images(&[4, 3, 32, 32], 1));
    m.forward_train(&mut tape, x).unwrap();
    assert!(m.params().get(id).data().iter().any(|&v| v != 0.0));
    assert!(!m.params().entry(id).trainable);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn heatmap_stays_in_range(seed in 0u64..1000, scale in 0.1f32..50.0) {
        let mut m = mnist_xcnn(seed);
        for e in m.params_mut().entries_mut() {
            e.tensor.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
        let x = images(&[1, 1, 28, 28], seed + 1);
        let h = m.infer(&x).unwrap().heatmap.unwrap();
        prop_assert_eq!(h.shape(), &[1, 1, 28, 28]);
        prop_assert!(h.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
