//! Instantiated networks: generator, discriminators, the composed XCNN and
//! the baseline classifier.

mod build;
mod params;
mod spec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use build::{
    build_baseline, build_discriminator, build_generator, build_modified_xcnn, build_xcnn,
    DiscriminatorConfig, DiscriminatorKind, GeneratorConfig,
};
pub use params::{ParamEntry, ParamStore};
pub use spec::{LayerSpec, ModelSpec, Section, Variant, DISCRIMINATOR, EXPAND, GENERATOR};

use crate::error::{shape_err, Result};
use crate::nn::batchnorm::{self, BatchStats, BnMode, DEFAULT_EPS, DEFAULT_MOMENTUM};
use crate::nn::ConvGeom;
use crate::tensor::{Element, ParamId, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy)]
enum Binding {
    None,
    Affine { w: ParamId, b: ParamId },
    Norm {
        gamma: ParamId,
        beta: ParamId,
        mean: ParamId,
        var: ParamId,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// Logits for classifiers, the heatmap itself for a bare generator.
    pub output: Var,
    /// Output of the generator section, when the model has one.
    pub heatmap: Option<Var>,
}

/// Values of one no-grad forward pass.
#[derive(Debug, Clone)]
pub struct Inference<T> {
    pub output: Tensor<T>,
    pub heatmap: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    spec: ModelSpec,
    params: ParamStore<T>,
    bindings: Vec<Vec<Binding>>,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

/// Uniform in `±sqrt(3·gain²/fan_in)`. In front of a ReLU gain² is 2 (He);
/// elsewhere it is 1/3, the usual default for linear heads, which keeps the
/// initial logits small and the starting loss near ln(classes).
fn fan_in_uniform<T: Element>(
    shape: &[usize],
    fan_in: usize,
    relu: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<T>> {
    let gain_sq = if relu { 2.0 } else { 1.0 / 3.0 };
    let bound = (3.0 * gain_sq / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64(rng.random_range(-bound..bound)))
        .collect();
    Tensor::from_vec(shape, data)
}

impl<T: Element> Model<T> {
    /// Instantiates `spec` with fan-in scaled uniform weights, zero biases and
    /// neutral batch-norm state. Deterministic for a given seed.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.infer_shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut bindings = Vec::with_capacity(spec.sections.len());
        for section in &spec.sections {
            let mut sb = Vec::with_capacity(section.layers.len());
            for (i, layer) in section.layers.iter().enumerate() {
                let name = |p: &str| format!("{}.{i}.{p}", section.name);
                let relu = section.layers[i + 1..]
                    .iter()
                    .find(|l| !matches!(l, LayerSpec::BatchNorm2d { .. }))
                    .is_some_and(|l| *l == LayerSpec::Relu);
                let binding = match *layer {
                    LayerSpec::Conv2d {
                        in_channels,
                        out_channels,
                        kernel,
                        ..
                    } => {
                        let fan_in = in_channels * kernel * kernel;
                        let w = fan_in_uniform(&[out_channels, in_channels, kernel, kernel], fan_in, relu, &mut rng)?;
                        Binding::Affine {
                            w: params.push(name("weight"), w, true),
                            b: params.push(name("bias"), Tensor::zeros(&[out_channels])?, true),
                        }
                    }
                    LayerSpec::ConvTranspose2x2 {
                        in_channels,
                        out_channels,
                    } => {
                        let w = fan_in_uniform(&[in_channels, out_channels, 2, 2], in_channels, relu, &mut rng)?;
                        Binding::Affine {
                            w: params.push(name("weight"), w, true),
                            b: params.push(name("bias"), Tensor::zeros(&[out_channels])?, true),
                        }
                    }
                    LayerSpec::Linear {
                        in_features,
                        out_features,
                    } => {
                        let w = fan_in_uniform(&[in_features, out_features], in_features, relu, &mut rng)?;
                        Binding::Affine {
                            w: params.push(name("weight"), w, true),
                            b: params.push(name("bias"), Tensor::zeros(&[out_features])?, true),
                        }
                    }
                    LayerSpec::BatchNorm2d { channels } => {
                        let ones = Tensor::create(&[channels], crate::Fill::Constant(1.0))?;
                        Binding::Norm {
                            gamma: params.push(name("gamma"), ones.clone(), true),
                            beta: params.push(name("beta"), Tensor::zeros(&[channels])?, true),
                            mean: params.push(name("running_mean"), Tensor::zeros(&[channels])?, false),
                            var: params.push(name("running_var"), ones, false),
                        }
                    }
                    _ => Binding::None,
                };
                sb.push(binding);
            }
            bindings.push(sb);
        }
        Ok(Model {
            spec,
            params,
            bindings,
            bn_momentum: DEFAULT_MOMENTUM,
            bn_eps: DEFAULT_EPS,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_trainable_elements()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1..] != self.spec.input {
            return Err(shape_err!(
                "model expects [N, {}, {}, {}] input, got {shape:?}",
                self.spec.input[0],
                self.spec.input[1],
                self.spec.input[2]
            ));
        }
        if self.spec.section(GENERATOR).is_some() && (!shape[2].is_multiple_of(2) || !shape[3].is_multiple_of(2)) {
            return Err(shape_err!(
                "generator needs even spatial dimensions, got {}x{}",
                shape[2],
                shape[3]
            ));
        }
        Ok(())
    }

    /// Records the forward pass. In train mode the batch statistics of every
    /// batch-norm layer are returned for the caller to fold into the running
    /// statistics.
    #[allow(clippy::type_complexity)]
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        mode: BnMode,
    ) -> Result<(ForwardOutput, Vec<(ParamId, ParamId, BatchStats<T>)>)> {
        self.check_input(tape.shape(x))?;
        let mut h = x;
        let mut heatmap = None;
        let mut updates = Vec::new();
        for (section, binds) in self.spec.sections.iter().zip(&self.bindings) {
            for (layer, bind) in section.layers.iter().zip(binds) {
                h = self.apply(tape, h, layer, *bind, mode, &mut updates)?;
            }
            if section.name == GENERATOR {
                heatmap = Some(h);
            }
        }
        Ok((ForwardOutput { output: h, heatmap }, updates))
    }

    fn apply(
        &self,
        tape: &mut Tape<T>,
        h: Var,
        layer: &LayerSpec,
        bind: Binding,
        mode: BnMode,
        updates: &mut Vec<(ParamId, ParamId, BatchStats<T>)>,
    ) -> Result<Var> {
        let p = |tape: &mut Tape<T>, id| tape.param(id, self.params.get(id));
        match (*layer, bind) {
            (LayerSpec::Conv2d { stride, pad, .. }, Binding::Affine { w, b }) => {
                let (w, b) = (p(tape, w), p(tape, b));
                tape.conv2d(h, w, b, ConvGeom { stride, pad })
            }
            (LayerSpec::ConvTranspose2x2 { .. }, Binding::Affine { w, b }) => {
                let (w, b) = (p(tape, w), p(tape, b));
                tape.conv_transpose2x2(h, w, b)
            }
            (LayerSpec::Linear { .. }, Binding::Affine { w, b }) => {
                let (w, b) = (p(tape, w), p(tape, b));
                tape.linear(h, w, b)
            }
            (LayerSpec::BatchNorm2d { .. }, Binding::Norm { gamma, beta, mean, var }) => {
                let (g, bt) = (p(tape, gamma), p(tape, beta));
                match mode {
                    BnMode::Train => {
                        let (y, stats) = tape.batchnorm_train(h, g, bt, self.bn_eps)?;
                        updates.push((mean, var, stats));
                        Ok(y)
                    }
                    BnMode::Eval => tape.batchnorm_eval(
                        h,
                        g,
                        bt,
                        self.params.get(mean).data(),
                        self.params.get(var).data(),
                        self.bn_eps,
                    ),
                }
            }
            (LayerSpec::Relu, _) => Ok(tape.relu(h)),
            (LayerSpec::Tanh, _) => Ok(tape.tanh(h)),
            (LayerSpec::AvgPool2, _) => tape.avgpool2(h),
            (LayerSpec::MaxPool2, _) => tape.maxpool2(h),
            (LayerSpec::Flatten, _) => tape.flatten(h),
            (l, b) => unreachable!("layer {l} bound to {b:?}"),
        }
    }

    /// Training forward pass; folds batch statistics into running statistics.
    pub fn forward_train(&mut self, tape: &mut Tape<T>, x: Var) -> Result<ForwardOutput> {
        let (out, updates) = self.forward(tape, x, BnMode::Train)?;
        for (mean, var, stats) in updates {
            let mut m = self.params.get(mean).data().to_vec();
            let mut v = self.params.get(var).data().to_vec();
            batchnorm::update_running(&mut m, &mut v, &stats, self.bn_momentum);
            self.params.get_mut(mean).data_mut().copy_from_slice(&m);
            self.params.get_mut(var).data_mut().copy_from_slice(&v);
        }
        Ok(out)
    }

    pub fn forward_eval(&self, tape: &mut Tape<T>, x: Var) -> Result<ForwardOutput> {
        Ok(self.forward(tape, x, BnMode::Eval)?.0)
    }

    /// Eval-mode forward without recording gradients.
    pub fn infer(&self, images: &Tensor<T>) -> Result<Inference<T>> {
        let mut tape = Tape::no_grad();
        let x = tape.constant(images.clone());
        let out = self.forward_eval(&mut tape, x)?;
        Ok(Inference {
            output: tape.value(out.output).clone(),
            heatmap: out.heatmap.map(|h| tape.value(h).clone()),
        })
    }

    /// Copies every same-named, same-shaped tensor from `other`. Returns the
    /// number of tensors copied.
    pub fn copy_matching_params(&mut self, other: &Model<T>) -> usize {
        let mut copied = 0;
        for entry in other.params.entries() {
            if self.params.set(&entry.name, &entry.tensor).is_ok() {
                copied += 1;
            }
        }
        copied
    }

    /// Sets the 1×1 expansion to weight 1, bias 0, so every expanded channel
    /// is a copy of the heatmap.
    pub fn identity_expand(&mut self) -> Result<()> {
        let Some(idx) = self.spec.sections.iter().position(|s| s.name == EXPAND) else {
            return Err(crate::XcnnError::Config("model has no expansion layer".into()));
        };
        for bind in &self.bindings[idx] {
            if let Binding::Affine { w, b } = *bind {
                self.params.get_mut(w).data_mut().fill(T::one());
                self.params.get_mut(b).data_mut().fill(T::zero());
            }
        }
        Ok(())
    }

    pub fn cast<U: Element>(&self) -> Model<U> {
        let mut params = ParamStore::new();
        for e in self.params.entries() {
            params.push(e.name.clone(), e.tensor.cast(), e.trainable);
        }
        Model {
            spec: self.spec.clone(),
            params,
            bindings: self.bindings.clone(),
            bn_momentum: self.bn_momentum,
            bn_eps: self.bn_eps,
        }
    }
}
