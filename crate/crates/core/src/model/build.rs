use std::fmt;
use std::str::FromStr;

use super::spec::{LayerSpec, ModelSpec, Section, Variant, DISCRIMINATOR, EXPAND, GENERATOR};
use crate::error::{Result, XcnnError};

/// Encoder-decoder producing a one-channel heatmap of the input's size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub in_channels: usize,
    pub mid_channels: usize,
}

impl GeneratorConfig {
    /// Grayscale digits, 32 feature maps.
    pub const MNIST: GeneratorConfig = GeneratorConfig {
        in_channels: 1,
        mid_channels: 32,
    };
    pub const CIFAR: GeneratorConfig = GeneratorConfig {
        in_channels: 3,
        mid_channels: 128,
    };

    fn layers(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::conv3x3(self.in_channels, self.mid_channels),
            LayerSpec::Relu,
            LayerSpec::AvgPool2,
            LayerSpec::ConvTranspose2x2 {
                in_channels: self.mid_channels,
                out_channels: 1,
            },
            LayerSpec::Tanh,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscriminatorKind {
    /// Three conv/relu/max-pool blocks (16, 32, 64) and a linear head.
    MnistCnn,
    /// The 13-conv VGG configuration with a single linear head.
    Vgg16,
    /// (32, P, 64, P, 128, P) with a linear head.
    VggLite,
}

impl fmt::Display for DiscriminatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiscriminatorKind::MnistCnn => "mnist_cnn",
            DiscriminatorKind::Vgg16 => "vgg16",
            DiscriminatorKind::VggLite => "vgg_lite",
        })
    }
}

impl FromStr for DiscriminatorKind {
    type Err = XcnnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist_cnn" => Ok(DiscriminatorKind::MnistCnn),
            "vgg16" => Ok(DiscriminatorKind::Vgg16),
            "vgg_lite" => Ok(DiscriminatorKind::VggLite),
            _ => Err(XcnnError::Config(format!("unknown discriminator kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiscriminatorConfig {
    pub kind: DiscriminatorKind,
    pub in_channels: usize,
    pub num_classes: usize,
    /// `[H, W]` of the images the classifier sees.
    pub input_hw: [usize; 2],
    pub batch_norm: bool,
}

impl DiscriminatorConfig {
    /// Batch norm defaults to on for the VGG kinds and off for `mnist_cnn`.
    pub fn new(kind: DiscriminatorKind, in_channels: usize, num_classes: usize, input_hw: [usize; 2]) -> Self {
        DiscriminatorConfig {
            kind,
            in_channels,
            num_classes,
            input_hw,
            batch_norm: kind != DiscriminatorKind::MnistCnn,
        }
    }

    pub fn mnist() -> Self {
        Self::new(DiscriminatorKind::MnistCnn, 1, 10, [28, 28])
    }

    pub fn cifar(kind: DiscriminatorKind) -> Self {
        Self::new(kind, 3, 10, [32, 32])
    }

    fn widths(&self) -> &'static [Option<usize>] {
        const P: Option<usize> = None;
        match self.kind {
            DiscriminatorKind::MnistCnn => &[Some(16), P, Some(32), P, Some(64), P],
            DiscriminatorKind::Vgg16 => &[
                Some(64),
                Some(64),
                P,
                Some(128),
                Some(128),
                P,
                Some(256),
                Some(256),
                Some(256),
                P,
                Some(512),
                Some(512),
                Some(512),
                P,
                Some(512),
                Some(512),
                Some(512),
                P,
            ],
            DiscriminatorKind::VggLite => &[Some(32), P, Some(64), P, Some(128), P],
        }
    }

    fn layers(&self) -> Result<Vec<LayerSpec>> {
        if self.in_channels == 0 || self.num_classes == 0 {
            return Err(XcnnError::Config(
                "discriminator needs at least one input channel and one class".into(),
            ));
        }
        let mut layers = Vec::new();
        let mut c = self.in_channels;
        for w in self.widths() {
            match *w {
                Some(out) => {
                    layers.push(LayerSpec::conv3x3(c, out));
                    if self.batch_norm {
                        layers.push(LayerSpec::BatchNorm2d { channels: out });
                    }
                    layers.push(LayerSpec::Relu);
                    c = out;
                }
                None => layers.push(LayerSpec::MaxPool2),
            }
        }
        layers.push(LayerSpec::Flatten);
        let input = vec![self.in_channels, self.input_hw[0], self.input_hw[1]];
        let in_features = layers
            .iter()
            .try_fold(input, |s, l| l.output_shape(&s))
            .map_err(|e| XcnnError::Config(format!("{} on {:?}: {e}", self.kind, self.input_hw)))?[0];
        layers.push(LayerSpec::Linear {
            in_features,
            out_features: self.num_classes,
        });
        Ok(layers)
    }
}

fn spec(variant: Variant, input: [usize; 3], num_classes: usize, sections: Vec<Section>) -> Result<ModelSpec> {
    let spec = ModelSpec {
        variant,
        input,
        num_classes,
        sections,
    };
    spec.infer_shapes()?;
    Ok(spec)
}

fn section(name: &str, layers: Vec<LayerSpec>) -> Section {
    Section {
        name: name.to_string(),
        layers,
    }
}

/// The generator alone; its output is the heatmap.
pub fn build_generator(cfg: GeneratorConfig, input_hw: [usize; 2]) -> Result<ModelSpec> {
    if cfg.in_channels == 0 || cfg.mid_channels == 0 {
        return Err(XcnnError::Config("generator channel counts must be positive".into()));
    }
    spec(
        Variant::Generator,
        [cfg.in_channels, input_hw[0], input_hw[1]],
        1,
        vec![section(GENERATOR, cfg.layers())],
    )
}

pub fn build_discriminator(cfg: DiscriminatorConfig) -> Result<ModelSpec> {
    spec(
        Variant::Discriminator,
        [cfg.in_channels, cfg.input_hw[0], cfg.input_hw[1]],
        cfg.num_classes,
        vec![section(DISCRIMINATOR, cfg.layers()?)],
    )
}

/// Generator followed by the discriminator on its heatmap. The
/// discriminator's `in_channels` is replaced by 1.
pub fn build_xcnn(gen: GeneratorConfig, disc: DiscriminatorConfig) -> Result<ModelSpec> {
    let d = DiscriminatorConfig {
        in_channels: 1,
        ..disc
    };
    spec(
        Variant::Xcnn,
        [gen.in_channels, disc.input_hw[0], disc.input_hw[1]],
        disc.num_classes,
        vec![section(GENERATOR, gen.layers()), section(DISCRIMINATOR, d.layers()?)],
    )
}

/// XCNN with a 1×1 convolution (1 → `channels`) between the heatmap and the
/// discriminator. The heatmap tap still sees the single-channel map.
pub fn build_modified_xcnn(
    gen: GeneratorConfig,
    disc: DiscriminatorConfig,
    channels: usize,
) -> Result<ModelSpec> {
    if channels == 0 {
        return Err(XcnnError::Config("expansion needs at least one channel".into()));
    }
    let d = DiscriminatorConfig {
        in_channels: channels,
        ..disc
    };
    spec(
        Variant::XcnnModified { channels },
        [gen.in_channels, disc.input_hw[0], disc.input_hw[1]],
        disc.num_classes,
        vec![
            section(GENERATOR, gen.layers()),
            section(EXPAND, vec![LayerSpec::conv1x1(1, channels)]),
            section(DISCRIMINATOR, d.layers()?),
        ],
    )
}

/// The discriminator applied to raw images.
pub fn build_baseline(disc: DiscriminatorConfig) -> Result<ModelSpec> {
    let mut s = build_discriminator(disc)?;
    s.variant = Variant::Baseline;
    Ok(s)
}
