//! Declarative layer lists and their text manifest.
//!
//! A manifest is line oriented: a header (`model`, `input`, `classes`),
//! then one `section <name>` line per section followed by one line per layer,
//! e.g. `conv2d in=1 out=32 kernel=3 stride=1 pad=1`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{shape_err, Result, XcnnError};
use crate::nn::{conv_output_dim, ConvGeom};

pub const GENERATOR: &str = "generator";
pub const EXPAND: &str = "expand";
pub const DISCRIMINATOR: &str = "discriminator";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    /// 2×2 kernel, stride 2.
    ConvTranspose2x2 {
        in_channels: usize,
        out_channels: usize,
    },
    Relu,
    Tanh,
    AvgPool2,
    MaxPool2,
    BatchNorm2d {
        channels: usize,
    },
    Flatten,
    Linear {
        in_features: usize,
        out_features: usize,
    },
}

impl LayerSpec {
    pub fn conv3x3(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel: 3,
            stride: 1,
            pad: 1,
        }
    }

    pub fn conv1x1(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel: 1,
            stride: 1,
            pad: 0,
        }
    }

    /// Output shape (without the batch axis) for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let spatial = |what: &str| -> Result<(usize, usize, usize)> {
            match input {
                [c, h, w] => Ok((*c, *h, *w)),
                _ => Err(shape_err!("{what} expects a [C, H, W] input, got {input:?}")),
            }
        };
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                pad,
            } => {
                let (c, h, w) = spatial("conv2d")?;
                if c != in_channels {
                    return Err(shape_err!("conv2d expects {in_channels} channels, got {c}"));
                }
                let g = ConvGeom { stride, pad };
                Ok(vec![
                    out_channels,
                    conv_output_dim(h, kernel, g)?,
                    conv_output_dim(w, kernel, g)?,
                ])
            }
            LayerSpec::ConvTranspose2x2 {
                in_channels,
                out_channels,
            } => {
                let (c, h, w) = spatial("conv_transpose2x2")?;
                if c != in_channels {
                    return Err(shape_err!(
                        "conv_transpose2x2 expects {in_channels} channels, got {c}"
                    ));
                }
                Ok(vec![out_channels, 2 * h, 2 * w])
            }
            LayerSpec::Relu | LayerSpec::Tanh => Ok(input.to_vec()),
            LayerSpec::AvgPool2 | LayerSpec::MaxPool2 => {
                let (c, h, w) = spatial("pooling")?;
                if h < 2 || w < 2 {
                    return Err(shape_err!("cannot pool a {h}x{w} map"));
                }
                Ok(vec![c, h / 2, w / 2])
            }
            LayerSpec::BatchNorm2d { channels } => {
                let (c, _, _) = spatial("batchnorm2d")?;
                if c != channels {
                    return Err(shape_err!("batchnorm2d expects {channels} channels, got {c}"));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => match input {
                [f] if *f == in_features => Ok(vec![out_features]),
                _ => Err(shape_err!("linear expects [{in_features}], got {input:?}")),
            },
        }
    }

    /// Trainable parameter count.
    pub fn num_parameters(&self) -> usize {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => out_channels * in_channels * kernel * kernel + out_channels,
            LayerSpec::ConvTranspose2x2 {
                in_channels,
                out_channels,
            } => in_channels * out_channels * 4 + out_channels,
            LayerSpec::BatchNorm2d { channels } => 2 * channels,
            LayerSpec::Linear {
                in_features,
                out_features,
            } => in_features * out_features + out_features,
            _ => 0,
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                pad,
            } => write!(
                f,
                "conv2d in={in_channels} out={out_channels} kernel={kernel} stride={stride} pad={pad}"
            ),
            LayerSpec::ConvTranspose2x2 {
                in_channels,
                out_channels,
            } => write!(f, "conv_transpose2x2 in={in_channels} out={out_channels}"),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::Tanh => f.write_str("tanh"),
            LayerSpec::AvgPool2 => f.write_str("avgpool2"),
            LayerSpec::MaxPool2 => f.write_str("maxpool2"),
            LayerSpec::BatchNorm2d { channels } => write!(f, "batchnorm2d channels={channels}"),
            LayerSpec::Flatten => f.write_str("flatten"),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => write!(f, "linear in={in_features} out={out_features}"),
        }
    }
}

fn parse_kv(tokens: &[&str]) -> Result<BTreeMap<String, usize>> {
    tokens
        .iter()
        .map(|t| {
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| XcnnError::Format(format!("expected key=value, got {t:?}")))?;
            let v = v
                .parse()
                .map_err(|_| XcnnError::Format(format!("bad integer in {t:?}")))?;
            Ok((k.to_string(), v))
        })
        .collect()
}

impl FromStr for LayerSpec {
    type Err = XcnnError;

    fn from_str(line: &str) -> Result<Self> {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let (kind, rest) = tokens
            .split_first()
            .ok_or_else(|| XcnnError::Format("empty layer line".into()))?;
        let mut kv = parse_kv(rest)?;
        let mut take = |key: &str| {
            kv.remove(key)
                .ok_or_else(|| XcnnError::Format(format!("{kind}: missing {key}")))
        };
        let layer = match *kind {
            "conv2d" => LayerSpec::Conv2d {
                in_channels: take("in")?,
                out_channels: take("out")?,
                kernel: take("kernel")?,
                stride: take("stride")?,
                pad: take("pad")?,
            },
            "conv_transpose2x2" => LayerSpec::ConvTranspose2x2 {
                in_channels: take("in")?,
                out_channels: take("out")?,
            },
            "relu" => LayerSpec::Relu,
            "tanh" => LayerSpec::Tanh,
            "avgpool2" => LayerSpec::AvgPool2,
            "maxpool2" => LayerSpec::MaxPool2,
            "batchnorm2d" => LayerSpec::BatchNorm2d {
                channels: take("channels")?,
            },
            "flatten" => LayerSpec::Flatten,
            "linear" => LayerSpec::Linear {
                in_features: take("in")?,
                out_features: take("out")?,
            },
            other => return Err(XcnnError::Format(format!("unknown layer kind {other:?}"))),
        };
        if let Some(k) = kv.keys().next() {
            return Err(XcnnError::Format(format!("{kind}: unexpected key {k:?}")));
        }
        Ok(layer)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Baseline,
    Xcnn,
    XcnnModified { channels: usize },
    Generator,
    Discriminator,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Baseline => f.write_str("baseline"),
            Variant::Xcnn => f.write_str("xcnn"),
            Variant::XcnnModified { channels } => write!(f, "xcnn_modified({channels})"),
            Variant::Generator => f.write_str("generator"),
            Variant::Discriminator => f.write_str("discriminator"),
        }
    }
}

impl FromStr for Variant {
    type Err = XcnnError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "baseline" => Variant::Baseline,
            "xcnn" => Variant::Xcnn,
            "generator" => Variant::Generator,
            "discriminator" => Variant::Discriminator,
            _ => {
                let c = s
                    .strip_prefix("xcnn_modified(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| XcnnError::Config(format!("unknown model variant {s:?}")))?;
                Variant::XcnnModified { channels: c }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub variant: Variant,
    /// `[C, H, W]` of one input image.
    pub input: [usize; 3],
    pub num_classes: usize,
    pub sections: Vec<Section>,
}

impl ModelSpec {
    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    /// Per-layer output shapes, section by section. Fails if any layer
    /// rejects its input.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<Vec<usize>>>> {
        let mut shape = self.input.to_vec();
        let mut out = Vec::new();
        for s in &self.sections {
            let mut per = Vec::new();
            for l in &s.layers {
                shape = l
                    .output_shape(&shape)
                    .map_err(|e| shape_err!("{}: {l}: {e}", s.name))?;
                per.push(shape.clone());
            }
            out.push(per);
        }
        Ok(out)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        let shapes = self.infer_shapes()?;
        Ok(shapes
            .iter()
            .rev()
            .find_map(|s| s.last().cloned())
            .unwrap_or_else(|| self.input.to_vec()))
    }

    pub fn num_parameters(&self) -> usize {
        self.sections
            .iter()
            .flat_map(|s| &s.layers)
            .map(LayerSpec::num_parameters)
            .sum()
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model {}", self.variant)?;
        writeln!(f, "input {} {} {}", self.input[0], self.input[1], self.input[2])?;
        writeln!(f, "classes {}", self.num_classes)?;
        for s in &self.sections {
            writeln!(f, "section {}", s.name)?;
            for l in &s.layers {
                writeln!(f, "  {l}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for ModelSpec {
    type Err = XcnnError;

    fn from_str(text: &str) -> Result<Self> {
        let mut variant = None;
        let mut input = None;
        let mut classes = None;
        let mut sections: Vec<Section> = Vec::new();
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (head, rest) = line.split_once(' ').unwrap_or((line, ""));
            match head {
                "model" => variant = Some(rest.trim().parse()?),
                "input" => {
                    let dims: Vec<usize> = rest
                        .split_whitespace()
                        .map(|d| d.parse())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| XcnnError::Format(format!("bad input line {line:?}")))?;
                    let dims: [usize; 3] = dims
                        .try_into()
                        .map_err(|_| XcnnError::Format(format!("bad input line {line:?}")))?;
                    input = Some(dims);
                }
                "classes" => {
                    classes = Some(rest.trim().parse().map_err(|_| {
                        XcnnError::Format(format!("bad classes line {line:?}"))
                    })?)
                }
                "section" => sections.push(Section {
                    name: rest.trim().to_string(),
                    layers: Vec::new(),
                }),
                _ => {
                    let section = sections.last_mut().ok_or_else(|| {
                        XcnnError::Format(format!("layer outside a section: {line:?}"))
                    })?;
                    section.layers.push(line.parse()?);
                }
            }
        }
        let missing = |k: &str| XcnnError::Format(format!("manifest missing {k}"));
        let spec = ModelSpec {
            variant: variant.ok_or_else(|| missing("model"))?,
            input: input.ok_or_else(|| missing("input"))?,
            num_classes: classes.ok_or_else(|| missing("classes"))?,
            sections,
        };
        spec.infer_shapes()?;
        Ok(spec)
    }
}
