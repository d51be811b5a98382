//! Run configuration: defaults, then a flat `key=value` file, then flags.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use xcnn_core::model::DiscriminatorKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    /// Generated block images, for smoke runs without downloads.
    Synthetic,
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mnist" => Ok(DatasetKind::Mnist),
            "cifar10" => Ok(DatasetKind::Cifar10),
            "synthetic" => Ok(DatasetKind::Synthetic),
            _ => Err(format!("unknown dataset {s:?} (mnist, cifar10, synthetic)")),
        }
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Synthetic => "synthetic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Xcnn,
    Baseline,
    /// Heatmap expanded to this many channels by a 1×1 convolution.
    XcnnModified(usize),
}

impl FromStr for ModelKind {
    type Err = String;

    /// `xcnn`, `baseline`, or `xcnn_modified(C)` / `xcnn_modified:C`.
    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("unknown model {s:?} (xcnn, baseline, xcnn_modified(C))");
        match s {
            "xcnn" => Ok(ModelKind::Xcnn),
            "baseline" => Ok(ModelKind::Baseline),
            _ => {
                let rest = s.strip_prefix("xcnn_modified").ok_or_else(bad)?;
                let c = rest
                    .strip_prefix('(')
                    .and_then(|r| r.strip_suffix(')'))
                    .or_else(|| rest.strip_prefix(':'))
                    .ok_or_else(bad)?;
                let c: usize = c.parse().map_err(|_| bad())?;
                if c == 0 {
                    return Err("xcnn_modified needs at least one channel".into());
                }
                Ok(ModelKind::XcnnModified(c))
            }
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Xcnn => f.write_str("xcnn"),
            ModelKind::Baseline => f.write_str("baseline"),
            ModelKind::XcnnModified(c) => write!(f, "xcnn_modified({c})"),
        }
    }
}

/// Every knob of a run. `None` means "chosen from the dataset".
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    /// Dataset root; falls back to `XCNN_DATA_DIR`, then `./data`.
    pub data_dir: Option<PathBuf>,
    pub model: ModelKind,
    /// mnist_cnn for MNIST and synthetic, vgg_lite for CIFAR-10.
    pub disc: Option<DiscriminatorKind>,
    /// 32 for single-channel data, 128 for CIFAR-10.
    pub gen_channels: Option<usize>,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// 0-based epochs at which the learning rate is multiplied by `lr_gamma`.
    pub milestones: Vec<usize>,
    pub lr_gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Training samples to keep; 0 keeps all.
    pub subset: usize,
    pub stratified: bool,
    /// Random flips and padded crops; on by default for CIFAR-10 only.
    pub augment: Option<bool>,
    pub outdir: PathBuf,
    /// Evaluation workers. Training is sequential either way.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetKind::Mnist,
            data_dir: None,
            model: ModelKind::Xcnn,
            disc: None,
            gen_channels: None,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
            milestones: Vec::new(),
            lr_gamma: 0.1,
            epochs: 10,
            batch_size: 64,
            seed: 1,
            subset: 0,
            stratified: true,
            augment: None,
            outdir: PathBuf::from("runs"),
            threads: 1,
        }
    }
}

pub const KEYS: &[&str] = &[
    "dataset",
    "data_dir",
    "model",
    "disc",
    "gen_channels",
    "lr",
    "momentum",
    "weight_decay",
    "milestones",
    "lr_gamma",
    "epochs",
    "batch_size",
    "seed",
    "subset",
    "stratified",
    "augment",
    "outdir",
    "threads",
];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("bad value for {key}: {v:?}"))
}

fn auto<T>(key: &str, v: &str, f: impl Fn(&str) -> Result<T, String>) -> Result<Option<T>, String> {
    if v == "auto" {
        Ok(None)
    } else {
        f(v).map(Some).map_err(|e| format!("{key}: {e}"))
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let v = v.trim();
        match key {
            "dataset" => self.dataset = v.parse()?,
            "data_dir" => self.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "model" => self.model = v.parse()?,
            "disc" => self.disc = auto(key, v, |s| s.parse().map_err(|e: xcnn_core::XcnnError| e.to_string()))?,
            "gen_channels" => self.gen_channels = auto(key, v, |s| parse(key, s))?,
            "lr" => self.lr = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "milestones" => {
                self.milestones = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_, _>>()?
            }
            "lr_gamma" => self.lr_gamma = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "subset" => self.subset = parse(key, v)?,
            "stratified" => self.stratified = parse(key, v)?,
            "augment" => self.augment = auto(key, v, |s| parse(key, s))?,
            "outdir" => self.outdir = PathBuf::from(v),
            "threads" => self.threads = parse(key, v)?,
            _ => return Err(format!("unknown config key {key:?} (known: {})", KEYS.join(", "))),
        }
        Ok(())
    }

    /// Applies a `key=value` file; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("config line {}: expected key=value", n + 1))?;
            self.set(k.trim(), v).map_err(|e| format!("config line {}: {e}", n + 1))?;
        }
        Ok(())
    }

    pub fn data_root(&self) -> PathBuf {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os("XCNN_DATA_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"))
    }

    pub fn disc_kind(&self) -> DiscriminatorKind {
        self.disc.unwrap_or(match self.dataset {
            DatasetKind::Cifar10 => DiscriminatorKind::VggLite,
            _ => DiscriminatorKind::MnistCnn,
        })
    }

    pub fn augment_enabled(&self) -> bool {
        self.augment.unwrap_or(self.dataset == DatasetKind::Cifar10)
    }

    /// Same `key=value` format `apply_text` reads.
    pub fn to_text(&self) -> String {
        let opt = |o: Option<String>| o.unwrap_or_else(|| "auto".into());
        let mut s = String::new();
        let milestones: Vec<String> = self.milestones.iter().map(|m| m.to_string()).collect();
        let data_dir = self.data_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let _ = writeln!(s, "dataset={}", self.dataset);
        let _ = writeln!(s, "data_dir={data_dir}");
        let _ = writeln!(s, "model={}", self.model);
        let _ = writeln!(s, "disc={}", opt(self.disc.map(|d| d.to_string())));
        let _ = writeln!(s, "gen_channels={}", opt(self.gen_channels.map(|c| c.to_string())));
        let _ = writeln!(s, "lr={}", self.lr);
        let _ = writeln!(s, "momentum={}", self.momentum);
        let _ = writeln!(s, "weight_decay={}", self.weight_decay);
        let _ = writeln!(s, "milestones={}", milestones.join(","));
        let _ = writeln!(s, "lr_gamma={}", self.lr_gamma);
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "subset={}", self.subset);
        let _ = writeln!(s, "stratified={}", self.stratified);
        let _ = writeln!(s, "augment={}", opt(self.augment.map(|a| a.to_string())));
        let _ = writeln!(s, "outdir={}", self.outdir.display());
        let _ = writeln!(s, "threads={}", self.threads);
        s
    }
}
