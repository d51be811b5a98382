use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use xcnn_core::data::{cifar, idx, Augment, Dataset, Split};
use xcnn_core::explain::image::{draw_box, gray_to_rgb, upscale, write_ppm};
use xcnn_core::explain::{image_bytes, intensity_centroid, localize as find_box, mi_diagnostic, render_heatmap, BoundingBox, BOX_CSV_HEADER};
use xcnn_core::model::{
    build_baseline, build_modified_xcnn, build_xcnn, DiscriminatorConfig, GeneratorConfig, Model, ModelSpec,
};
use xcnn_core::nn::suite::{layer_suite, STEP, TOLERANCE};
use xcnn_core::train::{append_metrics, argmax, evaluate, Checkpoint, TrainConfig, Trainer};
use xcnn_core::Tensor;

use crate::config::{DatasetKind, ModelKind, RunConfig};
use crate::Failure;

const SYNTHETIC_SIZE: usize = 1000;

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Run(format!("{}: {e}", path.display()))
}

fn load(cfg: &RunConfig, split: Split) -> Result<Dataset, Failure> {
    let root = cfg.data_root();
    let ds = match cfg.dataset {
        DatasetKind::Mnist => idx::load_mnist_dir(&root, split),
        DatasetKind::Cifar10 => cifar::load_cifar10_dir(&root, split),
        DatasetKind::Synthetic => {
            let seed = cfg.seed.wrapping_mul(2).wrapping_add(u64::from(split == Split::Test));
            Dataset::synthetic(SYNTHETIC_SIZE, 10, [1, 28, 28], seed)
        }
    }
    .map_err(|e| Failure::Run(format!("cannot load {} {split:?} data from {}: {e}", cfg.dataset, root.display())))?;
    Ok(ds)
}

fn load_train(cfg: &RunConfig) -> Result<Dataset, Failure> {
    let ds = load(cfg, Split::Train)?;
    Ok(if cfg.subset > 0 { ds.subset(cfg.subset, cfg.stratified)? } else { ds })
}

pub fn build_spec(cfg: &RunConfig, ds: &Dataset) -> xcnn_core::Result<ModelSpec> {
    let [c, h, w] = ds.image_shape();
    let disc = DiscriminatorConfig::new(cfg.disc_kind(), c, ds.num_classes(), [h, w]);
    let gen = GeneratorConfig {
        in_channels: c,
        mid_channels: cfg.gen_channels.unwrap_or(if c == 1 { 32 } else { 128 }),
    };
    match cfg.model {
        ModelKind::Xcnn => build_xcnn(gen, disc),
        ModelKind::Baseline => build_baseline(disc),
        ModelKind::XcnnModified(ch) => build_modified_xcnn(gen, disc, ch),
    }
}

/// Creates `<outdir>/{checkpoints,images,metrics}` and echoes the config.
fn prepare_outdir(cfg: &RunConfig) -> Result<(), Failure> {
    for sub in ["checkpoints", "images", "metrics"] {
        let p = cfg.outdir.join(sub);
        fs::create_dir_all(&p).map_err(|e| io_err(&p, e))?;
    }
    let p = cfg.outdir.join("config.txt");
    fs::write(&p, cfg.to_text()).map_err(|e| io_err(&p, e))
}

fn load_model(cfg: &RunConfig, path: &Path) -> Result<Model<f32>, Failure> {
    let ck = Checkpoint::load(path)?;
    Ok(Trainer::from_checkpoint(&ck, Augment::NONE, cfg.threads)?.model)
}

pub fn train(cfg: &RunConfig, resume: Option<&Path>) -> Result<(), Failure> {
    let train = load_train(cfg)?;
    let test = load(cfg, Split::Test)?;
    let augment = if cfg.augment_enabled() { Augment::CIFAR } else { Augment::NONE };
    let mut trainer = match resume {
        Some(p) => Trainer::from_checkpoint(&Checkpoint::load(p)?, augment, cfg.threads)?,
        None => {
            let model = Model::new(build_spec(cfg, &train)?, cfg.seed)?;
            let mut tc = TrainConfig::new(cfg.batch_size, cfg.lr, cfg.seed);
            tc.optim.momentum = cfg.momentum;
            tc.optim.weight_decay = cfg.weight_decay;
            tc.milestones = cfg.milestones.clone();
            tc.lr_gamma = cfg.lr_gamma;
            tc.augment = augment;
            tc.threads = cfg.threads;
            Trainer::new(model, tc)?
        }
    };
    prepare_outdir(cfg)?;
    let csv = cfg.outdir.join("metrics").join("train.csv");
    if resume.is_none() && csv.exists() {
        fs::remove_file(&csv).map_err(|e| io_err(&csv, e))?;
    }
    println!(
        "training {} ({} parameters) on {} {} images, testing on {}",
        trainer.model.spec().variant,
        trainer.model.num_parameters(),
        train.len(),
        cfg.dataset,
        test.len()
    );
    let ckdir = cfg.outdir.join("checkpoints");
    while trainer.epoch < cfg.epochs {
        let m = trainer.run_epoch(&train, Some(&test))?;
        append_metrics(&csv, &m)?;
        let ck = trainer.checkpoint();
        ck.save(&ckdir.join(format!("epoch_{:03}.ck", m.epoch)))?;
        ck.save(&ckdir.join("last.ck"))?;
        println!(
            "epoch {} loss {:.4} train_acc {:.4} test_acc {:.4} ({:.1}s)",
            m.epoch,
            m.train_loss,
            m.train_acc,
            m.val_acc.unwrap_or(f64::NAN),
            m.seconds
        );
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path) -> Result<(), Failure> {
    let model = load_model(cfg, checkpoint)?;
    let test = load(cfg, Split::Test)?;
    let r = evaluate(&model, &test, 256, cfg.threads)?;
    let line = format!("accuracy={:.6} mean_loss={:.6} samples={}", r.accuracy, r.mean_loss, r.samples);
    println!("{line}");
    prepare_outdir(cfg)?;
    let p = cfg.outdir.join("metrics").join("eval.txt");
    fs::write(&p, line + "\n").map_err(|e| io_err(&p, e))
}

/// Logits and heatmaps for the first `count` images, computed in parallel
/// chunks.
fn infer_first(model: &Model<f32>, ds: &Dataset, count: usize, threads: usize) -> Result<(Vec<usize>, Vec<f32>), Failure> {
    let count = count.min(ds.len());
    let chunk = count.div_ceil(threads.max(1)).max(1);
    type Chunk = xcnn_core::Result<(Tensor<f32>, Option<Tensor<f32>>)>;
    let results: Vec<Chunk> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..count)
            .step_by(chunk)
            .map(|start| {
                let end = (start + chunk).min(count);
                s.spawn(move || {
                    let out = model.infer(&ds.images.slice_outer(start, end)?)?;
                    Ok((out.output, out.heatmap))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("inference worker panicked")).collect()
    });
    let (mut preds, mut heat) = (Vec::new(), Vec::new());
    for r in results {
        let (logits, hm) = r?;
        let k = logits.shape()[1];
        preds.extend(logits.data().chunks(k).map(argmax));
        let hm = hm.ok_or_else(|| Failure::Run("checkpoint model has no heatmap generator".into()))?;
        heat.extend_from_slice(hm.data());
    }
    Ok((preds, heat))
}

fn input_rgb(ds: &Dataset, i: usize) -> Vec<u8> {
    let c = ds.image_shape()[0];
    let bytes = image_bytes(ds.image(i), c);
    if c == 1 {
        gray_to_rgb(&bytes)
    } else {
        bytes
    }
}

pub fn explain(cfg: &RunConfig, checkpoint: &Path, count: usize, scale: usize) -> Result<(), Failure> {
    let model = load_model(cfg, checkpoint)?;
    let test = load(cfg, Split::Test)?;
    let (preds, heat) = infer_first(&model, &test, count, cfg.threads)?;
    prepare_outdir(cfg)?;
    let [_, h, w] = test.image_shape();
    let dir = cfg.outdir.join("images");
    for (i, &pred) in preds.iter().enumerate() {
        let hm = render_heatmap(&heat[i * h * w..(i + 1) * h * w])?;
        let pairs: [(PathBuf, Vec<u8>); 2] = [
            (dir.join(format!("explain_{i:04}_input.ppm")), input_rgb(&test, i)),
            (dir.join(format!("explain_{i:04}_heatmap.ppm")), hm),
        ];
        for (path, rgb) in pairs {
            write_ppm(&path, w * scale, h * scale, &upscale(&rgb, w, h, 3, scale))?;
        }
        println!("{i}: pred {pred} true {}", test.labels[i]);
    }
    println!("wrote {} image pairs to {}", preds.len(), dir.display());
    Ok(())
}

pub fn localize(cfg: &RunConfig, checkpoint: &Path, count: usize, threshold: f32, scale: usize) -> Result<(), Failure> {
    let model = load_model(cfg, checkpoint)?;
    let test = load(cfg, Split::Test)?;
    let (preds, heat) = infer_first(&model, &test, count, cfg.threads)?;
    prepare_outdir(cfg)?;
    let [c, h, w] = test.image_shape();
    let dir = cfg.outdir.join("images");
    let mut csv = format!("{BOX_CSV_HEADER}\n");
    let (mut correct, mut boxed, mut centred) = (0, 0, 0);
    for (i, &pred) in preds.iter().enumerate() {
        let b = find_box(&heat[i * h * w..(i + 1) * h * w], h, w, threshold);
        let truth = test.labels[i];
        let _ = writeln!(csv, "{}", BoundingBox::csv_line(b.as_ref(), i, pred, truth));
        let mut rgb = upscale(&input_rgb(&test, i), w, h, 3, scale);
        if let Some(b) = &b {
            let scaled = BoundingBox {
                x0: b.x0 * scale,
                y0: b.y0 * scale,
                x1: b.x1 * scale + scale - 1,
                y1: b.y1 * scale + scale - 1,
            };
            draw_box(&mut rgb, w * scale, &scaled, [0, 255, 0]);
        }
        write_ppm(&dir.join(format!("localize_{i:04}.ppm")), w * scale, h * scale, &rgb)?;
        if pred == truth {
            correct += 1;
            if let Some(b) = b {
                boxed += 1;
                let gray: Vec<f32> = (0..h * w)
                    .map(|p| (0..c).map(|ch| test.image(i)[ch * h * w + p]).sum::<f32>() / c as f32)
                    .collect();
                if intensity_centroid(&gray, h, w).is_some_and(|(x, y)| b.contains_point(x, y)) {
                    centred += 1;
                }
            }
        }
    }
    let p = cfg.outdir.join("metrics").join("boxes.csv");
    fs::write(&p, csv).map_err(|e| io_err(&p, e))?;
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    println!(
        "{correct} of {} correct; box found for {:.3}; centroid inside box for {:.3} of those",
        preds.len(),
        frac(boxed, correct),
        frac(centred, boxed)
    );
    println!("wrote {} and overlays to {}", p.display(), dir.display());
    Ok(())
}

pub fn midiag(cfg: &RunConfig, checkpoint: &Path, grid: usize) -> Result<(), Failure> {
    let model = load_model(cfg, checkpoint)?;
    let test = load(cfg, Split::Test)?;
    let r = mi_diagnostic(&model, &test, grid)?;
    let fmt = |v: &[f64]| v.iter().map(|t| format!("{t:.6}")).collect::<Vec<_>>().join(",");
    let text = format!(
        "samples={}\ngrid={}\nmi_heatmap_label={:.6}\nmi_input_label={:.6}\nlabel_entropy={:.6}\nheatmap_more_informative={}\nheatmap_thresholds={}\ninput_thresholds={}\n",
        r.samples,
        r.grid,
        r.mi_heatmap_label,
        r.mi_input_label,
        r.label_entropy,
        r.heatmap_more_informative(),
        fmt(&r.heatmap_thresholds),
        fmt(&r.input_thresholds),
    );
    print!("{text}");
    prepare_outdir(cfg)?;
    let p = cfg.outdir.join("metrics").join("midiag.txt");
    fs::write(&p, text).map_err(|e| io_err(&p, e))
}

pub fn gradcheck(rounds: usize, seed: u64) -> Result<(), Failure> {
    let cases = layer_suite(seed, rounds.max(1))?;
    let mut failed = 0;
    for c in &cases {
        let r = &c.report;
        println!(
            "{} {:<32} {:<16} max_rel_error {:.3e}",
            if r.passed { "PASS" } else { "FAIL" },
            c.name,
            format!("{:?}", c.shape),
            r.max_rel_error
        );
        failed += usize::from(!r.passed);
    }
    println!(
        "{} of {} cases passed (step {STEP:e}, tolerance {TOLERANCE:e})",
        cases.len() - failed,
        cases.len()
    );
    if failed > 0 {
        return Err(Failure::Run(format!("{failed} gradient checks failed")));
    }
    Ok(())
}
