//! Cross-entropy training with SGD, evaluation, metrics and checkpoints.

mod checkpoint;
mod optim;

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

pub use checkpoint::{Checkpoint, NamedTensor, TrainState, MAGIC, VERSION};
pub use optim::{lr_schedule, OptimConfig, Sgd};

use crate::data::{Augment, BatchPlan, Dataset};
use crate::error::{contract_err, shape_err, Result, XcnnError};
use crate::model::{LayerSpec, Model};
use crate::tensor::{Element, Tape, Tensor};

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,val_acc,seconds";
const VELOCITY_PREFIX: &str = "optim.velocity.";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainMetrics {
    /// 1-based index of the finished epoch.
    pub epoch: usize,
    /// Mean cross-entropy in nats over the epoch's samples.
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub seconds: f64,
}

impl TrainMetrics {
    pub fn csv_row(&self) -> String {
        let val = self.val_acc.map(|v| format!("{v:.6}")).unwrap_or_default();
        format!(
            "{},{:.6},{:.6},{},{:.3}",
            self.epoch, self.train_loss, self.train_acc, val, self.seconds
        )
    }
}

/// Appends rows to a metrics CSV, writing the header when the file is new.
pub fn append_metrics(path: &Path, m: &TrainMetrics) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| XcnnError::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(METRICS_HEADER);
        text.push('\n');
    }
    text.push_str(&m.csv_row());
    text.push('\n');
    f.write_all(text.as_bytes()).map_err(|e| XcnnError::io(path, e))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Element>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn has_batch_norm<T: Element>(model: &Model<T>) -> bool {
    model
        .spec()
        .sections
        .iter()
        .flat_map(|s| &s.layers)
        .any(|l| matches!(l, LayerSpec::BatchNorm2d { .. }))
}

/// One pass over `ds`: forward, cross-entropy, backward and an SGD step per
/// batch. With batch norm present a trailing batch of one sample cannot be
/// normalized and is skipped.
pub fn train_epoch(
    model: &mut Model<f32>,
    ds: &Dataset,
    plan: &BatchPlan,
    opt: &mut Sgd<f32>,
    epoch: usize,
) -> Result<TrainMetrics> {
    let start = Instant::now();
    let bn = has_batch_norm(model);
    let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
    let mut tape = Tape::new();
    for batch in plan.batches(ds, epoch as u64)? {
        let n = batch.labels.len();
        if bn && n < 2 {
            continue;
        }
        tape.clear();
        let x = tape.constant(batch.images);
        let out = model.forward_train(&mut tape, x)?;
        let loss = tape.softmax_cross_entropy(out.output, &batch.labels)?;
        let l = tape.value(loss).data()[0] as f64;
        if !l.is_finite() {
            return Err(XcnnError::Numerical(format!("loss {l} at epoch {}", epoch + 1)));
        }
        let logits = tape.value(out.output);
        let k = logits.shape()[1];
        correct += logits
            .data()
            .chunks(k)
            .zip(&batch.labels)
            .filter(|(row, &y)| argmax(row) == y)
            .count();
        loss_sum += l * n as f64;
        seen += n;
        tape.backward(loss)?;
        model.params_mut().accumulate_grads(tape.take_param_grads());
        opt.step(model.params_mut())?;
    }
    let seen_f = seen.max(1) as f64;
    Ok(TrainMetrics {
        epoch: epoch + 1,
        train_loss: loss_sum / seen_f,
        train_acc: correct as f64 / seen_f,
        val_acc: None,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub accuracy: f64,
    pub mean_loss: f64,
    pub samples: usize,
}

/// Per-batch `(correct, summed loss)` in eval mode, without a tape.
fn eval_batch(model: &Model<f32>, images: &Tensor<f32>, labels: &[usize]) -> Result<(usize, f64)> {
    let logits = model.infer(images)?.output;
    let k = logits.shape()[1];
    let (loss, _) = crate::nn::softmax_cross_entropy_forward(&logits, labels)?;
    let correct = logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok((correct, loss.as_f64() * labels.len() as f64))
}

/// Top-1 accuracy and mean loss. Batches are split across `threads` workers;
/// partial sums are combined in batch order so the result does not depend on
/// the thread count.
pub fn evaluate(model: &Model<f32>, ds: &Dataset, batch_size: usize, threads: usize) -> Result<EvalResult> {
    if ds.is_empty() {
        return Err(contract_err!("cannot evaluate on an empty dataset"));
    }
    let plan = BatchPlan::sequential(batch_size);
    let batches: Vec<_> = plan.batches(ds, 0)?.collect();
    let threads = threads.clamp(1, batches.len());
    let per = batches.len().div_ceil(threads);
    let results: Vec<Result<Vec<(usize, f64)>>> = if threads == 1 {
        vec![batches.iter().map(|b| eval_batch(model, &b.images, &b.labels)).collect()]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = batches
                .chunks(per)
                .map(|chunk| {
                    s.spawn(move || {
                        chunk
                            .iter()
                            .map(|b| eval_batch(model, &b.images, &b.labels))
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
        })
    };
    let (mut correct, mut loss) = (0usize, 0.0f64);
    for part in results {
        for (c, l) in part? {
            correct += c;
            loss += l;
        }
    }
    Ok(EvalResult {
        accuracy: correct as f64 / ds.len() as f64,
        mean_loss: loss / ds.len() as f64,
        samples: ds.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub optim: OptimConfig,
    /// Epoch indices (0-based) at which the learning rate is multiplied by
    /// `lr_gamma`.
    pub milestones: Vec<usize>,
    pub lr_gamma: f64,
    pub seed: u64,
    pub augment: Augment,
    /// Evaluation workers; training itself is always sequential.
    pub threads: usize,
}

impl TrainConfig {
    pub fn new(batch_size: usize, lr: f64, seed: u64) -> Self {
        TrainConfig {
            batch_size,
            optim: OptimConfig {
                lr,
                momentum: 0.9,
                weight_decay: 0.0,
            },
            milestones: Vec::new(),
            lr_gamma: 0.1,
            seed,
            augment: Augment::NONE,
            threads: 1,
        }
    }

    pub fn plan(&self) -> BatchPlan {
        BatchPlan {
            batch_size: self.batch_size,
            shuffle: true,
            seed: self.seed,
            augment: self.augment,
        }
    }
}

/// A model, its optimizer and the number of completed epochs.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model<f32>,
    pub opt: Sgd<f32>,
    pub config: TrainConfig,
    pub epoch: usize,
}

impl Trainer {
    pub fn new(model: Model<f32>, config: TrainConfig) -> Result<Self> {
        let opt = Sgd::new(config.optim, model.params())?;
        Ok(Trainer {
            model,
            opt,
            config,
            epoch: 0,
        })
    }

    pub fn current_lr(&self) -> f64 {
        lr_schedule(self.config.optim.lr, self.epoch, &self.config.milestones, self.config.lr_gamma)
    }

    /// Trains one epoch, then scores `val` if given.
    pub fn run_epoch(&mut self, train: &Dataset, val: Option<&Dataset>) -> Result<TrainMetrics> {
        self.opt.config.lr = self.current_lr();
        let plan = self.config.plan();
        let mut m = train_epoch(&mut self.model, train, &plan, &mut self.opt, self.epoch)?;
        self.epoch += 1;
        if let Some(v) = val {
            let start = Instant::now();
            m.val_acc = Some(evaluate(&self.model, v, self.config.batch_size.max(100), self.config.threads)?.accuracy);
            m.seconds += start.elapsed().as_secs_f64();
        }
        Ok(m)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut tensors = Vec::new();
        for e in self.model.params().entries() {
            tensors.push(NamedTensor {
                name: e.name.clone(),
                shape: e.tensor.shape().to_vec(),
                data: e.tensor.data().to_vec(),
            });
        }
        for (slot, e) in self.model.params().entries().iter().enumerate() {
            if e.trainable {
                tensors.push(NamedTensor {
                    name: format!("{VELOCITY_PREFIX}{}", e.name),
                    shape: e.tensor.shape().to_vec(),
                    data: self.opt.velocity(slot).to_vec(),
                });
            }
        }
        Checkpoint {
            spec: self.model.spec().clone(),
            state: TrainState {
                epoch: self.epoch,
                seed: self.config.seed,
                batch_size: self.config.batch_size,
                base_lr: self.config.optim.lr,
                momentum: self.config.optim.momentum,
                weight_decay: self.config.optim.weight_decay,
                milestones: self.config.milestones.clone(),
                lr_gamma: self.config.lr_gamma,
            },
            tensors,
        }
    }

    /// Rebuilds a trainer from a checkpoint. Augmentation and thread count
    /// are not part of the checkpoint and come from `config`.
    pub fn from_checkpoint(ck: &Checkpoint, augment: Augment, threads: usize) -> Result<Self> {
        let s = &ck.state;
        let config = TrainConfig {
            batch_size: s.batch_size,
            optim: OptimConfig {
                lr: s.base_lr,
                momentum: s.momentum,
                weight_decay: s.weight_decay,
            },
            milestones: s.milestones.clone(),
            lr_gamma: s.lr_gamma,
            seed: s.seed,
            augment,
            threads,
        };
        let mut t = Trainer::new(Model::new(ck.spec.clone(), s.seed)?, config)?;
        t.restore(ck)?;
        Ok(t)
    }

    /// Loads parameters, velocities and the epoch counter. Every tensor is
    /// validated before anything is written, so a failed restore leaves the
    /// trainer unchanged.
    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        if &ck.spec != self.model.spec() {
            return Err(shape_err!(
                "checkpoint holds a {} model, trainer has {}",
                ck.spec.variant,
                self.model.spec().variant
            ));
        }
        let params = self.model.params();
        let mut plan = Vec::new();
        for (slot, e) in params.entries().iter().enumerate() {
            let find = |name: &str| -> Result<&NamedTensor> {
                let t = ck
                    .tensor(name)
                    .ok_or_else(|| shape_err!("checkpoint lacks tensor {name}"))?;
                if t.shape != e.tensor.shape() {
                    return Err(shape_err!(
                        "{name}: checkpoint shape {:?}, model shape {:?}",
                        t.shape,
                        e.tensor.shape()
                    ));
                }
                Ok(t)
            };
            let value = find(&e.name)?;
            let velocity = if e.trainable {
                Some(find(&format!("{VELOCITY_PREFIX}{}", e.name))?)
            } else {
                None
            };
            plan.push((slot, value, velocity));
        }
        let expected = plan.len() + plan.iter().filter(|p| p.2.is_some()).count();
        if ck.tensors.len() != expected {
            return Err(shape_err!(
                "checkpoint has {} tensors, model needs {expected}",
                ck.tensors.len()
            ));
        }
        for (slot, value, velocity) in plan {
            let id = crate::ParamId(slot);
            self.model.params_mut().get_mut(id).data_mut().copy_from_slice(&value.data);
            if let Some(v) = velocity {
                self.opt.velocity_mut(slot).copy_from_slice(&v.data);
            }
        }
        self.model.params_mut().zero_grads();
        self.epoch = ck.state.epoch;
        self.config.seed = ck.state.seed;
        Ok(())
    }
}
