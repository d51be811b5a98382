use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{contract_err, Result};
use crate::tensor::Tensor;

/// Per-sample training augmentation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Augment {
    /// Mirror left-right with probability 1/2.
    pub flip: bool,
    /// Pad by this many black pixels, then crop back at a random offset.
    pub crop_pad: usize,
}

impl Augment {
    pub const NONE: Augment = Augment {
        flip: false,
        crop_pad: 0,
    };
    pub const CIFAR: Augment = Augment {
        flip: true,
        crop_pad: 4,
    };

    pub fn is_none(&self) -> bool {
        !self.flip && self.crop_pad == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub shuffle: bool,
    pub seed: u64,
    pub augment: Augment,
}

impl BatchPlan {
    /// Shuffled, no augmentation.
    pub fn shuffled(batch_size: usize, seed: u64) -> Self {
        BatchPlan {
            batch_size,
            shuffle: true,
            seed,
            augment: Augment::NONE,
        }
    }

    /// In-order, no augmentation; for evaluation.
    pub fn sequential(batch_size: usize) -> Self {
        BatchPlan {
            batch_size,
            shuffle: false,
            seed: 0,
            augment: Augment::NONE,
        }
    }

    /// Visit order for `epoch`: a seeded permutation when shuffling.
    pub fn order(&self, n: usize, epoch: u64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        if self.shuffle {
            idx.shuffle(&mut epoch_rng(self.seed, epoch, 0));
        }
        idx
    }

    pub fn batches<'a>(&self, ds: &'a Dataset, epoch: u64) -> Result<Batches<'a>> {
        if self.batch_size == 0 {
            return Err(contract_err!("batch size must be at least 1"));
        }
        Ok(Batches {
            ds,
            plan: *self,
            order: self.order(ds.len(), epoch),
            pos: 0,
            aug_rng: epoch_rng(self.seed, epoch, 1),
        })
    }

    pub fn num_batches(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size.max(1))
    }
}

/// Independent stream per (seed, epoch, purpose).
fn epoch_rng(seed: u64, epoch: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch.wrapping_mul(2).wrapping_add(purpose));
    rng
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    /// Source indices into the dataset.
    pub indices: Vec<usize>,
}

pub struct Batches<'a> {
    ds: &'a Dataset,
    plan: BatchPlan,
    order: Vec<usize>,
    pos: usize,
    aug_rng: ChaCha8Rng,
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.plan.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        let mut images = self
            .ds
            .images
            .gather_outer(&indices)
            .expect("indices come from the dataset");
        if !self.plan.augment.is_none() {
            let [c, h, w] = self.ds.image_shape();
            for img in images.data_mut().chunks_mut(c * h * w) {
                augment(img, [c, h, w], self.plan.augment, &mut self.aug_rng);
            }
        }
        Some(Batch {
            images,
            labels: indices.iter().map(|&i| self.ds.labels[i]).collect(),
            indices,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.plan.num_batches(self.order.len() - self.pos);
        (left, Some(left))
    }
}

/// Applies flip and pad-crop to one `[C, H, W]` image in place.
pub fn augment(img: &mut [f32], [c, h, w]: [usize; 3], aug: Augment, rng: &mut ChaCha8Rng) {
    let flip = aug.flip && rng.random_bool(0.5);
    let p = aug.crop_pad as i64;
    let (dy, dx) = if p > 0 {
        (rng.random_range(-p..=p), rng.random_range(-p..=p))
    } else {
        (0, 0)
    };
    if !flip && dy == 0 && dx == 0 {
        return;
    }
    let src = img.to_vec();
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let sx = if flip { w - 1 - x } else { x };
                let (sy, sx) = (y as i64 + dy, sx as i64 + dx);
                img[(ch * h + y) * w + x] = if sy < 0 || sx < 0 || sy >= h as i64 || sx >= w as i64 {
                    -1.0
                } else {
                    plane[sy as usize * w + sx as usize]
                };
            }
        }
    }
}
