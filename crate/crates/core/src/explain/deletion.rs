use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{contract_err, Result};
use crate::model::Model;
use crate::Tensor;

/// Drop in true-class probability after occluding pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeletionScore {
    /// Occluding the top-q heatmap pixels.
    pub targeted: f64,
    /// Occluding the same number of uniformly chosen pixels, averaged over
    /// trials.
    pub random: f64,
}

/// Replaces the `ceil(q * H * W)` highest-heatmap pixels (ties to the lower
/// index) in every channel with that channel's fill value and measures the
/// drop in the true-class softmax probability.
#[allow(clippy::too_many_arguments)]
pub fn deletion_score(
    model: &Model<f32>,
    image: &[f32],
    shape: [usize; 3],
    heatmap: &[f32],
    label: usize,
    q: f64,
    trials: usize,
    seed: u64,
    fill: &[f32],
) -> Result<DeletionScore> {
    let [c, h, w] = shape;
    let hw = h * w;
    if !(0.0..=1.0).contains(&q) {
        return Err(contract_err!("deletion fraction {q} outside [0, 1]"));
    }
    if image.len() != c * hw || heatmap.len() != hw || fill.len() != c {
        return Err(contract_err!(
            "image {} / heatmap {} / fill {} do not match shape {shape:?}",
            image.len(),
            heatmap.len(),
            fill.len()
        ));
    }
    if trials == 0 {
        return Err(contract_err!("deletion needs at least one random trial"));
    }
    let count = ((q * hw as f64).ceil() as usize).min(hw);

    let mut order: Vec<usize> = (0..hw).collect();
    order.sort_by(|&a, &b| heatmap[b].total_cmp(&heatmap[a]).then(a.cmp(&b)));

    let occlude = |pixels: &mut dyn Iterator<Item = usize>| {
        let mut img = image.to_vec();
        for p in pixels {
            for ch in 0..c {
                img[ch * hw + p] = fill[ch];
            }
        }
        img
    };

    let mut batch = image.to_vec();
    batch.extend(occlude(&mut order[..count].iter().copied()));
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
        batch.extend(occlude(&mut sample(&mut rng, hw, count).into_iter()));
    }
    let out = model.infer(&Tensor::from_vec(&[trials + 2, c, h, w], batch)?)?.output;
    let k = out.shape()[1];
    if label >= k {
        return Err(contract_err!("label {label} out of range for {k} classes"));
    }
    let probs: Vec<f64> = out.data().chunks(k).map(|row| true_prob(row, label)).collect();
    let random = probs[2..].iter().map(|p| probs[0] - p).sum::<f64>() / trials as f64;
    Ok(DeletionScore {
        targeted: probs[0] - probs[1],
        random,
    })
}

/// Mean deletion scores over `ds`, using the model's own heatmaps and the
/// dataset's channel means as fill.
pub fn mean_deletion(model: &Model<f32>, ds: &Dataset, q: f64, trials: usize, seed: u64) -> Result<DeletionScore> {
    let fill = ds.channel_means();
    let shape = ds.image_shape();
    let hw = shape[1] * shape[2];
    let (mut targeted, mut random) = (0.0, 0.0);
    for start in (0..ds.len()).step_by(256) {
        let end = (start + 256).min(ds.len());
        let heat = model
            .infer(&ds.images.slice_outer(start, end)?)?
            .heatmap
            .ok_or_else(|| contract_err!("model has no heatmap"))?;
        for i in start..end {
            let hm = &heat.data()[(i - start) * hw..(i - start + 1) * hw];
            let s = deletion_score(
                model,
                ds.image(i),
                shape,
                hm,
                ds.labels[i],
                q,
                trials,
                seed.wrapping_add((i * trials) as u64),
                &fill,
            )?;
            targeted += s.targeted;
            random += s.random;
        }
    }
    let n = ds.len().max(1) as f64;
    Ok(DeletionScore {
        targeted: targeted / n,
        random: random / n,
    })
}

fn true_prob(row: &[f32], label: usize) -> f64 {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let z: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
    (row[label] as f64 - max).exp() / z
}
