use std::collections::BTreeMap;

use crate::data::Dataset;
use crate::error::{contract_err, Result};
use crate::model::Model;

/// Fewer samples than this make the plug-in estimate too biased to report.
pub const MIN_SAMPLES: usize = 1000;

/// Codes are packed into a `u64`, one bit per cell.
const MAX_GRID: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct GridCode {
    pub codes: Vec<u64>,
    /// Per-cell median used as the binarization threshold, row-major.
    pub thresholds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MIReport {
    /// Nats.
    pub mi_heatmap_label: f64,
    /// Nats.
    pub mi_input_label: f64,
    /// Entropy of the labels in nats, an upper bound on both estimates.
    pub label_entropy: f64,
    pub grid: usize,
    pub heatmap_thresholds: Vec<f64>,
    pub input_thresholds: Vec<f64>,
    pub samples: usize,
}

impl MIReport {
    /// Whether the heatmap code carries more label information than the
    /// input code.
    pub fn heatmap_more_informative(&self) -> bool {
        self.mi_heatmap_label > self.mi_input_label
    }
}

/// Plug-in estimate of I(code; label) in nats from joint counts.
pub fn plugin_mutual_information(codes: &[u64], labels: &[usize]) -> f64 {
    assert_eq!(codes.len(), labels.len(), "codes and labels differ in length");
    if codes.is_empty() {
        return 0.0;
    }
    let n = codes.len() as f64;
    let mut joint: BTreeMap<(u64, usize), usize> = BTreeMap::new();
    let mut pc: BTreeMap<u64, usize> = BTreeMap::new();
    let mut pl: BTreeMap<usize, usize> = BTreeMap::new();
    for (&c, &l) in codes.iter().zip(labels) {
        *joint.entry((c, l)).or_default() += 1;
        *pc.entry(c).or_default() += 1;
        *pl.entry(l).or_default() += 1;
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(c, l), &nj)| {
            let nj = nj as f64;
            nj / n * (nj * n / (pc[&c] as f64 * pl[&l] as f64)).ln()
        })
        .sum();
    mi.max(0.0)
}

/// Average-pools each `h × w` map to `grid × grid` cells and sets bit `k`
/// when cell `k` exceeds that cell's median over all maps.
pub fn grid_codes(maps: &[f32], n: usize, h: usize, w: usize, grid: usize) -> Result<GridCode> {
    if grid == 0 || grid > MAX_GRID || grid > h || grid > w {
        return Err(contract_err!("grid {grid} invalid for {h}x{w} maps (max {MAX_GRID})"));
    }
    if maps.len() != n * h * w {
        return Err(contract_err!("{} values do not form {n} maps of {h}x{w}", maps.len()));
    }
    let cells = grid * grid;
    let mut pooled = vec![0.0f64; n * cells];
    for (map, out) in maps.chunks(h * w).zip(pooled.chunks_mut(cells)) {
        for gy in 0..grid {
            let (y0, y1) = (gy * h / grid, (gy + 1) * h / grid);
            for gx in 0..grid {
                let (x0, x1) = (gx * w / grid, (gx + 1) * w / grid);
                let mut s = 0.0;
                for y in y0..y1 {
                    s += map[y * w + x0..y * w + x1].iter().map(|&v| v as f64).sum::<f64>();
                }
                out[gy * grid + gx] = s / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
    }
    let thresholds: Vec<f64> = (0..cells)
        .map(|k| {
            let mut col: Vec<f64> = pooled.iter().skip(k).step_by(cells).copied().collect();
            median(&mut col)
        })
        .collect();
    let codes = pooled
        .chunks(cells)
        .map(|row| {
            row.iter()
                .zip(&thresholds)
                .enumerate()
                .fold(0u64, |code, (k, (&v, &t))| code | (u64::from(v > t) << k))
        })
        .collect();
    Ok(GridCode { codes, thresholds })
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Estimates I(heatmap code; label) and I(input code; label) over `ds`.
/// Multi-channel inputs are averaged to gray first.
pub fn mi_diagnostic(model: &Model<f32>, ds: &Dataset, grid: usize) -> Result<MIReport> {
    let n = ds.len();
    if n < MIN_SAMPLES {
        return Err(contract_err!("MI diagnostic needs at least {MIN_SAMPLES} samples, got {n}"));
    }
    if ds.class_histogram().iter().filter(|&&c| c > 0).count() < 2 {
        return Err(contract_err!("MI diagnostic needs at least two classes present"));
    }
    let [c, h, w] = ds.image_shape();
    let hw = h * w;
    let mut heat = Vec::with_capacity(n * hw);
    for start in (0..n).step_by(256) {
        let end = (start + 256).min(n);
        let out = model.infer(&ds.images.slice_outer(start, end)?)?;
        let hm = out.heatmap.ok_or_else(|| contract_err!("model has no heatmap"))?;
        heat.extend_from_slice(hm.data());
    }
    let gray: Vec<f32> = (0..n)
        .flat_map(|i| {
            let img = ds.image(i);
            (0..hw).map(move |p| (0..c).map(|ch| img[ch * hw + p]).sum::<f32>() / c as f32)
        })
        .collect();
    let hcode = grid_codes(&heat, n, h, w, grid)?;
    let icode = grid_codes(&gray, n, h, w, grid)?;
    Ok(MIReport {
        mi_heatmap_label: plugin_mutual_information(&hcode.codes, &ds.labels),
        mi_input_label: plugin_mutual_information(&icode.codes, &ds.labels),
        label_entropy: label_entropy(&ds.labels),
        grid,
        heatmap_thresholds: hcode.thresholds,
        input_thresholds: icode.thresholds,
        samples: n,
    })
}

/// H(label) as I(label; label).
fn label_entropy(labels: &[usize]) -> f64 {
    let codes: Vec<u64> = labels.iter().map(|&l| l as u64).collect();
    plugin_mutual_information(&codes, labels)
}
