//! Evaluation metrics for appearance transfer: color-histogram distance,
//! embedding similarity, depth RMSE, mask IoU, keypoint OKS/AP and dense
//! flow L1 distance.

use crate::error::{dims_mismatch, Error, Result};
use crate::types::{DepthMap, EmbeddingVector, FlowMap, KeypointSet, ObjectMask, RgbImage};

pub const DEFAULT_BINS_PER_CHANNEL: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorSpace {
    Rgb,
    Gray,
}

/// How a histogram's bins are laid out: `bins_per_channel ^ channels`
/// joint bins with uniform edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinLayout {
    pub bins_per_channel: u32,
    pub channels: u32,
    pub color_space: ColorSpace,
}

impl BinLayout {
    pub fn rgb(bins_per_channel: u32) -> Self {
        Self {
            bins_per_channel,
            channels: 3,
            color_space: ColorSpace::Rgb,
        }
    }

    pub fn gray(bins: u32) -> Self {
        Self {
            bins_per_channel: bins,
            channels: 1,
            color_space: ColorSpace::Gray,
        }
    }

    pub fn len(&self) -> usize {
        (self.bins_per_channel as usize).pow(self.channels)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Normalized histogram (frequencies summing to 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    bins: Vec<f64>,
    layout: BinLayout,
}

impl Histogram {
    pub fn new(bins: Vec<f64>, layout: BinLayout) -> Result<Self> {
        if bins.len() != layout.len() {
            return Err(Error::LengthMismatch {
                left: bins.len(),
                right: layout.len(),
            });
        }
        if bins.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::InvariantViolation(
                "histogram bins must be finite and non-negative".into(),
            ));
        }
        let total: f64 = bins.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvariantViolation(format!("histogram sums to {total}, not 1")));
        }
        Ok(Self { bins, layout })
    }

    /// Normalizes raw counts.
    pub fn from_counts(counts: &[u64], layout: BinLayout) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyMask);
        }
        Self::new(counts.iter().map(|c| *c as f64 / total as f64).collect(), layout)
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn layout(&self) -> BinLayout {
        self.layout
    }
}

/// Joint RGB histogram of the masked pixels, uniform edges over `[0, 256)`.
pub fn color_histogram(image: &RgbImage, mask: &ObjectMask, bins_per_channel: u32) -> Result<Histogram> {
    if bins_per_channel == 0 {
        return Err(Error::InvalidConfig("bins_per_channel must be at least 1".into()));
    }
    mask.check_dims("mask vs image", image.dims())?;
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let layout = BinLayout::rgb(bins_per_channel);
    let b = bins_per_channel as usize;
    let mut counts = vec![0u64; layout.len()];
    for q in mask.indices() {
        let [r, g, bl] = image.pixel(q as usize).map(|v| v as usize * b / 256);
        counts[(r * b + g) * b + bl] += 1;
    }
    Histogram::from_counts(&counts, layout)
}

/// Bhattacharyya distance `sqrt(1 − Σ sqrt(p_i q_i))`, in `[0, 1]`.
pub fn bhattacharyya(h1: &Histogram, h2: &Histogram) -> Result<f64> {
    if h1.layout != h2.layout || h1.bins.len() != h2.bins.len() {
        return Err(Error::LayoutMismatch);
    }
    let bc: f64 = h1.bins.iter().zip(&h2.bins).map(|(p, q)| (p * q).sqrt()).sum();
    Ok((1.0 - bc).clamp(0.0, 1.0).sqrt())
}

/// Cosine similarity of two embeddings on a 0–100 scale.
pub fn clip_score(gt: &EmbeddingVector, out: &EmbeddingVector) -> Result<f64> {
    let (a, b) = (gt.values(), out.values());
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0) * 100.0)
}

/// Mean embedding similarity over `N` image pairs (A_clip).
pub fn clip_appearance_score(gt: &[EmbeddingVector], out: &[EmbeddingVector]) -> Result<f64> {
    if gt.len() != out.len() {
        return Err(Error::LengthMismatch {
            left: gt.len(),
            right: out.len(),
        });
    }
    if gt.is_empty() {
        return Err(Error::EmptyList);
    }
    let total = gt.iter().zip(out).map(|(g, o)| clip_score(g, o)).sum::<Result<f64>>()?;
    Ok(total / gt.len() as f64)
}

/// RMSE between two depth maps over the masked pixels (S_depth).
pub fn depth_rmse(d_target: &DepthMap, d_output: &DepthMap, mask: &ObjectMask) -> Result<f64> {
    if d_target.dims() != d_output.dims() {
        return Err(dims_mismatch("depth maps", d_target.dims(), d_output.dims()));
    }
    mask.check_dims("mask vs depth", d_target.dims())?;
    let idx = mask.indices();
    if idx.is_empty() {
        return Err(Error::EmptyMask);
    }
    let sse: f64 = idx
        .iter()
        .map(|&q| {
            let d = d_target.values()[q as usize] as f64 - d_output.values()[q as usize] as f64;
            d * d
        })
        .sum();
    Ok((sse / idx.len() as f64).sqrt())
}

/// Intersection over union of one mask pair.
pub fn iou(a: &ObjectMask, b: &ObjectMask) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(dims_mismatch("masks", a.dims(), b.dims()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.bits().iter().zip(b.bits()) {
        inter += (*x && *y) as usize;
        union += (*x || *y) as usize;
    }
    if union == 0 {
        return Err(Error::EmptyUnion);
    }
    Ok(inter as f64 / union as f64)
}

/// Mean IoU over object pairs (S_miou).
pub fn miou(gt_masks: &[ObjectMask], out_masks: &[ObjectMask]) -> Result<f64> {
    if gt_masks.len() != out_masks.len() {
        return Err(Error::LengthMismatch {
            left: gt_masks.len(),
            right: out_masks.len(),
        });
    }
    if gt_masks.is_empty() {
        return Err(Error::EmptyList);
    }
    let total = gt_masks
        .iter()
        .zip(out_masks)
        .map(|(g, o)| iou(g, o))
        .sum::<Result<f64>>()?;
    Ok(total / gt_masks.len() as f64)
}

/// Object keypoint similarity of a detection against ground truth. Scale,
/// per-keypoint constants and visibility are taken from `gt`.
pub fn oks(pred: &KeypointSet, gt: &KeypointSet) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: gt.len(),
        });
    }
    let s2 = gt.scale() * gt.scale();
    let mut num = 0.0;
    let mut visible = 0usize;
    for i in 0..gt.len() {
        if gt.visibility()[i] == 0 {
            continue;
        }
        visible += 1;
        let [px, py] = pred.points()[i];
        let [gx, gy] = gt.points()[i];
        let d2 = (px - gx).powi(2) + (py - gy).powi(2);
        let k = gt.kappas()[i];
        num += (-d2 / (2.0 * s2 * k * k)).exp();
    }
    if visible == 0 {
        return Err(Error::NoVisibleKeypoints);
    }
    Ok(num / visible as f64)
}

/// OKS thresholds 0.50, 0.55, ..., 0.95.
pub fn default_ap_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// Mean over thresholds of the fraction of OKS values at or above each
/// threshold (S_key).
pub fn keypoint_ap(oks_values: &[f64], thresholds: &[f64]) -> Result<f64> {
    if oks_values.is_empty() || thresholds.is_empty() {
        return Err(Error::EmptyList);
    }
    if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        return Err(Error::InvariantViolation(format!("threshold {t} outside (0, 1]")));
    }
    let n = oks_values.len() as f64;
    let total: f64 = thresholds
        .iter()
        .map(|t| oks_values.iter().filter(|v| **v >= *t).count() as f64 / n)
        .sum();
    Ok(total / thresholds.len() as f64)
}

/// Per-image flow L1 distance: summed `|Δx| + |Δy|` over ground-truth-valid
/// pixels divided by the number of valid pixels.
pub fn flow_l1(pred: &FlowMap, gt: &FlowMap) -> Result<f64> {
    if pred.dims() != gt.dims() {
        return Err(dims_mismatch("flow maps", pred.dims(), gt.dims()));
    }
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for ((p, g), valid) in pred.displacement().iter().zip(gt.displacement()).zip(gt.validity()) {
        if *valid {
            sum += (p[0] as f64 - g[0] as f64).abs() + (p[1] as f64 - g[1] as f64).abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyValidity);
    }
    Ok(sum / count as f64)
}

/// Dataset-level D_flow: mean of per-image [`flow_l1`] values.
pub fn flow_l1_dataset(pairs: &[(FlowMap, FlowMap)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyList);
    }
    let total = pairs.iter().map(|(p, g)| flow_l1(p, g)).sum::<Result<f64>>()?;
    Ok(total / pairs.len() as f64)
}
