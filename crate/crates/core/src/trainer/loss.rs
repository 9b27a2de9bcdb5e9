//! Per-pixel loss terms and the per-region guidance loss that drives sampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::renderer::RenderOutput;
use crate::scene_synth::FrameRecord;

/// Mask predictions are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` inside the log.
pub const BCE_CLAMP: f64 = 1e-6;

/// Ground truth for a batch of pixels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PixelTargets {
    pub rgb: Vec<[f64; 3]>,
    pub mask: Vec<f64>,
    pub depth: Vec<f64>,
    pub region: Vec<usize>,
}

impl PixelTargets {
    pub fn from_frame(frame: &FrameRecord, pixels: &[(usize, usize)]) -> Self {
        let mut t = PixelTargets::default();
        for &(u, v) in pixels {
            let i = frame.index(u, v);
            t.rgb.push(frame.color(u, v).map(f64::from));
            t.mask.push(frame.mask[i] as f64);
            t.depth.push(frame.pseudo_depth[i] as f64);
            t.region.push(frame.region_map[i] as usize);
        }
        t
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }
}

/// Binary cross-entropy of a clamped prediction and its derivative in the
/// prediction (zero where the clamp is active).
pub fn bce(pred: f64, target: f64) -> (f64, f64) {
    let p = pred.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    let value = -(target * p.ln() + (1.0 - target) * (1.0 - p).ln());
    let grad = if pred <= BCE_CLAMP || pred >= 1.0 - BCE_CLAMP { 0.0 } else { -target / p + (1.0 - target) / (1.0 - p) };
    (value, grad)
}

/// Mean absolute channel difference and its gradient in the prediction.
pub fn color_l1(pred: [f64; 3], target: [f64; 3]) -> (f64, [f64; 3]) {
    let mut value = 0.0;
    let mut grad = [0.0; 3];
    for k in 0..3 {
        let d = pred[k] - target[k];
        value += d.abs() / 3.0;
        grad[k] = d.signum() / 3.0;
    }
    (value, grad)
}

fn sign(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum()
    }
}

/// |a − b| with a subgradient of 0 at the kink.
pub fn abs_diff(a: f64, b: f64) -> (f64, f64) {
    ((a - b).abs(), sign(a - b))
}

/// Guidance loss of one region, split into its photometric and depth parts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionLoss {
    pub render: f64,
    pub depth: f64,
    pub total: f64,
    /// Number of batch pixels that fell in the region.
    pub pixels: usize,
}

/// How pixel contributions to a region's guidance loss are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionAggregation {
    #[default]
    Sum,
    Mean,
}

/// Per-region guidance loss: for each pixel of region i, the photometric L1
/// plus mask BCE (weighted by `lambda1`), and the depth L1 on foreground
/// pixels (weighted by `lambda2`), summed over the region's pixels.
pub fn guidance_loss(
    pred: &RenderOutput,
    truth: &PixelTargets,
    n_regions: usize,
    lambda1: f64,
    lambda2: f64,
) -> Result<Vec<RegionLoss>> {
    let n = truth.len();
    if pred.len() != n || truth.rgb.len() != n || truth.depth.len() != n || truth.region.len() != n {
        return Err(Error::ShapeMismatch(vec![pred.len()], vec![n, truth.rgb.len(), truth.depth.len(), truth.region.len()]));
    }
    let mut out = vec![RegionLoss::default(); n_regions];
    for j in 0..n {
        let r = truth.region[j];
        if r >= n_regions {
            return Err(Error::RegionLabel { label: r, n_regions });
        }
        let slot = &mut out[r];
        slot.render += color_l1(pred.rgb[j], truth.rgb[j]).0 + bce(pred.mask[j], truth.mask[j]).0;
        slot.depth += truth.mask[j] * (pred.depth[j] - truth.depth[j]).abs();
        slot.pixels += 1;
    }
    for slot in &mut out {
        slot.total = lambda1 * slot.render + lambda2 * slot.depth;
    }
    Ok(out)
}

/// The per-region values handed to the sampler's weight update.
pub fn aggregate_regions(losses: &[RegionLoss], mode: RegionAggregation) -> Vec<f64> {
    losses
        .iter()
        .map(|l| match mode {
            RegionAggregation::Sum => l.total,
            RegionAggregation::Mean if l.pixels > 0 => l.total / l.pixels as f64,
            RegionAggregation::Mean => 0.0,
        })
        .collect()
}
