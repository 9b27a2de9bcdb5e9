//! Loss-guided region sampling: pixels are drawn per region with probability
//! proportional to a learned weight (times the region's area), and the weights
//! track each region's share of the guidance loss through an EMA.

use std::io::Write;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene_synth::FrameRecord;

pub const DEFAULT_EMA_RATE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionWeights {
    pub w: Vec<f64>,
    pub step: u64,
    pub alpha: f64,
    /// Pixel counts per region from the most recent update.
    pub areas: Vec<usize>,
}

impl RegionWeights {
    pub fn n_regions(&self) -> usize {
        self.w.len()
    }
}

/// How a region's sampling mass is derived from its weight.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingRule {
    /// Mass w_i · A_i: a pixel's probability depends only on its region's weight.
    #[default]
    WeightTimesArea,
    /// Mass w_i for every region present in the frame.
    WeightOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelSample {
    pub u: usize,
    pub v: usize,
    pub region: usize,
}

pub fn init_weights(n: usize) -> Result<RegionWeights> {
    if n == 0 {
        return Err(Error::Sampler("number of regions must be >= 1".into()));
    }
    Ok(RegionWeights { w: vec![1.0 / n as f64; n], step: 0, alpha: DEFAULT_EMA_RATE, areas: vec![0; n] })
}

pub fn region_areas(region_map: &[u8], n: usize) -> Result<Vec<usize>> {
    let mut areas = vec![0; n];
    for &l in region_map {
        let l = l as usize;
        if l >= n {
            return Err(Error::RegionLabel { label: l, n_regions: n });
        }
        areas[l] += 1;
    }
    Ok(areas)
}

/// Draws `n_rays` pixels: a region per ray by its sampling mass, then a pixel
/// uniformly inside that region. Regions absent from the frame are never drawn.
pub fn sample_pixels(
    frame: &FrameRecord,
    weights: &RegionWeights,
    n_rays: usize,
    rule: SamplingRule,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PixelSample>> {
    if n_rays == 0 {
        return Err(Error::Sampler("n_rays must be >= 1".into()));
    }
    let n = weights.n_regions();
    let mut members: Vec<Vec<u32>> = vec![Vec::new(); n];
    for (i, &l) in frame.region_map.iter().enumerate() {
        let l = l as usize;
        if l >= n {
            return Err(Error::RegionLabel { label: l, n_regions: n });
        }
        members[l].push(i as u32);
    }
    let mass: Vec<f64> = members
        .iter()
        .zip(&weights.w)
        .map(|(m, &w)| match (m.is_empty(), rule) {
            (true, _) => 0.0,
            (false, SamplingRule::WeightTimesArea) => w * m.len() as f64,
            (false, SamplingRule::WeightOnly) => w,
        })
        .collect();
    if members.iter().all(Vec::is_empty) {
        return Err(Error::EmptyFrame);
    }
    let dist = WeightedIndex::new(&mass).map_err(|e| Error::Sampler(format!("invalid region weights: {e}")))?;
    Ok((0..n_rays)
        .map(|_| {
            let region = dist.sample(rng);
            let m = &members[region];
            let idx = m[rng.random_range(0..m.len())] as usize;
            PixelSample { u: idx % frame.width, v: idx / frame.width, region }
        })
        .collect())
}

/// Uniform pixel draws over the whole frame, labelled with their regions.
pub fn uniform_pixels(frame: &FrameRecord, n_rays: usize, rng: &mut ChaCha8Rng) -> Vec<PixelSample> {
    let total = frame.width * frame.height;
    (0..n_rays)
        .map(|_| {
            let idx = rng.random_range(0..total);
            PixelSample { u: idx % frame.width, v: idx / frame.width, region: frame.region_map[idx] as usize }
        })
        .collect()
}

/// EMA update: w_i ← α · L_i / (w_i A_i Σ_j L_j) + (1 − α) w_i, with the
/// guidance term taken as 0 when A_i = 0 or Σ_j L_j = 0.
pub fn update_weights(weights: &RegionWeights, losses: &[f64], areas: &[usize]) -> Result<RegionWeights> {
    let n = weights.n_regions();
    if losses.len() != n || areas.len() != n {
        return Err(Error::ShapeMismatch(vec![n], vec![losses.len(), areas.len()]));
    }
    if let Some(l) = losses.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
        return Err(Error::Sampler(format!("region losses must be finite and non-negative, got {l}")));
    }
    let total: f64 = losses.iter().sum();
    let a = weights.alpha;
    let w = weights
        .w
        .iter()
        .zip(losses.iter().zip(areas))
        .map(|(&w, (&l, &area))| {
            let guidance = if area > 0 && total > 0.0 { l / (w * area as f64 * total) } else { 0.0 };
            guidance * a + w * (1.0 - a)
        })
        .collect();
    Ok(RegionWeights { w, step: weights.step + 1, alpha: a, areas: areas.to_vec() })
}

/// Appends `step, w_0 … w_{N−1}` rows to a CSV file, writing a header first.
pub struct WeightLog {
    file: std::io::BufWriter<std::fs::File>,
    path: std::path::PathBuf,
}

impl WeightLog {
    pub fn create(path: &Path, n_regions: usize, append: bool) -> Result<Self> {
        let exists = append && path.is_file();
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(append)
            .write(true)
            .truncate(!append)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut log = WeightLog { file: std::io::BufWriter::new(file), path: path.to_path_buf() };
        if !exists {
            let header: Vec<String> = std::iter::once("step".to_string()).chain((0..n_regions).map(|i| format!("w_{i}"))).collect();
            log.line(&header.join(","))?;
        }
        Ok(log)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.file, "{s}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn record(&mut self, weights: &RegionWeights) -> Result<()> {
        let mut row = weights.step.to_string();
        for w in &weights.w {
            row.push_str(&format!(",{w:.9e}"));
        }
        self.line(&row)
    }

    pub fn flush(&mut self) -> Result<()> {
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}
