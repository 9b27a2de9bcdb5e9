//! Evaluation of trained models: image metrics on dataset splits, reenactment
//! under foreign expression sequences, and mesh-vs-oracle geometry error.

pub mod metrics;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use metrics::{mae, mae_masked, psnr, psnr_masked, ssim, ssim_masked, ImageShape, PSNR_CAP};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::fields::{Checkpoint, ExpressionVector, FieldParams};
use crate::renderer::{extract_mesh, render_image, NetworkField, RenderedImage, SamplingConfig};
use crate::scene_synth::{Dataset, FrameRecord, SceneDefinition, Split};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame_id: usize,
    pub mae: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Metrics averaged over the frames of one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub psnr: f64,
    pub ssim: f64,
    /// Reserved; perceptual metrics are not computed.
    pub lpips: Option<f64>,
    pub n_frames: usize,
    pub split: Split,
    /// Whether metrics were restricted to ground-truth foreground pixels.
    pub masked: bool,
    pub frames: Vec<FrameMetrics>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub sampling: SamplingConfig,
    pub masked: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { sampling: SamplingConfig::evaluation(), masked: false }
    }
}

/// Metrics of one predicted RGB image against a ground-truth frame.
pub fn score_frame(pred_rgb: &[f32], truth: &FrameRecord, masked: bool) -> Result<FrameMetrics> {
    let shape = ImageShape::rgb(truth.width, truth.height);
    let mask = masked.then_some(truth.mask.as_slice());
    Ok(FrameMetrics {
        frame_id: truth.frame_id,
        mae: mae_masked(pred_rgb, &truth.rgb, mask)?,
        psnr: psnr_masked(pred_rgb, &truth.rgb, mask)?,
        ssim: ssim_masked(pred_rgb, &truth.rgb, shape, mask)?,
    })
}

/// Averages per-frame metrics into a report.
pub fn summarize(frames: Vec<FrameMetrics>, split: Split, masked: bool) -> MetricsReport {
    let n = frames.len().max(1) as f64;
    MetricsReport {
        mae: frames.iter().map(|f| f.mae).sum::<f64>() / n,
        psnr: frames.iter().map(|f| f.psnr).sum::<f64>() / n,
        ssim: frames.iter().map(|f| f.ssim).sum::<f64>() / n,
        lpips: None,
        n_frames: frames.len(),
        split,
        masked,
        frames,
    }
}

/// Renders one frame's view under its own expression.
pub fn render_frame(params: &FieldParams<f32>, frame: &FrameRecord, bound_radius: f64, sampling: &SamplingConfig, background: [f64; 3]) -> Result<RenderedImage> {
    let field = NetworkField::new(params, &frame.expression)?;
    render_image(&field, &frame.camera, bound_radius, sampling, background)
}

/// Renders every frame of `split` at full resolution and scores it against
/// the ground truth.
pub fn evaluate(params: &FieldParams<f32>, dataset: &Dataset, split: Split, opts: &EvalOptions) -> Result<MetricsReport> {
    check_k(params.config.k, dataset)?;
    let m = &dataset.manifest;
    let frames = dataset
        .split(split)
        .into_iter()
        .map(|f| {
            let img = render_frame(params, f, m.bound_radius, &opts.sampling, m.scene.background)?;
            score_frame(&img.rgb, f, opts.masked)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(frames, split, opts.masked))
}

fn check_k(k: usize, dataset: &Dataset) -> Result<()> {
    if k != dataset.manifest.k {
        return Err(Error::ConfigHash(format!(
            "model expects K = {k} but dataset {} has K = {}",
            dataset.manifest.scene_config_hash, dataset.manifest.k
        )));
    }
    Ok(())
}

/// Loads a checkpoint's parameters after checking it fits the dataset.
pub fn load_for_dataset(ckpt_dir: &Path, dataset: &Dataset) -> Result<FieldParams<f32>> {
    let ckpt = Checkpoint::load(ckpt_dir)?;
    check_k(ckpt.manifest.net_config.k, dataset)?;
    ckpt.params()
}

/// Renders one image per expression from a fixed camera.
pub fn reenact(
    params: &FieldParams<f32>,
    expressions: &[ExpressionVector],
    camera: &CameraModel,
    bound_radius: f64,
    sampling: &SamplingConfig,
    background: [f64; 3],
) -> Result<Vec<RenderedImage>> {
    for e in expressions {
        if e.len() != params.config.k {
            return Err(Error::Dimension { what: "reenactment expression", expected: params.config.k, got: e.len() });
        }
    }
    expressions
        .iter()
        .map(|e| render_image(&NetworkField::new(params, e)?, camera, bound_radius, sampling, background))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryError {
    /// Mean |analytic SDF| over the extracted mesh vertices.
    pub mean_abs_sdf: f64,
    pub n_vertices: usize,
    pub cell_diagonal: f64,
}

/// Extracts the learned surface under `eps` on a `resolution`³ grid spanning
/// the scene bounds and measures it against the analytic surface.
pub fn geometry_error(params: &FieldParams<f32>, scene: &SceneDefinition, eps: &ExpressionVector, resolution: usize) -> Result<GeometryError> {
    let field = NetworkField::new(params, eps)?;
    let half = scene.bound_radius();
    let mesh = extract_mesh(&field, half, resolution, 0.0)?;
    if mesh.vertices.is_empty() {
        return Err(Error::Mesh("the learned field has no zero crossing inside the bounds".into()));
    }
    let total: f64 = mesh.vertices.iter().map(|&v| scene.analytic_sdf(v, eps).abs()).sum();
    Ok(GeometryError {
        mean_abs_sdf: total / mesh.vertices.len() as f64,
        n_vertices: mesh.vertices.len(),
        cell_diagonal: 3f64.sqrt() * 2.0 * half / resolution as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::init_params;
    use crate::scene_synth::{make_scene, DatasetConfig, SceneConfig};
    use crate::trainer::toy_net_config;

    fn tiny_dataset(k: usize) -> Dataset {
        let scene = make_scene(0, &SceneConfig { k, ..Default::default() }).unwrap();
        Dataset::synthesize(&scene, &DatasetConfig { n_frames: 5, width: 16, height: 16, ..Default::default() }).unwrap()
    }

    #[test]
    fn ground_truth_scores_perfectly() {
        let ds = tiny_dataset(4);
        let frames: Vec<FrameMetrics> = ds.split(Split::Train).into_iter().map(|f| score_frame(&f.rgb, f, false).unwrap()).collect();
        let report = summarize(frames, Split::Train, false);
        assert_eq!(report.mae, 0.0);
        assert_eq!(report.psnr, PSNR_CAP);
        assert!((report.ssim - 1.0).abs() < 1e-9);
        assert_eq!(report.n_frames, ds.manifest.split_ids(Split::Train).len());
        assert!(report.lpips.is_none());
    }

    #[test]
    fn mismatched_k_is_a_config_hash_error() {
        let ds = tiny_dataset(4);
        let params = init_params::<f32>(0, &NetConfig { k: 6, ..toy_net_config() }).unwrap();
        let err = evaluate(&params, &ds, Split::Heldout, &EvalOptions::default()).unwrap_err();
        assert!(err.to_string().contains("config hash mismatch"));
    }

    #[test]
    fn report_counts_split_frames() {
        let ds = tiny_dataset(4);
        let params = init_params::<f32>(0, &NetConfig { k: 4, ..toy_net_config() }).unwrap();
        let opts = EvalOptions { sampling: SamplingConfig { n_coarse: 8, n_importance: 0, up_sample_steps: 1, perturb: false }, masked: false };
        let report = evaluate(&params, &ds, Split::Heldout, &opts).unwrap();
        assert_eq!(report.n_frames, ds.split(Split::Heldout).len());
        assert!(report.psnr > 0.0 && report.ssim <= 1.0);
    }

    #[test]
    fn reenactment_lengths() {
        let ds = tiny_dataset(4);
        let params = init_params::<f32>(0, &NetConfig { k: 4, ..toy_net_config() }).unwrap();
        let cam = &ds.frames[0].camera;
        let cfg = SamplingConfig { n_coarse: 8, n_importance: 0, up_sample_steps: 1, perturb: false };
        assert!(reenact(&params, &[], cam, 1.5, &cfg, [0.5; 3]).unwrap().is_empty());
        assert!(reenact(&params, &[ExpressionVector::zeros(3)], cam, 1.5, &cfg, [0.5; 3]).is_err());
        assert_eq!(reenact(&params, &vec![ExpressionVector::zeros(4); 2], cam, 1.5, &cfg, [0.5; 3]).unwrap().len(), 2);
    }

    #[test]
    fn sphere_init_geometry_error_is_the_radius_gap() {
        let scene = make_scene(0, &SceneConfig { k: 4, max_amplitude: 0.0, ..Default::default() }).unwrap();
        let params = init_params::<f32>(0, &NetConfig { k: 4, init_radius: 0.9, ..toy_net_config() }).unwrap();
        let g = geometry_error(&params, &scene, &ExpressionVector::zeros(4), 32).unwrap();
        assert!((g.mean_abs_sdf - 0.1).abs() < 0.5 * g.cell_diagonal);
    }

    use crate::fields::NetConfig;
}
