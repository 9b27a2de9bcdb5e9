//! One optimization step split into batch preparation (pixel choice, ray
//! sampling, auxiliary points) and a pure loss/gradient evaluation, so the
//! latter can be checked against finite differences with the batch frozen.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::loss::{abs_diff, bce, color_l1, guidance_loss, PixelTargets};
use super::{LossBreakdown, Stage, TermWeights};
use crate::error::Result;
use crate::fields::{ExpressionVector, FieldParams, PipelineTape};
use crate::real::{Real, Vec3};
use crate::renderer::{generate_rays, render_backward, render_forward, sample_rays, NetworkField, PixelGrad, Ray, RenderOutput, RenderTape, SamplingConfig};
use crate::scene_synth::FrameRecord;

/// Pseudo-surface points for the geometry-initialization terms: every
/// foreground pixel's ray evaluated at its pseudo-depth.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GeometrySupervisionBatch {
    pub pixels: Vec<(usize, usize)>,
    pub surface_points: Vec<Vec3>,
    pub target_depths: Vec<f64>,
    /// Filled in by [`evaluate_batch`].
    pub predicted_surface_sdf: Vec<f64>,
}

impl GeometrySupervisionBatch {
    pub fn from_rays(rays: &[Ray], targets: &PixelTargets) -> Self {
        let mut g = GeometrySupervisionBatch::default();
        for (r, (&m, &d)) in rays.iter().zip(targets.mask.iter().zip(&targets.depth)) {
            if m > 0.5 {
                g.pixels.push(r.pixel);
                g.surface_points.push(r.at(d));
                g.target_depths.push(d);
            }
        }
        g
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Everything one step's loss depends on besides the parameters.
#[derive(Clone, Debug)]
pub struct Batch {
    pub stage: Stage,
    pub frame_id: usize,
    pub eps: ExpressionVector,
    pub rays: Vec<Ray>,
    /// Interval endpoints per ray.
    pub samples: Vec<Vec<f64>>,
    pub targets: PixelTargets,
    /// Uniform points in the scene bounds for the eikonal term.
    pub eikonal_points: Vec<Vec3>,
    /// Empty outside the coarse stage.
    pub geometry: GeometrySupervisionBatch,
    pub background: [f64; 3],
}

#[allow(clippy::too_many_arguments)]
pub fn prepare_batch<T: Real>(
    params: &FieldParams<T>,
    frame: &FrameRecord,
    pixels: &[(usize, usize)],
    stage: Stage,
    sampling: &SamplingConfig,
    n_eikonal: usize,
    bound_radius: f64,
    background: [f64; 3],
    rng: &mut ChaCha8Rng,
) -> Result<Batch> {
    let rays = generate_rays(&frame.camera, pixels, bound_radius)?;
    let field = NetworkField::new(params, &frame.expression)?;
    let samples = sample_rays(&rays, sampling, &field, Some(rng));
    let targets = PixelTargets::from_frame(frame, pixels);
    let eikonal_points = (0..n_eikonal)
        .map(|_| [0, 1, 2].map(|_| rng.random_range(-bound_radius..bound_radius)))
        .collect();
    let geometry = match stage {
        Stage::Coarse => GeometrySupervisionBatch::from_rays(&rays, &targets),
        Stage::Fine => GeometrySupervisionBatch::default(),
    };
    Ok(Batch {
        stage,
        frame_id: frame.frame_id,
        eps: frame.expression.clone(),
        rays,
        samples,
        targets,
        eikonal_points,
        geometry,
        background,
    })
}

/// Settings of the per-region guidance loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuidanceSettings {
    pub lambda1: f64,
    pub lambda2: f64,
    pub n_regions: usize,
}

#[derive(Clone, Debug)]
pub struct Evaluation<T> {
    pub loss: LossBreakdown,
    pub render: RenderOutput,
    pub geometry: GeometrySupervisionBatch,
    pub grads: Option<FieldParams<T>>,
}

/// Eikonal penalty (|g| − 1)² and its gradient in g.
fn eikonal(g: Vec3) -> (f64, Vec3) {
    let n = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
    let d = n - 1.0;
    let grad = if n > 0.0 { g.map(|v| 2.0 * d * v / n) } else { [0.0; 3] };
    (d * d, grad)
}

/// Loss terms of `batch` under `params`, and optionally their parameter gradients.
pub fn evaluate_batch<T: Real>(
    params: &FieldParams<T>,
    batch: &Batch,
    weights: &TermWeights,
    guidance: &GuidanceSettings,
    want_grad: bool,
) -> Result<Evaluation<T>> {
    let eps: Vec<T> = batch.eps.cast();
    let mut tape = RenderTape::default();
    let render = render_forward(params, &eps, &batch.rays, &batch.samples, batch.background, Some(&mut tape));
    let n = batch.rays.len().max(1) as f64;
    let t = &batch.targets;

    let mut rgb = 0.0;
    let mut mask = 0.0;
    let mut depth = 0.0;
    let mut pixel_grads = Vec::with_capacity(render.len());
    for j in 0..render.len() {
        let (c, gc) = color_l1(render.rgb[j], t.rgb[j]);
        let (b, gb) = bce(render.mask[j], t.mask[j]);
        let (d, gd) = abs_diff(render.depth[j], t.depth[j]);
        rgb += c;
        mask += b;
        depth += t.mask[j] * d;
        pixel_grads.push(PixelGrad {
            rgb: gc.map(|g| g * weights.rgb / n),
            mask: gb * weights.mask / n,
            depth: t.mask[j] * gd * weights.depth / n,
            normal: [0.0; 3],
        });
    }
    rgb /= n;
    mask /= n;
    depth /= n;

    let mid_grads = tape.point_gradients();
    let mut uni_tape = PipelineTape::default();
    let uni_points: Vec<Vec3<T>> = batch.eikonal_points.iter().map(|p| p.map(T::lit)).collect();
    let uni = params.forward(&eps, &uni_points, None, true, Some(&mut uni_tape));
    let n_eik = (mid_grads.len() + uni.gradient.len()).max(1) as f64;
    let mut eik = 0.0;
    let scale_eik = weights.eikonal / n_eik;
    let g_mid: Vec<Vec3> = mid_grads
        .iter()
        .map(|&g| {
            let (v, d) = eikonal(g);
            eik += v;
            d.map(|x| x * scale_eik)
        })
        .collect();
    let g_uni: Vec<Vec3<T>> = uni
        .gradient
        .iter()
        .map(|g| {
            let (v, d) = eikonal(g.map(|x| x.f64()));
            eik += v;
            d.map(|x| T::lit(x * scale_eik))
        })
        .collect();
    eik /= n_eik;

    let mut geometry = batch.geometry.clone();
    let mut surf_tape = PipelineTape::default();
    let mut surface_sdf = 0.0;
    let mut g_surf = Vec::new();
    if !geometry.is_empty() {
        let pts: Vec<Vec3<T>> = geometry.surface_points.iter().map(|p| p.map(T::lit)).collect();
        let out = params.forward(&eps, &pts, None, false, Some(&mut surf_tape));
        let ns = pts.len() as f64;
        geometry.predicted_surface_sdf = out.sdf.iter().map(|v| v.f64()).collect();
        for &s in &geometry.predicted_surface_sdf {
            let (v, g) = abs_diff(s, 0.0);
            surface_sdf += v / ns;
            g_surf.push(T::lit(g * weights.surface_sdf / ns));
        }
    }

    let per_region = guidance_loss(&render, t, guidance.n_regions, guidance.lambda1, guidance.lambda2)?;
    let mut loss = LossBreakdown {
        step: 0,
        stage: batch.stage,
        total: 0.0,
        rgb,
        mask_bce: mask,
        eikonal: eik,
        depth,
        surface_sdf,
        weights: *weights,
        per_region,
    };
    loss.total = loss.weighted_sum();

    let grads = want_grad.then(|| {
        let mut grads = params.zeros_like();
        render_backward(params, &tape, &pixel_grads, Some(&g_mid), &mut grads);
        if !uni_points.is_empty() {
            params.backward(&uni_tape, &vec![T::zero(); uni_points.len()], Some(&g_uni), None, &mut grads);
        }
        if !g_surf.is_empty() {
            params.backward(&surf_tape, &g_surf, None, None, &mut grads);
        }
        grads
    });
    Ok(Evaluation { loss, render, geometry, grads })
}
