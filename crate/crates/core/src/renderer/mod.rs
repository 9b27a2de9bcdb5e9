//! Volume rendering of SDF fields: rays, hierarchical sampling, SDF-to-opacity
//! conversion, compositing (with its exact reverse pass) and mesh extraction.

mod diff;
pub mod mesh;

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::fields::FieldParams;
use crate::real::{add, dot, norm, normalize, scale, sigmoid, softplus, Real, Vec3};
use crate::scene_synth::{ray_sphere, SceneDefinition};
use crate::fields::ExpressionVector;

pub use diff::{render_backward, render_forward, PixelGrad, RenderTape};
pub use mesh::{extract_mesh, Mesh};

/// Depth normalization switches to a fixed denominator below this weight sum.
pub const MIN_WEIGHT_SUM: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub t_near: f64,
    pub t_far: f64,
    pub pixel: (usize, usize),
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        add(self.origin, scale(self.dir, t))
    }
}

/// Near/far bounds of a ray against the scene's bounding sphere. Rays that miss
/// get a short segment around their closest approach so every ray is valid.
fn ray_bounds(origin: Vec3, dir: Vec3, radius: f64) -> (f64, f64) {
    const MIN_T: f64 = 1e-3;
    match ray_sphere(origin, dir, radius) {
        Some((t0, t1)) if t1 - t0.max(MIN_T) > 1e-6 => (t0.max(MIN_T), t1),
        _ => {
            let closest = (-dot(origin, dir)).max(MIN_T + 0.05 * radius);
            let p = add(origin, scale(dir, closest));
            let dist2 = dot(p, p);
            let half = (radius * radius - dist2).max((0.05 * radius).powi(2)).sqrt();
            ((closest - half).max(MIN_T), closest + half)
        }
    }
}

pub fn generate_rays(camera: &CameraModel, pixels: &[(usize, usize)], bound_radius: f64) -> Result<Vec<Ray>> {
    pixels
        .iter()
        .map(|&(u, v)| {
            if u >= camera.width || v >= camera.height {
                return Err(Error::PixelOutOfBounds { u, v, width: camera.width, height: camera.height });
            }
            let dir = camera.pixel_direction(u, v);
            let (t_near, t_far) = ray_bounds(camera.translation, dir, bound_radius);
            Ok(Ray { origin: camera.translation, dir, t_near, t_far, pixel: (u, v) })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub n_coarse: usize,
    pub n_importance: usize,
    pub up_sample_steps: usize,
    /// Jitter interior coarse samples within their strata.
    pub perturb: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { n_coarse: 64, n_importance: 32, up_sample_steps: 4, perturb: true }
    }
}

impl SamplingConfig {
    pub fn evaluation() -> Self {
        SamplingConfig { n_coarse: 128, n_importance: 64, up_sample_steps: 4, perturb: false }
    }
}

/// Anything that can report signed distances at observation-space points.
pub trait SdfQuery {
    fn sdf(&self, points: &[Vec3]) -> Vec<f64>;
}

/// Per-point quantities the compositor consumes.
#[derive(Clone, Debug, Default)]
pub struct ShadedPoints {
    pub sdf: Vec<f64>,
    /// Observation-space SDF gradient.
    pub gradient: Vec<Vec3>,
    pub color: Vec<[f64; 3]>,
}

pub trait RenderField: SdfQuery {
    fn shade(&self, points: &[Vec3], dirs: &[Vec3]) -> ShadedPoints;
    fn inv_std(&self) -> f64;
}

/// The learned field under a fixed expression.
pub struct NetworkField<'a, T> {
    pub params: &'a FieldParams<T>,
    pub eps: Vec<T>,
}

impl<'a, T: Real> NetworkField<'a, T> {
    pub fn new(params: &'a FieldParams<T>, eps: &ExpressionVector) -> Result<Self> {
        if eps.len() != params.config.k {
            return Err(Error::Dimension { what: "expression vector", expected: params.config.k, got: eps.len() });
        }
        Ok(NetworkField { params, eps: eps.cast() })
    }
}

const FIELD_CHUNK: usize = 4096;

impl<T: Real> SdfQuery for NetworkField<'_, T> {
    fn sdf(&self, points: &[Vec3]) -> Vec<f64> {
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(FIELD_CHUNK) {
            let pts: Vec<Vec3<T>> = chunk.iter().map(|p| p.map(T::lit)).collect();
            out.extend(self.params.observed_sdf(&self.eps, &pts).into_iter().map(|v| v.f64()));
        }
        out
    }
}

impl<T: Real> RenderField for NetworkField<'_, T> {
    fn shade(&self, points: &[Vec3], dirs: &[Vec3]) -> ShadedPoints {
        let mut out = ShadedPoints::default();
        for (pc, dc) in points.chunks(FIELD_CHUNK).zip(dirs.chunks(FIELD_CHUNK)) {
            let pts: Vec<Vec3<T>> = pc.iter().map(|p| p.map(T::lit)).collect();
            let ds: Vec<Vec3<T>> = dc.iter().map(|p| p.map(T::lit)).collect();
            let o = self.params.forward(&self.eps, &pts, Some(&ds), true, None);
            out.sdf.extend(o.sdf.iter().map(|v| v.f64()));
            out.gradient.extend(o.gradient.iter().map(|g| g.map(|v| v.f64())));
            out.color.extend(o.color.iter().map(|c| c.map(|v| v.f64())));
        }
        out
    }

    fn inv_std(&self) -> f64 {
        self.params.inv_std().f64()
    }
}

/// Oracle adapter: the analytic scene SDF with its ground-truth shading.
pub struct AnalyticField<'a> {
    pub scene: &'a SceneDefinition,
    pub eps: ExpressionVector,
    pub inv_std: f64,
}

impl SdfQuery for AnalyticField<'_> {
    fn sdf(&self, points: &[Vec3]) -> Vec<f64> {
        points.iter().map(|&p| self.scene.analytic_sdf(p, &self.eps)).collect()
    }
}

impl RenderField for AnalyticField<'_> {
    fn shade(&self, points: &[Vec3], _dirs: &[Vec3]) -> ShadedPoints {
        ShadedPoints {
            sdf: self.sdf(points),
            gradient: points.iter().map(|&p| self.scene.sdf_gradient(p, &self.eps)).collect(),
            color: points.iter().map(|&p| self.scene.surface_color(p, &self.eps)).collect(),
        }
    }

    fn inv_std(&self) -> f64 {
        self.inv_std
    }
}

/// ln Φ(x) for the logistic CDF Φ.
#[inline]
fn log_logistic_cdf(x: f64) -> f64 {
    -softplus(-x)
}

/// Opacity of one interval from the SDF at its two ends, plus ∂α/∂a and ∂α/∂b
/// where a = s·f_prev and b = s·f_next.
#[inline]
pub(crate) fn interval_alpha(a: f64, b: f64) -> (f64, f64, f64) {
    let q = log_logistic_cdf(b) - log_logistic_cdf(a);
    if q >= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let ratio = q.exp();
    let alpha = 1.0 - ratio;
    if alpha >= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    (alpha, ratio * sigmoid(-a), -ratio * sigmoid(-b))
}

/// α_i = clamp((Φ(s f_i) − Φ(s f_{i+1})) / Φ(s f_i), 0, 1) for consecutive endpoint values.
pub fn sdf_to_alphas(sdf_at_endpoints: &[f64], inv_std: f64) -> Vec<f64> {
    sdf_at_endpoints
        .windows(2)
        .map(|w| interval_alpha(inv_std * w[0], inv_std * w[1]).0)
        .collect()
}

/// w_i = α_i Π_{j<i} (1 − α_j).
pub fn weights_from_alphas(alphas: &[f64]) -> Vec<f64> {
    let mut trans = 1.0;
    alphas
        .iter()
        .map(|&a| {
            let w = a * trans;
            trans *= 1.0 - a;
            w
        })
        .collect()
}

/// Σ_i w_i v_i for scalar values.
pub fn composite(weights: &[f64], values: &[f64]) -> Result<f64> {
    if weights.len() != values.len() {
        return Err(Error::ShapeMismatch(vec![weights.len()], vec![values.len()]));
    }
    Ok(weights.iter().zip(values).map(|(w, v)| w * v).sum())
}

/// Composites colors over a constant background weighted by residual transmittance.
pub fn composite_rgb(weights: &[f64], colors: &[[f64; 3]], background: [f64; 3]) -> Result<[f64; 3]> {
    if weights.len() != colors.len() {
        return Err(Error::ShapeMismatch(vec![weights.len()], vec![colors.len()]));
    }
    let acc: f64 = weights.iter().sum();
    let mut out = background.map(|b| b * (1.0 - acc));
    for (w, c) in weights.iter().zip(colors) {
        for k in 0..3 {
            out[k] += w * c[k];
        }
    }
    Ok(out)
}

/// Evenly spaced coarse samples, optionally jittered within their strata.
fn coarse_samples(ray: &Ray, n: usize, rng: Option<&mut ChaCha8Rng>) -> Vec<f64> {
    let n = n.max(2);
    let step = (ray.t_far - ray.t_near) / (n - 1) as f64;
    let mut ts: Vec<f64> = (0..n).map(|i| ray.t_near + step * i as f64).collect();
    ts[n - 1] = ray.t_far;
    if let Some(rng) = rng {
        for t in ts[1..n - 1].iter_mut() {
            *t += (rng.random::<f64>() - 0.5) * step * 0.999;
        }
    }
    ts
}

/// Up-sampling weights over the intervals of `ts` with sharpness `s`, using a
/// backward-looking slope estimate clamped to be non-positive.
fn upsample_weights(ts: &[f64], sdf: &[f64], s: f64) -> Vec<f64> {
    let n = ts.len();
    let mut alphas = Vec::with_capacity(n - 1);
    let mut prev_cos = 0.0;
    for i in 0..n - 1 {
        let delta = ts[i + 1] - ts[i];
        let mid = 0.5 * (sdf[i] + sdf[i + 1]);
        let cos = (sdf[i + 1] - sdf[i]) / (delta + 1e-5);
        let c = cos.min(prev_cos).clamp(-1e3, 0.0);
        prev_cos = cos;
        let f_prev = mid - c * delta * 0.5;
        let f_next = mid + c * delta * 0.5;
        let cdf_prev = sigmoid(f_prev * s);
        let cdf_next = sigmoid(f_next * s);
        alphas.push(((cdf_prev - cdf_next) + 1e-5) / (cdf_prev + 1e-5));
    }
    weights_from_alphas(&alphas)
}

/// Deterministic inverse-CDF sampling of `k` points over the bins of `ts`.
fn sample_pdf(ts: &[f64], weights: &[f64], k: usize) -> Vec<f64> {
    let w: Vec<f64> = weights.iter().map(|w| w.max(0.0) + 1e-5).collect();
    let total: f64 = w.iter().sum();
    let mut cdf = Vec::with_capacity(w.len() + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for x in &w {
        acc += x / total;
        cdf.push(acc);
    }
    (0..k)
        .map(|j| {
            let u = (j as f64 + 0.5) / k as f64;
            let bin = cdf.partition_point(|&c| c <= u).clamp(1, cdf.len() - 1) - 1;
            let denom = cdf[bin + 1] - cdf[bin];
            let frac = if denom < 1e-12 { 0.0 } else { (u - cdf[bin]) / denom };
            ts[bin] + frac * (ts[bin + 1] - ts[bin])
        })
        .collect()
}

/// Merges sorted `(t, sdf)` lists, dropping near-duplicate parameters.
fn merge_samples(ts: &[f64], sdf: &[f64], new_t: &[f64], new_sdf: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut pairs: Vec<(f64, f64)> = ts.iter().copied().zip(sdf.iter().copied()).collect();
    pairs.extend(new_t.iter().copied().zip(new_sdf.iter().copied()));
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let span = (pairs.last().unwrap().0 - pairs[0].0).max(1e-12);
    let mut out_t: Vec<f64> = Vec::with_capacity(pairs.len());
    let mut out_s = Vec::with_capacity(pairs.len());
    for (t, s) in pairs {
        if let Some(&last) = out_t.last() {
            if t - last <= 1e-9 * span {
                continue;
            }
        }
        out_t.push(t);
        out_s.push(s);
    }
    (out_t, out_s)
}

/// Hierarchical sampling for a batch of rays: stratified coarse samples, then
/// `up_sample_steps` rounds of inverse-CDF up-sampling with doubling sharpness.
/// Returns strictly increasing interval endpoints per ray.
pub fn sample_rays(rays: &[Ray], cfg: &SamplingConfig, field: &dyn SdfQuery, mut rng: Option<&mut ChaCha8Rng>) -> Vec<Vec<f64>> {
    let mut ts: Vec<Vec<f64>> = rays.iter().map(|r| coarse_samples(r, cfg.n_coarse, rng.as_deref_mut())).collect();
    if cfg.n_importance == 0 || rays.is_empty() {
        return ts;
    }
    let points: Vec<Vec3> = rays.iter().zip(&ts).flat_map(|(r, t)| t.iter().map(|&t| r.at(t))).collect();
    let flat = field.sdf(&points);
    let mut sdf: Vec<Vec<f64>> = Vec::with_capacity(rays.len());
    let mut off = 0;
    for t in &ts {
        sdf.push(flat[off..off + t.len()].to_vec());
        off += t.len();
    }
    let steps = cfg.up_sample_steps.max(1);
    for round in 0..steps {
        let k = cfg.n_importance / steps + usize::from(round < cfg.n_importance % steps);
        if k == 0 {
            continue;
        }
        let s = 64.0 * 2f64.powi(round as i32);
        let new_t: Vec<Vec<f64>> = ts.iter().zip(&sdf).map(|(t, f)| sample_pdf(t, &upsample_weights(t, f, s), k)).collect();
        let points: Vec<Vec3> = rays.iter().zip(&new_t).flat_map(|(r, t)| t.iter().map(|&t| r.at(t))).collect();
        let flat = field.sdf(&points);
        let mut off = 0;
        for i in 0..rays.len() {
            let n = new_t[i].len();
            let (mt, ms) = merge_samples(&ts[i], &sdf[i], &new_t[i], &flat[off..off + n]);
            ts[i] = mt;
            sdf[i] = ms;
            off += n;
        }
    }
    ts
}

pub fn sample_along_ray(ray: &Ray, cfg: &SamplingConfig, field: &dyn SdfQuery, rng: Option<&mut ChaCha8Rng>) -> Vec<f64> {
    sample_rays(std::slice::from_ref(ray), cfg, field, rng).pop().unwrap_or_default()
}

/// Midpoints and widths of the intervals defined by sorted endpoints.
pub fn interval_midpoints(ts: &[f64]) -> (Vec<f64>, Vec<f64>) {
    ts.windows(2).map(|w| (0.5 * (w[0] + w[1]), w[1] - w[0])).unzip()
}

/// Composited quantities for one pixel.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PixelOut {
    pub rgb: [f64; 3],
    pub depth: f64,
    pub mask: f64,
    pub normal: Vec3,
}

/// Forward state of one ray kept for the reverse pass.
#[derive(Clone, Debug, Default)]
pub(crate) struct RayCache {
    pub tmid: Vec<f64>,
    pub delta: Vec<f64>,
    pub f_prev: Vec<f64>,
    pub f_next: Vec<f64>,
    /// Whether the slope estimate g·d was active (negative).
    pub cos_active: Vec<bool>,
    pub alpha: Vec<f64>,
    pub da: Vec<f64>,
    pub db: Vec<f64>,
    pub trans: Vec<f64>,
    pub weights: Vec<f64>,
    pub sum_w: f64,
    pub depth: f64,
}

/// Converts midpoint samples of one ray to opacities and composites them.
pub(crate) fn composite_ray(
    ts: &[f64],
    dir: Vec3,
    shaded: &ShadedPoints,
    range: std::ops::Range<usize>,
    inv_std: f64,
    background: [f64; 3],
) -> (PixelOut, RayCache) {
    let (tmid, delta) = interval_midpoints(ts);
    let n = tmid.len();
    let mut c = RayCache { tmid, delta, ..Default::default() };
    let mut trans = 1.0;
    let mut out = PixelOut::default();
    for (j, i) in range.enumerate().take(n) {
        let cos = dot(shaded.gradient[i], dir);
        let active = cos < 0.0;
        let slope = if active { cos } else { 0.0 };
        let half = 0.5 * slope * c.delta[j];
        let fp = shaded.sdf[i] - half;
        let fnx = shaded.sdf[i] + half;
        let (alpha, da, db) = interval_alpha(inv_std * fp, inv_std * fnx);
        let w = alpha * trans;
        c.f_prev.push(fp);
        c.f_next.push(fnx);
        c.cos_active.push(active);
        c.alpha.push(alpha);
        c.da.push(da);
        c.db.push(db);
        c.trans.push(trans);
        c.weights.push(w);
        trans *= 1.0 - alpha;
        for k in 0..3 {
            out.rgb[k] += w * shaded.color[i][k];
            out.normal[k] += w * shaded.gradient[i][k];
        }
        out.mask += w;
        out.depth += w * c.tmid[j];
    }
    // Σw = 1 − Π(1 − α) ≤ 1 exactly; summation rounding can overshoot by a few ulps.
    out.mask = out.mask.min(1.0);
    for k in 0..3 {
        out.rgb[k] += background[k] * (1.0 - out.mask);
    }
    c.sum_w = out.mask;
    out.depth /= out.mask.max(MIN_WEIGHT_SUM);
    c.depth = out.depth;
    (out, c)
}

/// Per-pixel rendering result.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RenderOutput {
    pub pixels: Vec<(usize, usize)>,
    pub rgb: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
    pub mask: Vec<f64>,
    pub normal: Vec<Vec3>,
}

impl RenderOutput {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub(crate) fn push(&mut self, pixel: (usize, usize), p: PixelOut) {
        self.pixels.push(pixel);
        self.rgb.push(p.rgb);
        self.depth.push(p.depth);
        self.mask.push(p.mask);
        self.normal.push(p.normal);
    }

    pub fn extend(&mut self, other: RenderOutput) {
        self.pixels.extend(other.pixels);
        self.rgb.extend(other.rgb);
        self.depth.extend(other.depth);
        self.mask.extend(other.mask);
        self.normal.extend(other.normal);
    }
}

/// Renders rays with precomputed sample endpoints.
pub fn render_rays(field: &dyn RenderField, rays: &[Ray], ts: &[Vec<f64>], background: [f64; 3]) -> RenderOutput {
    let mut points = Vec::new();
    let mut dirs = Vec::new();
    let mut offsets = Vec::with_capacity(rays.len() + 1);
    offsets.push(0);
    for (r, t) in rays.iter().zip(ts) {
        let (mid, _) = interval_midpoints(t);
        points.extend(mid.iter().map(|&m| r.at(m)));
        dirs.extend(std::iter::repeat_n(r.dir, mid.len()));
        offsets.push(points.len());
    }
    let shaded = field.shade(&points, &dirs);
    let inv_std = field.inv_std();
    let mut out = RenderOutput::default();
    for (i, r) in rays.iter().enumerate() {
        let (p, _) = composite_ray(&ts[i], r.dir, &shaded, offsets[i]..offsets[i + 1], inv_std, background);
        out.push(r.pixel, p);
    }
    out
}

const RAY_CHUNK: usize = 256;

/// Full render of a pixel list: ray generation, hierarchical sampling, shading
/// at interval midpoints and compositing.
pub fn render_pixels(
    field: &dyn RenderField,
    camera: &CameraModel,
    pixels: &[(usize, usize)],
    bound_radius: f64,
    cfg: &SamplingConfig,
    background: [f64; 3],
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<RenderOutput> {
    let rays = generate_rays(camera, pixels, bound_radius)?;
    let mut out = RenderOutput::default();
    for chunk in rays.chunks(RAY_CHUNK) {
        let ts = sample_rays(chunk, cfg, field, rng.as_deref_mut());
        out.extend(render_rays(field, chunk, &ts, background));
    }
    Ok(out)
}

pub fn all_pixels(width: usize, height: usize) -> Vec<(usize, usize)> {
    (0..height).flat_map(|v| (0..width).map(move |u| (u, v))).collect()
}

/// A rendered full frame, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<f32>,
    pub depth: Vec<f32>,
    pub mask: Vec<f32>,
    pub normal: Vec<Vec3>,
}

pub fn render_image(
    field: &dyn RenderField,
    camera: &CameraModel,
    bound_radius: f64,
    cfg: &SamplingConfig,
    background: [f64; 3],
) -> Result<RenderedImage> {
    let pixels = all_pixels(camera.width, camera.height);
    let out = render_pixels(field, camera, &pixels, bound_radius, cfg, background, None)?;
    Ok(RenderedImage {
        width: camera.width,
        height: camera.height,
        rgb: out.rgb.iter().flat_map(|c| c.map(|v| v as f32)).collect(),
        depth: out.depth.iter().map(|&d| d as f32).collect(),
        mask: out.mask.iter().map(|&m| m as f32).collect(),
        normal: out.normal,
    })
}

impl RenderedImage {
    /// Writes `<stem>.png`, `<stem>.normal.png`, `<stem>.mask.png` and `<stem>.depth.f32`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (w, h) = (self.width, self.height);
        crate::imageio::write_rgb_png(&dir.join(format!("{stem}.png")), w, h, &self.rgb)?;
        let normals: Vec<f32> = self
            .normal
            .iter()
            .flat_map(|n| {
                let len = norm(*n);
                let u = if len > 1e-12 { normalize(*n) } else { [0.0; 3] };
                u.map(|v| (0.5 * v + 0.5) as f32)
            })
            .collect();
        crate::imageio::write_rgb_png(&dir.join(format!("{stem}.normal.png")), w, h, &normals)?;
        crate::imageio::write_unit_gray_png(&dir.join(format!("{stem}.mask.png")), w, h, &self.mask)?;
        crate::imageio::write_f32_raster(&dir.join(format!("{stem}.depth.f32")), &self.depth)
    }
}
