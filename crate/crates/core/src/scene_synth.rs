//! Synthetic expression-driven scenes with an exact analytic SDF.
//!
//! The surface is a sphere whose radius is modulated by a handful of compactly
//! supported angular bumps; each bump's amplitude is a linear function of the
//! expression vector. This gives a closed-form oracle for rendering, geometry
//! and region tests.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::fields::ExpressionVector;
use crate::real::{add, dot, norm, normalize, scale, Vec3};
use crate::util::{hash_json, write_json};

pub const BACKGROUND_COLOR: [f64; 3] = [0.5, 0.5, 0.5];
const TRACE_EPS: f64 = 1e-5;
const TRACE_MAX_STEPS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlbedoRule {
    /// Low-frequency color gradient over the sphere directions.
    Smooth,
    /// `Smooth` plus a reddish tint inside each bump proportional to its amplitude.
    ExpressionTint,
}

/// How expression components drive the bumps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeRule {
    /// Every bump responds to a random mix of all components.
    #[default]
    Dense,
    /// Bump i responds to component i mod K alone, so each component's effect
    /// is confined to its own patch of the surface.
    Localized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub n_bumps: usize,
    pub k: usize,
    pub base_radius: f64,
    /// Largest |amplitude| a single bump reaches for ε ∈ [-1, 1]^K.
    pub max_amplitude: f64,
    /// Angular bump widths are drawn uniformly from this range (radians).
    pub width_range: (f64, f64),
    /// Bump centers are restricted to directions with z at least this value.
    pub center_min_z: f64,
    pub albedo: AlbedoRule,
    pub amplitudes: AmplitudeRule,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            n_bumps: 3,
            k: 4,
            base_radius: 1.0,
            max_amplitude: 0.15,
            width_range: (0.5, 0.8),
            center_min_z: 0.3,
            albedo: AlbedoRule::Smooth,
            amplitudes: AmplitudeRule::Dense,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneDefinition {
    pub base_radius: f64,
    pub bump_centers: Vec<Vec3>,
    pub bump_widths: Vec<f64>,
    /// M x K, row per bump.
    pub amplitude_matrix: Vec<Vec<f64>>,
    pub albedo: AlbedoRule,
    pub light_dir: Vec3,
    pub background: [f64; 3],
}

pub fn make_scene(seed: u64, config: &SceneConfig) -> Result<SceneDefinition> {
    if config.n_bumps == 0 {
        return Err(Error::SceneConfig("at least one bump is required".into()));
    }
    if config.k == 0 {
        return Err(Error::SceneConfig("expression dimension K must be >= 1".into()));
    }
    if config.n_bumps + 1 > u8::MAX as usize {
        return Err(Error::SceneConfig("too many regions for 8-bit label maps".into()));
    }
    if !(config.base_radius > 0.0) || !(config.max_amplitude >= 0.0) {
        return Err(Error::SceneConfig("radius must be positive and amplitude non-negative".into()));
    }
    let (w_lo, w_hi) = config.width_range;
    if !(w_lo > 0.0 && w_hi >= w_lo && w_hi < std::f64::consts::PI) {
        return Err(Error::SceneConfig(format!("bad width range ({w_lo}, {w_hi})")));
    }
    if config.center_min_z >= 1.0 {
        return Err(Error::SceneConfig("center_min_z must be < 1".into()));
    }
    let worst = config.n_bumps as f64 * config.max_amplitude;
    let limit = config.base_radius / 2.0;
    if worst >= limit {
        return Err(Error::SelfIntersection { sum: worst, limit });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bump_centers = Vec::with_capacity(config.n_bumps);
    while bump_centers.len() < config.n_bumps {
        let v: Vec3 = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let n = norm(v);
        if n < 1e-3 || n > 1.0 {
            continue;
        }
        let c = scale(v, 1.0 / n);
        if c[2] >= config.center_min_z {
            bump_centers.push(c);
        }
    }
    let bump_widths = (0..config.n_bumps)
        .map(|_| if w_hi > w_lo { rng.random_range(w_lo..w_hi) } else { w_lo })
        .collect();
    let amplitude_matrix = (0..config.n_bumps)
        .map(|i| {
            let row: Vec<f64> = match config.amplitudes {
                AmplitudeRule::Dense => (0..config.k).map(|_| rng.random_range(-1.0..1.0)).collect(),
                AmplitudeRule::Localized => {
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    (0..config.k).map(|j| if j == i % config.k { sign } else { 0.0 }).collect()
                }
            };
            let l1: f64 = row.iter().map(|a: &f64| a.abs()).sum();
            row.iter().map(|a| a * config.max_amplitude / l1.max(1e-12)).collect()
        })
        .collect();

    Ok(SceneDefinition {
        base_radius: config.base_radius,
        bump_centers,
        bump_widths,
        amplitude_matrix,
        albedo: config.albedo,
        light_dir: normalize([0.4, 0.6, 1.0]),
        background: BACKGROUND_COLOR,
    })
}

impl SceneDefinition {
    pub fn k(&self) -> usize {
        self.amplitude_matrix.first().map_or(0, Vec::len)
    }

    pub fn n_bumps(&self) -> usize {
        self.bump_centers.len()
    }

    /// One label per bump plus the background.
    pub fn n_regions(&self) -> usize {
        self.n_bumps() + 1
    }

    pub fn background_label(&self) -> usize {
        self.n_bumps()
    }

    /// Worst-case Σ|a_m| over ε ∈ [-1, 1]^K.
    pub fn max_amplitude_sum(&self) -> f64 {
        self.amplitude_matrix.iter().flatten().map(|a| a.abs()).sum()
    }

    /// Radius of a sphere that encloses the surface for every ε in the training range.
    pub fn bound_radius(&self) -> f64 {
        self.base_radius + self.max_amplitude_sum() + 0.1 * self.base_radius
    }

    pub fn config_hash(&self) -> String {
        hash_json(self)
    }

    pub fn check_expression(&self, eps: &ExpressionVector) -> Result<()> {
        if eps.len() != self.k() {
            return Err(Error::Dimension {
                what: "expression vector",
                expected: self.k(),
                got: eps.len(),
            });
        }
        Ok(())
    }

    /// a(ε) = amplitude_matrix · ε.
    pub fn amplitudes(&self, eps: &ExpressionVector) -> Vec<f64> {
        self.amplitude_matrix
            .iter()
            .map(|row| row.iter().zip(eps.values()).map(|(a, e)| a * e).sum())
            .collect()
    }

    /// Smooth compactly supported angular bump, 1 at the center and 0 beyond its width.
    pub fn kernel(&self, m: usize, dir: Vec3) -> f64 {
        let chord = 2.0 * (self.bump_widths[m] / 2.0).sin();
        let d2 = 2.0 * (1.0 - dot(dir, self.bump_centers[m]));
        let s = 1.0 - d2 / (chord * chord);
        if s <= 0.0 {
            0.0
        } else {
            s * s * s
        }
    }

    fn radius_with(&self, dir: Vec3, amplitudes: &[f64]) -> f64 {
        self.base_radius
            + amplitudes
                .iter()
                .enumerate()
                .map(|(m, a)| a * self.kernel(m, dir))
                .sum::<f64>()
    }

    /// Surface radius along the unit direction `dir`.
    pub fn radius(&self, dir: Vec3, eps: &ExpressionVector) -> f64 {
        self.radius_with(dir, &self.amplitudes(eps))
    }

    fn sdf_with(&self, p: Vec3, amplitudes: &[f64]) -> f64 {
        let r = norm(p);
        // at the origin the direction is undefined; +z by convention
        let dir = if r > 0.0 { scale(p, 1.0 / r) } else { [0.0, 0.0, 1.0] };
        r - self.radius_with(dir, amplitudes)
    }

    /// Radial signed distance: negative inside. Exact wherever no bump is active.
    pub fn analytic_sdf(&self, p: Vec3, eps: &ExpressionVector) -> f64 {
        self.sdf_with(p, &self.amplitudes(eps))
    }

    /// Central-difference gradient of the analytic SDF.
    pub fn sdf_gradient(&self, p: Vec3, eps: &ExpressionVector) -> Vec3 {
        self.gradient_with(p, &self.amplitudes(eps))
    }

    fn gradient_with(&self, p: Vec3, amplitudes: &[f64]) -> Vec3 {
        let h = 1e-6;
        let mut g = [0.0; 3];
        for (i, gi) in g.iter_mut().enumerate() {
            let mut a = p;
            let mut b = p;
            a[i] += h;
            b[i] -= h;
            *gi = (self.sdf_with(a, amplitudes) - self.sdf_with(b, amplitudes)) / (2.0 * h);
        }
        g
    }

    pub fn albedo(&self, dir: Vec3, eps: &ExpressionVector) -> [f64; 3] {
        let mut c = [0.55 + 0.2 * dir[0], 0.5 + 0.15 * dir[1], 0.45 + 0.2 * dir[2]];
        if self.albedo == AlbedoRule::ExpressionTint {
            let amps = self.amplitudes(eps);
            let max = self.amplitude_matrix.iter().map(|row| row.iter().map(|a| a.abs()).sum::<f64>()).fold(0.0, f64::max);
            if max > 0.0 {
                let tint: f64 = amps.iter().enumerate().map(|(m, a)| a / max * self.kernel(m, dir)).sum();
                c[0] += 0.25 * tint;
                c[1] -= 0.1 * tint;
                c[2] -= 0.15 * tint;
            }
        }
        c.map(|v| v.clamp(0.0, 1.0))
    }

    /// Ground-truth shaded color of the surface near `p`: albedo under a fixed
    /// Lambertian light with an ambient term.
    pub fn surface_color(&self, p: Vec3, eps: &ExpressionVector) -> [f64; 3] {
        let n = normalize(self.sdf_gradient(p, eps));
        let shade = 0.4 + 0.6 * dot(n, self.light_dir).max(0.0);
        let dir = normalize(p);
        self.albedo(dir, eps).map(|c| (c * shade).clamp(0.0, 1.0))
    }

    /// Region label of a surface point: the nearest bump center.
    pub fn region_label(&self, p: Vec3) -> usize {
        let dir = normalize(p);
        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        for (m, c) in self.bump_centers.iter().enumerate() {
            let d = dot(dir, *c);
            if d > best_dot {
                best_dot = d;
                best = m;
            }
        }
        best
    }

    /// Sphere-traces the analytic SDF. Returns the ray parameter of the first hit.
    pub fn sphere_trace(&self, origin: Vec3, dir: Vec3, eps: &ExpressionVector) -> Option<f64> {
        let amps = self.amplitudes(eps);
        let (t0, t1) = ray_sphere(origin, dir, self.bound_radius())?;
        let at = |t: f64| self.sdf_with(add(origin, scale(dir, t)), &amps);
        let mut prev = t0.max(0.0);
        let mut t = prev;
        for _ in 0..TRACE_MAX_STEPS {
            let f = at(t);
            if f.abs() < TRACE_EPS {
                return Some(t);
            }
            if f < 0.0 {
                // overshot: the crossing lies in (prev, t)
                let (mut lo, mut hi) = (prev, t);
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    let fm = at(mid);
                    if fm.abs() < 1e-9 || hi - lo < 1e-12 {
                        return Some(mid);
                    }
                    if fm > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                return Some(0.5 * (lo + hi));
            }
            prev = t;
            t += 0.8 * f;
            if t > t1 {
                return None;
            }
        }
        None
    }
}

/// Entry/exit parameters of a ray against a sphere centered at the origin.
pub fn ray_sphere(origin: Vec3, dir: Vec3, radius: f64) -> Option<(f64, f64)> {
    let b = dot(origin, dir);
    let c = dot(origin, origin) - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let (t0, t1) = (-b - s, -b + s);
    if t1 <= 0.0 {
        return None;
    }
    Some((t0.max(0.0), t1))
}

/// One training frame: ground-truth images plus the conditioning it was rendered with.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub frame_id: usize,
    pub width: usize,
    pub height: usize,
    /// Row-major H x W x 3.
    pub rgb: Vec<f32>,
    /// 0 or 1 per pixel.
    pub mask: Vec<f32>,
    /// Ray parameter of the surface hit, 0 on background.
    pub pseudo_depth: Vec<f32>,
    pub region_map: Vec<u8>,
    pub expression: ExpressionVector,
    pub camera: CameraModel,
}

impl FrameRecord {
    #[inline]
    pub fn index(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    pub fn color(&self, u: usize, v: usize) -> [f32; 3] {
        let i = 3 * self.index(u, v);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }
}

pub fn render_ground_truth(
    scene: &SceneDefinition,
    camera: &CameraModel,
    eps: &ExpressionVector,
    frame_id: usize,
) -> Result<FrameRecord> {
    camera.validate()?;
    scene.check_expression(eps)?;
    let (w, h) = (camera.width, camera.height);
    let mut rgb = vec![0.0f32; w * h * 3];
    let mut mask = vec![0.0f32; w * h];
    let mut depth = vec![0.0f32; w * h];
    let mut region = vec![scene.background_label() as u8; w * h];
    for v in 0..h {
        for u in 0..w {
            let i = v * w + u;
            let d = camera.pixel_direction(u, v);
            let color = match scene.sphere_trace(camera.translation, d, eps) {
                Some(t) => {
                    let p = add(camera.translation, scale(d, t));
                    mask[i] = 1.0;
                    depth[i] = t as f32;
                    region[i] = scene.region_label(p) as u8;
                    scene.surface_color(p, eps)
                }
                None => scene.background,
            };
            for c in 0..3 {
                rgb[3 * i + c] = color[c] as f32;
            }
        }
    }
    Ok(FrameRecord {
        frame_id,
        width: w,
        height: h,
        rgb,
        mask,
        pseudo_depth: depth,
        region_map: region,
        expression: eps.clone(),
        camera: camera.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExpressionTrajectory {
    /// Per dimension, a random mixture of a few sinusoids bounded by 1 in magnitude.
    Bandlimited { harmonics: usize, max_cycles: f64 },
    Constant { value: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CameraTrajectory {
    /// Smooth yaw/pitch sweep around the origin at a fixed distance (degrees).
    Orbit { distance: f64, yaw_deg: f64, pitch_deg: f64 },
    Fixed { distance: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub seed: u64,
    pub n_frames: usize,
    pub train_fraction: f64,
    pub width: usize,
    pub height: usize,
    /// Focal length in units of image width.
    pub focal_factor: f64,
    pub expression: ExpressionTrajectory,
    pub camera: CameraTrajectory,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 0,
            n_frames: 40,
            train_fraction: 0.8,
            width: 48,
            height: 48,
            focal_factor: 0.9,
            expression: ExpressionTrajectory::Bandlimited { harmonics: 3, max_cycles: 2.0 },
            camera: CameraTrajectory::Orbit { distance: 3.0, yaw_deg: 40.0, pitch_deg: 15.0 },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Heldout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub frame_id: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub scene_config_hash: String,
    pub k: usize,
    pub n_region: usize,
    pub background_label: usize,
    pub width: usize,
    pub height: usize,
    pub bound_radius: f64,
    pub config: DatasetConfig,
    pub scene: SceneDefinition,
    pub frames: Vec<FrameEntry>,
}

impl DatasetManifest {
    pub fn split_ids(&self, split: Split) -> Vec<usize> {
        self.frames.iter().filter(|f| f.split == split).map(|f| f.frame_id).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub frame_id: usize,
    pub expression: Vec<f64>,
    pub camera: CameraModel,
}

/// Held-out frames are spread evenly through the sequence so their expressions
/// interpolate between (but never coincide with) training expressions.
pub fn heldout_indices(n_frames: usize, train_fraction: f64) -> Vec<usize> {
    let n_train = (n_frames as f64 * train_fraction).round() as usize;
    let n_held = n_frames.saturating_sub(n_train.min(n_frames));
    (0..n_held)
        .map(|j| (((j as f64 + 0.5) * n_frames as f64 / n_held as f64).floor() as usize).min(n_frames - 1))
        .collect()
}

fn expression_sequence(traj: &ExpressionTrajectory, k: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<ExpressionVector>> {
    match traj {
        ExpressionTrajectory::Constant { value } => {
            if value.len() != k {
                return Err(Error::Dimension { what: "constant expression", expected: k, got: value.len() });
            }
            Ok(vec![ExpressionVector::new(value.clone()); n])
        }
        ExpressionTrajectory::Bandlimited { harmonics, max_cycles } => {
            let harmonics = (*harmonics).max(1);
            let mut comps = Vec::with_capacity(k);
            for _ in 0..k {
                let weights: Vec<f64> = (0..harmonics).map(|_| rng.random_range(0.2..1.0)).collect();
                let total: f64 = weights.iter().sum();
                let waves: Vec<(f64, f64, f64)> = weights
                    .iter()
                    .map(|w| (w / total, rng.random_range(0.5..max_cycles.max(0.5 + 1e-9)), rng.random_range(0.0..std::f64::consts::TAU)))
                    .collect();
                comps.push(waves);
            }
            Ok((0..n)
                .map(|t| {
                    let s = t as f64 / n.max(1) as f64;
                    ExpressionVector::new(
                        comps
                            .iter()
                            .map(|waves| waves.iter().map(|(a, f, ph)| a * (std::f64::consts::TAU * f * s + ph).sin()).sum())
                            .collect(),
                    )
                })
                .collect())
        }
    }
}

fn camera_sequence(cfg: &DatasetConfig, rng: &mut ChaCha8Rng) -> Vec<CameraModel> {
    let focal = cfg.focal_factor * cfg.width as f64;
    let n = cfg.n_frames;
    let (distance, yaw_amp, pitch_amp) = match cfg.camera {
        CameraTrajectory::Orbit { distance, yaw_deg, pitch_deg } => (distance, yaw_deg.to_radians(), pitch_deg.to_radians()),
        CameraTrajectory::Fixed { distance } => (distance, 0.0, 0.0),
    };
    let yaw_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let pitch_phase = rng.random_range(0.0..std::f64::consts::TAU);
    (0..n)
        .map(|t| {
            let s = t as f64 / n.max(1) as f64;
            let yaw = yaw_amp * (std::f64::consts::TAU * 1.3 * s + yaw_phase).sin();
            let pitch = pitch_amp * (std::f64::consts::TAU * 0.7 * s + pitch_phase).sin();
            let eye = [
                distance * pitch.cos() * yaw.sin(),
                distance * pitch.sin(),
                distance * pitch.cos() * yaw.cos(),
            ];
            CameraModel::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], focal, cfg.width, cfg.height)
        })
        .collect()
}

/// Renders every frame of the dataset in memory.
pub fn synthesize_frames(scene: &SceneDefinition, cfg: &DatasetConfig) -> Result<(DatasetManifest, Vec<FrameRecord>)> {
    if cfg.n_frames == 0 {
        return Err(Error::SceneConfig("n_frames must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&cfg.train_fraction) {
        return Err(Error::SceneConfig("train_fraction must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let exprs = expression_sequence(&cfg.expression, scene.k(), cfg.n_frames, &mut rng)?;
    let cams = camera_sequence(cfg, &mut rng);
    let held = heldout_indices(cfg.n_frames, cfg.train_fraction);
    let mut frames = Vec::with_capacity(cfg.n_frames);
    let mut entries = Vec::with_capacity(cfg.n_frames);
    for t in 0..cfg.n_frames {
        frames.push(render_ground_truth(scene, &cams[t], &exprs[t], t)?);
        entries.push(FrameEntry {
            frame_id: t,
            split: if held.contains(&t) { Split::Heldout } else { Split::Train },
        });
    }
    let manifest = DatasetManifest {
        scene_config_hash: scene.config_hash(),
        k: scene.k(),
        n_region: scene.n_regions(),
        background_label: scene.background_label(),
        width: cfg.width,
        height: cfg.height,
        bound_radius: scene.bound_radius(),
        config: cfg.clone(),
        scene: scene.clone(),
        frames: entries,
    };
    Ok((manifest, frames))
}

/// Renders and writes a dataset directory; returns its manifest.
pub fn generate_dataset(scene: &SceneDefinition, cfg: &DatasetConfig, out_dir: &Path) -> Result<DatasetManifest> {
    let (manifest, frames) = synthesize_frames(scene, cfg)?;
    let frames_dir = out_dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    for frame in &frames {
        write_frame(&frames_dir, frame)?;
    }
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn frame_path(frames_dir: &Path, frame_id: usize, suffix: &str) -> PathBuf {
    frames_dir.join(format!("{frame_id}{suffix}"))
}

pub fn write_frame(frames_dir: &Path, frame: &FrameRecord) -> Result<()> {
    let (w, h) = (frame.width, frame.height);
    let t = frame.frame_id;
    crate::imageio::write_rgb_png(&frame_path(frames_dir, t, ".png"), w, h, &frame.rgb)?;
    let mask: Vec<u8> = frame.mask.iter().map(|&m| if m > 0.5 { 255 } else { 0 }).collect();
    crate::imageio::write_gray_png(&frame_path(frames_dir, t, ".mask.png"), w, h, &mask)?;
    crate::imageio::write_f32_raster(&frame_path(frames_dir, t, ".depth.f32"), &frame.pseudo_depth)?;
    crate::imageio::write_gray_png(&frame_path(frames_dir, t, ".region.png"), w, h, &frame.region_map)?;
    let meta = FrameMeta {
        frame_id: t,
        expression: frame.expression.values().to_vec(),
        camera: frame.camera.clone(),
    };
    write_json(&frame_path(frames_dir, t, ".meta.json"), &meta)
}

pub fn read_frame(frames_dir: &Path, frame_id: usize, width: usize, height: usize) -> Result<FrameRecord> {
    let meta: FrameMeta = crate::util::read_json(&frame_path(frames_dir, frame_id, ".meta.json"))?;
    let rgb = crate::imageio::read_rgb_png(&frame_path(frames_dir, frame_id, ".png"), width, height)?;
    let mask = crate::imageio::read_gray_png(&frame_path(frames_dir, frame_id, ".mask.png"), width, height)?
        .into_iter()
        .map(|m| if m >= 128 { 1.0 } else { 0.0 })
        .collect();
    let depth_path = frame_path(frames_dir, frame_id, ".depth.f32");
    let pseudo_depth = crate::imageio::read_f32_raster(&depth_path)?;
    if pseudo_depth.len() != width * height {
        return Err(Error::Dataset(format!("{}: expected {} depth values, got {}", depth_path.display(), width * height, pseudo_depth.len())));
    }
    let region_map = crate::imageio::read_gray_png(&frame_path(frames_dir, frame_id, ".region.png"), width, height)?;
    Ok(FrameRecord {
        frame_id,
        width,
        height,
        rgb,
        mask,
        pseudo_depth,
        region_map,
        expression: ExpressionVector::new(meta.expression),
        camera: meta.camera,
    })
}

/// A dataset held in memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub frames: Vec<FrameRecord>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: DatasetManifest = crate::util::read_json(&dir.join("manifest.json"))?;
        let frames_dir = dir.join("frames");
        let frames = manifest
            .frames
            .iter()
            .map(|e| read_frame(&frames_dir, e.frame_id, manifest.width, manifest.height))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { manifest, frames })
    }

    pub fn synthesize(scene: &SceneDefinition, cfg: &DatasetConfig) -> Result<Self> {
        let (manifest, frames) = synthesize_frames(scene, cfg)?;
        Ok(Dataset { manifest, frames })
    }

    pub fn frame(&self, frame_id: usize) -> Option<&FrameRecord> {
        self.frames.iter().find(|f| f.frame_id == frame_id)
    }

    pub fn split(&self, split: Split) -> Vec<&FrameRecord> {
        self.manifest
            .split_ids(split)
            .into_iter()
            .filter_map(|id| self.frame(id))
            .collect()
    }
}
