//! Differentiable rendering of the learned field: forward with a tape, and the
//! reverse pass from per-pixel loss gradients to parameter gradients.

use std::ops::Range;

use super::{composite_ray, interval_midpoints, PixelOut, Ray, RayCache, RenderOutput, ShadedPoints, MIN_WEIGHT_SUM};
use crate::fields::{FieldParams, PipelineTape};
use crate::real::{Real, Vec3};

/// Loss gradient with respect to one pixel's composited outputs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PixelGrad {
    pub rgb: [f64; 3],
    pub depth: f64,
    pub mask: f64,
    pub normal: Vec3,
}

#[derive(Clone, Debug, Default)]
pub struct RenderTape<T> {
    pipeline: PipelineTape<T>,
    rays: Vec<(Vec3, Range<usize>, RayCache)>,
    shaded: ShadedPoints,
    inv_std: f64,
    background: [f64; 3],
}

/// Renders rays through the learned field at fixed sample endpoints `ts`.
pub fn render_forward<T: Real>(
    params: &FieldParams<T>,
    eps: &[T],
    rays: &[Ray],
    ts: &[Vec<f64>],
    background: [f64; 3],
    mut tape: Option<&mut RenderTape<T>>,
) -> RenderOutput {
    let mut points = Vec::new();
    let mut dirs = Vec::new();
    let mut ranges = Vec::with_capacity(rays.len());
    for (r, t) in rays.iter().zip(ts) {
        let (mid, _) = interval_midpoints(t);
        let start = points.len();
        points.extend(mid.iter().map(|&m| r.at(m).map(T::lit)));
        dirs.extend(std::iter::repeat_n(r.dir.map(T::lit), mid.len()));
        ranges.push(start..points.len());
    }
    let out = params.forward(eps, &points, Some(&dirs), true, tape.as_mut().map(|t| &mut t.pipeline));
    let shaded = ShadedPoints {
        sdf: out.sdf.iter().map(|v| v.f64()).collect(),
        gradient: out.gradient.iter().map(|g| g.map(|v| v.f64())).collect(),
        color: out.color.iter().map(|c| c.map(|v| v.f64())).collect(),
    };
    let inv_std = params.inv_std().f64();
    let mut result = RenderOutput::default();
    let mut caches = Vec::with_capacity(rays.len());
    for (i, r) in rays.iter().enumerate() {
        let (p, cache): (PixelOut, RayCache) = composite_ray(&ts[i], r.dir, &shaded, ranges[i].clone(), inv_std, background);
        result.push(r.pixel, p);
        caches.push((r.dir, ranges[i].clone(), cache));
    }
    if let Some(t) = tape {
        t.rays = caches;
        t.shaded = shaded;
        t.inv_std = inv_std;
        t.background = background;
    }
    result
}

impl<T> RenderTape<T> {
    /// ∇_{p_o} sdf at every interval midpoint of the taped rays, ray by ray.
    pub fn point_gradients(&self) -> &[Vec3] {
        &self.shaded.gradient
    }
}

/// Accumulates parameter gradients of a loss whose per-pixel gradients are
/// `pixel_grads`. `gradient_grads`, when given, adds a direct loss gradient
/// with respect to each entry of [`RenderTape::point_gradients`].
pub fn render_backward<T: Real>(
    params: &FieldParams<T>,
    tape: &RenderTape<T>,
    pixel_grads: &[PixelGrad],
    gradient_grads: Option<&[Vec3]>,
    grads: &mut FieldParams<T>,
) {
    assert_eq!(pixel_grads.len(), tape.rays.len(), "one gradient per rendered pixel");
    let n_pts = tape.shaded.sdf.len();
    let mut g_sdf = vec![T::zero(); n_pts];
    let mut g_grad: Vec<Vec3<T>> = match gradient_grads {
        Some(g) => {
            assert_eq!(g.len(), n_pts, "one gradient per taped point");
            g.iter().map(|v| v.map(T::lit)).collect()
        }
        None => vec![[T::zero(); 3]; n_pts],
    };
    let mut g_color = vec![[T::zero(); 3]; n_pts];
    let s = tape.inv_std;
    let bg = tape.background;
    let mut g_s = 0.0;
    for ((dir, range, c), pg) in tape.rays.iter().zip(pixel_grads) {
        let n = c.alpha.len();
        let start = range.start;
        // dL/dw_i
        let depth_denom = c.sum_w.max(MIN_WEIGHT_SUM);
        let gw: Vec<f64> = (0..n)
            .map(|j| {
                let i = start + j;
                let col = tape.shaded.color[i];
                let gr = tape.shaded.gradient[i];
                let mut g = pg.mask;
                for k in 0..3 {
                    g += pg.rgb[k] * (col[k] - bg[k]) + pg.normal[k] * gr[k];
                }
                let dd = if c.sum_w > MIN_WEIGHT_SUM { (c.tmid[j] - c.depth) / depth_denom } else { c.tmid[j] / depth_denom };
                g + pg.depth * dd
            })
            .collect();
        // dL/dα_i = T_i (G_i − V_i), V_i = Σ_{j>i} G_j α_j Π_{i<k<j}(1 − α_k)
        let mut v = 0.0;
        for j in (0..n).rev() {
            let i = start + j;
            let w = c.weights[j];
            for k in 0..3 {
                g_color[i][k] += T::lit(w * pg.rgb[k]);
                g_grad[i][k] += T::lit(w * pg.normal[k]);
            }
            let g_alpha = c.trans[j] * (gw[j] - v);
            v = gw[j] * c.alpha[j] + (1.0 - c.alpha[j]) * v;
            if g_alpha == 0.0 || (c.da[j] == 0.0 && c.db[j] == 0.0) {
                continue;
            }
            let ga = g_alpha * c.da[j];
            let gb = g_alpha * c.db[j];
            let g_fp = ga * s;
            let g_fn = gb * s;
            g_sdf[i] += T::lit(g_fp + g_fn);
            if c.cos_active[j] {
                let g_slope = (g_fn - g_fp) * 0.5 * c.delta[j];
                for k in 0..3 {
                    g_grad[i][k] += T::lit(g_slope * dir[k]);
                }
            }
            g_s += ga * c.f_prev[j] + gb * c.f_next[j];
        }
    }
    params.backward(&tape.pipeline, &g_sdf, Some(&g_grad), Some(&g_color), grads);
    grads.inv_std_param[0] += T::lit(g_s * s * params.config.inv_std_scale);
}

