//! Batched evaluation of the composed observation-space field
//! `sdf(p_o) = F(D(p_o | G(ε | p_o)) | G(ε | p_o))` and its reverse pass.

use super::encoding::{encode, encode_backward, encoded_width};
use super::nn::{Jet, MlpTape};
use super::rotation::{warp_jet, warp_jet_vjp};
use super::FieldParams;
use crate::real::{Real, Vec3};

#[derive(Clone, Debug, Default)]
pub struct ConditionTape<T> {
    integrating: MlpTape<T>,
    shortcut: MlpTape<T>,
}

#[derive(Clone, Debug, Default)]
pub struct WarpTape<T> {
    mlp: MlpTape<T>,
    omega: Vec<Vec3>,
    d_omega: Vec<[Vec3; 3]>,
}

#[derive(Clone, Debug, Default)]
pub struct FieldTape<T> {
    sdf: MlpTape<T>,
    color: Option<MlpTape<T>>,
    pc: Vec<Vec3<T>>,
    dpc: Vec<[Vec3<T>; 3]>,
}

/// Everything the reverse pass needs from one forward evaluation.
#[derive(Clone, Debug, Default)]
pub struct PipelineTape<T> {
    n: usize,
    ntan: usize,
    points: Vec<Vec3<T>>,
    condition: ConditionTape<T>,
    warp: WarpTape<T>,
    field: FieldTape<T>,
}

#[derive(Clone, Debug)]
pub struct FieldEval<T> {
    pub sdf: Vec<T>,
    /// Spatial gradient of the SDF along the jet's tangent directions.
    pub gradient: Vec<Vec3<T>>,
    /// Geometry feature values (no tangents).
    pub feature: Jet<T>,
    pub color: Vec<[T; 3]>,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput<T> {
    pub sdf: Vec<T>,
    /// ∇_{p_o} sdf, empty unless tangents were requested.
    pub gradient: Vec<Vec3<T>>,
    /// Empty unless view directions were supplied.
    pub color: Vec<[T; 3]>,
    /// Conditioning code values per point.
    pub condition: Jet<T>,
    pub canonical: Vec<Vec3<T>>,
}

impl<T: Real> FieldParams<T> {
    /// Conditioning codes (n x cond_dim) with `ntan` spatial tangent blocks.
    pub(crate) fn condition(&self, eps: &[T], points: &[Vec3<T>], ntan: usize, tape: Option<&mut ConditionTape<T>>) -> Jet<T> {
        let n = points.len();
        if !self.config.use_sve {
            return Jet::broadcast(n, ntan, eps);
        }
        let (ti, ts) = match tape {
            Some(t) => (Some(&mut t.integrating), Some(&mut t.shortcut)),
            None => (None, None),
        };
        let enc = encode(points, None, self.config.pe_levels_generator, ntan);
        let x = Jet::concat(&[&enc, &Jet::broadcast(n, ntan, eps)]);
        let mut h = self.integrating.forward(x, ti);
        let s = self.shortcut.forward(Jet::broadcast(1, 0, eps), ts);
        let kp = h.cols;
        for i in 0..n {
            for c in 0..kp {
                h.add_at(0, i, c, s.data[c]);
            }
        }
        h
    }

    /// Per-point motion (n x 6) and the warped canonical points with tangents.
    pub(crate) fn warp(
        &self,
        points: &[Vec3<T>],
        cond: &Jet<T>,
        tape: Option<&mut WarpTape<T>>,
    ) -> (Jet<T>, Vec<Vec3<T>>, Vec<[Vec3<T>; 3]>) {
        let n = points.len();
        let ntan = cond.ntan;
        let enc = encode(points, None, self.config.pe_levels_deform, ntan);
        let x = Jet::concat(&[&enc, cond]);
        let (mlp_tape, mut rec) = match tape {
            Some(t) => (Some(&mut t.mlp), Some((&mut t.omega, &mut t.d_omega))),
            None => (None, None),
        };
        let m = self.deform.forward(x, mlp_tape);
        let mut pc = Vec::with_capacity(n);
        let mut dpc = Vec::with_capacity(if ntan > 0 { n } else { 0 });
        if let Some((o, d)) = rec.as_mut() {
            o.clear();
            d.clear();
        }
        for i in 0..n {
            let omega = [0, 1, 2].map(|c| m.get(0, i, c).f64());
            let trans = [3, 4, 5].map(|c| m.get(0, i, c).f64());
            let d_omega: Vec<Vec3> = (0..ntan).map(|k| [0, 1, 2].map(|c| m.get(1 + k, i, c).f64())).collect();
            let d_trans: Vec<Vec3> = (0..ntan).map(|k| [3, 4, 5].map(|c| m.get(1 + k, i, c).f64())).collect();
            let p = points[i].map(|v| v.f64());
            let (q, tans) = warp_jet(omega, trans, p, &d_omega, &d_trans);
            pc.push(q.map(T::lit));
            if ntan > 0 {
                dpc.push([0, 1, 2].map(|k| tans[k].map(T::lit)));
            }
            if let Some((o, d)) = rec.as_mut() {
                o.push(omega);
                let mut dw = [[0.0; 3]; 3];
                for (k, v) in d_omega.iter().enumerate() {
                    dw[k] = *v;
                }
                d.push(dw);
            }
        }
        (m, pc, dpc)
    }

    /// Canonical-space field. Tangents follow `dpc` when given, otherwise the
    /// unit axes at `pc`; `cond.ntan` selects whether tangents are carried.
    pub(crate) fn canonical_field(
        &self,
        pc: &[Vec3<T>],
        dpc: Option<&[[Vec3<T>; 3]]>,
        cond: &Jet<T>,
        dirs: Option<&[Vec3<T>]>,
        tape: Option<&mut FieldTape<T>>,
    ) -> FieldEval<T> {
        let n = pc.len();
        let ntan = cond.ntan;
        let enc = encode(pc, dpc, self.config.pe_levels_field, ntan);
        let x = Jet::concat(&[&enc, cond]);
        let (sdf_tape, mut color_slot) = match tape {
            Some(t) => {
                t.pc = pc.to_vec();
                t.dpc = match dpc {
                    Some(d) => d.to_vec(),
                    None if ntan > 0 => vec![[[T::one(), T::zero(), T::zero()], [T::zero(), T::one(), T::zero()], [T::zero(), T::zero(), T::one()]]; n],
                    None => Vec::new(),
                };
                (Some(&mut t.sdf), Some(&mut t.color))
            }
            None => (None, None),
        };
        let out = self.sdf.forward(x, sdf_tape);
        let sdf: Vec<T> = (0..n).map(|i| out.get(0, i, 0)).collect();
        let gradient: Vec<Vec3<T>> = if ntan == 3 {
            (0..n).map(|i| [0, 1, 2].map(|k| out.get(1 + k, i, 0))).collect()
        } else {
            Vec::new()
        };
        let fw = self.config.feature_width;
        let mut feature = Jet::zeros(n, 0, fw);
        for i in 0..n {
            for c in 0..fw {
                feature.set(0, i, c, out.get(0, i, 1 + c));
            }
        }
        let mut color = Vec::new();
        if let Some(dirs) = dirs {
            let use_grad = self.config.color_uses_gradient;
            let cd = cond.cols;
            let mut xc = Jet::zeros(n, 0, self.config.color_input_width());
            for i in 0..n {
                let mut col = 0;
                for c in 0..fw {
                    xc.set(0, i, col, feature.get(0, i, c));
                    col += 1;
                }
                for c in 0..3 {
                    xc.set(0, i, col, dirs[i][c]);
                    col += 1;
                }
                if use_grad {
                    for c in 0..3 {
                        let g = if ntan == 3 { gradient[i][c] } else { T::zero() };
                        xc.set(0, i, col, g);
                        col += 1;
                    }
                }
                for c in 0..cd {
                    xc.set(0, i, col, cond.get(0, i, c));
                    col += 1;
                }
            }
            let mut ct = MlpTape::default();
            let rec = color_slot.is_some();
            let y = self.color.forward(xc, if rec { Some(&mut ct) } else { None });
            color = (0..n).map(|i| [0, 1, 2].map(|c| y.get(0, i, c))).collect();
            if let Some(slot) = color_slot.as_mut() {
                **slot = Some(ct);
            }
        } else if let Some(slot) = color_slot.as_mut() {
            **slot = None;
        }
        FieldEval { sdf, gradient, feature, color }
    }

    /// Evaluates the composed field at observation-space points. With
    /// `tangents`, also returns ∇_{p_o} sdf; with `dirs`, also colors.
    pub fn forward(
        &self,
        eps: &[T],
        points: &[Vec3<T>],
        dirs: Option<&[Vec3<T>]>,
        tangents: bool,
        tape: Option<&mut PipelineTape<T>>,
    ) -> PipelineOutput<T> {
        let ntan = if tangents { 3 } else { 0 };
        let (ct, wt, ft) = match tape {
            Some(t) => {
                t.n = points.len();
                t.ntan = ntan;
                t.points = points.to_vec();
                (Some(&mut t.condition), Some(&mut t.warp), Some(&mut t.field))
            }
            None => (None, None, None),
        };
        let cond = self.condition(eps, points, ntan, ct);
        let (_, pc, dpc) = self.warp(points, &cond, wt);
        let eval = self.canonical_field(&pc, if tangents { Some(&dpc) } else { None }, &cond, dirs, ft);
        let mut values = Jet::zeros(points.len(), 0, cond.cols);
        values.data.copy_from_slice(cond.values());
        PipelineOutput {
            sdf: eval.sdf,
            gradient: eval.gradient,
            color: eval.color,
            condition: values,
            canonical: pc,
        }
    }

    /// Reverse pass of [`FieldParams::forward`]. Parameter gradients are
    /// accumulated into `grads`.
    pub fn backward(
        &self,
        tape: &PipelineTape<T>,
        g_sdf: &[T],
        g_gradient: Option<&[Vec3<T>]>,
        g_color: Option<&[[T; 3]]>,
        grads: &mut FieldParams<T>,
    ) {
        let n = tape.n;
        let ntan = tape.ntan;
        let cfg = &self.config;
        let cd = cfg.cond_dim();
        let fw = cfg.feature_width;
        let mut g_cond = Jet::zeros(n, ntan, cd);
        let mut g_out = Jet::zeros(n, ntan, 1 + fw);
        for i in 0..n {
            g_out.set(0, i, 0, g_sdf[i]);
        }
        if let (Some(gg), true) = (g_gradient, ntan == 3) {
            for i in 0..n {
                for k in 0..3 {
                    g_out.add_at(1 + k, i, 0, gg[i][k]);
                }
            }
        }

        // color branch
        if let (Some(gc), Some(ct)) = (g_color, tape.field.color.as_ref()) {
            let mut gy = Jet::zeros(n, 0, 3);
            for i in 0..n {
                for c in 0..3 {
                    gy.set(0, i, c, gc[i][c]);
                }
            }
            let gx = self.color.backward(ct, gy, &mut grads.color, true).expect("input gradient");
            for i in 0..n {
                let mut col = 0;
                for c in 0..fw {
                    g_out.add_at(0, i, 1 + c, gx.get(0, i, col));
                    col += 1;
                }
                col += 3;
                if cfg.color_uses_gradient {
                    for k in 0..3 {
                        if ntan == 3 {
                            g_out.add_at(1 + k, i, 0, gx.get(0, i, col));
                        }
                        col += 1;
                    }
                }
                for c in 0..cd {
                    g_cond.add_at(0, i, c, gx.get(0, i, col));
                    col += 1;
                }
            }
        }

        // SDF branch
        let gx = self.sdf.backward(&tape.field.sdf, g_out, &mut grads.sdf, true).expect("input gradient");
        let enc_w = encoded_width(cfg.pe_levels_field);
        g_cond.add_cols(0, &gx.slice_cols(enc_w, cd));
        let g_enc = gx.slice_cols(0, enc_w);
        let (g_pc, g_dpc) = encode_backward(&tape.field.pc, &tape.field.dpc, cfg.pe_levels_field, &g_enc);

        // rigid warp
        let mut g_motion = Jet::zeros(n, ntan, 6);
        for i in 0..n {
            let p = tape.points[i].map(|v| v.f64());
            let gp = g_pc[i].map(|v| v.f64());
            let g_tan: Vec<Vec3> = (0..ntan).map(|k| g_dpc[i][k].map(|v| v.f64())).collect();
            let (g_w, g_dw) = warp_jet_vjp(tape.warp.omega[i], p, &tape.warp.d_omega[i][..ntan], gp, &g_tan);
            for c in 0..3 {
                g_motion.set(0, i, c, T::lit(g_w[c]));
                g_motion.set(0, i, 3 + c, T::lit(gp[c]));
                for k in 0..ntan {
                    g_motion.set(1 + k, i, c, T::lit(g_dw[k][c]));
                    g_motion.set(1 + k, i, 3 + c, T::lit(g_tan[k][c]));
                }
            }
        }
        let gx = self.deform.backward(&tape.warp.mlp, g_motion, &mut grads.deform, true).expect("input gradient");
        let enc_d = encoded_width(cfg.pe_levels_deform);
        g_cond.add_cols(0, &gx.slice_cols(enc_d, cd));

        // generator
        if cfg.use_sve {
            let mut g_short = Jet::zeros(1, 0, cd);
            for i in 0..n {
                for c in 0..cd {
                    g_short.add_at(0, 0, c, g_cond.get(0, i, c));
                }
            }
            self.shortcut.backward(&tape.condition.shortcut, g_short, &mut grads.shortcut, false);
            self.integrating.backward(&tape.condition.integrating, g_cond, &mut grads.integrating, false);
        }
    }
}
