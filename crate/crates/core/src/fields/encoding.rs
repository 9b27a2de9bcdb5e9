//! Frequency encoding `[p, sin(2^0 π p), cos(2^0 π p), …]` with spatial jets.

use std::f64::consts::PI;

use super::nn::Jet;
use crate::real::{Real, Vec3};

pub fn encoded_width(levels: usize) -> usize {
    3 + 6 * levels
}

/// Encodes a single point.
pub fn positional_encode(p: Vec3, levels: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(encoded_width(levels));
    out.extend_from_slice(&p);
    for l in 0..levels {
        let a = (1u64 << l) as f64 * PI;
        out.extend(p.iter().map(|x| (a * x).sin()));
        out.extend(p.iter().map(|x| (a * x).cos()));
    }
    out
}

/// Encodes a batch of points. With `ntan == 3`, tangent block `k` holds the
/// derivative along `tangents[i][k]` (the unit axes when `tangents` is `None`).
pub fn encode<T: Real>(points: &[Vec3<T>], tangents: Option<&[[Vec3<T>; 3]]>, levels: usize, ntan: usize) -> Jet<T> {
    let n = points.len();
    let cols = encoded_width(levels);
    let mut out = Jet::zeros(n, ntan, cols);
    let tangent = |i: usize, k: usize, c: usize| -> T {
        match tangents {
            Some(t) => t[i][k][c],
            None => {
                if k == c {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    };
    for (i, p) in points.iter().enumerate() {
        for c in 0..3 {
            out.set(0, i, c, p[c]);
            for k in 0..ntan {
                out.set(1 + k, i, c, tangent(i, k, c));
            }
        }
        for l in 0..levels {
            let a = T::lit((1u64 << l) as f64 * PI);
            let base = 3 + 6 * l;
            for c in 0..3 {
                let (s, co) = (a * p[c]).sin_cos();
                out.set(0, i, base + c, s);
                out.set(0, i, base + 3 + c, co);
                for k in 0..ntan {
                    let d = tangent(i, k, c);
                    out.set(1 + k, i, base + c, a * co * d);
                    out.set(1 + k, i, base + 3 + c, -a * s * d);
                }
            }
        }
    }
    out
}

/// Gradients of an encoding jet with respect to the points and (explicit) tangents.
pub fn encode_backward<T: Real>(
    points: &[Vec3<T>],
    tangents: &[[Vec3<T>; 3]],
    levels: usize,
    g: &Jet<T>,
) -> (Vec<Vec3<T>>, Vec<[Vec3<T>; 3]>) {
    let n = points.len();
    let ntan = g.ntan;
    let mut gp = vec![[T::zero(); 3]; n];
    let mut gt = vec![[[T::zero(); 3]; 3]; n];
    for i in 0..n {
        for c in 0..3 {
            gp[i][c] += g.get(0, i, c);
            for k in 0..ntan {
                gt[i][k][c] += g.get(1 + k, i, c);
            }
        }
        for l in 0..levels {
            let a = T::lit((1u64 << l) as f64 * PI);
            let base = 3 + 6 * l;
            for c in 0..3 {
                let (s, co) = (a * points[i][c]).sin_cos();
                let gs = g.get(0, i, base + c);
                let gc = g.get(0, i, base + 3 + c);
                gp[i][c] += gs * a * co - gc * a * s;
                for k in 0..ntan {
                    let d = tangents[i][k][c];
                    let gts = g.get(1 + k, i, base + c);
                    let gtc = g.get(1 + k, i, base + 3 + c);
                    gp[i][c] += -(gts * s + gtc * co) * a * a * d;
                    gt[i][k][c] += gts * a * co - gtc * a * s;
                }
            }
        }
    }
    (gp, gt)
}
