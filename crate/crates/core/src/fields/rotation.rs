//! Axis-angle exponential map and its derivatives.
//!
//! Derivatives come from hyper-dual numbers, which give exact first and mixed
//! second derivatives of the Rodrigues formula without finite differences.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::real::Vec3;

pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn re(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;
}

impl Scalar for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn re(self) -> f64 {
        self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

/// `a + b ε₁ + c ε₂ + d ε₁ε₂` with ε₁² = ε₂² = 0.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HyperDual {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl HyperDual {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        HyperDual { a, b, c, d: 0.0 }
    }

    /// Applies a scalar function given f, f', f'' at `self.a`.
    fn chain(self, f: f64, f1: f64, f2: f64) -> Self {
        HyperDual {
            a: f,
            b: f1 * self.b,
            c: f1 * self.c,
            d: f1 * self.d + f2 * self.b * self.c,
        }
    }
}

impl Add for HyperDual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        HyperDual { a: self.a + o.a, b: self.b + o.b, c: self.c + o.c, d: self.d + o.d }
    }
}

impl Sub for HyperDual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        HyperDual { a: self.a - o.a, b: self.b - o.b, c: self.c - o.c, d: self.d - o.d }
    }
}

impl Mul for HyperDual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        HyperDual {
            a: self.a * o.a,
            b: self.a * o.b + self.b * o.a,
            c: self.a * o.c + self.c * o.a,
            d: self.a * o.d + self.b * o.c + self.c * o.b + self.d * o.a,
        }
    }
}

impl Div for HyperDual {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = o.chain(1.0 / o.a, -1.0 / (o.a * o.a), 2.0 / (o.a * o.a * o.a));
        self * inv
    }
}

impl Neg for HyperDual {
    type Output = Self;
    fn neg(self) -> Self {
        HyperDual { a: -self.a, b: -self.b, c: -self.c, d: -self.d }
    }
}

impl Scalar for HyperDual {
    fn cst(v: f64) -> Self {
        HyperDual { a: v, ..Default::default() }
    }
    fn re(self) -> f64 {
        self.a
    }
    fn sin(self) -> Self {
        let (s, c) = self.a.sin_cos();
        self.chain(s, c, -s)
    }
    fn cos(self) -> Self {
        let (s, c) = self.a.sin_cos();
        self.chain(c, -s, -c)
    }
    fn sqrt(self) -> Self {
        let r = self.a.sqrt();
        self.chain(r, 0.5 / r, -0.25 / (r * self.a))
    }
}

fn dot<S: Scalar>(a: [S; 3], b: [S; 3]) -> S {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross<S: Scalar>(a: [S; 3], b: [S; 3]) -> [S; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// sin θ / θ and (1 - cos θ) / θ² as functions of θ², series-expanded near zero.
fn rodrigues_coefficients<S: Scalar>(theta2: S) -> (S, S) {
    if theta2.re() < 1e-2 {
        let mut a = S::cst(0.0);
        let mut b = S::cst(0.0);
        let mut pow = S::cst(1.0);
        // 1/(2n+1)! and 1/(2n+2)! with alternating signs
        let mut fact_odd = 1.0;
        let mut fact_even = 2.0;
        for n in 0..7 {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            a = a + pow * S::cst(sign / fact_odd);
            b = b + pow * S::cst(sign / fact_even);
            pow = pow * theta2;
            let k = 2.0 * n as f64;
            fact_odd *= (k + 2.0) * (k + 3.0);
            fact_even *= (k + 3.0) * (k + 4.0);
        }
        (a, b)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (S::cst(1.0) - theta.cos()) / theta2)
    }
}

/// R(ω)·p via the Rodrigues formula.
pub fn rotate<S: Scalar>(omega: [S; 3], p: [S; 3]) -> [S; 3] {
    let (a, b) = rodrigues_coefficients(dot(omega, omega));
    let wxp = cross(omega, p);
    let wxwxp = cross(omega, wxp);
    [
        p[0] + a * wxp[0] + b * wxwxp[0],
        p[1] + a * wxp[1] + b * wxwxp[1],
        p[2] + a * wxp[2] + b * wxwxp[2],
    ]
}

/// Row-major rotation matrix for the axis-angle vector `omega`.
pub fn rotation_matrix(omega: Vec3) -> [[f64; 3]; 3] {
    let cols = [
        rotate(omega, [1.0, 0.0, 0.0]),
        rotate(omega, [0.0, 1.0, 0.0]),
        rotate(omega, [0.0, 0.0, 1.0]),
    ];
    let mut m = [[0.0; 3]; 3];
    for (j, col) in cols.iter().enumerate() {
        for i in 0..3 {
            m[i][j] = col[i];
        }
    }
    m
}

fn hd3(a: Vec3, b: Vec3, c: Vec3) -> [HyperDual; 3] {
    [0, 1, 2].map(|i| HyperDual::new(a[i], b[i], c[i]))
}

const AXES: [Vec3; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Warp `p_c = R(ω) p + t` together with its derivatives along the unit axes
/// of `p`, given the derivatives `d_omega[k]`, `d_trans[k]` of the motion.
pub fn warp_jet(omega: Vec3, trans: Vec3, p: Vec3, d_omega: &[Vec3], d_trans: &[Vec3]) -> (Vec3, Vec<Vec3>) {
    let rp = rotate(omega, p);
    let pc = [rp[0] + trans[0], rp[1] + trans[1], rp[2] + trans[2]];
    let tangents = d_omega
        .iter()
        .zip(d_trans)
        .enumerate()
        .map(|(k, (dw, dt))| {
            let r = rotate(hd3(omega, *dw, [0.0; 3]), hd3(p, AXES[k], [0.0; 3]));
            [r[0].b + dt[0], r[1].b + dt[1], r[2].b + dt[2]]
        })
        .collect();
    (pc, tangents)
}

/// Vector-Jacobian product of [`warp_jet`] with respect to ω and its tangents.
/// Gradients w.r.t. the translation and its tangents are the upstream ones.
pub fn warp_jet_vjp(omega: Vec3, p: Vec3, d_omega: &[Vec3], g_pc: Vec3, g_tan: &[Vec3]) -> (Vec3, Vec<Vec3>) {
    let mut g_omega = [0.0; 3];
    // J[:, j] = ∂(R p)/∂ω_j
    let mut jac = [[0.0; 3]; 3];
    for j in 0..3 {
        let r = rotate(hd3(omega, [0.0; 3], AXES[j]), hd3(p, [0.0; 3], [0.0; 3]));
        for i in 0..3 {
            jac[i][j] = r[i].c;
        }
        g_omega[j] += (0..3).map(|i| g_pc[i] * jac[i][j]).sum::<f64>();
        for (k, gt) in g_tan.iter().enumerate() {
            let r = rotate(hd3(omega, d_omega[k], AXES[j]), hd3(p, AXES[k], [0.0; 3]));
            g_omega[j] += (0..3).map(|i| gt[i] * r[i].d).sum::<f64>();
        }
    }
    let g_domega = g_tan
        .iter()
        .map(|gt| [0, 1, 2].map(|j| (0..3).map(|i| gt[i] * jac[i][j]).sum::<f64>()))
        .collect();
    (g_omega, g_domega)
}
