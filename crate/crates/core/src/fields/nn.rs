//! Dense layers that carry first-order spatial derivatives alongside values.
//!
//! A [`Jet`] stacks `1 + ntan` row blocks of `n` rows each: block 0 holds the
//! values, block `1 + k` holds the derivative of every column with respect to
//! the k-th input coordinate. Linear maps act identically on all blocks (the
//! bias only touches values); pointwise nonlinearities scale tangents by the
//! local slope. The backward pass differentiates through both, so losses that
//! depend on spatial gradients (eikonal, normals) get exact parameter
//! gradients.

use serde::{Deserialize, Serialize};

use crate::real::{sigmoid, softplus, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct Jet<T> {
    pub n: usize,
    pub ntan: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Jet<T> {
    pub fn zeros(n: usize, ntan: usize, cols: usize) -> Self {
        Jet {
            n,
            ntan,
            cols,
            data: vec![T::zero(); n * (1 + ntan) * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.n * (1 + self.ntan)
    }

    /// Index of `(row, col)` in block `b` (0 = values).
    #[inline]
    pub fn at(&self, b: usize, row: usize, col: usize) -> usize {
        (b * self.n + row) * self.cols + col
    }

    #[inline]
    pub fn get(&self, b: usize, row: usize, col: usize) -> T {
        self.data[self.at(b, row, col)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, row: usize, col: usize, v: T) {
        let i = self.at(b, row, col);
        self.data[i] = v;
    }

    #[inline]
    pub fn add_at(&mut self, b: usize, row: usize, col: usize, v: T) {
        let i = self.at(b, row, col);
        self.data[i] += v;
    }

    pub fn values(&self) -> &[T] {
        &self.data[..self.n * self.cols]
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        let end = self.n * self.cols;
        &mut self.data[..end]
    }

    /// Value row `row`.
    pub fn row(&self, row: usize) -> &[T] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// Column-wise concatenation of jets with identical `n` and `ntan`.
    pub fn concat(parts: &[&Jet<T>]) -> Jet<T> {
        let n = parts[0].n;
        let ntan = parts[0].ntan;
        debug_assert!(parts.iter().all(|p| p.n == n && p.ntan == ntan));
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut out = Jet::zeros(n, ntan, cols);
        let rows = out.rows();
        for r in 0..rows {
            let mut off = r * cols;
            for p in parts {
                out.data[off..off + p.cols].copy_from_slice(&p.data[r * p.cols..(r + 1) * p.cols]);
                off += p.cols;
            }
        }
        out
    }

    /// Columns `[start, start + width)` of every row.
    pub fn slice_cols(&self, start: usize, width: usize) -> Jet<T> {
        let mut out = Jet::zeros(self.n, self.ntan, width);
        for r in 0..self.rows() {
            out.data[r * width..(r + 1) * width]
                .copy_from_slice(&self.data[r * self.cols + start..r * self.cols + start + width]);
        }
        out
    }

    /// Adds `other` into columns `[start, start + other.cols)`.
    pub fn add_cols(&mut self, start: usize, other: &Jet<T>) {
        debug_assert_eq!(self.rows(), other.rows());
        for r in 0..self.rows() {
            for c in 0..other.cols {
                self.data[r * self.cols + start + c] += other.data[r * other.cols + c];
            }
        }
    }

    /// A jet whose rows all equal `row` and whose tangents vanish.
    pub fn broadcast(n: usize, ntan: usize, row: &[T]) -> Jet<T> {
        let mut out = Jet::zeros(n, ntan, row.len());
        for i in 0..n {
            out.data[i * row.len()..(i + 1) * row.len()].copy_from_slice(row);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Softplus { beta: f64 },
    Sigmoid,
}

impl Activation {
    /// (f, f', f'') at `y`.
    #[inline]
    pub fn eval<T: Real>(self, y: T) -> (T, T, T) {
        match self {
            Activation::Identity => (y, T::one(), T::zero()),
            Activation::Relu => {
                if y > T::zero() {
                    (y, T::one(), T::zero())
                } else {
                    (T::zero(), T::zero(), T::zero())
                }
            }
            Activation::Softplus { beta } => {
                let b = T::lit(beta);
                let z = b * y;
                if z > T::lit(30.0) {
                    (y, T::one(), T::zero())
                } else if z < T::lit(-30.0) {
                    (T::zero(), T::zero(), T::zero())
                } else {
                    let s = sigmoid(z);
                    (softplus(z) / b, s, b * s * (T::one() - s))
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(y);
                let d = s * (T::one() - s);
                (s, d, d * (T::one() - T::lit(2.0) * s))
            }
        }
    }
}

/// Fully connected layer `y = W x + b` with `W` stored row-major (out x in).
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weight: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
        }
    }

    fn forward(&self, x: &Jet<T>) -> Jet<T> {
        assert_eq!(x.cols, self.inputs, "dense layer input width");
        let mut y = Jet::zeros(x.n, x.ntan, self.outputs);
        let rows = x.rows();
        if rows > 0 && self.inputs > 0 {
            // y = x · Wᵀ
            unsafe {
                T::gemm(
                    rows,
                    self.inputs,
                    self.outputs,
                    T::one(),
                    x.data.as_ptr(),
                    self.inputs as isize,
                    1,
                    self.weight.as_ptr(),
                    1,
                    self.inputs as isize,
                    T::zero(),
                    y.data.as_mut_ptr(),
                    self.outputs as isize,
                    1,
                );
            }
        }
        for r in 0..x.n {
            for (v, b) in y.data[r * self.outputs..(r + 1) * self.outputs].iter_mut().zip(&self.bias) {
                *v += *b;
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad`; returns the input gradient when asked.
    fn backward(&self, x: &Jet<T>, gy: &Jet<T>, grad: &mut Dense<T>, want_input: bool) -> Option<Jet<T>> {
        let rows = x.rows();
        if rows > 0 && self.inputs > 0 {
            // gW += gyᵀ · x
            unsafe {
                T::gemm(
                    self.outputs,
                    rows,
                    self.inputs,
                    T::one(),
                    gy.data.as_ptr(),
                    1,
                    self.outputs as isize,
                    x.data.as_ptr(),
                    self.inputs as isize,
                    1,
                    T::one(),
                    grad.weight.as_mut_ptr(),
                    self.inputs as isize,
                    1,
                );
            }
        }
        for r in 0..x.n {
            for (g, v) in grad.bias.iter_mut().zip(&gy.data[r * self.outputs..(r + 1) * self.outputs]) {
                *g += *v;
            }
        }
        if !want_input {
            return None;
        }
        let mut gx = Jet::zeros(x.n, x.ntan, self.inputs);
        if rows > 0 && self.outputs > 0 {
            unsafe {
                T::gemm(
                    rows,
                    self.outputs,
                    self.inputs,
                    T::one(),
                    gy.data.as_ptr(),
                    self.outputs as isize,
                    1,
                    self.weight.as_ptr(),
                    self.inputs as isize,
                    1,
                    T::zero(),
                    gx.data.as_mut_ptr(),
                    self.inputs as isize,
                    1,
                );
            }
        }
        Some(gx)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
    pub hidden: Activation,
    pub output: Activation,
}

/// Intermediate values recorded by a forward pass, consumed by `backward`.
#[derive(Clone, Debug, Default)]
pub struct MlpTape<T> {
    inputs: Vec<Jet<T>>,
    pre: Vec<Jet<T>>,
}

impl<T: Real> Mlp<T> {
    /// Zero-initialized network with the given layer widths (`widths[0]` = input).
    pub fn zeros(widths: &[usize], hidden: Activation, output: Activation) -> Self {
        Mlp {
            layers: widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            hidden,
            output,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect(),
            hidden: self.hidden,
            output: self.output,
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn forward(&self, x: Jet<T>, mut tape: Option<&mut MlpTape<T>>) -> Jet<T> {
        if let Some(t) = tape.as_deref_mut() {
            t.inputs.clear();
            t.pre.clear();
        }
        let mut cur = x;
        for (l, layer) in self.layers.iter().enumerate() {
            let y = layer.forward(&cur);
            let z = apply_activation(self.activation(l), &y);
            if let Some(t) = tape.as_deref_mut() {
                t.inputs.push(cur);
                t.pre.push(y);
            }
            cur = z;
        }
        cur
    }

    /// Back-propagates `gz` (gradient w.r.t. the output jet). Parameter gradients
    /// accumulate into `grad`; the input gradient is returned when requested.
    pub fn backward(&self, tape: &MlpTape<T>, gz: Jet<T>, grad: &mut Mlp<T>, want_input: bool) -> Option<Jet<T>> {
        let mut g = gz;
        for l in (0..self.layers.len()).rev() {
            let y = &tape.pre[l];
            let gy = activation_backward(self.activation(l), y, &g);
            let need = want_input || l > 0;
            match self.layers[l].backward(&tape.inputs[l], &gy, &mut grad.layers[l], need) {
                Some(gx) => g = gx,
                None => return None,
            }
        }
        Some(g)
    }

    pub fn tensors(&self) -> Vec<&[T]> {
        self.layers.iter().flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }
}

fn apply_activation<T: Real>(act: Activation, y: &Jet<T>) -> Jet<T> {
    if act == Activation::Identity {
        return y.clone();
    }
    let mut z = Jet::zeros(y.n, y.ntan, y.cols);
    let nv = y.n * y.cols;
    let mut slope = vec![T::zero(); if y.ntan > 0 { nv } else { 0 }];
    for i in 0..nv {
        let (f, f1, _) = act.eval(y.data[i]);
        z.data[i] = f;
        if y.ntan > 0 {
            slope[i] = f1;
        }
    }
    for b in 1..=y.ntan {
        let off = b * nv;
        for i in 0..nv {
            z.data[off + i] = slope[i] * y.data[off + i];
        }
    }
    z
}

fn activation_backward<T: Real>(act: Activation, y: &Jet<T>, gz: &Jet<T>) -> Jet<T> {
    if act == Activation::Identity {
        return gz.clone();
    }
    let mut gy = Jet::zeros(y.n, y.ntan, y.cols);
    let nv = y.n * y.cols;
    for i in 0..nv {
        let (_, f1, f2) = act.eval(y.data[i]);
        let mut acc = gz.data[i] * f1;
        for b in 1..=y.ntan {
            let j = b * nv + i;
            gy.data[j] = gz.data[j] * f1;
            if f2 != T::zero() {
                acc += gz.data[j] * y.data[j] * f2;
            }
        }
        gy.data[i] = acc;
    }
    gy
}
