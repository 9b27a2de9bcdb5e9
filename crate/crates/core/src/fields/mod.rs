//! The three learnable networks: the spatially-varying expression generator,
//! the per-point rigid deformation, and the conditioned SDF/color field.

pub mod checkpoint;
pub mod encoding;
pub mod nn;
mod pipeline;
pub mod rotation;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use encoding::positional_encode;
pub use nn::{Activation, Dense, Jet, Mlp, MlpTape};
pub use checkpoint::{Checkpoint, CheckpointManifest};
pub use pipeline::{PipelineOutput, PipelineTape};

use crate::error::{Error, Result};
use crate::real::{Real, Vec3};

/// Per-frame global expression code ε.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpressionVector(Vec<f64>);

impl ExpressionVector {
    pub fn new(values: Vec<f64>) -> Self {
        ExpressionVector(values)
    }

    pub fn zeros(k: usize) -> Self {
        ExpressionVector(vec![0.0; k])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn cast<T: Real>(&self) -> Vec<T> {
        self.0.iter().map(|&v| T::lit(v)).collect()
    }
}

/// Per-point compressed conditioning code ε′.
#[derive(Clone, Debug, PartialEq)]
pub struct SVECode(pub Vec<f64>);

/// Axis-angle rotation and translation predicted for one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Motion6D {
    pub rotation_params: Vec3,
    pub translation: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldOutput {
    pub sdf: f64,
    pub color: [f64; 3],
    pub geo_feature: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Global expression dimension K.
    pub k: usize,
    /// Compressed code dimension K′; 0 picks `min(8, K/2)`.
    pub k_prime: usize,
    /// Conditioning by generated per-point codes; `false` feeds ε directly.
    pub use_sve: bool,
    /// Requires K′ < K; `false` is the uncompressed variant with K′ = K.
    pub compress_sve: bool,
    pub pe_levels_generator: usize,
    pub pe_levels_deform: usize,
    pub pe_levels_field: usize,
    pub integrating_width: usize,
    pub shortcut_width: usize,
    pub deform_width: usize,
    pub sdf_width: usize,
    pub sdf_hidden_layers: usize,
    pub feature_width: usize,
    pub color_width: usize,
    pub color_hidden_layers: usize,
    pub color_uses_gradient: bool,
    pub softplus_beta: f64,
    pub init_radius: f64,
    pub init_inv_std: f64,
    /// inv_std = exp(inv_std_scale · θ), which speeds up its adaptation.
    pub inv_std_scale: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            k: 64,
            k_prime: 8,
            use_sve: true,
            compress_sve: true,
            pe_levels_generator: 4,
            pe_levels_deform: 4,
            pe_levels_field: 6,
            integrating_width: 64,
            shortcut_width: 32,
            deform_width: 32,
            sdf_width: 64,
            sdf_hidden_layers: 3,
            feature_width: 32,
            color_width: 64,
            color_hidden_layers: 2,
            color_uses_gradient: true,
            softplus_beta: 100.0,
            init_radius: 0.8,
            init_inv_std: 20.0,
            inv_std_scale: 10.0,
        }
    }
}

/// Number of fully connected layers in the integrating branch of the generator.
pub const INTEGRATING_LAYERS: usize = 8;
/// Number of fully connected layers in the generator's shortcut branch.
pub const SHORTCUT_LAYERS: usize = 2;
/// Number of fully connected layers in the deformation network.
pub const DEFORM_LAYERS: usize = 2;

impl NetConfig {
    pub fn resolved_k_prime(&self) -> usize {
        if !self.compress_sve {
            self.k
        } else if self.k_prime == 0 {
            (self.k / 2).clamp(1, 8)
        } else {
            self.k_prime
        }
    }

    /// Width of the conditioning vector consumed by the deformation and field.
    pub fn cond_dim(&self) -> usize {
        if self.use_sve {
            self.resolved_k_prime()
        } else {
            self.k
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::NetConfig("K must be >= 1".into()));
        }
        let kp = self.resolved_k_prime();
        if self.use_sve && self.compress_sve && kp >= self.k {
            return Err(Error::CompressionViolated { k: self.k, k_prime: kp });
        }
        if kp == 0 {
            return Err(Error::NetConfig("K' must be >= 1".into()));
        }
        let widths = [
            self.integrating_width,
            self.shortcut_width,
            self.deform_width,
            self.sdf_width,
            self.color_width,
        ];
        if widths.contains(&0) || self.sdf_hidden_layers == 0 {
            return Err(Error::NetConfig("layer widths and depths must be positive".into()));
        }
        if !(self.softplus_beta > 0.0 && self.init_inv_std > 0.0 && self.inv_std_scale > 0.0 && self.init_radius > 0.0) {
            return Err(Error::NetConfig("beta, radius and inv_std settings must be positive".into()));
        }
        Ok(())
    }

    pub fn color_input_width(&self) -> usize {
        self.feature_width + 3 + if self.color_uses_gradient { 3 } else { 0 } + self.cond_dim()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Generator,
    Deform,
    Field,
    InvStd,
}

/// Learnable parameters of all three networks plus the opacity sharpness.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldParams<T> {
    pub config: NetConfig,
    pub integrating: Mlp<T>,
    pub shortcut: Mlp<T>,
    pub deform: Mlp<T>,
    pub sdf: Mlp<T>,
    pub color: Mlp<T>,
    pub inv_std_param: [T; 1],
}

impl<T: Real> FieldParams<T> {
    /// All-zero parameters with the architecture implied by `config`.
    pub fn zeros(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let kp = config.resolved_k_prime();
        let cond = config.cond_dim();
        let sp = Activation::Softplus { beta: config.softplus_beta };
        let (integrating, shortcut) = if config.use_sve {
            let gin = encoding::encoded_width(config.pe_levels_generator) + config.k;
            let mut w = vec![gin];
            w.extend(std::iter::repeat_n(config.integrating_width, INTEGRATING_LAYERS - 1));
            w.push(kp);
            let mut s = vec![config.k];
            s.extend(std::iter::repeat_n(config.shortcut_width, SHORTCUT_LAYERS - 1));
            s.push(kp);
            (Mlp::zeros(&w, sp, Activation::Identity), Mlp::zeros(&s, sp, Activation::Identity))
        } else {
            (Mlp::zeros(&[], sp, Activation::Identity), Mlp::zeros(&[], sp, Activation::Identity))
        };
        let din = encoding::encoded_width(config.pe_levels_deform) + cond;
        let deform = Mlp::zeros(&[din, config.deform_width, 6], sp, Activation::Identity);
        let fin = encoding::encoded_width(config.pe_levels_field) + cond;
        let mut sw = vec![fin];
        sw.extend(std::iter::repeat_n(config.sdf_width, config.sdf_hidden_layers));
        sw.push(1 + config.feature_width);
        let sdf = Mlp::zeros(&sw, sp, Activation::Identity);
        let mut cw = vec![config.color_input_width()];
        cw.extend(std::iter::repeat_n(config.color_width, config.color_hidden_layers));
        cw.push(3);
        let color = Mlp::zeros(&cw, Activation::Relu, Activation::Sigmoid);
        Ok(FieldParams {
            config: config.clone(),
            integrating,
            shortcut,
            deform,
            sdf,
            color,
            inv_std_param: [T::zero()],
        })
    }

    pub fn zeros_like(&self) -> Self {
        FieldParams {
            config: self.config.clone(),
            integrating: self.integrating.zeros_like(),
            shortcut: self.shortcut.zeros_like(),
            deform: self.deform.zeros_like(),
            sdf: self.sdf.zeros_like(),
            color: self.color.zeros_like(),
            inv_std_param: [T::zero()],
        }
    }

    pub fn inv_std(&self) -> T {
        (T::lit(self.config.inv_std_scale) * self.inv_std_param[0]).exp()
    }

    pub fn set_inv_std(&mut self, inv_std: f64) {
        self.inv_std_param[0] = T::lit(inv_std.ln() / self.config.inv_std_scale);
    }

    fn named_mlps(&self) -> [(&'static str, &Mlp<T>); 5] {
        [
            ("generator.integrating", &self.integrating),
            ("generator.shortcut", &self.shortcut),
            ("deform", &self.deform),
            ("field.sdf", &self.sdf),
            ("field.color", &self.color),
        ]
    }

    /// Flattened parameter arrays in a fixed order, with stable names.
    pub fn named_tensors(&self) -> Vec<(String, &[T])> {
        let mut out = Vec::new();
        for (name, mlp) in self.named_mlps() {
            for (l, layer) in mlp.layers.iter().enumerate() {
                out.push((format!("{name}.{l}.weight"), layer.weight.as_slice()));
                out.push((format!("{name}.{l}.bias"), layer.bias.as_slice()));
            }
        }
        out.push(("inv_std".to_string(), &self.inv_std_param[..]));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for mlp in [
            &mut self.integrating,
            &mut self.shortcut,
            &mut self.deform,
            &mut self.sdf,
            &mut self.color,
        ] {
            out.extend(mlp.tensors_mut());
        }
        out.push(&mut self.inv_std_param[..]);
        out
    }

    pub fn n_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn group_of(name: &str) -> ParamGroup {
        if name.starts_with("generator.") {
            ParamGroup::Generator
        } else if name.starts_with("deform.") {
            ParamGroup::Deform
        } else if name.starts_with("field.") {
            ParamGroup::Field
        } else {
            ParamGroup::InvStd
        }
    }

    pub fn cast<U: Real>(&self) -> FieldParams<U> {
        let cast_mlp = |m: &Mlp<T>| Mlp {
            layers: m
                .layers
                .iter()
                .map(|l| Dense {
                    inputs: l.inputs,
                    outputs: l.outputs,
                    weight: l.weight.iter().map(|&v| U::lit(v.f64())).collect(),
                    bias: l.bias.iter().map(|&v| U::lit(v.f64())).collect(),
                })
                .collect(),
            hidden: m.hidden,
            output: m.output,
        };
        FieldParams {
            config: self.config.clone(),
            integrating: cast_mlp(&self.integrating),
            shortcut: cast_mlp(&self.shortcut),
            deform: cast_mlp(&self.deform),
            sdf: cast_mlp(&self.sdf),
            color: cast_mlp(&self.color),
            inv_std_param: [U::lit(self.inv_std_param[0].f64())],
        }
    }

    /// `self += scale * other`, element-wise over all tensors.
    pub fn add_scaled(&mut self, other: &FieldParams<T>, scale: T) {
        let src: Vec<Vec<T>> = other.named_tensors().into_iter().map(|(_, t)| t.to_vec()).collect();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }
}

fn fill_normal<T: Real>(values: &mut [T], std: f64, rng: &mut ChaCha8Rng) {
    if std == 0.0 {
        values.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    let dist = Normal::new(0.0, std).expect("positive std");
    for v in values.iter_mut() {
        *v = T::lit(dist.sample(rng));
    }
}

/// Fan-in scaled normal init: `sqrt(2 / fan_in)` for hidden layers, `sqrt(1 / fan_in)` at the output.
fn init_fan_in<T: Real>(mlp: &mut Mlp<T>, rng: &mut ChaCha8Rng) {
    let n = mlp.layers.len();
    for (l, layer) in mlp.layers.iter_mut().enumerate() {
        let gain = if l + 1 == n { 1.0 } else { 2.0 };
        fill_normal(&mut layer.weight, (gain / layer.inputs as f64).sqrt(), rng);
        layer.bias.iter_mut().for_each(|b| *b = T::zero());
    }
}

/// Near-uniform unit directions (Fibonacci lattice).
fn fibonacci_directions(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

/// Initializes the SDF branch so that `sdf(p) ≈ |p| - radius`.
///
/// The first layer projects the raw coordinates onto an even spread of unit
/// directions, hidden layers start near identity, and the output averages the
/// rectified projections (whose spherical mean is |p| / 4).
fn init_sphere_sdf<T: Real>(mlp: &mut Mlp<T>, radius: f64, rng: &mut ChaCha8Rng) {
    let n = mlp.layers.len();
    let width = mlp.layers[0].outputs;
    let dirs = fibonacci_directions(width);
    {
        let first = &mut mlp.layers[0];
        first.weight.iter_mut().for_each(|w| *w = T::zero());
        for (j, d) in dirs.iter().enumerate() {
            for c in 0..3 {
                first.weight[j * first.inputs + c] = T::lit(d[c]);
            }
        }
        first.bias.iter_mut().for_each(|b| *b = T::zero());
    }
    for layer in mlp.layers[1..n - 1].iter_mut() {
        let noise = 0.01 / (layer.inputs as f64).sqrt();
        fill_normal(&mut layer.weight, noise, rng);
        for j in 0..layer.outputs.min(layer.inputs) {
            layer.weight[j * layer.inputs + j] += T::one();
        }
        layer.bias.iter_mut().for_each(|b| *b = T::zero());
    }
    let last = &mut mlp.layers[n - 1];
    let fan_in = last.inputs;
    fill_normal(&mut last.weight, (1.0 / fan_in as f64).sqrt(), rng);
    for j in 0..fan_in {
        last.weight[j] = T::lit(4.0 / fan_in as f64);
    }
    last.bias.iter_mut().for_each(|b| *b = T::zero());
    // Softplus leaves a small positive residue on inactive units, so the bias
    // is set from the measured output on the target sphere.
    let probes: Vec<Vec3> = fibonacci_directions(256).into_iter().map(|d| d.map(|v| v * radius)).collect();
    let inputs = mlp.layers[0].inputs;
    let mut x = Jet::<T>::zeros(probes.len(), 0, inputs);
    for (i, p) in probes.iter().enumerate() {
        for c in 0..3 {
            x.set(0, i, c, T::lit(p[c]));
        }
    }
    let out = mlp.forward(x, None);
    let mean = (0..probes.len()).map(|i| out.get(0, i, 0).f64()).sum::<f64>() / probes.len() as f64;
    mlp.layers[n - 1].bias[0] = T::lit(-mean);
}

/// Random initialization: fan-in scaled generator and deformation with the
/// deformation's output layer zeroed, sphere-initialized SDF, and the
/// configured initial inv_std.
pub fn init_params<T: Real>(seed: u64, config: &NetConfig) -> Result<FieldParams<T>> {
    let mut params = FieldParams::<T>::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if config.use_sve {
        init_fan_in(&mut params.integrating, &mut rng);
        init_fan_in(&mut params.shortcut, &mut rng);
    }
    init_fan_in(&mut params.deform, &mut rng);
    if let Some(last) = params.deform.layers.last_mut() {
        last.weight.iter_mut().for_each(|w| *w = T::zero());
        last.bias.iter_mut().for_each(|b| *b = T::zero());
    }
    init_sphere_sdf(&mut params.sdf, config.init_radius, &mut rng);
    init_fan_in(&mut params.color, &mut rng);
    params.set_inv_std(config.init_inv_std);
    Ok(params)
}

impl<T: Real> FieldParams<T> {
    fn check_k(&self, eps: &ExpressionVector) -> Result<()> {
        if eps.len() != self.config.k {
            return Err(Error::Dimension { what: "expression vector", expected: self.config.k, got: eps.len() });
        }
        Ok(())
    }

    fn check_code(&self, code: &SVECode) -> Result<()> {
        if code.0.len() != self.config.cond_dim() {
            return Err(Error::Dimension { what: "conditioning code", expected: self.config.cond_dim(), got: code.0.len() });
        }
        Ok(())
    }

    /// ε′ at one observation-space point. In the global-conditioning variant
    /// this is ε itself, independent of the point.
    pub fn generate_sve(&self, eps: &ExpressionVector, p_o: Vec3) -> Result<SVECode> {
        self.check_k(eps)?;
        let cond = self.condition(&eps.cast::<T>(), &[p_o.map(T::lit)], 0, None);
        Ok(SVECode(cond.row(0).iter().map(|v| v.f64()).collect()))
    }

    /// The shortcut branch alone, `ShortcutMLP(ε)`.
    pub fn shortcut_code(&self, eps: &ExpressionVector) -> Result<SVECode> {
        self.check_k(eps)?;
        if !self.config.use_sve {
            return Ok(SVECode(eps.values().to_vec()));
        }
        let out = self.shortcut.forward(Jet::broadcast(1, 0, &eps.cast::<T>()), None);
        Ok(SVECode(out.row(0).iter().map(|v| v.f64()).collect()))
    }

    /// Per-point rigid motion and the warped canonical point.
    pub fn deform(&self, p_o: Vec3, code: &SVECode) -> Result<(Motion6D, Vec3)> {
        self.check_code(code)?;
        let cond = Jet::broadcast(1, 0, &code.0.iter().map(|&v| T::lit(v)).collect::<Vec<_>>());
        let (motion, pc, _) = self.warp(&[p_o.map(T::lit)], &cond, None);
        let m = motion.row(0);
        let motion = Motion6D {
            rotation_params: [m[0].f64(), m[1].f64(), m[2].f64()],
            translation: [m[3].f64(), m[4].f64(), m[5].f64()],
        };
        Ok((motion, pc[0].map(|v| v.f64())))
    }

    /// SDF, color and geometry feature at a canonical point.
    pub fn field_query(&self, p_c: Vec3, dir: Vec3, code: &SVECode) -> Result<FieldOutput> {
        self.check_code(code)?;
        let dn = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
        if (dn - 1.0).abs() > 1e-6 {
            return Err(Error::NetConfig(format!("view direction must be unit length, got norm {dn}")));
        }
        let cond = Jet::broadcast(1, 3, &code.0.iter().map(|&v| T::lit(v)).collect::<Vec<_>>());
        let out = self.canonical_field(&[p_c.map(T::lit)], None, &cond, Some(&[dir.map(T::lit)]), None);
        Ok(FieldOutput {
            sdf: out.sdf[0].f64(),
            color: out.color[0].map(|v| v.f64()),
            geo_feature: out.feature.row(0).iter().map(|v| v.f64()).collect(),
        })
    }

    /// Exact ∇_{p_c} sdf for a fixed conditioning code.
    pub fn field_gradient(&self, p_c: Vec3, code: &SVECode) -> Result<Vec3> {
        self.check_code(code)?;
        let cond = Jet::broadcast(1, 3, &code.0.iter().map(|&v| T::lit(v)).collect::<Vec<_>>());
        let out = self.canonical_field(&[p_c.map(T::lit)], None, &cond, None, None);
        Ok(out.gradient[0].map(|v| v.f64()))
    }

    /// Full observation-space SDF `sdf(p_o)` at a batch of points (no derivatives).
    pub fn observed_sdf(&self, eps: &[T], points: &[Vec3<T>]) -> Vec<T> {
        self.forward(eps, points, None, false, None).sdf
    }
}
