//! The driven neural propagator: (ρ₀, field grid) → trajectory on the
//! training window, plus window-by-window rollout for longer horizons.
//!
//! Parameter layout, in checkpoint order:
//!
//! | index          | tensor         | shape                     |
//! |----------------|----------------|---------------------------|
//! | 0, 1           | P_in  W₁, b₁   | `[2d²+1, H]`, `[H]`       |
//! | 2, 3           | P_in  W₂, b₂   | `[H, 2C]`, `[2C]`         |
//! | 4 + 3l         | W_l            | `[N_t+1, C, C, 2]`        |
//! | 5 + 3l, 6 + 3l | P_l  W, b      | `[2K, 2C]`, `[2C]`        |
//! | end − 4 …      | P_out W₁,b₁,W₂,b₂ | `[2C, H]`, `[H]`, `[H, 2d²]`, `[2d²]` |
//!
//! with H = `proj_hidden`, C = `latent_channels` (complex), K = field channels.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64 as C64;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::binio;
use crate::dataset::{propagate_from, FieldGrid, Trajectory};
use crate::engine::{Graph, Tensor, Var};
use crate::error::{NqpError, Result};
use crate::quantum::{DensityMatrix, FieldForm, LiouvilleVector, OpenSystem, TimeGrid};
use crate::rng::{stream_rng, DOMAIN_INIT};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NQPM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Number of retained Fourier modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Modes {
    #[default]
    All,
    Count(usize),
}

impl Serialize for Modes {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Modes::All => s.serialize_str("all"),
            Modes::Count(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Modes {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Name(String),
            Count(u64),
        }
        match Raw::deserialize(d)? {
            Raw::Name(s) if s == "all" => Ok(Modes::All),
            Raw::Name(s) => Err(serde::de::Error::custom(format!("unknown modes value {s:?}"))),
            Raw::Count(n) => Ok(Modes::Count(n as usize)),
        }
    }
}

/// Pointwise nonlinearity. `Identity` exists for linearity probes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Gelu,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    pub n_steps: usize,
    pub k_channels: usize,
    pub latent_channels: usize,
    pub proj_hidden: usize,
    pub n_layers: usize,
    #[serde(default)]
    pub modes: Modes,
    #[serde(default)]
    pub activation: Activation,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NqpError::Config(m));
        if self.d == 0 || self.n_steps == 0 || self.latent_channels == 0 || self.proj_hidden == 0 {
            return bad(format!("model dimensions must be positive: {self:?}"));
        }
        if let Modes::Count(m) = self.modes {
            if m > self.n_steps + 1 {
                return bad(format!("modes = {m} exceeds N_t + 1 = {}", self.n_steps + 1));
            }
        }
        Ok(())
    }

    pub fn time_points(&self) -> usize {
        self.n_steps + 1
    }

    pub fn retained_modes(&self) -> usize {
        match self.modes {
            Modes::All => self.time_points(),
            Modes::Count(m) => m,
        }
    }

    /// 2d² state channels plus the normalized time coordinate.
    pub fn physical_channels(&self) -> usize {
        2 * self.d * self.d + 1
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let (h, c2, k2, s2) = (self.proj_hidden, 2 * self.latent_channels, 2 * self.k_channels, 2 * self.d * self.d);
        let mut shapes = vec![vec![self.physical_channels(), h], vec![h], vec![h, c2], vec![c2]];
        for _ in 0..self.n_layers {
            shapes.push(vec![self.time_points(), self.latent_channels, self.latent_channels, 2]);
            shapes.push(vec![k2, c2]);
            shapes.push(vec![c2]);
        }
        shapes.extend([vec![c2, h], vec![h], vec![h, s2], vec![s2]]);
        shapes
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (p, h, c, k, t) = (self.physical_channels(), self.proj_hidden, self.latent_channels, self.k_channels, self.time_points());
        let s2 = 2 * self.d * self.d;
        let p_in = p * h + h + h * 2 * c + 2 * c;
        let layer = t * c * c * 2 + 2 * k * 2 * c + 2 * c;
        let p_out = 2 * c * h + h + h * s2 + s2;
        p_in + self.n_layers * layer + p_out
    }
}

/// All learnable tensors of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: Vec<Tensor>,
}

/// Graph handles for a registered [`ModelParams`], in the same order.
#[derive(Clone, Debug)]
pub struct ParamVars(pub Vec<Var>);

impl ParamVars {
    fn p_in(&self) -> [Var; 4] {
        [self.0[0], self.0[1], self.0[2], self.0[3]]
    }

    fn layer(&self, l: usize) -> [Var; 3] {
        let i = 4 + 3 * l;
        [self.0[i], self.0[i + 1], self.0[i + 2]]
    }

    fn p_out(&self) -> [Var; 4] {
        let n = self.0.len();
        [self.0[n - 4], self.0[n - 3], self.0[n - 2], self.0[n - 1]]
    }
}

impl ModelParams {
    /// Affine weights and biases ~ U(−1/√fan_in, 1/√fan_in); spectral
    /// weights have real and imaginary parts ~ U(−1, 1)/C.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, DOMAIN_INIT, 0);
        let shapes = config.param_shapes();
        let mut tensors = Vec::with_capacity(shapes.len());
        let mut fan_in = 1;
        for shape in shapes {
            let n: usize = shape.iter().product();
            let bound = if shape.len() == 4 {
                1.0 / config.latent_channels as f64
            } else {
                if shape.len() == 2 {
                    fan_in = shape[0].max(1);
                }
                1.0 / (fan_in as f64).sqrt()
            };
            let data = (0..n).map(|_| rng.random_range(-1.0..1.0) * bound).collect();
            tensors.push(Tensor::new(shape, data)?);
        }
        Ok(ModelParams { config: config.clone(), tensors })
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn register(&self, g: &mut Graph) -> ParamVars {
        ParamVars(self.tensors.iter().map(|t| g.param(t.clone())).collect())
    }

    fn register_constant(&self, g: &mut Graph) -> ParamVars {
        ParamVars(self.tensors.iter().map(|t| g.constant(t.clone())).collect())
    }

    fn check_inputs(&self, rho0s: &[&DensityMatrix], fields: &[&FieldGrid]) -> Result<()> {
        let c = &self.config;
        if rho0s.len() != fields.len() {
            return Err(NqpError::shape("forward", format!("{} states vs {} fields", rho0s.len(), fields.len())));
        }
        for (rho, f) in rho0s.iter().zip(fields) {
            if rho.dim() != c.d {
                return Err(NqpError::DimensionMismatch(format!("state is {}x{0}, model expects d = {}", rho.dim(), c.d)));
            }
            if f.n_steps != c.n_steps || f.channels != c.k_channels {
                return Err(NqpError::DimensionMismatch(format!(
                    "field grid has N_t = {}, K = {}; model expects N_t = {}, K = {}",
                    f.n_steps, f.channels, c.n_steps, c.k_channels
                )));
            }
        }
        Ok(())
    }

    /// `[B, N_t+1, 2d²+1]`: vec(ρ₀) broadcast along time plus t_n/t_max.
    pub fn physical_input(&self, rho0s: &[&DensityMatrix]) -> Tensor {
        let c = &self.config;
        let (t, p) = (c.time_points(), c.physical_channels());
        let mut data = Vec::with_capacity(rho0s.len() * t * p);
        for rho in rho0s {
            let flat: Vec<f64> = rho.0.iter().flat_map(|z| [z.re, z.im]).collect();
            for n in 0..t {
                data.extend_from_slice(&flat);
                data.push(n as f64 / c.n_steps as f64);
            }
        }
        Tensor::new(vec![rho0s.len(), t, p], data).expect("sizes computed from config")
    }

    fn field_input(&self, fields: &[&FieldGrid]) -> Tensor {
        let c = &self.config;
        let data = fields.iter().flat_map(|f| f.to_real_channels()).collect();
        Tensor::new(vec![fields.len(), c.time_points(), 2 * c.k_channels], data).expect("checked by check_inputs")
    }

    fn activate(&self, g: &mut Graph, x: Var) -> Var {
        match self.config.activation {
            Activation::Gelu => g.gelu(x),
            Activation::Identity => x,
        }
    }

    /// P_in applied rowwise to the physical input; returns `[B, T, 2C]`.
    pub fn build_lift(&self, g: &mut Graph, vars: &ParamVars, rho0s: &[&DensityMatrix]) -> Result<Var> {
        let [w1, b1, w2, b2] = vars.p_in();
        let x = g.constant(self.physical_input(rho0s));
        let h = g.linear(x, w1, b1)?;
        let h = self.activate(g, h);
        g.linear(h, w2, b2)
    }

    /// One spectral block:
    /// v ↦ σ(v + F⁻¹[W · mask(F[v] + P(F[f]))]).
    pub fn build_fourier_layer(&self, g: &mut Graph, v: Var, field_hat: Var, layer: [Var; 3]) -> Result<Var> {
        let [w, pw, pb] = layer;
        let u = g.dft_time(v)?;
        let p = g.linear(field_hat, pw, pb)?;
        let mut s = g.add(u, p)?;
        if self.config.retained_modes() < self.config.time_points() {
            s = g.mode_mask(s, self.config.retained_modes())?;
        }
        let s = g.complex_mul(s, w)?;
        let y = g.idft_time(s)?;
        let z = g.add(v, y)?;
        Ok(self.activate(g, z))
    }

    /// Full network; returns the `[B, T, 2d²]` prediction.
    pub fn build_forward(
        &self,
        g: &mut Graph,
        vars: &ParamVars,
        rho0s: &[&DensityMatrix],
        fields: &[&FieldGrid],
    ) -> Result<Var> {
        self.check_inputs(rho0s, fields)?;
        let mut v = self.build_lift(g, vars, rho0s)?;
        let f = g.constant(self.field_input(fields));
        let f_hat = g.dft_time(f)?;
        for l in 0..self.config.n_layers {
            v = self.build_fourier_layer(g, v, f_hat, vars.layer(l))?;
        }
        let [w1, b1, w2, b2] = vars.p_out();
        let h = g.linear(v, w1, b1)?;
        let h = self.activate(g, h);
        g.linear(h, w2, b2)
    }

    /// Latent tensor after P_in for a single sample, `[N_t+1, 2C]`.
    pub fn lift_input(&self, rho0: &DensityMatrix, field: &FieldGrid) -> Result<Tensor> {
        self.check_inputs(&[rho0], &[field])?;
        let mut g = Graph::new();
        let vars = self.register_constant(&mut g);
        let v = self.build_lift(&mut g, &vars, &[rho0])?;
        let t = g.value(v);
        Tensor::new(t.shape()[1..].to_vec(), t.data().to_vec())
    }

    pub fn forward_batch(&self, rho0s: &[&DensityMatrix], fields: &[&FieldGrid], dt: f64) -> Result<Vec<Trajectory>> {
        let mut g = Graph::new();
        let vars = self.register_constant(&mut g);
        let out = self.build_forward(&mut g, &vars, rho0s, fields)?;
        let values = g.value(out).data();
        let c = &self.config;
        let (t, s2) = (c.time_points(), 2 * c.d * c.d);
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(NqpError::ModelDiverged { row: (i / s2) % t });
        }
        let grid = TimeGrid::new(dt, c.n_steps)?;
        values
            .chunks_exact(t * s2)
            .map(|chunk| Trajectory::from_real_channels(grid, c.d * c.d, chunk))
            .collect()
    }

    /// Predicted trajectory μ_0 … μ_{N_t}.
    pub fn forward(&self, rho0: &DensityMatrix, field: &FieldGrid, dt: f64) -> Result<Trajectory> {
        Ok(self.forward_batch(&[rho0], &[field], dt)?.remove(0))
    }

    pub fn checkpoint_bytes(&self, meta: &CheckpointMeta) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            config: self.config.clone(),
            param_count: self.param_count(),
            meta: meta.clone(),
        };
        let mut out = Vec::with_capacity(self.param_count() * 8 + 256);
        binio::write_header(&mut out, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, &header)?;
        for t in &self.tensors {
            binio::write_f64s(&mut out, t.data())?;
        }
        Ok(out)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<(Self, CheckpointMeta)> {
        let (h, payload): (CheckpointHeader, _) = binio::read_file(bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        h.config.validate()?;
        let expected = h.config.param_count();
        if h.param_count != expected {
            return Err(NqpError::Corrupt(format!(
                "header declares {} parameters, config implies {expected}",
                h.param_count
            )));
        }
        let flat = binio::read_f64s(payload, expected)?;
        let mut tensors = Vec::new();
        let mut offset = 0;
        for shape in h.config.param_shapes() {
            let n: usize = shape.iter().product();
            tensors.push(Tensor::new(shape, flat[offset..offset + n].to_vec())?);
            offset += n;
        }
        Ok((ModelParams { config: h.config, tensors }, h.meta))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epoch: usize,
    pub loss: Option<f64>,
    /// Time step of the training grid.
    pub dt: f64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    param_count: usize,
    meta: CheckpointMeta,
}

/// Writes through a temporary file and renames, so an interrupted save
/// never clobbers the previous checkpoint.
pub fn save_checkpoint(params: &ModelParams, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let bytes = params.checkpoint_bytes(meta)?;
    let tmp = path.with_extension("nqpm.partial");
    std::fs::File::create(&tmp)?.write_all(&bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, CheckpointMeta)> {
    ModelParams::from_checkpoint_bytes(&binio::read_all(path)?)
}

/// Anything that maps (ρ at the window start, analytic field) to the
/// trajectory over one window.
pub trait Propagator {
    fn window(&self) -> TimeGrid;

    /// Trajectory over one window whose first point sits at absolute step
    /// `start_step`.
    fn propagate_window(
        &self,
        system: &OpenSystem,
        forms: &[FieldForm],
        start_step: usize,
        rho: &DensityMatrix,
    ) -> Result<Trajectory>;
}

/// A trained model used as a propagator with time step `dt`.
pub struct NeuralPropagator<'a> {
    pub params: &'a ModelParams,
    pub dt: f64,
}

impl Propagator for NeuralPropagator<'_> {
    fn window(&self) -> TimeGrid {
        TimeGrid { dt: self.dt, n_steps: self.params.config.n_steps }
    }

    fn propagate_window(
        &self,
        system: &OpenSystem,
        forms: &[FieldForm],
        start_step: usize,
        rho: &DensityMatrix,
    ) -> Result<Trajectory> {
        let field = FieldGrid::evaluate(system, forms, self.window(), start_step);
        self.params.forward(rho, &field, self.dt)
    }
}

/// RK4 over the same windows; rollout with it must reproduce a single
/// long propagation.
pub struct ExactPropagator {
    pub window: TimeGrid,
}

impl Propagator for ExactPropagator {
    fn window(&self) -> TimeGrid {
        self.window
    }

    fn propagate_window(
        &self,
        system: &OpenSystem,
        forms: &[FieldForm],
        start_step: usize,
        rho: &DensityMatrix,
    ) -> Result<Trajectory> {
        propagate_from(system, forms, self.window, start_step, rho)
    }
}

/// Hermitian part with unit trace.
fn project_physical(rho: &DensityMatrix) -> DensityMatrix {
    let d = rho.dim();
    let mut m = rho.0.clone();
    for j in 0..d {
        for k in 0..d {
            m[[j, k]] = (rho.0[[j, k]] + rho.0[[k, j]].conj()) * 0.5;
        }
    }
    let tr = m.diag().sum().re;
    if tr.abs() > 0.0 {
        m.mapv_inplace(|z| z / tr);
    }
    DensityMatrix(m)
}

/// Chains windows: the last state of each window seeds the next, with the
/// field re-evaluated at absolute times.
pub fn rollout<P: Propagator>(
    propagator: &P,
    system: &OpenSystem,
    rho0: &DensityMatrix,
    forms: &[FieldForm],
    horizon_steps: usize,
    project: bool,
) -> Result<Trajectory> {
    let window = propagator.window();
    let grid = TimeGrid::new(window.dt, horizon_steps)?;
    let mut states: Vec<LiouvilleVector> = Vec::with_capacity(horizon_steps + 1);
    let mut rho = rho0.clone();
    let mut start = 0;
    while states.len() < horizon_steps + 1 {
        let traj = propagator.propagate_window(system, forms, start, &rho)?;
        let skip = if states.is_empty() { 0 } else { 1 };
        let take = (horizon_steps + 1 - states.len()).min(window.n_steps + 1 - skip);
        states.extend(traj.states.iter().skip(skip).take(take).cloned());
        rho = traj.state(window.n_steps);
        if project {
            rho = project_physical(&rho);
        }
        start += window.n_steps;
    }
    Ok(Trajectory { grid, states })
}

/// Population of level j along a trajectory.
pub fn population_series(traj: &Trajectory, j: usize) -> Vec<f64> {
    let d = traj.dim();
    traj.states.iter().map(|s| s.0[j * d + j].re).collect()
}

/// ρ_{jk} along a trajectory.
pub fn element_series(traj: &Trajectory, j: usize, k: usize) -> Vec<C64> {
    let d = traj.dim();
    traj.states.iter().map(|s| s.0[j * d + k]).collect()
}

#[cfg(test)]
mod tests;
