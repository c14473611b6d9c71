//! Physics-informed training: data loss against reference trajectories,
//! QME residual on model predictions, and the minibatch Adam loop.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64 as C64;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{generate_dataset_epoch, DataSample, Dataset, DatasetConfig, DatasetKind, FieldGrid, Trajectory};
use crate::engine::{Adam, Graph, Tensor, Var};
use crate::error::{NqpError, Result};
use crate::model::{save_checkpoint, CheckpointMeta, ModelConfig, ModelParams, ParamVars};
use crate::quantum::{DensityMatrix, OpenSystem};
use crate::rng::{stream_rng, DOMAIN_SHUFFLE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    /// Linear α ramp (start, end) over the epochs; overrides `alpha`.
    #[serde(default)]
    pub alpha_schedule: Option<(f64, f64)>,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub n_data: usize,
    pub n_phys: usize,
    pub seed: u64,
    /// Use ‖·‖²_F instead of ‖·‖_F in both losses.
    #[serde(default)]
    pub squared_norm: bool,
    /// Write a checkpoint every this many epochs (0 = only at the end).
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Samples per gradient shard. Shards are reduced in a fixed order, so
    /// results do not depend on the number of worker threads.
    #[serde(default = "default_shard_size")]
    pub shard_size: usize,
}

fn default_shard_size() -> usize {
    16
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.5,
            alpha_schedule: None,
            lr: 1e-4,
            epochs: 10_000,
            batch_size: 32,
            n_data: 2000,
            n_phys: 200,
            seed: 0,
            squared_norm: false,
            checkpoint_every: 0,
            shard_size: default_shard_size(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if let Some((a, b)) = self.alpha_schedule {
            check_alpha(a)?;
            check_alpha(b)?;
        }
        if !(self.lr > 0.0) {
            return Err(NqpError::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.shard_size == 0 {
            return Err(NqpError::Config("batch_size and shard_size must be positive".into()));
        }
        Ok(())
    }

    pub fn alpha_at(&self, epoch: usize) -> f64 {
        match self.alpha_schedule {
            None => self.alpha,
            Some((a, b)) => {
                let span = self.epochs.saturating_sub(1).max(1) as f64;
                a + (b - a) * (epoch as f64 / span).min(1.0)
            }
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(NqpError::Config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(())
}

/// α·l_data + (1 − α)·l_phys
pub fn combined_loss(l_data: f64, l_phys: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(alpha * l_data + (1.0 - alpha) * l_phys)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub l_data: f64,
    pub l_phys: f64,
    pub l: f64,
    pub grad_norm: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub rows: Vec<EpochReport>,
}

impl LossReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,l_data,l_phys,l,grad_norm,seconds\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.6}\n",
                r.epoch, r.l_data, r.l_phys, r.l, r.grad_norm, r.seconds
            ));
        }
        s
    }

    /// CSV without the wall-clock column; identical across reruns.
    pub fn deterministic_csv(&self) -> String {
        self.to_csv()
            .lines()
            .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn first(&self) -> Option<&EpochReport> {
        self.rows.first()
    }

    pub fn last(&self) -> Option<&EpochReport> {
        self.rows.last()
    }
}

/// One physics sample with its per-time Liouvillians, `[T, d², d²]`.
#[derive(Clone)]
pub struct PhysicsSample {
    pub rho0: DensityMatrix,
    pub field: FieldGrid,
    pub liouvillians: Arc<Vec<C64>>,
}

impl PhysicsSample {
    pub fn new(system: &OpenSystem, rho0: DensityMatrix, field: FieldGrid) -> Result<Self> {
        if field.channels != system.n_fields() {
            return Err(NqpError::DimensionMismatch(format!(
                "field grid has {} channels, system has {}",
                field.channels,
                system.n_fields()
            )));
        }
        let liouvillians = liouvillian_stack(system, &field);
        Ok(PhysicsSample { rho0, field, liouvillians })
    }
}

/// L_n for every row of the field grid, stacked row-major.
pub fn liouvillian_stack(system: &OpenSystem, field: &FieldGrid) -> Arc<Vec<C64>> {
    let mut out = Vec::new();
    for n in 0..=field.n_steps {
        out.extend(system.liouvillian_with_values(field.row(n)).iter().copied());
    }
    Arc::new(out)
}

fn normalizer(n_samples: usize, n_steps: usize) -> f64 {
    1.0 / (n_samples as f64 * n_steps as f64)
}

/// Σ_p Σ_n ‖μ_n − ρ_n‖ for a `[B, T, 2d²]` prediction node.
pub fn build_data_norm_sum(g: &mut Graph, mu: Var, targets: &[&Trajectory], squared: bool) -> Result<Var> {
    let shape = g.value(mu).shape().to_vec();
    let data: Vec<f64> = targets.iter().flat_map(|t| t.to_real_channels()).collect();
    let target = g.constant(Tensor::new(shape, data)?);
    g.frobenius_sum(mu, target, squared)
}

/// Σ_p Σ_n ‖∂_t μ_n − L_n μ_n‖ with ∂_t by second-order finite differences.
pub fn build_residual_norm_sum(
    g: &mut Graph,
    mu: Var,
    liouvillians: &[&Arc<Vec<C64>>],
    dim: usize,
    dt: f64,
    squared: bool,
) -> Result<Var> {
    let stacked: Vec<C64> = liouvillians.iter().flat_map(|l| l.iter().copied()).collect();
    let deriv = g.time_derivative(mu, dt)?;
    let lmu = g.complex_matvec(mu, Arc::new(stacked), dim * dim)?;
    let r = g.sub(deriv, lmu)?;
    Ok(g.norm_sum(r, squared))
}

fn trajectories_tensor(trajs: &[&Trajectory]) -> Result<Tensor> {
    let t = trajs[0].states.len();
    let c = 2 * trajs[0].states[0].len();
    Tensor::new(vec![trajs.len(), t, c], trajs.iter().flat_map(|t| t.to_real_channels()).collect())
}

/// Data loss between given predictions and references (no model involved).
pub fn data_loss_of(predictions: &[&Trajectory], references: &[&Trajectory], squared: bool) -> Result<f64> {
    if predictions.is_empty() {
        return Ok(0.0);
    }
    let mut g = Graph::new();
    let mu = g.constant(trajectories_tensor(predictions)?);
    let s = build_data_norm_sum(&mut g, mu, references, squared)?;
    let n_t = predictions[0].grid.n_steps;
    Ok(g.value(s).item() * normalizer(predictions.len(), n_t))
}

/// QME residual of given trajectories (e.g. exact RK4 ones) under the
/// Liouvillians built from their field grids.
pub fn physics_residual_of(
    trajectories: &[&Trajectory],
    fields: &[&FieldGrid],
    system: &OpenSystem,
    squared: bool,
) -> Result<f64> {
    if trajectories.is_empty() {
        return Ok(0.0);
    }
    let stacks: Vec<Arc<Vec<C64>>> = fields.iter().map(|f| liouvillian_stack(system, f)).collect();
    let refs: Vec<&Arc<Vec<C64>>> = stacks.iter().collect();
    let mut g = Graph::new();
    let mu = g.constant(trajectories_tensor(trajectories)?);
    let grid = trajectories[0].grid;
    let s = build_residual_norm_sum(&mut g, mu, &refs, system.dim(), grid.dt, squared)?;
    Ok(g.value(s).item() * normalizer(trajectories.len(), grid.n_steps))
}

fn check_grid(config: &ModelConfig, field: &FieldGrid) -> Result<()> {
    if field.n_steps != config.n_steps {
        return Err(NqpError::DimensionMismatch(format!(
            "field grid has N_t = {}, model has N_t = {}",
            field.n_steps, config.n_steps
        )));
    }
    Ok(())
}

/// (1/(N·N_t)) Σ_p Σ_n ‖μ_n − ρ_n‖ for the model's predictions.
pub fn data_loss(params: &ModelParams, batch: &[&DataSample], squared: bool) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let mut g = Graph::new();
    let vars = params.register(&mut g);
    let s = data_term(&mut g, &vars, params, batch, squared)?;
    Ok(g.value(s).item() * normalizer(batch.len(), params.config.n_steps))
}

fn data_term(g: &mut Graph, vars: &ParamVars, params: &ModelParams, batch: &[&DataSample], squared: bool) -> Result<Var> {
    let mut targets = Vec::with_capacity(batch.len());
    for (i, s) in batch.iter().enumerate() {
        check_grid(&params.config, &s.field)?;
        targets.push(
            s.trajectory
                .as_ref()
                .ok_or_else(|| NqpError::Config(format!("data sample {i} carries no trajectory")))?,
        );
    }
    let rho: Vec<&DensityMatrix> = batch.iter().map(|s| &s.rho0).collect();
    let fields: Vec<&FieldGrid> = batch.iter().map(|s| &s.field).collect();
    let mu = params.build_forward(g, vars, &rho, &fields)?;
    build_data_norm_sum(g, mu, &targets, squared)
}

/// (1/(N·N_t)) Σ_p Σ_n ‖∂_t μ_n − L_n μ_n‖ for the model's predictions.
pub fn physics_residual(params: &ModelParams, batch: &[&PhysicsSample], dt: f64, squared: bool) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let mut g = Graph::new();
    let vars = params.register(&mut g);
    let s = physics_term(&mut g, &vars, params, batch, dt, squared)?;
    Ok(g.value(s).item() * normalizer(batch.len(), params.config.n_steps))
}

fn physics_term(
    g: &mut Graph,
    vars: &ParamVars,
    params: &ModelParams,
    batch: &[&PhysicsSample],
    dt: f64,
    squared: bool,
) -> Result<Var> {
    for s in batch {
        check_grid(&params.config, &s.field)?;
    }
    let rho: Vec<&DensityMatrix> = batch.iter().map(|s| &s.rho0).collect();
    let fields: Vec<&FieldGrid> = batch.iter().map(|s| &s.field).collect();
    let mu = params.build_forward(g, vars, &rho, &fields)?;
    let stacks: Vec<&Arc<Vec<C64>>> = batch.iter().map(|s| &s.liouvillians).collect();
    build_residual_norm_sum(g, mu, &stacks, params.config.d, dt, squared)
}

enum Shard<'a> {
    Data(&'a [&'a DataSample]),
    Physics(&'a [&'a PhysicsSample]),
}

struct ShardResult {
    norm_sum: f64,
    is_data: bool,
    grads: Vec<Vec<f64>>,
}

fn run_shard(params: &ModelParams, shard: &Shard, weight: f64, dt: f64, squared: bool) -> Result<ShardResult> {
    let mut g = Graph::new();
    let vars = params.register(&mut g);
    let (sum, is_data) = match shard {
        Shard::Data(b) => (data_term(&mut g, &vars, params, b, squared)?, true),
        Shard::Physics(b) => (physics_term(&mut g, &vars, params, b, dt, squared)?, false),
    };
    let loss = g.scale(sum, weight);
    let grads = g.backward(loss)?;
    let grads = vars
        .0
        .iter()
        .zip(&params.tensors)
        .map(|(v, t)| grads.raw(*v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();
    Ok(ShardResult { norm_sum: g.value(sum).item(), is_data, grads })
}

/// Combined loss value and its gradient for one optimizer step.
pub struct StepOutcome {
    pub loss: f64,
    pub data_norm_sum: f64,
    pub phys_norm_sum: f64,
    pub grads: Vec<Vec<f64>>,
}

/// α/(|D|·N_t)·Σ_D‖·‖ + (1−α)/(|P|·N_t)·Σ_P‖·‖ and its gradient.
pub fn loss_and_gradient(
    params: &ModelParams,
    data: &[&DataSample],
    physics: &[&PhysicsSample],
    alpha: f64,
    dt: f64,
    squared: bool,
    shard_size: usize,
) -> Result<StepOutcome> {
    check_alpha(alpha)?;
    let n_t = params.config.n_steps;
    let mut shards = Vec::new();
    for chunk in data.chunks(shard_size.max(1)) {
        shards.push(Shard::Data(chunk));
    }
    for chunk in physics.chunks(shard_size.max(1)) {
        shards.push(Shard::Physics(chunk));
    }
    let w_data = if data.is_empty() { 0.0 } else { alpha * normalizer(data.len(), n_t) };
    let w_phys = if physics.is_empty() { 0.0 } else { (1.0 - alpha) * normalizer(physics.len(), n_t) };
    let job = |s: &Shard| {
        let w = if matches!(s, Shard::Data(_)) { w_data } else { w_phys };
        run_shard(params, s, w, dt, squared)
    };
    #[cfg(feature = "parallel")]
    let results: Vec<Result<ShardResult>> = {
        use rayon::prelude::*;
        shards.par_iter().map(job).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<ShardResult>> = shards.iter().map(job).collect();

    let mut grads: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
    let (mut data_sum, mut phys_sum) = (0.0, 0.0);
    for r in results {
        let r = r?;
        if r.is_data {
            data_sum += r.norm_sum;
        } else {
            phys_sum += r.norm_sum;
        }
        for (acc, g) in grads.iter_mut().zip(&r.grads) {
            acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
    }
    Ok(StepOutcome {
        loss: w_data * data_sum + w_phys * phys_sum,
        data_norm_sum: data_sum,
        phys_norm_sum: phys_sum,
        grads,
    })
}

/// Everything the trainer needs besides the hyper-parameters.
pub struct TrainSetup<'a> {
    /// Generator for the per-epoch physics set.
    pub physics: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: &'a Dataset,
    /// Where periodic checkpoints go, if anywhere.
    pub checkpoint_path: Option<PathBuf>,
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub report: LossReport,
}

fn physics_set(setup: &TrainSetup, epoch: usize) -> Result<Vec<PhysicsSample>> {
    let ds = generate_dataset_epoch(&setup.physics, setup.train.n_phys, DatasetKind::Physics, epoch as u64 + 1)?;
    ds.samples
        .into_iter()
        .map(|s| PhysicsSample::new(&setup.physics.system, s.rho0, s.field))
        .collect()
}

/// Minibatch Adam on α·L_data + (1−α)·L_phys.
///
/// The physics set is redrawn every epoch from its own RNG stream and spread
/// evenly over the data minibatches of that epoch.
pub fn train(setup: &TrainSetup) -> Result<TrainOutcome> {
    let tc = &setup.train;
    tc.validate()?;
    setup.model.validate()?;
    let dt = setup.physics.grid.dt;
    if setup.physics.grid.n_steps != setup.model.n_steps {
        return Err(NqpError::Config(format!(
            "physics grid has N_t = {}, model has N_t = {}",
            setup.physics.grid.n_steps, setup.model.n_steps
        )));
    }
    check_dataset(setup.data, &setup.model, dt)?;
    let mut params = ModelParams::init(&setup.model, tc.seed)?;
    let mut report = LossReport::default();
    let adam = Adam::new(tc.lr);
    let sizes: Vec<usize> = params.tensors.iter().map(Tensor::len).collect();
    let mut state = adam.init(&sizes);
    let n_data = setup.data.len().min(tc.n_data);
    let data: Vec<&DataSample> = setup.data.samples[..n_data].iter().collect();
    let n_t = setup.model.n_steps;

    for epoch in 0..tc.epochs {
        let started = Instant::now();
        let alpha = tc.alpha_at(epoch);
        let phys = physics_set(setup, epoch)?;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut stream_rng(tc.seed, DOMAIN_SHUFFLE, epoch as u64));

        let data_steps = data.len().div_ceil(tc.batch_size);
        let phys_steps = phys.len().div_ceil(tc.batch_size);
        let steps = data_steps.max(phys_steps).max(1);
        let (mut data_sum, mut phys_sum, mut grad_norm_sum) = (0.0, 0.0, 0.0);
        for step in 0..steps {
            let d_lo = (step * data.len()) / steps;
            let d_hi = ((step + 1) * data.len()) / steps;
            let p_lo = (step * phys.len()) / steps;
            let p_hi = ((step + 1) * phys.len()) / steps;
            let batch: Vec<&DataSample> = order[d_lo..d_hi].iter().map(|&i| data[i]).collect();
            let pbatch: Vec<&PhysicsSample> = phys[p_lo..p_hi].iter().collect();
            if batch.is_empty() && pbatch.is_empty() {
                continue;
            }
            let out = loss_and_gradient(&params, &batch, &pbatch, alpha, dt, tc.squared_norm, tc.shard_size)?;
            let gnorm = out.grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
            if !out.loss.is_finite() || !gnorm.is_finite() {
                return Err(NqpError::LossDiverged { epoch: epoch + 1, step });
            }
            data_sum += out.data_norm_sum;
            phys_sum += out.phys_norm_sum;
            grad_norm_sum += gnorm;
            let mut bufs: Vec<&mut [f64]> = params.tensors.iter_mut().map(Tensor::data_mut).collect();
            let grads: Vec<&[f64]> = out.grads.iter().map(Vec::as_slice).collect();
            adam.step(&mut bufs, &grads, &mut state);
        }
        let l_data = if data.is_empty() { 0.0 } else { data_sum * normalizer(data.len(), n_t) };
        let l_phys = if phys.is_empty() { 0.0 } else { phys_sum * normalizer(phys.len(), n_t) };
        let row = EpochReport {
            epoch: epoch + 1,
            l_data,
            l_phys,
            l: combined_loss(l_data, l_phys, alpha)?,
            grad_norm: grad_norm_sum / steps as f64,
            seconds: started.elapsed().as_secs_f64(),
        };
        let level = if row.epoch == 1 || row.epoch.is_multiple_of(100) || row.epoch == tc.epochs {
            log::Level::Info
        } else {
            log::Level::Debug
        };
        log::log!(
            level,
            "epoch {:>5}  L_data {:.4e}  L_phys {:.4e}  L {:.4e}  |g| {:.3e}  {:.2}s",
            row.epoch,
            row.l_data,
            row.l_phys,
            row.l,
            row.grad_norm,
            row.seconds
        );
        report.rows.push(row);
        if let Some(path) = &setup.checkpoint_path {
            if tc.checkpoint_every > 0 && (epoch + 1) % tc.checkpoint_every == 0 {
                let meta = CheckpointMeta { seed: tc.seed, epoch: epoch + 1, loss: Some(report.rows[epoch].l), dt };
                save_checkpoint(&params, &meta, path)?;
            }
        }
    }
    Ok(TrainOutcome { params, report })
}

fn check_dataset(data: &Dataset, model: &ModelConfig, dt: f64) -> Result<()> {
    if data.kind != DatasetKind::Data && !data.is_empty() {
        return Err(NqpError::Config("training data set must be of kind `data`".into()));
    }
    if data.dim != model.d || data.grid.n_steps != model.n_steps || data.channels != model.k_channels {
        return Err(NqpError::Config(format!(
            "dataset (d = {}, N_t = {}, K = {}) does not match model (d = {}, N_t = {}, K = {})",
            data.dim, data.grid.n_steps, data.channels, model.d, model.n_steps, model.k_channels
        )));
    }
    if (data.grid.dt - dt).abs() > 1e-12 {
        return Err(NqpError::Config(format!("dataset dt = {} but config dt = {dt}", data.grid.dt)));
    }
    Ok(())
}
