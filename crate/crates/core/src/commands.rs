//! The operations behind each CLI subcommand. They take parsed arguments,
//! do the work and write their artifacts; `main.rs` only parses flags and
//! maps errors to exit codes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{propagate, Dataset, DatasetKind, FieldRange, Trajectory, generate_dataset};
use crate::error::{NqpError, Result};
use crate::experiment::ExperimentConfig;
use crate::model::{load_checkpoint, rollout, save_checkpoint, CheckpointMeta, ModelParams, NeuralPropagator, Propagator};
use crate::quantum::{DensityMatrix, FieldForm, OpenSystem, TimeGrid};
use crate::training::{train, LossReport, TrainSetup};

pub const CHECKPOINT_FILE: &str = "model.nqpm";
pub const LOSS_FILE: &str = "loss.csv";

/// Maps one value per field channel onto the forms the config samples from.
pub fn field_forms(ranges: &[FieldRange], values: &[f64]) -> Result<Vec<FieldForm>> {
    if ranges.len() != values.len() {
        return Err(NqpError::Config(format!(
            "{} field values given for {} field channels",
            values.len(),
            ranges.len()
        )));
    }
    Ok(ranges
        .iter()
        .zip(values)
        .map(|(r, &v)| match r {
            FieldRange::Periodic { .. } => FieldForm::Periodic { omega: v },
            FieldRange::Constant { .. } => FieldForm::Constant { value: v },
        })
        .collect())
}

fn field_label(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(";")
}

/// Number of δ_t steps in `t`; must be a whole number of steps.
pub fn horizon_steps(dt: f64, t: f64) -> Result<usize> {
    Ok(TimeGrid::from_t_max(dt, t)?.n_steps)
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenerateSummary {
    pub path: PathBuf,
    pub n_samples: usize,
    pub bytes: u64,
    pub seed: u64,
}

pub fn cmd_generate(cfg: &ExperimentConfig, n: usize, kind: DatasetKind, seed: u64, out: &Path) -> Result<GenerateSummary> {
    cfg.validate()?;
    let ds = generate_dataset(&cfg.dataset_config(seed)?, n, kind)?;
    create_parent(out)?;
    let bytes = ds.save(out)?;
    log::info!("wrote {n} {kind:?} samples ({bytes} bytes, seed {seed}) to {}", out.display());
    Ok(GenerateSummary { path: out.to_path_buf(), n_samples: n, bytes, seed })
}

pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub params: ModelParams,
    pub report: LossReport,
}

/// Trains on a dataset file. The physics set is drawn from `seed`, which
/// also seeds initialization and shuffling.
pub fn cmd_train(cfg: &ExperimentConfig, data_path: &Path, seed: u64, out_dir: &Path) -> Result<TrainArtifacts> {
    let data = Dataset::load(data_path)?;
    train_on(cfg, &data, seed, out_dir)
}

pub fn train_on(cfg: &ExperimentConfig, data: &Dataset, seed: u64, out_dir: &Path) -> Result<TrainArtifacts> {
    cfg.validate()?;
    let m = &cfg.model;
    if data.dim != m.d || data.grid.n_steps != m.n_steps || data.channels != m.k_channels {
        return Err(NqpError::Config(format!(
            "dataset has d = {}, N_t = {}, K = {} but the config expects d = {}, N_t = {}, K = {}",
            data.dim, data.grid.n_steps, data.channels, m.d, m.n_steps, m.k_channels
        )));
    }
    fs::create_dir_all(out_dir)?;
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = seed;
    let setup = TrainSetup {
        physics: cfg.dataset_config(seed)?,
        model: cfg.model.clone(),
        train: train_cfg,
        data,
        checkpoint_path: Some(checkpoint.clone()),
    };
    let out = train(&setup)?;
    let meta = CheckpointMeta {
        seed,
        epoch: out.report.rows.len(),
        loss: out.report.last().map(|r| r.l),
        dt: cfg.grid.dt,
    };
    save_checkpoint(&out.params, &meta, &checkpoint)?;
    let loss_csv = out_dir.join(LOSS_FILE);
    fs::write(&loss_csv, out.report.to_csv())?;
    Ok(TrainArtifacts { checkpoint, loss_csv, params: out.params, report: out.report })
}

fn check_compatible(params: &ModelParams, system: &OpenSystem) -> Result<()> {
    let c = &params.config;
    if c.d != system.dim() || c.k_channels != system.n_fields() {
        return Err(NqpError::Config(format!(
            "checkpoint expects d = {}, K = {}; system has d = {}, K = {}",
            c.d,
            c.k_channels,
            system.dim(),
            system.n_fields()
        )));
    }
    Ok(())
}

/// Loads a checkpoint and checks it against the config's system.
pub fn load_model(cfg: &ExperimentConfig, path: &Path) -> Result<(ModelParams, CheckpointMeta)> {
    let (params, meta) = load_checkpoint(path)?;
    check_compatible(&params, &cfg.build_system()?)?;
    Ok((params, meta))
}

/// Model rollout from `rho0` under the given field values.
pub fn cmd_predict(
    cfg: &ExperimentConfig,
    params: &ModelParams,
    dt: f64,
    rho0: &DensityMatrix,
    field_values: &[f64],
    horizon: usize,
    project: bool,
) -> Result<Trajectory> {
    let system = cfg.build_system()?;
    check_compatible(params, &system)?;
    let forms = field_forms(&cfg.fields, field_values)?;
    rollout(&NeuralPropagator { params, dt }, &system, rho0, &forms, horizon, project)
}

/// `t` then Re/Im of every ρ_{jj′} in row-major order, 17 significant digits.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let d = traj.dim();
    let mut s = String::from("t");
    for j in 0..d {
        for k in 0..d {
            let _ = write!(s, ",re_rho_{j}{k},im_rho_{j}{k}");
        }
    }
    s.push('\n');
    for (n, state) in traj.states.iter().enumerate() {
        let _ = write!(s, "{:.16e}", traj.grid.t(n));
        for z in state.0.iter() {
            let _ = write!(s, ",{:.16e},{:.16e}", z.re, z.im);
        }
        s.push('\n');
    }
    s
}

/// Max-abs and RMS error of populations (diagonal, real part) and
/// coherences (off-diagonal, complex modulus) over a set of time points.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub pop_max: f64,
    pub pop_rms: f64,
    pub coh_max: f64,
    pub coh_rms: f64,
    pub points: usize,
}

fn error_stats(pred: &Trajectory, exact: &Trajectory, range: std::ops::Range<usize>) -> ErrorStats {
    let d = exact.dim();
    let (mut pop_sq, mut coh_sq, mut n_pop, mut n_coh) = (0.0, 0.0, 0usize, 0usize);
    let mut s = ErrorStats { points: range.len(), ..ErrorStats::default() };
    for n in range {
        let (a, b) = (&pred.states[n].0, &exact.states[n].0);
        for j in 0..d {
            for k in 0..d {
                let x = j * d + k;
                if j == k {
                    let e = (a[x].re - b[x].re).abs();
                    s.pop_max = s.pop_max.max(e);
                    pop_sq += e * e;
                    n_pop += 1;
                } else {
                    let e = (a[x] - b[x]).norm();
                    s.coh_max = s.coh_max.max(e);
                    coh_sq += e * e;
                    n_coh += 1;
                }
            }
        }
    }
    s.pop_rms = if n_pop > 0 { (pop_sq / n_pop as f64).sqrt() } else { 0.0 };
    s.coh_rms = if n_coh > 0 { (coh_sq / n_coh as f64).sqrt() } else { 0.0 };
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub field: Vec<f64>,
    /// `None` when both pipelines ran; the error text otherwise.
    pub error: Option<String>,
    /// t ≤ t_max
    pub within: Option<ErrorStats>,
    /// t > t_max; absent when the horizon does not leave the window.
    pub beyond: Option<ErrorStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub t_max: f64,
    pub horizon: f64,
    pub rows: Vec<ValidationRow>,
}

impl ValidationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("field,status,window,pop_max,pop_rms,coh_max,coh_rms,points\n");
        for r in &self.rows {
            let label = field_label(&r.field);
            match &r.error {
                Some(e) => {
                    let _ = writeln!(s, "{label},error: {},,,,,,", e.replace(',', ";"));
                }
                None => {
                    for (name, st) in [("within", r.within), ("beyond", r.beyond)] {
                        if let Some(st) = st {
                            let _ = writeln!(
                                s,
                                "{label},ok,{name},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                                st.pop_max, st.pop_rms, st.coh_max, st.coh_rms, st.points
                            );
                        }
                    }
                }
            }
        }
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report is serializable");
        s.push('\n');
        s
    }

    pub fn write(&self, out_dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(out_dir)?;
        fs::write(out_dir.join(format!("{stem}.csv")), self.to_csv())?;
        fs::write(out_dir.join(format!("{stem}.json")), self.to_json())?;
        Ok(())
    }
}

/// Compares `propagator` against RK4 for every field set. A failure in
/// either pipeline is recorded in its row and the rest still run.
pub fn validate_against_rk4<P: Propagator>(
    propagator: &P,
    system: &OpenSystem,
    ranges: &[FieldRange],
    rho0: &DensityMatrix,
    field_sets: &[Vec<f64>],
    horizon: usize,
) -> Result<ValidationReport> {
    let window = propagator.window();
    let grid = TimeGrid::new(window.dt, horizon)?;
    let mut rows = Vec::new();
    for values in field_sets {
        let run = || -> Result<(ErrorStats, Option<ErrorStats>)> {
            let forms = field_forms(ranges, values)?;
            let exact = propagate(system, &forms, grid, rho0)?;
            let pred = rollout(propagator, system, rho0, &forms, horizon, false)?;
            let split = window.n_steps.min(horizon) + 1;
            let within = error_stats(&pred, &exact, 0..split);
            let beyond = (horizon > window.n_steps).then(|| error_stats(&pred, &exact, split..horizon + 1));
            Ok((within, beyond))
        };
        rows.push(match run() {
            Ok((within, beyond)) => ValidationRow { field: values.clone(), error: None, within: Some(within), beyond },
            Err(e) => {
                log::warn!("field {}: {e}", field_label(values));
                ValidationRow { field: values.clone(), error: Some(e.to_string()), within: None, beyond: None }
            }
        });
    }
    Ok(ValidationReport { t_max: window.t_max(), horizon: grid.t_max(), rows })
}

pub fn cmd_validate(
    cfg: &ExperimentConfig,
    params: &ModelParams,
    dt: f64,
    field_sets: &[Vec<f64>],
    horizon: usize,
) -> Result<ValidationReport> {
    let system = cfg.build_system()?;
    check_compatible(params, &system)?;
    validate_against_rk4(&NeuralPropagator { params, dt }, &system, &cfg.fields, &cfg.initial_state(), field_sets, horizon)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub t_max: f64,
    pub error: Option<String>,
    pub final_loss: Option<f64>,
    pub validation: Option<ValidationReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub runs: Vec<AblationRun>,
    /// Header plus rows of `t, rk4[field]..., tmax=<t>[field]...` for the
    /// ground-state population p_0(t).
    pub population_table: String,
}

/// One desk-scale model per t_max, each validated on the shared horizon,
/// plus the p_0(t) comparison table. Runs that fail are reported, not fatal.
pub fn cmd_ablate_tmax(
    base: &ExperimentConfig,
    t_maxes: &[f64],
    field_sets: &[Vec<f64>],
    horizon_t: f64,
    seed: u64,
    out_dir: &Path,
) -> Result<AblationReport> {
    base.validate()?;
    let system = base.build_system()?;
    let dt = base.grid.dt;
    let horizon = horizon_steps(dt, horizon_t)?;
    let grid = TimeGrid::new(dt, horizon)?;
    let rho0 = base.initial_state();

    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    for values in field_sets {
        let forms = field_forms(&base.fields, values)?;
        let exact = propagate(&system, &forms, grid, &rho0)?;
        columns.push((format!("rk4[{}]", field_label(values)), crate::model::population_series(&exact, 0)));
    }

    let mut runs = Vec::new();
    for &t_max in t_maxes {
        let run_dir = out_dir.join(format!("tmax_{t_max}"));
        let attempt = || -> Result<(f64, ValidationReport, Vec<Vec<f64>>)> {
            let cfg = base.clone().with_t_max(t_max)?;
            let data = generate_dataset(&cfg.dataset_config(seed)?, cfg.train.n_data, DatasetKind::Data)?;
            let art = train_on(&cfg, &data, seed, &run_dir)?;
            let report = cmd_validate(&cfg, &art.params, dt, field_sets, horizon)?;
            report.write(&run_dir, "validation")?;
            let prop = NeuralPropagator { params: &art.params, dt };
            let mut series = Vec::new();
            for values in field_sets {
                let forms = field_forms(&cfg.fields, values)?;
                series.push(match rollout(&prop, &system, &rho0, &forms, horizon, false) {
                    Ok(tr) => crate::model::population_series(&tr, 0),
                    Err(_) => vec![f64::NAN; horizon + 1],
                });
            }
            Ok((art.report.last().map_or(f64::NAN, |r| r.l), report, series))
        };
        match attempt() {
            Ok((loss, report, series)) => {
                for (values, s) in field_sets.iter().zip(series) {
                    columns.push((format!("tmax={t_max}[{}]", field_label(values)), s));
                }
                runs.push(AblationRun { t_max, error: None, final_loss: Some(loss), validation: Some(report) });
            }
            Err(e) => {
                log::warn!("t_max = {t_max}: {e}");
                runs.push(AblationRun { t_max, error: Some(e.to_string()), final_loss: None, validation: None });
            }
        }
    }

    let mut table = String::from("t");
    for (name, _) in &columns {
        let _ = write!(table, ",{name}");
    }
    table.push('\n');
    for n in 0..=horizon {
        let _ = write!(table, "{:.16e}", grid.t(n));
        for (_, s) in &columns {
            let _ = write!(table, ",{:.16e}", s[n]);
        }
        table.push('\n');
    }
    let report = AblationReport { runs, population_table: table };
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("ablation_populations.csv"), &report.population_table)?;
    let mut json = serde_json::to_string_pretty(&report.runs)?;
    json.push('\n');
    fs::write(out_dir.join("ablation.json"), json)?;
    Ok(report)
}
