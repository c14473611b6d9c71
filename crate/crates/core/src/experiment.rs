//! Experiment configuration documents and the two built-in system presets.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetConfig, FieldRange};
use crate::error::{NqpError, Result};
use crate::model::{Activation, ModelConfig, Modes};
use crate::quantum::{BathChannel, CMatrix, Coupling, DensityMatrix, DriveOperator, OpenSystem, SystemSpec, TimeGrid};
use crate::training::TrainConfig;

pub const SPIN_BOSON: &str = "spin_boson";
pub const THREE_STATE_GAMMA: &str = "three_state_gamma";
pub const CUSTOM: &str = "custom";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingConfig {
    pub row: usize,
    pub col: usize,
    pub value: C64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BathConfig {
    pub gamma: f64,
    /// Row-major d×d matrix of `[re, im]` pairs.
    pub v_op: Vec<Vec<C64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveConfig {
    pub f_op: Vec<Vec<C64>>,
    #[serde(default)]
    pub use_real_part: bool,
}

/// Full matrix description of the open system. Presets fill it in; a custom
/// system supplies its own matrices under `preset: "custom"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub preset: String,
    pub energies: Vec<f64>,
    pub couplings: Vec<CouplingConfig>,
    pub baths: Vec<BathConfig>,
    pub drives: Vec<DriveConfig>,
}

fn to_matrix(rows: &[Vec<C64>], d: usize, what: &str) -> Result<CMatrix> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(NqpError::DimensionMismatch(format!("{what} is not {d}x{d}")));
    }
    Ok(Array2::from_shape_fn((d, d), |(j, k)| rows[j][k]))
}

fn from_matrix(m: &CMatrix) -> Vec<Vec<C64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn ket_bra(d: usize, j: usize, k: usize) -> CMatrix {
    let mut m = CMatrix::zeros((d, d));
    m[[j, k]] = C64::new(1.0, 0.0);
    m
}

impl SystemConfig {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn build(&self) -> Result<OpenSystem> {
        let d = self.dim();
        let spec = SystemSpec {
            dim: d,
            energies: self.energies.clone(),
            couplings: self.couplings.iter().map(|c| Coupling { row: c.row, col: c.col, value: c.value }).collect(),
        };
        let baths = self
            .baths
            .iter()
            .enumerate()
            .map(|(j, b)| Ok(BathChannel { gamma: b.gamma, v_op: to_matrix(&b.v_op, d, &format!("bath operator {j}"))? }))
            .collect::<Result<Vec<_>>>()?;
        let drives = self
            .drives
            .iter()
            .enumerate()
            .map(|(k, f)| {
                Ok(DriveOperator {
                    f_op: to_matrix(&f.f_op, d, &format!("field operator {k}"))?,
                    use_real_part: f.use_real_part,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        OpenSystem::new(spec, baths, drives)
    }

    /// Sets `use_real_part` on every drive.
    pub fn with_real_part(mut self, on: bool) -> Self {
        self.drives.iter_mut().for_each(|f| f.use_real_part = on);
        self
    }
}

/// Everything one experiment needs: system, grid, field sampling ranges,
/// default initial state, model and training budgets, output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub grid: TimeGrid,
    pub fields: Vec<FieldRange>,
    /// Basis index j of the default initial state |j⟩⟨j|.
    pub rho0: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub out_dir: String,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; `from_json(to_json(c)) == c` and re-serializing
    /// the parsed document reproduces the same bytes.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config is always serializable");
        s.push('\n');
        s
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let system = self.system.build()?;
        let (d, k) = (system.dim(), system.n_fields());
        if self.fields.len() != k {
            return Err(NqpError::Config(format!("{} field ranges for {k} drives", self.fields.len())));
        }
        for r in &self.fields {
            r.validate()?;
        }
        if self.rho0 >= d {
            return Err(NqpError::Config(format!("rho0 index {} outside a {d}-level system", self.rho0)));
        }
        let m = &self.model;
        if m.d != d || m.k_channels != k || m.n_steps != self.grid.n_steps {
            return Err(NqpError::Config(format!(
                "model (d = {}, K = {}, N_t = {}) does not match system/grid (d = {d}, K = {k}, N_t = {})",
                m.d, m.k_channels, m.n_steps, self.grid.n_steps
            )));
        }
        m.validate()?;
        self.train.validate()
    }

    pub fn build_system(&self) -> Result<OpenSystem> {
        self.system.build()
    }

    pub fn dataset_config(&self, seed: u64) -> Result<DatasetConfig> {
        Ok(DatasetConfig {
            preset: self.system.preset.clone(),
            system: self.build_system()?,
            grid: self.grid,
            fields: self.fields.clone(),
            seed,
        })
    }

    pub fn initial_state(&self) -> DensityMatrix {
        DensityMatrix::basis_projector(self.system.dim(), self.rho0)
    }

    /// Changes the training window, keeping δ_t.
    pub fn with_t_max(mut self, t_max: f64) -> Result<Self> {
        self.grid = TimeGrid::from_t_max(self.grid.dt, t_max)?;
        self.model.n_steps = self.grid.n_steps;
        Ok(self)
    }

    /// Reduced budgets that train on a single CPU core in minutes.
    pub fn desk_scale(mut self) -> Self {
        self.model.latent_channels = 32;
        self.model.proj_hidden = 64;
        self.model.n_layers = 2;
        self.train.n_data = 200;
        self.train.n_phys = 32;
        self.train.epochs = 2000;
        self.train.lr = DESK_LR;
        self
    }
}

/// Learning rate for the desk-scale budgets: with ~10× fewer optimizer
/// steps than the full run, 1e-4 does not get far enough.
pub const DESK_LR: f64 = 2e-3;

fn paper_model(d: usize, n_steps: usize, k: usize) -> ModelConfig {
    ModelConfig {
        d,
        n_steps,
        k_channels: k,
        latent_channels: 128,
        proj_hidden: 256,
        n_layers: 4,
        modes: Modes::All,
        activation: Activation::Gelu,
    }
}

fn paper_train() -> TrainConfig {
    TrainConfig { n_data: 2000, n_phys: 200, epochs: 10_000, lr: 1e-4, ..TrainConfig::default() }
}

/// Two-level system with absorption and emission baths and a periodic
/// drive on |e⟩⟨e|. Basis order (g, e).
pub fn preset_spin_boson() -> ExperimentConfig {
    let (omega_z, omega_x) = (1.0, 0.5);
    let c = |x: f64| C64::new(x, 0.0);
    let system = SystemConfig {
        preset: SPIN_BOSON.into(),
        energies: vec![-omega_z / 2.0, omega_z / 2.0],
        couplings: vec![
            CouplingConfig { row: 0, col: 1, value: c(omega_x) },
            CouplingConfig { row: 1, col: 0, value: c(omega_x) },
        ],
        baths: vec![
            BathConfig { gamma: 0.1, v_op: from_matrix(&ket_bra(2, 1, 0)) },
            BathConfig { gamma: 0.2, v_op: from_matrix(&ket_bra(2, 0, 1)) },
        ],
        drives: vec![DriveConfig { f_op: from_matrix(&ket_bra(2, 1, 1)), use_real_part: false }],
    };
    let grid = TimeGrid::from_t_max(0.05, 20.0).expect("20 / 0.05 is an integer");
    ExperimentConfig {
        system,
        grid,
        fields: vec![FieldRange::Periodic { omega_min: 0.2, omega_max: 1.0 }],
        rho0: 0,
        model: paper_model(2, grid.n_steps, 1),
        train: paper_train(),
        out_dir: "runs/spin_boson".into(),
    }
}

/// Three levels, |2⟩ a lossy transition state bridging |1⟩ and |3⟩ through
/// constant couplings c₁ and c₃. Level j is stored at index j − 1.
pub fn preset_three_state() -> ExperimentConfig {
    let d = 3;
    let hermitian_pair = |j: usize, k: usize| {
        let mut m = ket_bra(d, j, k);
        m[[k, j]] = C64::new(1.0, 0.0);
        from_matrix(&m)
    };
    let system = SystemConfig {
        preset: THREE_STATE_GAMMA.into(),
        energies: vec![0.0, 0.1, 1.0],
        couplings: vec![],
        baths: [0.1, 0.2, 0.1]
            .iter()
            .enumerate()
            .map(|(j, &gamma)| BathConfig { gamma, v_op: from_matrix(&ket_bra(d, j, j)) })
            .collect(),
        drives: vec![
            DriveConfig { f_op: hermitian_pair(0, 1), use_real_part: false },
            DriveConfig { f_op: hermitian_pair(1, 2), use_real_part: false },
        ],
    };
    let grid = TimeGrid::from_t_max(0.05, 2.0).expect("2 / 0.05 is an integer");
    ExperimentConfig {
        system,
        grid,
        fields: vec![FieldRange::Constant { min: 0.2, max: 0.8 }; 2],
        rho0: 0,
        model: paper_model(3, grid.n_steps, 2),
        train: paper_train(),
        out_dir: "runs/three_state_gamma".into(),
    }
}

/// Desk-scale spin-boson experiment: training window t_max = 5.
pub fn desk_spin_boson() -> ExperimentConfig {
    preset_spin_boson().with_t_max(5.0).expect("5 / 0.05 is an integer").desk_scale()
}

/// Desk-scale three-state experiment. Its 9-component output trains more
/// stably with more, smaller steps.
pub fn desk_three_state() -> ExperimentConfig {
    let mut cfg = preset_three_state().desk_scale();
    cfg.train.batch_size = 8;
    cfg.train.lr = 5e-4;
    cfg
}

pub fn preset_by_name(name: &str, paper_scale: bool) -> Result<ExperimentConfig> {
    let cfg = match (name, paper_scale) {
        (SPIN_BOSON, true) => preset_spin_boson(),
        (SPIN_BOSON, false) => desk_spin_boson(),
        (THREE_STATE_GAMMA, true) => preset_three_state(),
        (THREE_STATE_GAMMA, false) => desk_three_state(),
        _ => {
            return Err(NqpError::Config(format!(
                "unknown preset {name:?} (expected {SPIN_BOSON} or {THREE_STATE_GAMMA})"
            )))
        }
    };
    Ok(cfg)
}
