//! Reference dynamics (RK4) and random training sets.

use std::io::Write;
use std::path::Path;

use ndarray::Array1;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{NqpError, Result};
use crate::quantum::{
    devectorize, vectorize, CMatrix, DensityMatrix, FieldForm, LiouvilleVector, OpenSystem, TimeGrid,
};
use crate::rng::{stream_rng, DOMAIN_DATA, DOMAIN_PHYSICS};

pub const DATASET_MAGIC: &[u8; 4] = b"NQPD";
pub const DATASET_VERSION: u32 = 1;

/// Field values on the grid: row n holds (f_n¹, …, f_nᴷ).
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrid {
    pub n_steps: usize,
    pub channels: usize,
    values: Vec<C64>,
}

impl FieldGrid {
    pub fn from_values(n_steps: usize, channels: usize, values: Vec<C64>) -> Result<Self> {
        if values.len() != (n_steps + 1) * channels {
            return Err(NqpError::shape(
                "field grid",
                format!("{} values for {} rows x {channels} channels", values.len(), n_steps + 1),
            ));
        }
        Ok(FieldGrid { n_steps, channels, values })
    }

    /// Evaluates the analytic forms at t = (start_step + n)·dt.
    pub fn evaluate(system: &OpenSystem, forms: &[FieldForm], grid: TimeGrid, start_step: usize) -> Self {
        let k = system.n_fields();
        let mut values = Vec::with_capacity(grid.len() * k);
        for n in 0..grid.len() {
            values.extend(system.field_values(forms, grid.t(start_step + n)));
        }
        FieldGrid { n_steps: grid.n_steps, channels: k, values }
    }

    pub fn row(&self, n: usize) -> &[C64] {
        &self.values[n * self.channels..(n + 1) * self.channels]
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    /// 2K real channels per row: (Re f¹, Im f¹, Re f², …).
    pub fn to_real_channels(&self) -> Vec<f64> {
        self.values.iter().flat_map(|z| [z.re, z.im]).collect()
    }
}

/// States ρ(t_0) … ρ(t_N), vectorized.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub states: Vec<LiouvilleVector>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        (self.states[0].len() as f64).sqrt().round() as usize
    }

    pub fn state(&self, n: usize) -> DensityMatrix {
        devectorize(&self.states[n]).expect("trajectory states are square")
    }

    pub fn populations(&self, n: usize) -> Vec<f64> {
        let d = self.dim();
        (0..d).map(|j| self.states[n].0[j * d + j].re).collect()
    }

    /// (N+1)×2d² real values, Re/Im interleaved.
    pub fn to_real_channels(&self) -> Vec<f64> {
        self.states.iter().flat_map(|s| s.0.iter().flat_map(|z| [z.re, z.im])).collect()
    }

    pub fn from_real_channels(grid: TimeGrid, d2: usize, data: &[f64]) -> Result<Self> {
        if data.len() != grid.len() * 2 * d2 {
            return Err(NqpError::shape("trajectory", format!("{} values for {} rows", data.len(), grid.len())));
        }
        let states = data
            .chunks_exact(2 * d2)
            .map(|row| LiouvilleVector(row.chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect()))
            .collect();
        Ok(Trajectory { grid, states })
    }
}

/// One classical RK4 step of dρ/dt = rhs(t, ρ).
pub fn rk4_step<F>(rhs: F, rho: &DensityMatrix, t: f64, dt: f64) -> DensityMatrix
where
    F: Fn(f64, &CMatrix) -> CMatrix,
{
    let half = 0.5 * dt;
    let k1 = rhs(t, &rho.0);
    let k2 = rhs(t + half, &(&rho.0 + &k1.mapv(|z| z * half)));
    let k3 = rhs(t + half, &(&rho.0 + &k2.mapv(|z| z * half)));
    let k4 = rhs(t + dt, &(&rho.0 + &k3.mapv(|z| z * dt)));
    let sixth = dt / 6.0;
    let mut next = rho.0.clone();
    ndarray::Zip::from(&mut next)
        .and(&k1)
        .and(&k2)
        .and(&k3)
        .and(&k4)
        .for_each(|r, a, b, c, d| *r += (a + b * 2.0 + c * 2.0 + d) * sixth);
    DensityMatrix(next)
}

/// RK4 trajectory over `grid`, starting at absolute step `start_step`.
///
/// Stage times use the analytic field forms, not values interpolated from
/// the grid.
pub fn propagate_from(
    system: &OpenSystem,
    forms: &[FieldForm],
    grid: TimeGrid,
    start_step: usize,
    rho0: &DensityMatrix,
) -> Result<Trajectory> {
    system.check_state(rho0)?;
    if forms.len() != system.n_fields() {
        return Err(NqpError::DimensionMismatch(format!(
            "system has {} field channels, got {} forms",
            system.n_fields(),
            forms.len()
        )));
    }
    let rhs = |t: f64, rho: &CMatrix| system.rhs_with_values(&system.field_values(forms, t), rho);
    let mut states = Vec::with_capacity(grid.len());
    let mut rho = rho0.clone();
    states.push(vectorize(&rho));
    for n in 0..grid.n_steps {
        let t = grid.t(start_step + n);
        rho = rk4_step(rhs, &rho, t, grid.dt);
        if rho.0.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(NqpError::IntegrationDiverged { step: n + 1 });
        }
        states.push(vectorize(&rho));
    }
    Ok(Trajectory { grid, states })
}

pub fn propagate(system: &OpenSystem, forms: &[FieldForm], grid: TimeGrid, rho0: &DensityMatrix) -> Result<Trajectory> {
    propagate_from(system, forms, grid, 0, rho0)
}

const GUE_MAX_TRIES: usize = 100;
const GUE_MIN_TRACE: f64 = 0.1;

/// Random Hermitian matrix from the GUE with its diagonal divided by the
/// trace. Draws with |tr| < 0.1 are rejected and redrawn.
pub fn sample_gue_state<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Result<DensityMatrix> {
    for _ in 0..GUE_MAX_TRIES {
        let mut m = CMatrix::zeros((d, d));
        for j in 0..d {
            for k in 0..d {
                m[[j, k]] = if j == k {
                    C64::new(rng.sample(StandardNormal), 0.0)
                } else {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
                };
            }
        }
        let mut a = CMatrix::zeros((d, d));
        for j in 0..d {
            for k in 0..d {
                a[[j, k]] = (m[[j, k]] + m[[k, j]].conj()) * 0.5;
            }
        }
        let trace: f64 = (0..d).map(|j| a[[j, j]].re).sum();
        if trace.abs() < GUE_MIN_TRACE {
            continue;
        }
        for j in 0..d {
            a[[j, j]] = C64::new(a[[j, j]].re / trace, 0.0);
        }
        return Ok(DensityMatrix(a));
    }
    Err(NqpError::Sampler(format!(
        "no GUE draw with |trace| >= {GUE_MIN_TRACE} in {GUE_MAX_TRIES} tries"
    )))
}

/// Sampling interval for one field channel's parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldRange {
    Periodic { omega_min: f64, omega_max: f64 },
    Constant { min: f64, max: f64 },
}

impl FieldRange {
    fn bounds(&self) -> (f64, f64) {
        match *self {
            FieldRange::Periodic { omega_min, omega_max } => (omega_min, omega_max),
            FieldRange::Constant { min, max } => (min, max),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bounds();
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(NqpError::Config(format!("empty field range ({lo}, {hi})")));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<FieldForm> {
        self.validate()?;
        let (lo, hi) = self.bounds();
        let x = rng.random_range(lo..hi);
        Ok(match self {
            FieldRange::Periodic { .. } => FieldForm::Periodic { omega: x },
            FieldRange::Constant { .. } => FieldForm::Constant { value: x },
        })
    }

    pub fn contains(&self, form: &FieldForm) -> bool {
        let (lo, hi) = self.bounds();
        let x = match (self, form) {
            (FieldRange::Periodic { .. }, FieldForm::Periodic { omega }) => *omega,
            (FieldRange::Constant { .. }, FieldForm::Constant { value }) => *value,
            _ => return false,
        };
        lo <= x && x < hi
    }
}

/// Draws one form per channel and embeds it on the grid.
pub fn sample_field<R: Rng + ?Sized>(
    rng: &mut R,
    ranges: &[FieldRange],
    system: &OpenSystem,
    grid: TimeGrid,
) -> Result<(Vec<FieldForm>, FieldGrid)> {
    if ranges.len() != system.n_fields() {
        return Err(NqpError::DimensionMismatch(format!(
            "{} field ranges for {} field channels",
            ranges.len(),
            system.n_fields()
        )));
    }
    let forms = ranges.iter().map(|r| r.sample(rng)).collect::<Result<Vec<_>>>()?;
    let field = FieldGrid::evaluate(system, &forms, grid, 0);
    Ok((forms, field))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Data,
    Physics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSample {
    pub rho0: DensityMatrix,
    pub field: FieldGrid,
    pub trajectory: Option<Trajectory>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub preset: String,
    pub grid: TimeGrid,
    pub dim: usize,
    pub channels: usize,
    pub kind: DatasetKind,
    pub seed: u64,
    pub samples: Vec<DataSample>,
}

/// What is needed to regenerate a dataset bit-for-bit.
#[derive(Clone, Debug)]
pub struct DatasetConfig {
    pub preset: String,
    pub system: OpenSystem,
    pub grid: TimeGrid,
    pub fields: Vec<FieldRange>,
    pub seed: u64,
}

fn generate_sample(config: &DatasetConfig, kind: DatasetKind, stream: u64) -> Result<DataSample> {
    let domain = match kind {
        DatasetKind::Data => DOMAIN_DATA,
        DatasetKind::Physics => DOMAIN_PHYSICS,
    };
    let mut rng = stream_rng(config.seed, domain, stream);
    let rho0 = sample_gue_state(&mut rng, config.system.dim())?;
    let (forms, field) = sample_field(&mut rng, &config.fields, &config.system, config.grid)?;
    let trajectory = match kind {
        DatasetKind::Data => Some(propagate(&config.system, &forms, config.grid, &rho0)?),
        DatasetKind::Physics => None,
    };
    Ok(DataSample { rho0, field, trajectory })
}

pub fn generate_dataset(config: &DatasetConfig, n_samples: usize, kind: DatasetKind) -> Result<Dataset> {
    generate_dataset_epoch(config, n_samples, kind, 0)
}

/// Like [`generate_dataset`] but drawing from the stream block of `epoch`,
/// which is how the physics set is refreshed during training.
pub fn generate_dataset_epoch(
    config: &DatasetConfig,
    n_samples: usize,
    kind: DatasetKind,
    epoch: u64,
) -> Result<Dataset> {
    for r in &config.fields {
        r.validate()?;
    }
    let make = |i: usize| {
        generate_sample(config, kind, (epoch << 32) | i as u64)
            .map_err(|e| NqpError::Sample { index: i, source: Box::new(e) })
    };
    #[cfg(feature = "parallel")]
    let samples = {
        use rayon::prelude::*;
        (0..n_samples).into_par_iter().map(make).collect::<Result<Vec<_>>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let samples = (0..n_samples).map(make).collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        preset: config.preset.clone(),
        grid: config.grid,
        dim: config.system.dim(),
        channels: config.system.n_fields(),
        kind,
        seed: config.seed,
        samples,
    })
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    preset: String,
    d: usize,
    k: usize,
    n_steps: usize,
    dt: f64,
    kind: DatasetKind,
    seed: u64,
    n_samples: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn sample_width(&self) -> usize {
        let d2 = self.dim * self.dim;
        let mut w = 2 * d2 + 2 * self.channels * self.grid.len();
        if self.kind == DatasetKind::Data {
            w += 2 * d2 * self.grid.len();
        }
        w
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = DatasetHeader {
            preset: self.preset.clone(),
            d: self.dim,
            k: self.channels,
            n_steps: self.grid.n_steps,
            dt: self.grid.dt,
            kind: self.kind,
            seed: self.seed,
            n_samples: self.samples.len(),
        };
        let mut out = Vec::new();
        binio::write_header(&mut out, DATASET_MAGIC, DATASET_VERSION, &header)?;
        for (i, s) in self.samples.iter().enumerate() {
            let rho: Vec<f64> = s.rho0.0.iter().flat_map(|z| [z.re, z.im]).collect();
            binio::write_f64s(&mut out, &rho)?;
            binio::write_f64s(&mut out, &s.field.to_real_channels())?;
            match (self.kind, &s.trajectory) {
                (DatasetKind::Data, Some(t)) => binio::write_f64s(&mut out, &t.to_real_channels())?,
                (DatasetKind::Data, None) => {
                    return Err(NqpError::Config(format!("data sample {i} has no trajectory")))
                }
                (DatasetKind::Physics, _) => {}
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, payload): (DatasetHeader, _) = binio::read_file(bytes, DATASET_MAGIC, DATASET_VERSION)?;
        let grid = TimeGrid::new(h.dt, h.n_steps)?;
        let mut ds = Dataset {
            preset: h.preset,
            grid,
            dim: h.d,
            channels: h.k,
            kind: h.kind,
            seed: h.seed,
            samples: Vec::with_capacity(h.n_samples),
        };
        let width = ds.sample_width();
        let values = binio::read_f64s(payload, width * h.n_samples)?;
        let d2 = h.d * h.d;
        for chunk in values.chunks_exact(width.max(1)).take(h.n_samples) {
            let (rho, rest) = chunk.split_at(2 * d2);
            let (field, traj) = rest.split_at(2 * h.k * grid.len());
            let rho = LiouvilleVector(rho.chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect::<Array1<_>>());
            let field = FieldGrid::from_values(
                h.n_steps,
                h.k,
                field.chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect(),
            )?;
            let trajectory = match h.kind {
                DatasetKind::Data => Some(Trajectory::from_real_channels(grid, d2, traj)?),
                DatasetKind::Physics => None,
            };
            ds.samples.push(DataSample { rho0: devectorize(&rho)?, field, trajectory });
        }
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<u64> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(bytes.len() as u64)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Dataset::from_bytes(&binio::read_all(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{BathChannel, DriveOperator, SystemSpec};
    use crate::rng::stream_rng;

    fn ket_bra(d: usize, j: usize, k: usize) -> CMatrix {
        let mut m = CMatrix::zeros((d, d));
        m[[j, k]] = C64::new(1.0, 0.0);
        m
    }

    fn pure_decay(gamma: f64) -> OpenSystem {
        let spec = SystemSpec { dim: 2, energies: vec![0.0, 0.0], couplings: vec![] };
        OpenSystem::new(spec, vec![BathChannel { gamma, v_op: ket_bra(2, 0, 1) }], vec![]).unwrap()
    }

    #[test]
    fn rk4_single_step_matches_exponential() {
        let sys = pure_decay(0.2);
        let rho = DensityMatrix(ket_bra(2, 1, 1));
        let next = rk4_step(|_, r| sys.rhs_with_values(&[], r), &rho, 0.0, 0.05);
        let exact = (-2.0f64 * 0.2 * 0.05).exp();
        assert!((exact - 0.980_198_673_306_755_3).abs() < 1e-15);
        assert!((next.0[[1, 1]].re - exact).abs() < 1e-10);
        assert!((next.trace().re - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rk4_zero_rhs_is_a_fixed_point() {
        let rho = DensityMatrix(ndarray::array![
            [C64::new(0.3, 0.0), C64::new(0.1, -0.2)],
            [C64::new(0.1, 0.2), C64::new(0.7, 0.0)]
        ]);
        let next = rk4_step(|_, r| CMatrix::zeros(r.raw_dim()), &rho, 1.0, 0.05);
        assert_eq!(next, rho);
    }

    #[test]
    fn closed_eigenstate_is_stationary() {
        let spec = SystemSpec { dim: 3, energies: vec![0.0, 0.1, 1.0], couplings: vec![] };
        let sys = OpenSystem::new(spec, vec![], vec![]).unwrap();
        let grid = TimeGrid::from_t_max(0.05, 5.0).unwrap();
        let traj = propagate(&sys, &[], grid, &DensityMatrix::basis_projector(3, 1)).unwrap();
        for n in 0..grid.len() {
            let p = traj.populations(n);
            assert!((p[1] - 1.0).abs() < 1e-10 && p[0].abs() < 1e-10 && p[2].abs() < 1e-10);
        }
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let spec = SystemSpec { dim: 2, energies: vec![0.0, 0.0], couplings: vec![] };
        let sys = OpenSystem::new(spec, vec![BathChannel { gamma: 1e300, v_op: ket_bra(2, 0, 1) }], vec![]).unwrap();
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let err = propagate(&sys, &[], grid, &DensityMatrix::basis_projector(2, 1)).unwrap_err();
        assert!(matches!(err, NqpError::IntegrationDiverged { .. }));
    }

    #[test]
    fn gue_samples_are_hermitian_unit_trace_and_deterministic() {
        for seed in 0..50 {
            let a = sample_gue_state(&mut stream_rng(seed, 1, 0), 3).unwrap();
            let b = sample_gue_state(&mut stream_rng(seed, 1, 0), 3).unwrap();
            assert_eq!(a, b);
            assert!(a.hermiticity_defect() < 1e-14);
            assert!((a.trace() - C64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn gue_population_means_are_one_half() {
        let mut rng = stream_rng(2024, 9, 0);
        let n = 10_000;
        let mut mean = [0.0; 2];
        for _ in 0..n {
            let p = sample_gue_state(&mut rng, 2).unwrap().populations();
            mean[0] += p[0] / n as f64;
            mean[1] += p[1] / n as f64;
        }
        assert!((mean[0] - 0.5).abs() < 0.05, "{mean:?}");
        assert!((mean[1] - 0.5).abs() < 0.05, "{mean:?}");
    }

    fn driven_two_level(use_real_part: bool) -> OpenSystem {
        let spec = SystemSpec { dim: 2, energies: vec![-0.5, 0.5], couplings: vec![] };
        OpenSystem::new(spec, vec![], vec![DriveOperator { f_op: ket_bra(2, 1, 1), use_real_part }]).unwrap()
    }

    #[test]
    fn periodic_field_draws_stay_in_range() {
        let sys = driven_two_level(false);
        let grid = TimeGrid::from_t_max(0.05, 1.0).unwrap();
        let range = FieldRange::Periodic { omega_min: 0.2, omega_max: 1.0 };
        let mut rng = stream_rng(1, 2, 3);
        for _ in 0..200 {
            let (forms, field) = sample_field(&mut rng, &[range], &sys, grid).unwrap();
            assert!(range.contains(&forms[0]));
            assert_eq!(field.row(0)[0], C64::new(1.0, 0.0));
        }
    }

    #[test]
    fn constant_fields_give_constant_rows() {
        let spec = SystemSpec { dim: 3, energies: vec![0.0, 0.1, 1.0], couplings: vec![] };
        let f = DriveOperator { f_op: CMatrix::zeros((3, 3)), use_real_part: false };
        let sys = OpenSystem::new(spec, vec![], vec![f.clone(), f]).unwrap();
        let grid = TimeGrid::from_t_max(0.05, 2.0).unwrap();
        let range = FieldRange::Constant { min: 0.2, max: 0.8 };
        let (forms, field) = sample_field(&mut stream_rng(5, 5, 5), &[range, range], &sys, grid).unwrap();
        assert!(forms.iter().all(|f| range.contains(f)));
        for n in 0..grid.len() {
            assert_eq!(field.row(n), field.row(0));
        }
    }

    #[test]
    fn zero_frequency_field_is_one() {
        let sys = driven_two_level(false);
        let grid = TimeGrid::new(0.1, 10).unwrap();
        let field = FieldGrid::evaluate(&sys, &[FieldForm::Periodic { omega: 0.0 }], grid, 0);
        assert!(field.values().iter().all(|z| *z == C64::new(1.0, 0.0)));
    }

    #[test]
    fn empty_range_is_rejected() {
        let r = FieldRange::Constant { min: 0.5, max: 0.5 };
        assert!(r.sample(&mut stream_rng(0, 0, 0)).is_err());
    }

    fn small_config(seed: u64) -> DatasetConfig {
        let spec = SystemSpec {
            dim: 2,
            energies: vec![-0.5, 0.5],
            couplings: vec![
                crate::quantum::Coupling { row: 0, col: 1, value: C64::new(0.5, 0.0) },
                crate::quantum::Coupling { row: 1, col: 0, value: C64::new(0.5, 0.0) },
            ],
        };
        let baths = vec![
            BathChannel { gamma: 0.1, v_op: ket_bra(2, 1, 0) },
            BathChannel { gamma: 0.2, v_op: ket_bra(2, 0, 1) },
        ];
        let drives = vec![DriveOperator { f_op: ket_bra(2, 1, 1), use_real_part: false }];
        DatasetConfig {
            preset: "spin_boson".into(),
            system: OpenSystem::new(spec, baths, drives).unwrap(),
            grid: TimeGrid::from_t_max(0.05, 1.0).unwrap(),
            fields: vec![FieldRange::Periodic { omega_min: 0.2, omega_max: 1.0 }],
            seed,
        }
    }

    #[test]
    fn empty_dataset() {
        let ds = generate_dataset(&small_config(1), 0, DatasetKind::Data).unwrap();
        assert!(ds.is_empty());
        let back = Dataset::from_bytes(&ds.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn dataset_bytes_are_deterministic_and_round_trip() {
        let cfg = small_config(11);
        let a = generate_dataset(&cfg, 6, DatasetKind::Data).unwrap();
        let b = generate_dataset(&cfg, 6, DatasetKind::Data).unwrap();
        let bytes = a.to_bytes().unwrap();
        assert_eq!(bytes, b.to_bytes().unwrap());
        assert_eq!(Dataset::from_bytes(&bytes).unwrap(), a);
        for s in &a.samples {
            let t = s.trajectory.as_ref().unwrap();
            assert_eq!(t.states.len(), 21);
            assert_eq!(t.states[0], vectorize(&s.rho0));
        }

        let phys = generate_dataset(&cfg, 4, DatasetKind::Physics).unwrap();
        assert!(phys.samples.iter().all(|s| s.trajectory.is_none()));
        let bytes = phys.to_bytes().unwrap();
        assert_eq!(Dataset::from_bytes(&bytes).unwrap(), phys);
    }

    #[test]
    fn truncated_dataset_is_rejected() {
        let ds = generate_dataset(&small_config(3), 2, DatasetKind::Physics).unwrap();
        let bytes = ds.to_bytes().unwrap();
        assert!(matches!(Dataset::from_bytes(&bytes[..bytes.len() - 3]), Err(NqpError::Corrupt(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Dataset::from_bytes(&bad), Err(NqpError::Corrupt(_))));
    }
}
