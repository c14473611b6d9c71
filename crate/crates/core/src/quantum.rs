//! Operator algebra for a driven open quantum system.
//!
//! Everything here works in units where ħ = 1 and energies are measured in
//! units of the reference frequency. Density matrices are vectorized in
//! row-major order, so the element ⟨j|ρ|j′⟩ lands at index `j * d + j′`.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

use crate::error::{NqpError, Result};

pub type CMatrix = Array2<C64>;

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Static part of the Hamiltonian: state energies plus interstate couplings.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemSpec {
    pub dim: usize,
    pub energies: Vec<f64>,
    pub couplings: Vec<Coupling>,
}

/// Matrix element Δ placed at `|row⟩⟨col|`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coupling {
    pub row: usize,
    pub col: usize,
    pub value: C64,
}

impl SystemSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(NqpError::InvalidSystem(format!("dim must be >= 2, got {}", self.dim)));
        }
        if self.energies.len() != self.dim {
            return Err(NqpError::InvalidSystem(format!(
                "expected {} energies, got {}",
                self.dim,
                self.energies.len()
            )));
        }
        if let Some(e) = self.energies.iter().find(|e| !e.is_finite()) {
            return Err(NqpError::InvalidSystem(format!("non-finite energy {e}")));
        }
        for c in &self.couplings {
            if c.row == c.col {
                return Err(NqpError::InvalidSystem(format!(
                    "coupling on the diagonal at ({0}, {0})",
                    c.row
                )));
            }
            if c.row >= self.dim || c.col >= self.dim {
                return Err(NqpError::InvalidSystem(format!(
                    "coupling ({}, {}) outside a {}-level system",
                    c.row, c.col, self.dim
                )));
            }
        }
        Ok(())
    }
}

/// One Markovian bath: rate γ and jump operator V.
#[derive(Clone, Debug, PartialEq)]
pub struct BathChannel {
    pub gamma: f64,
    pub v_op: CMatrix,
}

/// Time dependence of a single external field.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldForm {
    /// f(t) = exp(i ω t)
    Periodic { omega: f64 },
    /// f(t) = c
    Constant { value: f64 },
}

/// A driven term f(t)·F in the Hamiltonian.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldChannel {
    pub f_op: CMatrix,
    pub form: FieldForm,
    /// Replace exp(iωt) by cos(ωt), keeping the Hamiltonian Hermitian.
    pub use_real_part: bool,
}

impl FieldChannel {
    pub fn value_at(&self, t: f64) -> C64 {
        field_value(self.form, self.use_real_part, t)
    }
}

pub fn field_value(form: FieldForm, use_real_part: bool, t: f64) -> C64 {
    match form {
        FieldForm::Periodic { omega } => {
            if use_real_part {
                C64::new((omega * t).cos(), 0.0)
            } else {
                C64::new(0.0, omega * t).exp()
            }
        }
        FieldForm::Constant { value } => C64::new(value, 0.0),
    }
}

/// A d×d density matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(pub CMatrix);

impl DensityMatrix {
    pub fn new(data: CMatrix) -> Result<Self> {
        if !data.is_square() {
            return Err(NqpError::DimensionMismatch(format!(
                "density matrix must be square, got {:?}",
                data.dim()
            )));
        }
        Ok(DensityMatrix(data))
    }

    /// Projector |j⟩⟨j|.
    pub fn basis_projector(dim: usize, j: usize) -> Self {
        let mut m = CMatrix::zeros((dim, dim));
        m[[j, j]] = C64::new(1.0, 0.0);
        DensityMatrix(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn trace(&self) -> C64 {
        self.0.diag().sum()
    }

    /// Real parts of the diagonal.
    pub fn populations(&self) -> Vec<f64> {
        self.0.diag().iter().map(|z| z.re).collect()
    }

    /// ‖ρ − ρ†‖_F
    pub fn hermiticity_defect(&self) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for j in 0..d {
            for k in 0..d {
                acc += (self.0[[j, k]] - self.0[[k, j]].conj()).norm_sqr();
            }
        }
        acc.sqrt()
    }
}

/// Row-major vectorization of a density matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LiouvilleVector(pub Array1<C64>);

impl LiouvilleVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Uniform grid t_n = n·dt for n = 0..=n_steps.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimeGrid {
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(NqpError::Config(format!("time step must be positive, got {dt}")));
        }
        if n_steps == 0 {
            return Err(NqpError::Config("time grid needs at least one step".into()));
        }
        Ok(TimeGrid { dt, n_steps })
    }

    /// Grid covering [0, t_max]; t_max must be an integer multiple of dt.
    pub fn from_t_max(dt: f64, t_max: f64) -> Result<Self> {
        let ratio = t_max / dt;
        let n = ratio.round();
        if !(n >= 1.0) || (ratio - n).abs() > 1e-9 * n.max(1.0) {
            return Err(NqpError::Config(format!(
                "t_max = {t_max} is not a positive integer multiple of dt = {dt}"
            )));
        }
        TimeGrid::new(dt, n as usize)
    }

    pub fn t(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn t_max(&self) -> f64 {
        self.t(self.n_steps)
    }

    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn build_h0(spec: &SystemSpec) -> Result<CMatrix> {
    spec.validate()?;
    let d = spec.dim;
    let mut h = CMatrix::zeros((d, d));
    for (j, &e) in spec.energies.iter().enumerate() {
        h[[j, j]] = C64::new(e, 0.0);
    }
    for c in &spec.couplings {
        h[[c.row, c.col]] += c.value;
    }
    for j in 0..d {
        for k in (j + 1)..d {
            if h[[j, k]] != h[[k, j]].conj() {
                return Err(NqpError::InvalidSystem(format!(
                    "couplings are not Hermitian: H[{j},{k}] = {} but conj(H[{k},{j}]) = {}",
                    h[[j, k]],
                    h[[k, j]].conj()
                )));
            }
        }
    }
    Ok(h)
}

fn check_square(m: &CMatrix, d: usize, what: &str) -> Result<()> {
    if m.dim() != (d, d) {
        return Err(NqpError::DimensionMismatch(format!(
            "{what} is {:?}, expected ({d}, {d})",
            m.dim()
        )));
    }
    Ok(())
}

/// H(t) = H₀ + Σ_k f_k(t) F_k, taken literally (complex fields give a
/// non-Hermitian H).
pub fn hamiltonian_at(spec: &SystemSpec, fields: &[FieldChannel], t: f64) -> Result<CMatrix> {
    let mut h = build_h0(spec)?;
    for (k, f) in fields.iter().enumerate() {
        check_square(&f.f_op, spec.dim, &format!("field operator {k}"))?;
        h.scaled_add(f.value_at(t), &f.f_op);
    }
    Ok(h)
}

/// V†Vρ + ρV†V − 2VρV†
pub fn dissipator_apply(v_op: &CMatrix, rho: &DensityMatrix) -> Result<CMatrix> {
    check_square(v_op, rho.dim(), "bath operator")?;
    let vdv = adjoint(v_op).dot(v_op);
    Ok(dissipator_with(v_op, &vdv, &rho.0))
}

fn dissipator_with(v: &CMatrix, vdv: &CMatrix, rho: &CMatrix) -> CMatrix {
    let mut out = small_dot(vdv, rho);
    out += &small_dot(rho, vdv);
    let sandwich = small_dot(&small_dot(v, rho), &adjoint(v));
    out.scaled_add(C64::new(-2.0, 0.0), &sandwich);
    out
}

/// Plain triple loop; for the handful of levels used here it beats a
/// packed GEMM by a wide margin.
fn small_dot(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (n, k, m) = (a.nrows(), a.ncols(), b.ncols());
    let mut out = CMatrix::zeros((n, m));
    for i in 0..n {
        for l in 0..k {
            let x = a[[i, l]];
            if x == C64::new(0.0, 0.0) {
                continue;
            }
            for j in 0..m {
                out[[i, j]] += x * b[[l, j]];
            }
        }
    }
    out
}

pub fn adjoint(m: &CMatrix) -> CMatrix {
    m.t().mapv(|z| z.conj())
}

/// −i[H(t), ρ] − Σ_j γ_j D_j[ρ]
pub fn qme_rhs(
    spec: &SystemSpec,
    baths: &[BathChannel],
    fields: &[FieldChannel],
    t: f64,
    rho: &DensityMatrix,
) -> Result<CMatrix> {
    let system = OpenSystem::new(spec.clone(), baths.to_vec(), fields_as_drives(fields))?;
    system.check_state(rho)?;
    let values: Vec<C64> = fields.iter().map(|f| f.value_at(t)).collect();
    Ok(system.rhs_with_values(&values, &rho.0))
}

pub fn vectorize(rho: &DensityMatrix) -> LiouvilleVector {
    LiouvilleVector(rho.0.iter().copied().collect())
}

pub fn devectorize(v: &LiouvilleVector) -> Result<DensityMatrix> {
    let n = v.len();
    let d = (n as f64).sqrt().round() as usize;
    if d * d != n || n == 0 {
        return Err(NqpError::DimensionMismatch(format!(
            "vector length {n} is not a perfect square"
        )));
    }
    let m = CMatrix::from_shape_vec((d, d), v.0.to_vec()).expect("length checked");
    Ok(DensityMatrix(m))
}

/// d²×d² matrix L(t) with vec(qme_rhs(ρ)) = L(t)·vec(ρ), probed column by
/// column on the basis matrices |j⟩⟨j′|.
pub fn liouvillian_matrix(
    spec: &SystemSpec,
    baths: &[BathChannel],
    fields: &[FieldChannel],
    t: f64,
) -> Result<CMatrix> {
    let system = OpenSystem::new(spec.clone(), baths.to_vec(), fields_as_drives(fields))?;
    let values: Vec<C64> = fields.iter().map(|f| f.value_at(t)).collect();
    Ok(system.liouvillian_with_values(&values))
}

fn fields_as_drives(fields: &[FieldChannel]) -> Vec<DriveOperator> {
    fields
        .iter()
        .map(|f| DriveOperator {
            f_op: f.f_op.clone(),
            use_real_part: f.use_real_part,
        })
        .collect()
}

/// Operator part of a field channel, before a concrete form is chosen.
#[derive(Clone, Debug, PartialEq)]
pub struct DriveOperator {
    pub f_op: CMatrix,
    pub use_real_part: bool,
}

/// Validated system with precomputed H₀ and V†V products.
///
/// The hot paths (`rhs_with_values`, `liouvillian_with_values`) skip shape
/// checks; everything is verified once in [`OpenSystem::new`].
#[derive(Clone, Debug)]
pub struct OpenSystem {
    pub spec: SystemSpec,
    pub baths: Vec<BathChannel>,
    pub drives: Vec<DriveOperator>,
    h0: CMatrix,
    vdv: Vec<CMatrix>,
}

impl OpenSystem {
    pub fn new(spec: SystemSpec, baths: Vec<BathChannel>, drives: Vec<DriveOperator>) -> Result<Self> {
        let h0 = build_h0(&spec)?;
        let d = spec.dim;
        for (j, b) in baths.iter().enumerate() {
            if !(b.gamma >= 0.0) {
                return Err(NqpError::InvalidSystem(format!(
                    "bath {j} has negative coupling strength {}",
                    b.gamma
                )));
            }
            check_square(&b.v_op, d, &format!("bath operator {j}"))?;
        }
        for (k, f) in drives.iter().enumerate() {
            check_square(&f.f_op, d, &format!("field operator {k}"))?;
        }
        let vdv = baths.iter().map(|b| adjoint(&b.v_op).dot(&b.v_op)).collect();
        Ok(OpenSystem {
            spec,
            baths,
            drives,
            h0,
            vdv,
        })
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn n_fields(&self) -> usize {
        self.drives.len()
    }

    pub fn h0(&self) -> &CMatrix {
        &self.h0
    }

    /// Attach concrete forms to the drive operators.
    pub fn channels(&self, forms: &[FieldForm]) -> Result<Vec<FieldChannel>> {
        if forms.len() != self.drives.len() {
            return Err(NqpError::DimensionMismatch(format!(
                "system has {} field channels, got {} forms",
                self.drives.len(),
                forms.len()
            )));
        }
        Ok(self
            .drives
            .iter()
            .zip(forms)
            .map(|(d, &form)| FieldChannel {
                f_op: d.f_op.clone(),
                form,
                use_real_part: d.use_real_part,
            })
            .collect())
    }

    /// Field values f_k(t) for the given forms.
    pub fn field_values(&self, forms: &[FieldForm], t: f64) -> Vec<C64> {
        self.drives
            .iter()
            .zip(forms)
            .map(|(d, &form)| field_value(form, d.use_real_part, t))
            .collect()
    }

    pub fn check_state(&self, rho: &DensityMatrix) -> Result<()> {
        check_square(&rho.0, self.dim(), "density matrix")
    }

    pub fn hamiltonian_with_values(&self, values: &[C64]) -> CMatrix {
        let mut h = self.h0.clone();
        for (d, &f) in self.drives.iter().zip(values) {
            h.scaled_add(f, &d.f_op);
        }
        h
    }

    /// QME right-hand side with the field values f_k already evaluated.
    pub fn rhs_with_values(&self, values: &[C64], rho: &CMatrix) -> CMatrix {
        let h = self.hamiltonian_with_values(values);
        let mut out = small_dot(&h, rho);
        out -= &small_dot(rho, &h);
        out.mapv_inplace(|z| -I * z);
        for (bath, vdv) in self.baths.iter().zip(&self.vdv) {
            if bath.gamma == 0.0 {
                continue;
            }
            let d = dissipator_with(&bath.v_op, vdv, rho);
            out.scaled_add(C64::new(-bath.gamma, 0.0), &d);
        }
        out
    }

    pub fn liouvillian_with_values(&self, values: &[C64]) -> CMatrix {
        let d = self.dim();
        let n = d * d;
        let mut l = CMatrix::zeros((n, n));
        let mut basis = CMatrix::zeros((d, d));
        for col in 0..n {
            let (j, jp) = (col / d, col % d);
            basis[[j, jp]] = C64::new(1.0, 0.0);
            let image = self.rhs_with_values(values, &basis);
            basis[[j, jp]] = C64::new(0.0, 0.0);
            for (row, z) in image.iter().enumerate() {
                l[[row, col]] = *z;
            }
        }
        l
    }
}
