//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each export takes plain numbers and returns a JSON document, so the page
//! needs no bindings beyond `JSON.parse`.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use nqp::dataset::{propagate, Trajectory};
use nqp::experiment::{preset_spin_boson, preset_three_state};
use nqp::quantum::{BathChannel, DensityMatrix, FieldForm, OpenSystem, SystemSpec, TimeGrid};
use nqp::Result;

// Keeps the page responsive: at δ_t = 0.05 this is t ≤ 200.
const MAX_STEPS: usize = 4000;

#[derive(Debug, Serialize)]
pub struct Dynamics {
    pub t: Vec<f64>,
    /// populations[j][n] = ρ_jj(t_n)
    pub populations: Vec<Vec<f64>>,
    /// Re and Im of ρ_01(t_n)
    pub coherence_re: Vec<f64>,
    pub coherence_im: Vec<f64>,
    pub max_trace_error: f64,
}

fn grid(dt: f64, t_max: f64) -> Result<TimeGrid> {
    let g = TimeGrid::from_t_max(dt, t_max)?;
    if g.n_steps > MAX_STEPS {
        return Err(nqp::NqpError::Config(format!("{} steps is more than the demo allows ({MAX_STEPS})", g.n_steps)));
    }
    Ok(g)
}

fn summarize(traj: &Trajectory) -> Dynamics {
    let d = traj.dim();
    let n = traj.grid.len();
    let mut out = Dynamics {
        t: (0..n).map(|i| traj.grid.t(i)).collect(),
        populations: vec![Vec::with_capacity(n); d],
        coherence_re: Vec::with_capacity(n),
        coherence_im: Vec::with_capacity(n),
        max_trace_error: 0.0,
    };
    for i in 0..n {
        let rho = traj.state(i);
        for (j, p) in rho.populations().into_iter().enumerate() {
            out.populations[j].push(p);
        }
        out.coherence_re.push(rho.0[[0, 1]].re);
        out.coherence_im.push(rho.0[[0, 1]].im);
        out.max_trace_error = out.max_trace_error.max((rho.trace() - 1.0).norm());
    }
    out
}

/// Spin-boson dynamics from |g⟩⟨g| with adjustable bath rates and drive.
pub fn spin_boson_dynamics(omega: f64, gamma1: f64, gamma2: f64, t_max: f64, real_part: bool) -> Result<Dynamics> {
    let mut cfg = preset_spin_boson();
    cfg.system.baths[0].gamma = gamma1;
    cfg.system.baths[1].gamma = gamma2;
    let sys = cfg.system.with_real_part(real_part).build()?;
    let traj = propagate(&sys, &[FieldForm::Periodic { omega }], grid(0.05, t_max)?, &DensityMatrix::basis_projector(2, 0))?;
    Ok(summarize(&traj))
}

/// Three-state Gamma dynamics from |1⟩⟨1| under constant couplings c₁, c₃.
pub fn three_state_dynamics(c1: f64, c3: f64, t_max: f64) -> Result<Dynamics> {
    let cfg = preset_three_state();
    let sys = cfg.build_system()?;
    let forms = [FieldForm::Constant { value: c1 }, FieldForm::Constant { value: c3 }];
    let traj = propagate(&sys, &forms, grid(0.05, t_max)?, &cfg.initial_state())?;
    Ok(summarize(&traj))
}

#[derive(Debug, Serialize)]
pub struct DecayCheck {
    pub dt: f64,
    pub max_rel_error: f64,
    pub max_rel_error_half_step: f64,
    /// log2 of the error ratio; 4 for a fourth-order integrator.
    pub observed_order: f64,
}

fn decay_error(gamma: f64, dt: f64, t_max: f64) -> Result<f64> {
    let mut v = nqp::quantum::CMatrix::zeros((2, 2));
    v[[0, 1]] = num_complex::Complex64::new(1.0, 0.0);
    let spec = SystemSpec { dim: 2, energies: vec![0.0, 0.0], couplings: vec![] };
    let sys = OpenSystem::new(spec, vec![BathChannel { gamma, v_op: v }], vec![])?;
    let g = grid(dt, t_max)?;
    let traj = propagate(&sys, &[], g, &DensityMatrix::basis_projector(2, 1))?;
    Ok((0..g.len())
        .map(|n| {
            let exact = (-2.0 * gamma * g.t(n)).exp();
            (traj.state(n).0[[1, 1]].re - exact).abs() / exact
        })
        .fold(0.0, f64::max))
}

/// RK4 against the closed-form pure decay ρ_ee = exp(−2γt), at δ_t and δ_t/2.
pub fn decay_check(gamma: f64, dt: f64, t_max: f64) -> Result<DecayCheck> {
    let e1 = decay_error(gamma, dt, t_max)?;
    let e2 = decay_error(gamma, dt / 2.0, t_max)?;
    Ok(DecayCheck { dt, max_rel_error: e1, max_rel_error_half_step: e2, observed_order: (e1 / e2).log2() })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = spinBoson)]
pub fn spin_boson(omega: f64, gamma1: f64, gamma2: f64, t_max: f64, real_part: bool) -> std::result::Result<String, JsError> {
    to_js(spin_boson_dynamics(omega, gamma1, gamma2, t_max, real_part))
}

#[wasm_bindgen(js_name = threeState)]
pub fn three_state(c1: f64, c3: f64, t_max: f64) -> std::result::Result<String, JsError> {
    to_js(three_state_dynamics(c1, c3, t_max))
}

#[wasm_bindgen(js_name = decayCheck)]
pub fn decay(gamma: f64, dt: f64, t_max: f64) -> std::result::Result<String, JsError> {
    to_js(decay_check(gamma, dt, t_max))
}
