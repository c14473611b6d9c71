//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) because the training criteria
//! share trained models and the whole suite runs on one worker thread.

use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use nqp::commands::{cmd_validate, field_forms, horizon_steps, train_on};
use nqp::dataset::{
    generate_dataset, propagate, propagate_from, sample_gue_state, DataSample, DatasetKind, FieldGrid, FieldRange,
    Trajectory,
};
use nqp::experiment::{desk_spin_boson, desk_three_state, preset_spin_boson, preset_three_state, ExperimentConfig};
use nqp::model::{ModelConfig, ModelParams, Modes, Activation, NeuralPropagator, rollout};
use nqp::quantum::{
    vectorize, BathChannel, DensityMatrix, FieldForm, OpenSystem, SystemSpec, TimeGrid,
};
use nqp::training::{
    combined_loss, data_loss, loss_and_gradient, physics_residual, physics_residual_of, PhysicsSample,
};

type CMatrix = Array2<C64>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn run(n: usize, title: &str, results: &mut Vec<bool>, f: impl FnOnce() -> Outcome) {
    let t0 = Instant::now();
    let o = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|e| Outcome {
        pass: false,
        detail: format!(
            "panicked: {}",
            e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
        ),
    });
    let tag = if o.pass { "PASS" } else { "FAIL" };
    println!("[{tag}] criterion {n:>2}: {title}: {} ({:.1} s)", o.detail, t0.elapsed().as_secs_f64());
    results.push(o.pass);
}

fn within(t0: Instant, limit: Duration) -> (bool, String) {
    let el = t0.elapsed();
    (el < limit, format!("runtime {:.2} s < {} s", el.as_secs_f64(), limit.as_secs()))
}

// Criterion 1

fn pure_decay() -> Outcome {
    let t0 = Instant::now();
    let gamma = 0.2;
    let mut v = CMatrix::zeros((2, 2));
    v[[0, 1]] = C64::new(1.0, 0.0);
    let spec = SystemSpec { dim: 2, energies: vec![0.0, 0.0], couplings: vec![] };
    let sys = OpenSystem::new(spec, vec![BathChannel { gamma, v_op: v }], vec![]).unwrap();
    let grid = TimeGrid::from_t_max(0.05, 20.0).unwrap();
    let traj = propagate(&sys, &[], grid, &DensityMatrix::basis_projector(2, 1)).unwrap();
    let worst = (0..grid.len())
        .map(|n| {
            let exact = (-2.0 * gamma * grid.t(n)).exp();
            (traj.state(n).0[[1, 1]].re - exact).abs() / exact
        })
        .fold(0.0, f64::max);
    let (fast, rt) = within(t0, Duration::from_secs(1));
    Outcome { pass: worst < 1e-7 && fast, detail: format!("max rel err of rho_ee vs exp(-2 gamma t) = {worst:.3e} < 1e-7, {rt}") }
}

// Criterion 2

fn conservation() -> Outcome {
    let t0 = Instant::now();
    let cfg = preset_spin_boson();
    let sys = cfg.system.clone().with_real_part(true).build().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut tr_err, mut herm_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..50 {
        let rho0 = sample_gue_state(&mut rng, 2).unwrap();
        let omega = rng.random_range(0.2..1.0);
        let traj = propagate(&sys, &[FieldForm::Periodic { omega }], cfg.grid, &rho0).unwrap();
        for n in 0..traj.states.len() {
            let rho = traj.state(n);
            tr_err = tr_err.max((rho.trace() - 1.0).norm());
            herm_err = herm_err.max(frob(&(&rho.0 - &adjoint(&rho.0))));
        }
    }
    let (fast, rt) = within(t0, Duration::from_secs(10));
    Outcome {
        pass: tr_err < 1e-8 && herm_err < 1e-9 && fast && cfg.grid.n_steps == 400,
        detail: format!("50 states x 401 points: max |tr-1| = {tr_err:.2e} < 1e-8, max |rho-rho^H|_F = {herm_err:.2e} < 1e-9, {rt}"),
    }
}

fn adjoint(m: &CMatrix) -> CMatrix {
    m.t().mapv(|z| z.conj())
}

fn frob(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

// Criterion 3

fn composition() -> Outcome {
    let t0 = Instant::now();
    let cfg = preset_spin_boson();
    let sys = cfg.build_system().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = cfg.grid;
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let rho0 = sample_gue_state(&mut rng, 2).unwrap();
        let forms = [FieldForm::Periodic { omega: rng.random_range(0.2..1.0) }];
        let whole = propagate(&sys, &forms, grid, &rho0).unwrap();
        let split = rng.random_range(1..grid.n_steps);
        let first = propagate(&sys, &forms, TimeGrid::new(grid.dt, split).unwrap(), &rho0).unwrap();
        let mid = first.state(split);
        let rest = propagate_from(&sys, &forms, TimeGrid::new(grid.dt, grid.n_steps - split).unwrap(), split, &mid).unwrap();
        for (n, s) in first.states.iter().chain(rest.states.iter().skip(1)).enumerate() {
            for (a, b) in s.0.iter().zip(whole.states[n].0.iter()) {
                worst = worst.max((a - b).norm());
            }
        }
    }
    let (fast, rt) = within(t0, Duration::from_secs(5));
    Outcome { pass: worst < 1e-12 && fast, detail: format!("10 random splits: max entrywise diff = {worst:.2e} < 1e-12, {rt}") }
}

// Criterion 4

/// Row-major vec: vec(A X B) = (A ⊗ Bᵀ) vec(X).
fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (n, m) = (a.nrows(), b.nrows());
    let mut out = CMatrix::zeros((n * m, n * m));
    for i in 0..n {
        for j in 0..n {
            for k in 0..m {
                for l in 0..m {
                    out[[i * m + k, j * m + l]] = a[[i, j]] * b[[k, l]];
                }
            }
        }
    }
    out
}

fn kron_liouvillian(sys: &OpenSystem, values: &[C64]) -> CMatrix {
    let d = sys.dim();
    let id = CMatrix::eye(d);
    let mut h = sys.h0().clone();
    for (drive, &f) in sys.drives.iter().zip(values) {
        h = h + drive.f_op.mapv(|z| z * f);
    }
    let mi = C64::new(0.0, -1.0);
    let mut l = (kron(&h, &id) - kron(&id, &h.t().to_owned())).mapv(|z| z * mi);
    for b in &sys.baths {
        let vdv = adjoint(&b.v_op).dot(&b.v_op);
        let conj_v = b.v_op.mapv(|z| z.conj());
        let dis = kron(&vdv, &id) + kron(&id, &vdv.t().to_owned()) - kron(&b.v_op, &conj_v).mapv(|z| z * 2.0);
        l = l - dis.mapv(|z| z * b.gamma);
    }
    l
}

fn random_forms(rng: &mut ChaCha8Rng, ranges: &[FieldRange]) -> Vec<FieldForm> {
    ranges.iter().map(|r| r.sample(rng).unwrap()).collect()
}

fn liouvillian_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_paths, mut worst_kron): (f64, f64) = (0.0, 0.0);
    let mut checks = 0;
    for cfg in [preset_spin_boson(), preset_three_state()] {
        let sys = cfg.build_system().unwrap();
        let d = sys.dim();
        for _ in 0..10 {
            let t = rng.random_range(0.0..cfg.grid.t_max());
            let values = sys.field_values(&random_forms(&mut rng, &cfg.fields), t);
            let l = sys.liouvillian_with_values(&values);
            let lk = kron_liouvillian(&sys, &values);
            worst_kron = worst_kron.max((&l - &lk).iter().map(|z| z.norm()).fold(0.0, f64::max));
            for _ in 0..10 {
                let rho = sample_gue_state(&mut rng, d).unwrap();
                let via_matrix = l.dot(&vectorize(&rho).0);
                let free = sys.rhs_with_values(&values, &rho.0);
                let free = free.into_shape_with_order(d * d).unwrap();
                worst_paths = worst_paths.max((&via_matrix - &free).iter().map(|z| z.norm()).fold(0.0, f64::max));
                checks += 1;
            }
        }
    }
    Outcome {
        pass: worst_paths < 1e-12 && worst_kron < 1e-12,
        detail: format!(
            "{checks} states over 2 presets x 10 times: matrix vs matrix-free {worst_paths:.2e}, matrix vs Kronecker form {worst_kron:.2e} (< 1e-12)"
        ),
    }
}

// Criterion 5

fn tiny_config() -> ExperimentConfig {
    let mut cfg = preset_spin_boson();
    cfg.grid = TimeGrid::new(0.05, 8).unwrap();
    cfg.model = ModelConfig {
        d: 2,
        n_steps: 8,
        k_channels: 1,
        latent_channels: 4,
        proj_hidden: 8,
        n_layers: 1,
        modes: Modes::All,
        activation: Activation::Gelu,
    };
    cfg
}

fn gradient_integrity() -> Outcome {
    let t0 = Instant::now();
    let cfg = tiny_config();
    let dc = cfg.dataset_config(5).unwrap();
    let data = generate_dataset(&dc, 3, DatasetKind::Data).unwrap();
    let phys: Vec<PhysicsSample> = generate_dataset(&dc, 2, DatasetKind::Physics)
        .unwrap()
        .samples
        .into_iter()
        .map(|s| PhysicsSample::new(&dc.system, s.rho0, s.field).unwrap())
        .collect();
    let d: Vec<&DataSample> = data.samples.iter().collect();
    let p: Vec<&PhysicsSample> = phys.iter().collect();
    let params = ModelParams::init(&cfg.model, 5).unwrap();
    let loss = |m: &ModelParams| {
        combined_loss(data_loss(m, &d, false).unwrap(), physics_residual(m, &p, 0.05, false).unwrap(), 0.5).unwrap()
    };
    let analytic = loss_and_gradient(&params, &d, &p, 0.5, 0.05, false, 2).unwrap();
    let h = 1e-6;
    let (mut worst, mut count): (f64, usize) = (0.0, 0);
    for (ti, t) in params.tensors.iter().enumerate() {
        for i in 0..t.len() {
            let mut plus = params.clone();
            plus.tensors[ti].data_mut()[i] += h;
            let mut minus = params.clone();
            minus.tensors[ti].data_mut()[i] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let a = analytic.grads[ti][i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3));
            count += 1;
        }
    }
    let (fast, rt) = within(t0, Duration::from_secs(120));
    Outcome {
        pass: worst < 1e-5 && fast,
        detail: format!("{count} parameters, max rel err = {worst:.2e} < 1e-5, {rt}"),
    }
}

// Criterion 6

fn residual_of_exact(dt: f64) -> f64 {
    let cfg = preset_spin_boson();
    let sys = cfg.build_system().unwrap();
    let grid = TimeGrid::from_t_max(dt, cfg.grid.t_max()).unwrap();
    let mut trajs = Vec::new();
    let mut fields = Vec::new();
    for omega in [0.2, 0.6, 1.0] {
        let forms = [FieldForm::Periodic { omega }];
        trajs.push(propagate(&sys, &forms, grid, &cfg.initial_state()).unwrap());
        fields.push(FieldGrid::evaluate(&sys, &forms, grid, 0));
    }
    let t: Vec<&Trajectory> = trajs.iter().collect();
    let f: Vec<&FieldGrid> = fields.iter().collect();
    physics_residual_of(&t, &f, &sys, false).unwrap()
}

fn convergence_order() -> Outcome {
    let (coarse, fine) = (residual_of_exact(0.05), residual_of_exact(0.025));
    let ratio = coarse / fine;
    Outcome {
        pass: (ratio - 4.0).abs() < 0.5,
        detail: format!("residual {coarse:.3e} at dt 0.05, {fine:.3e} at dt 0.025, ratio {ratio:.3} in 4 +/- 0.5"),
    }
}

// Criteria 7 to 10

struct Trained {
    cfg: ExperimentConfig,
    params: ModelParams,
    first_loss: f64,
    final_loss: f64,
    hash: Vec<u8>,
    elapsed: Duration,
}

const TRAIN_SEED: u64 = 7;

fn train_desk(cfg: &ExperimentConfig, dir: &Path) -> Trained {
    let t0 = Instant::now();
    let data = generate_dataset(&cfg.dataset_config(TRAIN_SEED).unwrap(), cfg.train.n_data, DatasetKind::Data).unwrap();
    let art = train_on(cfg, &data, TRAIN_SEED, dir).unwrap();
    let mut h = Sha256::new();
    h.update(std::fs::read(&art.checkpoint).unwrap());
    h.update(art.report.deterministic_csv().as_bytes());
    Trained {
        cfg: cfg.clone(),
        first_loss: art.report.first().map_or(f64::NAN, |r| r.l),
        final_loss: art.report.last().map_or(f64::NAN, |r| r.l),
        params: art.params,
        hash: h.finalize().to_vec(),
        elapsed: t0.elapsed(),
    }
}

fn within_pop_err(m: &Trained, fields: &[Vec<f64>], horizon_t: f64) -> (Vec<f64>, Vec<f64>) {
    let steps = horizon_steps(m.cfg.grid.dt, horizon_t).unwrap();
    let report = cmd_validate(&m.cfg, &m.params, m.cfg.grid.dt, fields, steps).unwrap();
    let within = report.rows.iter().map(|r| r.within.map_or(f64::INFINITY, |s| s.pop_max)).collect();
    let beyond = report.rows.iter().map(|r| r.beyond.map_or(f64::INFINITY, |s| s.pop_max)).collect();
    (within, beyond)
}

fn spin_boson_training(m: &Trained) -> Outcome {
    let (err, _) = within_pop_err(m, &[vec![0.6]], m.cfg.grid.t_max());
    let ratio = m.final_loss / m.first_loss;
    let fast = m.elapsed < Duration::from_secs(30 * 60);
    Outcome {
        pass: ratio <= 1.0 / 20.0 && err[0] < 0.05 && fast,
        detail: format!(
            "(a) L(1) = {:.3e}, L(end) = {:.3e}, ratio {ratio:.4} <= 0.05; (b) held-out omega 0.6 pop err {:.4} < 0.05; training {:.0} s < 1800 s",
            m.first_loss,
            m.final_loss,
            err[0],
            m.elapsed.as_secs_f64()
        ),
    }
}

fn three_state_points() -> Vec<Vec<f64>> {
    [0.2, 0.4, 0.6, 0.8].iter().map(|&c3| vec![0.3, c3]).collect()
}

fn universality(m: &Trained) -> Outcome {
    let (err, _) = within_pop_err(m, &three_state_points(), m.cfg.grid.t_max());
    let worst = err.iter().copied().fold(0.0, f64::max);
    Outcome {
        pass: worst < 0.05,
        detail: format!(
            "c1 = 0.3, c3 in (0.2, 0.4, 0.6, 0.8): pop err {} (max {worst:.4} < 0.05); L(1) {:.3e} -> L(end) {:.3e}",
            fmt_list(&err),
            m.first_loss,
            m.final_loss
        ),
    }
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ")
}

fn beyond_window(sb: &Trained, ts: &Trained) -> Outcome {
    let horizon = 40.0;
    let steps = horizon_steps(ts.cfg.grid.dt, horizon).unwrap();
    let sys = ts.cfg.build_system().unwrap();
    let prop = NeuralPropagator { params: &ts.params, dt: ts.cfg.grid.dt };
    let grid = TimeGrid::new(ts.cfg.grid.dt, steps).unwrap();
    let rho0 = ts.cfg.initial_state();
    let mut errs = Vec::new();
    for values in three_state_points() {
        let forms = field_forms(&ts.cfg.fields, &values).unwrap();
        let exact = propagate(&sys, &forms, grid, &rho0).unwrap();
        let pred = rollout(&prop, &sys, &rho0, &forms, steps, false).unwrap();
        let mut e: f64 = 0.0;
        for n in 0..=steps {
            for (a, b) in pred.populations(n).iter().zip(exact.populations(n)) {
                e = e.max((a - b).abs());
            }
        }
        errs.push(e);
    }
    let ts_worst = errs.iter().copied().fold(0.0, f64::max);

    let (within, beyond) = within_pop_err(sb, &[vec![0.2]], 20.0);
    let ratio = beyond[0] / within[0];
    Outcome {
        pass: ts_worst < 0.15 && ratio >= 2.0,
        detail: format!(
            "three-state rollout to t = 40: pop err {} (max {ts_worst:.4} < 0.15); spin-boson omega 0.2 to t = 20: within {:.4}, beyond {:.4}, ratio {ratio:.2} >= 2",
            fmt_list(&errs),
            within[0],
            beyond[0]
        ),
    }
}

fn determinism(first: &[&Trained], dir: &Path) -> Outcome {
    let mut same = true;
    let mut parts = Vec::new();
    for (i, m) in first.iter().enumerate() {
        let again = train_desk(&m.cfg, &dir.join(format!("rerun_{i}")));
        let eq = again.hash == m.hash;
        same &= eq;
        parts.push(format!("{}: {}", m.cfg.system.preset, if eq { "identical" } else { "DIFFERENT" }));
    }
    Outcome { pass: same, detail: format!("checkpoint + loss report sha256 on rerun: {}", parts.join(", ")) }
}

fn main() {
    // Single worker: the bit-exact rerun is defined for this mode.
    rayon::ThreadPoolBuilder::new().num_threads(1).build_global().expect("global pool is set once");
    let mut results = Vec::new();
    run(1, "pure decay matches exp(-2 gamma t)", &mut results, pure_decay);
    run(2, "trace and hermiticity conservation", &mut results, conservation);
    run(3, "composition identity", &mut results, composition);
    run(4, "Liouvillian matrix vs matrix-free", &mut results, liouvillian_equivalence);
    run(5, "gradient integrity", &mut results, gradient_integrity);
    run(6, "physics residual convergence order", &mut results, convergence_order);

    let dir = tempfile::tempdir().expect("temp dir");
    let t0 = Instant::now();
    let sb = std::panic::catch_unwind(|| train_desk(&desk_spin_boson(), &dir.path().join("spin_boson")));
    println!("trained desk spin-boson in {:.0} s", t0.elapsed().as_secs_f64());
    let t0 = Instant::now();
    let ts = std::panic::catch_unwind(|| train_desk(&desk_three_state(), &dir.path().join("three_state")));
    println!("trained desk three-state in {:.0} s", t0.elapsed().as_secs_f64());
    let missing = |what: &str| Outcome { pass: false, detail: format!("{what} training failed") };
    match &sb {
        Ok(m) => run(7, "desk spin-boson training", &mut results, || spin_boson_training(m)),
        Err(_) => run(7, "desk spin-boson training", &mut results, || missing("spin-boson")),
    }
    match &ts {
        Ok(m) => run(8, "universality transfer, three-state", &mut results, || universality(m)),
        Err(_) => run(8, "universality transfer, three-state", &mut results, || missing("three-state")),
    }
    match (&sb, &ts) {
        (Ok(a), Ok(b)) => {
            run(9, "beyond-window behavior", &mut results, || beyond_window(a, b));
            run(10, "determinism of training", &mut results, || determinism(&[a, b], dir.path()));
        }
        _ => {
            run(9, "beyond-window behavior", &mut results, || missing("desk"));
            run(10, "determinism of training", &mut results, || missing("desk"));
        }
    }

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
