use super::*;
use crate::dataset::{propagate, sample_gue_state};
use crate::quantum::{BathChannel, CMatrix, Coupling, DriveOperator, SystemSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ket_bra(d: usize, j: usize, k: usize) -> CMatrix {
    let mut m = CMatrix::zeros((d, d));
    m[[j, k]] = C64::new(1.0, 0.0);
    m
}

fn spin_boson() -> OpenSystem {
    let spec = SystemSpec {
        dim: 2,
        energies: vec![-0.5, 0.5],
        couplings: vec![
            Coupling { row: 0, col: 1, value: C64::new(0.5, 0.0) },
            Coupling { row: 1, col: 0, value: C64::new(0.5, 0.0) },
        ],
    };
    let baths = vec![
        BathChannel { gamma: 0.1, v_op: ket_bra(2, 1, 0) },
        BathChannel { gamma: 0.2, v_op: ket_bra(2, 0, 1) },
    ];
    OpenSystem::new(spec, baths, vec![DriveOperator { f_op: ket_bra(2, 1, 1), use_real_part: false }]).unwrap()
}

fn small_config(n_steps: usize) -> ModelConfig {
    ModelConfig {
        d: 2,
        n_steps,
        k_channels: 1,
        latent_channels: 4,
        proj_hidden: 8,
        n_layers: 2,
        modes: Modes::All,
        activation: Activation::Gelu,
    }
}

fn field(system: &OpenSystem, omega: f64, n_steps: usize) -> FieldGrid {
    FieldGrid::evaluate(system, &[FieldForm::Periodic { omega }], TimeGrid::new(0.05, n_steps).unwrap(), 0)
}

#[test]
fn physical_input_layout() {
    let cfg = ModelConfig { n_steps: 400, ..small_config(400) };
    let params = ModelParams::init(&cfg, 0).unwrap();
    let rho = DensityMatrix::basis_projector(2, 0);
    let x = params.physical_input(&[&rho]);
    assert_eq!(x.shape(), &[1, 401, 9]);
    assert_eq!(x.data()[8], 0.0);
    assert_eq!(x.data()[400 * 9 + 8], 1.0);
    assert_eq!(x.data()[0], 1.0);
}

#[test]
fn lift_distinguishes_initial_states() {
    let sys = spin_boson();
    let params = ModelParams::init(&small_config(10), 3).unwrap();
    let f = field(&sys, 0.5, 10);
    let a = params.lift_input(&DensityMatrix::basis_projector(2, 0), &f).unwrap();
    let b = params.lift_input(&DensityMatrix::basis_projector(2, 1), &f).unwrap();
    assert_eq!(a.shape(), &[11, 8]);
    assert_ne!(a, b);
}

fn zero(t: &mut Tensor) {
    t.data_mut().fill(0.0);
}

#[test]
fn fourier_layer_collapses_without_spectral_branch() {
    let cfg = small_config(6);
    let mut params = ModelParams::init(&cfg, 1).unwrap();
    for i in 4..7 {
        zero(&mut params.tensors[i]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let v_data: Vec<f64> = (0..7 * 8).map(|_| rng.random_range(-2.0..2.0)).collect();
    let v_t = Tensor::new(vec![1, 7, 8], v_data).unwrap();

    let mut g = Graph::new();
    let vars = params.register(&mut g);
    let v = g.constant(v_t.clone());
    let f = g.constant(Tensor::zeros(&[1, 7, 2]));
    let out = params.build_fourier_layer(&mut g, v, f, vars.layer(0)).unwrap();
    let gel = g.gelu(v);
    assert_eq!(g.value(out), g.value(gel));

    // W = identity on every mode, P = 0: the spectral branch returns v itself.
    let w = &mut params.tensors[4];
    let c = cfg.latent_channels;
    for n in 0..7 {
        for i in 0..c {
            w.data_mut()[((n * c + i) * c + i) * 2] = 1.0;
        }
    }
    let mut g = Graph::new();
    let vars = params.register(&mut g);
    let v = g.constant(v_t.clone());
    let f = g.constant(Tensor::zeros(&[1, 7, 2]));
    let out = params.build_fourier_layer(&mut g, v, f, vars.layer(0)).unwrap();
    let twice = g.scale(v, 2.0);
    let want = g.gelu(twice);
    for (a, b) in g.value(out).data().iter().zip(g.value(want).data()) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn forward_shape_and_finiteness() {
    let sys = spin_boson();
    let cfg = ModelConfig { latent_channels: 8, proj_hidden: 16, ..small_config(400) };
    let params = ModelParams::init(&cfg, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..3 {
        let rho = sample_gue_state(&mut rng, 2).unwrap();
        let traj = params.forward(&rho, &field(&sys, rng.random_range(0.2..1.0), 400), 0.05).unwrap();
        assert_eq!(traj.states.len(), 401);
        assert_eq!(traj.to_real_channels().len(), 401 * 8);
        assert!(traj.to_real_channels().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn forward_rejects_mismatched_grid() {
    let sys = spin_boson();
    let params = ModelParams::init(&small_config(10), 0).unwrap();
    let err = params.forward(&DensityMatrix::basis_projector(2, 0), &field(&sys, 0.5, 12), 0.05);
    assert!(matches!(err, Err(NqpError::DimensionMismatch(_))));
}

#[test]
fn param_count_formula_matches_allocation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let cfg = ModelConfig {
            d: rng.random_range(2..4),
            n_steps: rng.random_range(2..30),
            k_channels: rng.random_range(0..3),
            latent_channels: rng.random_range(1..6),
            proj_hidden: rng.random_range(1..9),
            n_layers: rng.random_range(0..4),
            modes: Modes::All,
            activation: Activation::Gelu,
        };
        let p = ModelParams::init(&cfg, 1).unwrap();
        assert_eq!(p.param_count(), cfg.param_count());
        assert_eq!(p.flat().len(), cfg.param_count());
    }
}

#[test]
fn modes_validation_and_serde() {
    let cfg = ModelConfig { modes: Modes::Count(12), ..small_config(10) };
    assert!(cfg.validate().is_err());
    let cfg = ModelConfig { modes: Modes::Count(5), ..small_config(10) };
    let json = serde_json::to_string(&cfg).unwrap();
    assert!(json.contains("\"modes\":5"));
    assert_eq!(serde_json::from_str::<ModelConfig>(&json).unwrap(), cfg);
    let all = serde_json::to_string(&small_config(10)).unwrap();
    assert!(all.contains("\"modes\":\"all\""));
}

#[test]
fn truncated_modes_still_run() {
    let sys = spin_boson();
    let cfg = ModelConfig { modes: Modes::Count(4), ..small_config(10) };
    let params = ModelParams::init(&cfg, 2).unwrap();
    let traj = params.forward(&DensityMatrix::basis_projector(2, 0), &field(&sys, 0.5, 10), 0.05).unwrap();
    assert_eq!(traj.states.len(), 11);
}

#[test]
fn forward_is_deterministic() {
    let sys = spin_boson();
    let params = ModelParams::init(&small_config(20), 9).unwrap();
    let rho = sample_gue_state(&mut ChaCha8Rng::seed_from_u64(1), 2).unwrap();
    let f = field(&sys, 0.7, 20);
    assert_eq!(params.forward(&rho, &f, 0.05).unwrap(), params.forward(&rho, &f, 0.05).unwrap());
}

#[test]
fn identity_activation_makes_forward_affine_in_rho0() {
    let sys = spin_boson();
    let cfg = ModelConfig { activation: Activation::Identity, ..small_config(12) };
    let params = ModelParams::init(&cfg, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let r1 = sample_gue_state(&mut rng, 2).unwrap();
    let r2 = sample_gue_state(&mut rng, 2).unwrap();
    let zero = DensityMatrix(CMatrix::zeros((2, 2)));
    let f = field(&sys, 0.4, 12);
    let run = |r: &DensityMatrix| params.forward(r, &f, 0.05).unwrap().to_real_channels();
    let (g1, g2, g0) = (run(&r1), run(&r2), run(&zero));

    // Biases and the time channel contribute an offset G[0]; the rest is linear.
    let (a, b) = (0.7, -1.3);
    let mix = DensityMatrix(&r1.0.mapv(|z| z * a) + &r2.0.mapv(|z| z * b));
    let gm = run(&mix);
    for i in 0..gm.len() {
        let want = g0[i] + a * (g1[i] - g0[i]) + b * (g2[i] - g0[i]);
        assert!((gm[i] - want).abs() < 1e-10, "{} vs {}", gm[i], want);
    }
    // Affine combinations (α + β = 1) are reproduced exactly as stated.
    let (a, b) = (0.25, 0.75);
    let mix = DensityMatrix(&r1.0.mapv(|z| z * a) + &r2.0.mapv(|z| z * b));
    let gm = run(&mix);
    for i in 0..gm.len() {
        assert!((gm[i] - (a * g1[i] + b * g2[i])).abs() < 1e-10);
    }
}

#[test]
fn zero_field_projection_removes_field_dependence() {
    let sys = spin_boson();
    let mut params = ModelParams::init(&small_config(16), 4).unwrap();
    for l in 0..2 {
        zero(&mut params.tensors[5 + 3 * l]);
        zero(&mut params.tensors[6 + 3 * l]);
    }
    let rho = DensityMatrix::basis_projector(2, 0);
    let a = params.forward(&rho, &field(&sys, 0.2, 16), 0.05).unwrap();
    let b = params.forward(&rho, &field(&sys, 0.9, 16), 0.05).unwrap();
    assert_eq!(a, b);
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let sys = spin_boson();
    let params = ModelParams::init(&small_config(8), 21).unwrap();
    let meta = CheckpointMeta { seed: 21, epoch: 3, loss: Some(0.5), dt: 0.05 };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.nqpm");
    save_checkpoint(&params, &meta, &path).unwrap();
    let (loaded, meta2) = load_checkpoint(&path).unwrap();
    assert_eq!(meta2, meta);
    let rho = DensityMatrix::basis_projector(2, 1);
    let f = field(&sys, 0.6, 8);
    assert_eq!(loaded.forward(&rho, &f, 0.05).unwrap(), params.forward(&rho, &f, 0.05).unwrap());

    let bytes = params.checkpoint_bytes(&meta).unwrap();
    assert!(matches!(
        ModelParams::from_checkpoint_bytes(&bytes[..bytes.len() - 8]),
        Err(NqpError::Corrupt(_))
    ));
    let mut bumped = bytes.clone();
    bumped[4] = 2;
    assert!(matches!(
        ModelParams::from_checkpoint_bytes(&bumped),
        Err(NqpError::Version { found: 2, expected: 1 })
    ));
    let mut bad_magic = bytes;
    bad_magic[..4].copy_from_slice(b"NQPD");
    assert!(matches!(ModelParams::from_checkpoint_bytes(&bad_magic), Err(NqpError::Corrupt(_))));
}

#[test]
fn rollout_over_one_window_is_forward() {
    let sys = spin_boson();
    let params = ModelParams::init(&small_config(10), 8).unwrap();
    let rho = DensityMatrix::basis_projector(2, 0);
    let forms = [FieldForm::Periodic { omega: 0.6 }];
    let prop = NeuralPropagator { params: &params, dt: 0.05 };
    let rolled = rollout(&prop, &sys, &rho, &forms, 10, false).unwrap();
    let direct = params.forward(&rho, &field(&sys, 0.6, 10), 0.05).unwrap();
    assert_eq!(rolled, direct);

    let long = rollout(&prop, &sys, &rho, &forms, 27, true).unwrap();
    assert_eq!(long.states.len(), 28);
    assert_eq!(long.states[..11], direct.states[..]);
}

#[test]
fn rollout_with_exact_propagator_matches_single_shot() {
    let sys = spin_boson();
    let rho = DensityMatrix::basis_projector(2, 0);
    let forms = [FieldForm::Periodic { omega: 0.37 }];
    let exact = ExactPropagator { window: TimeGrid::new(0.05, 40).unwrap() };
    let rolled = rollout(&exact, &sys, &rho, &forms, 330, false).unwrap();
    let single = propagate(&sys, &forms, TimeGrid::new(0.05, 330).unwrap(), &rho).unwrap();
    for (a, b) in rolled.states.iter().zip(&single.states) {
        for (x, y) in a.0.iter().zip(b.0.iter()) {
            assert!((x - y).norm() < 1e-12);
        }
    }
}
