mod common;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use romkit::synth_fom::{build_fom, random_control, simulate_episode, FomConfig, FomSystem};
use romkit::RomError;

fn chain(n_nodes: usize, kappa: f64, alpha: f64, beta: f64) -> FomConfig {
    FomConfig {
        n_nodes,
        mass_per_node: 1.0,
        linear_stiffness: 1.0,
        cubic_stiffness: kappa,
        rayleigh_alpha: alpha,
        rayleigh_beta: beta,
        input_nodes: vec![1],
        output_nodes: (0..n_nodes).collect(),
        dt: 1e-3,
        n_steps: 10,
        seed: 0,
    }
}

fn potential_reference(fom: &FomSystem, q: &DVector<f64>) -> f64 {
    // U = ½ k Σ (q_{i+1} − q_i)² + κ/4 Σ (q_{i+1} − q_i)⁴ with fixed walls
    let n = q.len();
    let k = fom.config.linear_stiffness;
    let kappa = fom.config.cubic_stiffness;
    let mut padded = vec![0.0; n + 2];
    padded[1..=n].copy_from_slice(q.as_slice());
    padded
        .windows(2)
        .map(|w| {
            let d = w[1] - w[0];
            0.5 * k * d * d + 0.25 * kappa * d.powi(4)
        })
        .sum()
}

#[test]
fn potential_matches_independent_sum() {
    let fom = build_fom(&chain(7, 3.0, 0.0, 0.0)).unwrap();
    let mut rng = common::rng(11);
    for _ in 0..20 {
        let q = DVector::from_fn(7, |_, _| rng.random_range(-1.0..1.0));
        let a = fom.potential(&q);
        let b = potential_reference(&fom, &q);
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn gradient_matches_central_differences() {
    let fom = build_fom(&chain(5, 1.0, 0.0, 0.0)).unwrap();
    let mut rng = common::rng(3);
    for _ in 0..100 {
        let q = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let g = fom.potential_gradient(&q);
        let h = 1e-5;
        let fd = DVector::from_fn(5, |i, _| {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[i] += h;
            qm[i] -= h;
            (potential_reference(&fom, &qp) - potential_reference(&fom, &qm)) / (2.0 * h)
        });
        assert!((&g - &fd).norm() <= 1e-6 * g.norm().max(1e-12), "{g} vs {fd}");
    }
}

#[test]
fn linear_free_response_matches_modal_solution() {
    let cfg = chain(6, 0.0, 0.1, 0.02);
    let fom = build_fom(&cfg).unwrap();
    let n = 6;
    let dt = 1e-4;
    let steps = 5001;
    let mut rng = common::rng(5);
    let q0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let zero_input = DMatrix::zeros(1, steps);
    let ep = simulate_episode(&fom, &zero_input, &q0, &DVector::zeros(n), dt, steps, "modal").unwrap();

    // unit masses: modes of K_lin, each a damped oscillator
    let eig = fom.stiffness_matrix().symmetric_eigen();
    let mut exact = DMatrix::zeros(n, steps);
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        let phi = eig.eigenvectors.column(i);
        let eta0 = phi.dot(&q0);
        let zeta2 = cfg.rayleigh_alpha + cfg.rayleigh_beta * lam; // 2ζω
        let omega = lam.sqrt();
        let decay = zeta2 / 2.0;
        let wd = (omega * omega - decay * decay).sqrt();
        for j in 0..steps {
            let t = j as f64 * dt;
            let eta = eta0 * (-decay * t).exp() * ((wd * t).cos() + decay / wd * (wd * t).sin());
            let mut col = exact.column_mut(j);
            col.axpy(eta, &phi, 1.0);
        }
    }
    let err = common::rel_fro(&ep.q, &exact);
    assert!(err <= 1e-4, "relative error {err:e}");
}

#[test]
fn unforced_linear_energy_never_increases() {
    let mut cfg = chain(20, 0.0, 0.05, 0.01);
    cfg.input_nodes = vec![3];
    let fom = build_fom(&cfg).unwrap();
    let mut rng = common::rng(9);
    let q0 = DVector::from_fn(20, |_, _| rng.random_range(-1.0..1.0));
    let v0 = DVector::from_fn(20, |_, _| rng.random_range(-1.0..1.0));
    let ep = simulate_episode(&fom, &DMatrix::zeros(1, 400), &q0, &v0, 0.05, 400, "e").unwrap();
    let qdot = ep.qdot.as_ref().unwrap();
    let energies: Vec<f64> = (0..400)
        .map(|k| {
            let q = ep.q.column(k).into_owned();
            let v = qdot.column(k).into_owned();
            0.5 * v.dot(&v) + 0.5 * q.dot(&(fom.stiffness_matrix() * &q))
        })
        .collect();
    for w in energies.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} > {}", w[1], w[0]);
    }
    assert!(energies[399] < 0.5 * energies[0]);
}

#[test]
fn zero_state_and_input_stay_zero() {
    let fom = build_fom(&FomConfig::default()).unwrap();
    let n = fom.n();
    let ep = simulate_episode(
        &fom,
        &DMatrix::zeros(fom.m(), 50),
        &DVector::zeros(n),
        &DVector::zeros(n),
        1e-3,
        50,
        "rest",
    )
    .unwrap();
    assert_eq!(ep.q.amax(), 0.0);
    assert_eq!(ep.y.amax(), 0.0);
}

#[test]
fn simulation_is_bitwise_deterministic() {
    let cfg = FomConfig::default();
    let fom = build_fom(&cfg).unwrap();
    let n = fom.n();
    let run = || {
        let u = random_control(7, fom.m(), 300, 10.0, 50).unwrap();
        simulate_episode(&fom, &u, &DVector::zeros(n), &DVector::zeros(n), cfg.dt, 300, "d").unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
}

#[test]
fn one_step_force_balance_and_input_support() {
    let mut cfg = chain(9, 2.0, 0.1, 0.01);
    cfg.input_nodes = vec![4];
    let fom = build_fom(&cfg).unwrap();
    let dt = 0.01;
    let u = DMatrix::from_element(1, 2, 0.7);
    let ep = simulate_episode(&fom, &u, &DVector::zeros(9), &DVector::zeros(9), dt, 2, "one").unwrap();
    let q1 = ep.q.column(1).into_owned();
    let v1 = ep.qdot.as_ref().unwrap().column(1).into_owned();

    let force = fom.input_matrix() * u.column(0);
    let support: Vec<usize> = (0..9).filter(|&i| force[i] != 0.0).collect();
    assert_eq!(support, vec![4]);

    let m = fom.mass_matrix();
    let c = fom.damping_matrix();
    let residual = &m * &v1 / dt + &c * &v1 + fom.potential_gradient(&q1) - &force;
    assert!(residual.norm() <= 1e-8 * force.norm(), "residual {:e}", residual.norm());
    assert!((&q1 - &v1 * dt).norm() <= 1e-15);
}

#[test]
fn random_control_properties() {
    let zero = random_control(1, 3, 100, 0.0, 10).unwrap();
    assert_eq!(zero.amax(), 0.0);
    let a = random_control(1, 3, 100, 2.0, 10).unwrap();
    let b = random_control(1, 3, 100, 2.0, 10).unwrap();
    let c = random_control(2, 3, 100, 2.0, 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.amax() <= 2.0);
    for k in 0..100 {
        if k % 10 != 0 {
            assert_eq!(a.column(k), a.column(k - 1));
        }
    }
    assert!(matches!(random_control(1, 3, 100, 1.0, 0), Err(RomError::InvalidConfig(_))));
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = FomConfig::default();
    cfg.n_steps = 0;
    assert!(matches!(build_fom(&cfg), Err(RomError::InvalidConfig(_))));
    let mut cfg = FomConfig::default();
    cfg.input_nodes = vec![150];
    assert!(matches!(build_fom(&cfg), Err(RomError::InvalidConfig(_))));
    let mut cfg = FomConfig::default();
    cfg.mass_per_node = 0.0;
    assert!(matches!(build_fom(&cfg), Err(RomError::InvalidConfig(_))));
}
