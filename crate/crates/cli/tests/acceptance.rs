//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the test
//! harness so the lines are always printed; exits nonzero if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use nalgebra::{Complex, DMatrix, DVector};
use num::{BigInt, BigRational, ToPrimitive, Zero};
use rand::Rng;
use romkit::dmdc::fit_dmdc;
use romkit::era_okid::{prepare_era, EraSettings};
use romkit::lopinf::{infer_lagrangian, SolverOptions};
use romkit::metrics::{ErrorReport, Method, Protocol, Regime, TrainedRom, Trainer};
use romkit::pod::{compute_basis, RankSelector};
use romkit::synth_fom::random_control;
use romkit::tdiff::{central_diff, fornberg_weights, DerivativeSet, FdOrder};
use romkit_cli::commands::{load_episode, load_rom, repro, repro_r_values, Experiment};
use romkit_cli::config::ExperimentConfig;

const SPD_FLOOR: f64 = 1e-8;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Stiffness and damping of every LOpInf fit made by the suite.
#[derive(Default)]
struct LopinfFits(Vec<(String, DMatrix<f64>, DMatrix<f64>)>);

impl LopinfFits {
    fn add_rom(&mut self, label: String, rom: &TrainedRom) {
        if let TrainedRom::Lagrangian { rom, .. } = rom {
            self.0.push((label, rom.khat.clone(), rom.chat.clone()));
        }
    }
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    common::rel_fro(a, b)
}

fn criterion_1(fits: &mut LopinfFits) -> Check {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = common::rng(1000 + seed);
        let (r, m, dt, steps) = (4, 2, 0.02, 600);
        let k = common::spd(&mut rng, r, 0.5, 5.0);
        let c = common::spd(&mut rng, r, 0.5, 5.0);
        let b = common::uniform(&mut rng, r, m);
        let amps: Vec<(f64, f64, f64)> = (0..3 * m)
            .map(|_| (rng.random_range(0.2..1.0), rng.random_range(0.3..4.0), rng.random_range(0.0..6.0)))
            .collect();
        let input = |t: f64| {
            DVector::from_fn(m, |i, _| amps[3 * i..3 * i + 3].iter().map(|(a, w, p)| a * (w * t + p).sin()).sum())
        };
        let q0 = DVector::from_fn(r, |_, _| rng.random_range(-1.0..1.0));
        let v0 = DVector::from_fn(r, |_, _| rng.random_range(-1.0..1.0));
        let (q, v) = common::rk4_second_order(&k, &c, &b, input, &q0, &v0, dt, steps, 4);
        let u = DMatrix::from_fn(m, steps, |i, j| input(j as f64 * dt)[i]);
        // Accelerations straight from the equations of motion.
        let qdd = &b * &u - &c * &v - &k * &q;
        let data = DerivativeSet {
            qhat_trim: q,
            qhat_dot: v,
            qhat_ddot: qdd,
            kept_indices: (0..steps).collect(),
            dt,
        };
        let (ops, _) = infer_lagrangian(&data, &u, &SolverOptions::default()).map_err(|e| format!("seed {seed}: {e}"))?;
        let err = rel(&ops.khat, &k).max(rel(&ops.chat, &c)).max(rel(&ops.bhat, &b));
        ensure(err <= 1e-5, || format!("seed {seed}: relative operator error {err:.2e}"))?;
        worst = worst.max(err);
        fits.0.push((format!("exact-recovery seed {seed}"), ops.khat, ops.chat));
    }
    Ok(format!("20/20 seeds, worst relative error {worst:.2e}"))
}

/// Greedy nearest matching of two eigenvalue multisets; largest distance.
fn match_spectra(mut a: Vec<Complex<f64>>, b: &[Complex<f64>]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut worst = 0.0f64;
    for z in b {
        let (idx, d) = a
            .iter()
            .enumerate()
            .map(|(i, w)| (i, (w - z).norm()))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        worst = worst.max(d);
        a.swap_remove(idx);
    }
    worst
}

fn criterion_2() -> Check {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = common::rng(2000 + seed);
        let (n, m) = (8, 2);
        let (a, spectrum) = common::stable_matrix_with_spectrum(&mut rng, n, 0.3, 0.97);
        let b = common::uniform(&mut rng, n, m);
        let u = common::uniform(&mut rng, m, 200);
        let x0 = common::uniform(&mut rng, n, 1).column(0).into_owned();
        let (x, _) = common::simulate_lti(&a, &b, &DMatrix::identity(n, n), None, &x0, &u);
        let rom = fit_dmdc(&x, &u, RankSelector::Rank(n + m), RankSelector::Rank(n), 1.0)
            .map_err(|e| format!("seed {seed}: {e}"))?;
        let eig: Vec<Complex<f64>> = rom.a.complex_eigenvalues().iter().copied().collect();
        let dist = match_spectra(eig, &spectrum);
        ensure(dist <= 1e-8, || format!("seed {seed}: eigenvalue mismatch {dist:.2e}"))?;
        worst = worst.max(dist);
    }
    Ok(format!("20/20 seeds, worst eigenvalue distance {worst:.2e}"))
}

fn transfer(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    e: &DMatrix<f64>,
    d: Option<&DMatrix<f64>>,
    z: Complex<f64>,
) -> DMatrix<Complex<f64>> {
    let c = |m: &DMatrix<f64>| m.map(|x| Complex::new(x, 0.0));
    let n = a.nrows();
    let lhs = DMatrix::<Complex<f64>>::identity(n, n) * z - c(a);
    let g = c(e) * lhs.lu().solve(&c(b)).expect("z is not an eigenvalue");
    match d {
        Some(d) => g + c(d),
        None => g,
    }
}

fn criterion_3() -> Check {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = common::rng(3000 + seed);
        let (n, m, p, k) = (3, 1, 2, 3000);
        let a = common::stable_matrix(&mut rng, n, 0.4, 0.9);
        let b = common::uniform(&mut rng, n, m);
        let e = common::uniform(&mut rng, p, n);
        let d = common::uniform(&mut rng, p, m);
        let u = common::uniform(&mut rng, m, k);
        let (_, y) = common::simulate_lti(&a, &b, &e, Some(&d), &DVector::zeros(n), &u);
        let settings = EraSettings {
            q_obs: 100,
            ..EraSettings::default()
        };
        let rom = prepare_era(&u, &y, 1.0, &settings)
            .and_then(|model| model.realize(3))
            .map_err(|e| format!("seed {seed}: {e}"))?;
        for _ in 0..20 {
            let w: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let z = Complex::from_polar(1.0, w);
            let g = transfer(&a, &b, &e, Some(&d), z);
            let ghat = transfer(&rom.a, &rom.b, &rom.e, rom.d.as_ref(), z);
            let err = (&ghat - &g).norm() / g.norm();
            ensure(err <= 1e-6, || format!("seed {seed}, ω {w:.3}: relative error {err:.2e}"))?;
            worst = worst.max(err);
        }
    }
    Ok(format!("20/20 seeds x 20 frequencies, worst relative error {worst:.2e}"))
}

/// Stencil weights from the moment conditions, solved exactly in rationals.
fn vandermonde_weights(offsets: &[i64], d: usize) -> Vec<f64> {
    let n = offsets.len();
    let int = |v: i64| BigRational::from_integer(BigInt::from(v));
    let mut a: Vec<Vec<BigRational>> = (0..n)
        .map(|p| {
            let mut row: Vec<BigRational> = offsets.iter().map(|&x| int(x).pow(p as i32)).collect();
            row.push(int(if p == d { (1..=d as i64).product() } else { 0 }));
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).find(|&r| !a[r][col].is_zero()).expect("Vandermonde is nonsingular");
        a.swap(col, pivot);
        let lead = a[col][col].clone();
        for v in a[col].iter_mut() {
            *v = &*v / &lead;
        }
        let pivot_row = a[col].clone();
        for (r, row) in a.iter_mut().enumerate() {
            if r != col && !row[col].is_zero() {
                let f = row[col].clone();
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v = &*v - &f * pv;
                }
            }
        }
    }
    a.iter().map(|row| row[n].to_f64().unwrap()).collect()
}

fn criterion_4() -> Check {
    let mut worst_w = 0.0f64;
    for order in [2usize, 4, 6, 8] {
        let h = (order / 2) as i64;
        let central: Vec<i64> = (-h..=h).collect();
        let forward: Vec<i64> = (0..=order as i64).collect();
        for offsets in [&central, &forward] {
            let as_f64: Vec<f64> = offsets.iter().map(|&x| x as f64).collect();
            let weights = fornberg_weights(0.0, &as_f64, 2);
            for (d, w) in weights.iter().enumerate() {
                let oracle = vandermonde_weights(offsets, d);
                let scale = oracle.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
                let dev = w.iter().zip(&oracle).fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs())) / scale;
                ensure(dev <= 1e-12, || format!("order {order}, derivative {d}: weight deviation {dev:.2e}"))?;
                worst_w = worst_w.max(dev);
            }
        }
    }
    // sin(ωt) sampled at dt is sin(t) sampled at ω·dt; ω = 50 lifts the
    // truncation error above roundoff so the order is observable.
    let omega = 50.0;
    let dts = [1e-2, 5e-3, 2.5e-3];
    let mut errs = Vec::new();
    for &dt in &dts {
        let k = (1.0 / dt) as usize + 1;
        let q = DMatrix::from_fn(1, k, |_, j| (omega * j as f64 * dt).sin());
        let d = central_diff(&q, dt, FdOrder::EIGHTH).map_err(|e| e.to_string())?;
        let (mut e1, mut e2) = (0.0f64, 0.0f64);
        for (j, &idx) in d.kept_indices.iter().enumerate() {
            let t = idx as f64 * dt;
            e1 = e1.max((d.qhat_dot[(0, j)] - omega * (omega * t).cos()).abs());
            e2 = e2.max((d.qhat_ddot[(0, j)] + omega * omega * (omega * t).sin()).abs());
        }
        errs.push((e1, e2));
    }
    let mut min_rate = f64::INFINITY;
    for w in errs.windows(2) {
        min_rate = min_rate.min((w[0].0 / w[1].0).log2()).min((w[0].1 / w[1].1).log2());
    }
    ensure(min_rate >= 7.5, || format!("observed order {min_rate:.2}"))?;
    Ok(format!("weights within {worst_w:.1e} of the exact solve, observed order ≥ {min_rate:.2}"))
}

fn criterion_5() -> Check {
    let mut rng = common::rng(5000);
    let mut worst = 0.0f64;
    for trial in 0..50 {
        let n = rng.random_range(2..=200);
        let k = rng.random_range(2..=400);
        let rank = n.min(k);
        let u = common::orthonormal(&mut rng, n, rank);
        let v = common::orthonormal(&mut rng, k, rank);
        let sigma: Vec<f64> = (0..rank).map(|i| 0.85f64.powi(i as i32) * rng.random_range(0.5..1.5)).collect();
        let q = &u * DMatrix::from_diagonal(&DVector::from_column_slice(&sigma)) * v.transpose();
        // Gram-matrix eigenvalues give σᵢ² without an SVD.
        let gram = if n <= k { &q * q.transpose() } else { q.transpose() * &q };
        let mut lambda: Vec<f64> = gram.symmetric_eigen().eigenvalues.iter().map(|x| x.max(0.0)).collect();
        lambda.sort_by(|a, b| b.total_cmp(a));
        let r = rng.random_range(1..=rank);
        let basis = compute_basis(&q, RankSelector::Rank(r)).map_err(|e| e.to_string())?;
        let err2 = (&q - &basis.v * basis.v.tr_mul(&q)).norm_squared();
        let tail: f64 = lambda[r..].iter().sum();
        let total: f64 = lambda.iter().sum();
        let dev = (err2 - tail).abs() / total;
        ensure(dev <= 1e-8, || format!("trial {trial} ({n}x{k}, r={r}): deviation {dev:.2e}"))?;
        worst = worst.max(dev);
    }
    Ok(format!("50 matrices, worst relative deviation {worst:.2e}"))
}

fn criterion_6(fits: &LopinfFits) -> Check {
    ensure(!fits.0.is_empty(), || "no LOpInf fits were made".into())?;
    for (label, k, c) in &fits.0 {
        for (name, op) in [("K", k), ("C", c)] {
            ensure(op == &op.transpose(), || format!("{label}: {name} is not symmetric"))?;
            let lmin = op.clone().symmetric_eigen().eigenvalues.min();
            ensure(lmin >= SPD_FLOOR, || format!("{label}: λ_min({name}) = {lmin:.3e}"))?;
        }
        let r = k.nrows();
        let mut companion = DMatrix::zeros(2 * r, 2 * r);
        companion.view_mut((0, r), (r, r)).fill_with_identity();
        companion.view_mut((r, 0), (r, r)).copy_from(&(-k));
        companion.view_mut((r, r), (r, r)).copy_from(&(-c));
        let max_re = companion.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        ensure(max_re < 0.0, || format!("{label}: companion eigenvalue with real part {max_re:.3e}"))?;
    }
    Ok(format!("{} of {} LOpInf fits structure-preserving", fits.0.len(), fits.0.len()))
}

fn config(root: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.paths.data_dir = root.join("data");
    cfg.paths.rom_dir = root.join("roms");
    cfg.paths.report_dir = root.join("reports");
    cfg
}

fn report(reports: &[ErrorReport], regime: Regime) -> Result<&ErrorReport, String> {
    reports
        .iter()
        .find(|r| r.regime == regime)
        .ok_or_else(|| format!("no {} report", regime.as_str()))
}

/// Refits every r of the LOpInf sweep so each fit enters the structure check.
fn record_sweep_fits(
    fits: &mut LopinfFits,
    label: &str,
    train: &[&romkit::SnapshotSet],
    cfg: &ExperimentConfig,
) -> Result<(), String> {
    let trainer = Trainer::prepare(Method::Lopinf, train, &cfg.method_settings()).map_err(|e| e.to_string())?;
    for r in repro_r_values(Method::Lopinf) {
        let rom = trainer.fit(r).map_err(|e| format!("{label} r={r}: {e}"))?;
        fits.add_rom(format!("{label} r={r}"), &rom);
    }
    Ok(())
}

fn criterion_7(root: &Path, fits: &mut LopinfFits) -> Check {
    let start = Instant::now();
    let cfg = config(root);
    let out = repro(&cfg, Experiment::Extrapolation).map_err(|e| e.to_string())?;
    let train = report(&out.reports, Regime::Train)?;
    let test = report(&out.reports, Regime::Test)?;
    let sweep = train.sweep.as_ref().ok_or("train report has no sweep")?;
    for method in Method::ALL {
        let points = sweep.get(&method).ok_or_else(|| format!("no sweep for {method}"))?;
        let rs: Vec<usize> = points.iter().map(|p| p.r).collect();
        ensure(rs == repro_r_values(method), || format!("{method} sweep covers r = {rs:?}"))?;
        ensure(points.iter().any(|p| p.train_error.is_some() && p.test_error.is_some()), || {
            format!("{method} sweep has no finite train/test point")
        })?;
    }
    let lop = train.per_method.get(&Method::Lopinf).ok_or("no LOpInf result")?;
    let train_err = lop.per_episode.values().next().copied().flatten().ok_or("LOpInf training rollout failed")?;
    ensure(train_err <= 1e-2, || format!("LOpInf training error {train_err:.3e} > 1e-2"))?;

    // Continue the best LOpInf ROM for ten training horizons under the same
    // input sequence extended in time.
    let episode = load_episode(&cfg, 1).map_err(|e| e.to_string())?;
    let train_len = 3 * episode.k() / 4;
    let (_, rom) = load_rom(&cfg.paths.rom_dir.join("extrapolation/lopinf")).map_err(|e| e.to_string())?;
    let horizon = 10 * train_len;
    let u = random_control(cfg.episode_seed(1), episode.m(), horizon, cfg.episodes.amplitude, cfg.episodes.hold_steps)
        .map_err(|e| e.to_string())?;
    ensure(u.columns(0, episode.k()) == episode.u, || "extended input does not extend the episode".into())?;
    let traj = rom.predict_with_input(&episode, &u, &cfg.method_settings()).map_err(|e| e.to_string())?;
    ensure(traj.yhat.ncols() == horizon && traj.yhat.iter().all(|x| x.is_finite()), || {
        "long rollout is not finite".into()
    })?;
    let elapsed = start.elapsed().as_secs_f64();
    ensure(elapsed < 300.0, || format!("took {elapsed:.0} s"))?;

    let training = Protocol::Extrapolation {
        episode: &episode,
        train_len,
    }
    .training_set()
    .map_err(|e| e.to_string())?;
    record_sweep_fits(fits, "extrapolation", &training.iter().collect::<Vec<_>>(), &cfg)?;

    let best = |m: Method| {
        test.per_method
            .get(&m)
            .map(|e| format!("{m} r={} {}", e.r, e.per_episode.values().next().copied().flatten().map_or("-".into(), |v| format!("{v:.2e}"))))
            .unwrap_or_else(|| format!("{m} none"))
    };
    Ok(format!(
        "LOpInf r={} train {train_err:.2e}, {horizon}-step rollout finite; test: {}, {}, {}; run {elapsed:.0} s",
        lop.r,
        best(Method::Lopinf),
        best(Method::Dmdc),
        best(Method::EraOkid)
    ))
}

fn criterion_8(root: &Path, fits: &mut LopinfFits) -> Check {
    let cfg = config(root);
    let out = repro(&cfg, Experiment::UnseenInputs).map_err(|e| e.to_string())?;
    let test = report(&out.reports, Regime::Test)?;
    let mut cells = 0;
    let mut means = Vec::new();
    for method in Method::ALL {
        let errs = test.per_method.get(&method).ok_or_else(|| format!("no {method} cells"))?;
        let eps: Vec<&String> = errs.per_episode.keys().collect();
        ensure(eps == ["ep3", "ep4", "ep5", "ep6"], || format!("{method} tested on {eps:?}"))?;
        let mut sum = 0.0;
        for (ep, e) in &errs.per_episode {
            let e = e.filter(|v| v.is_finite()).ok_or_else(|| format!("{method} {ep}: not finite"))?;
            sum += e;
            cells += 1;
        }
        means.push((sum / 4.0, method));
    }
    ensure(cells == 12, || format!("{cells} cells"))?;
    let episodes: Vec<_> = [1, 2].iter().map(|&i| load_episode(&cfg, i)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    record_sweep_fits(fits, "unseen inputs", &episodes.iter().collect::<Vec<_>>(), &cfg)?;
    means.sort_by(|a, b| a.0.total_cmp(&b.0));
    let order: Vec<String> = means.iter().map(|(e, m)| format!("{m} {e:.2e}")).collect();
    Ok(format!("12/12 finite; mean test error, best first: {}", order.join(" < ")))
}

fn criterion_9(first: &[(&Path, Experiment)]) -> Check {
    let mut compared = 0;
    for &(root, experiment) in first {
        let again = tempfile::tempdir().map_err(|e| e.to_string())?;
        repro(&config(again.path()), experiment).map_err(|e| e.to_string())?;
        for ext in ["json", "csv"] {
            let name = format!("reports/{}.{ext}", experiment.as_str());
            let a = std::fs::read(root.join(&name)).map_err(|e| e.to_string())?;
            let b = std::fs::read(again.path().join(&name)).map_err(|e| e.to_string())?;
            ensure(a == b, || format!("{name} differs between runs"))?;
            compared += 1;
        }
    }
    Ok(format!("{compared} report files byte-identical across reruns"))
}

fn run(results: &mut BTreeMap<u8, (bool, String, f64)>, id: u8, limit: Option<f64>, f: impl FnOnce() -> Check) {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    let (mut pass, mut detail) = match outcome {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    if let Some(limit) = limit {
        if secs >= limit {
            pass = false;
            detail = format!("{detail}; exceeded the {limit} s budget");
        }
    }
    results.insert(id, (pass, detail, secs));
}

fn main() {
    const NAMES: [&str; 9] = [
        "LOpInf exact recovery",
        "DMDc spectrum",
        "OKID/ERA realization",
        "FD weights and convergence",
        "POD truncation error",
        "LOpInf structure preservation",
        "extrapolation experiment",
        "unseen-input experiment",
        "repro determinism",
    ];
    let extrapolation = tempfile::tempdir().expect("temp dir");
    let unseen = tempfile::tempdir().expect("temp dir");
    let mut fits = LopinfFits::default();
    let mut results = BTreeMap::new();
    run(&mut results, 1, Some(10.0), || criterion_1(&mut fits));
    run(&mut results, 2, Some(5.0), criterion_2);
    run(&mut results, 3, Some(10.0), criterion_3);
    run(&mut results, 4, None, criterion_4);
    run(&mut results, 5, None, criterion_5);
    run(&mut results, 7, None, || criterion_7(extrapolation.path(), &mut fits));
    run(&mut results, 8, None, || criterion_8(unseen.path(), &mut fits));
    run(&mut results, 6, None, || criterion_6(&fits));
    run(&mut results, 9, None, || {
        criterion_9(&[
            (extrapolation.path(), Experiment::Extrapolation),
            (unseen.path(), Experiment::UnseenInputs),
        ])
    });

    let mut failed = 0;
    for (id, (pass, detail, secs)) in &results {
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {id} [{}] {}: {detail} ({secs:.2} s)",
            if *pass { "PASS" } else { "FAIL" },
            NAMES[*id as usize - 1]
        );
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
