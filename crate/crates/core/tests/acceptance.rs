//! End-to-end acceptance checks. Runs without the libtest harness and prints
//! one PASS/FAIL line per criterion; exits non-zero if any fails.

mod common;

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use schrostab::{
    alpha_star, check_conditions, evolve_closed_loop, execute, feedback, feedback_tilde, run_into,
    sweep_into, Complex64, ExperimentSpec, FeedbackParams, Grid, IntegratorConfig, Potential,
    SpectralBasis, State, TrajectoryRecord, UEval,
};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn load(name: &str, overrides: &[&str]) -> ExperimentSpec {
    let owned: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    ExperimentSpec::load(&common::specs_dir().join(name), &owned).expect("spec loads")
}

/// Lyapunov function from its definition, for cross-checking recorded values.
fn v_oracle(c: &[Complex64], lam: &[f64], alpha: f64) -> f64 {
    let tail: f64 = (1..c.len()).map(|k| lam[k] * lam[k] * c[k].norm_sqr()).sum();
    alpha * tail + 1.0 - c[0].norm_sqr()
}

fn eigensolver() -> Check {
    let grid = Grid::new(0.0, PI, 4000).unwrap();
    let started = Instant::now();
    let basis = SpectralBasis::build(grid, &Potential::zero(&grid), 10).unwrap();
    let elapsed = started.elapsed();
    let h = grid.h();
    let mut worst = 0.0f64;
    for k in 1..=10 {
        let lam = basis.lambda(k);
        let kf = k as f64;
        worst = worst.max((lam / (kf * kf) - 1.0).abs());
        // exact eigenvalues of the discrete operator
        let discrete = 4.0 / (h * h) * (0.5 * kf * h).sin().powi(2);
        ensure(
            (lam - discrete).abs() <= 1e-9 * discrete,
            format!("lambda_{k} = {lam} but the discrete spectrum gives {discrete}"),
        )?;
    }
    ensure(worst <= 1e-4, format!("max |lambda_k/k^2 - 1| = {worst:.3e} > 1e-4"))?;
    ensure(elapsed < Duration::from_secs(10), format!("took {elapsed:?}"))?;
    Ok(format!("max |lambda_k/k^2 - 1| = {worst:.3e}, {:.2} s", elapsed.as_secs_f64()))
}

fn generic_run(k: usize, delta: f64, dt: f64, t_final: f64, stride: usize) -> (SpectralBasis, FeedbackParams, TrajectoryRecord) {
    let (basis, control) = common::generic(4000, k);
    let z0 = common::two_mode(k);
    let alpha = 0.5 * alpha_star(&z0, &basis).unwrap();
    let params = FeedbackParams::new(alpha, delta).unwrap();
    let cfg = IntegratorConfig::new(dt, t_final, stride, UEval::HalfStepMidpoint).unwrap();
    let rec = evolve_closed_loop(&z0, &params, &cfg, &basis, &control).unwrap();
    (basis, params, rec)
}

fn unitarity() -> Check {
    let (_, _, rec) = generic_run(16, 1.0, 1e-3, 100.0, 1);
    ensure(rec.stats.n_steps == 100_000, format!("{} steps", rec.stats.n_steps))?;
    let from_rows = rec.rows.iter().map(|r| (r.norm - 1.0).abs()).fold(0.0, f64::max);
    let final_norm: f64 = rec.final_state.coeffs().iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let drift = rec.stats.max_norm_drift.max(from_rows).max((final_norm - 1.0).abs());
    ensure(drift <= 1e-11, format!("max |‖z‖ - 1| = {drift:.3e} > 1e-11"))?;
    Ok(format!("max |‖z‖ - 1| = {drift:.3e} over {} steps", rec.stats.n_steps))
}

/// `max_n |(V_{n+1} - V_n)/dt + (2/δ) u_n²|` and the count of increases above
/// `1e-8 dt`, recomputed from the per-step rows.
fn residual_from_rows(rec: &TrajectoryRecord, dt: f64, delta: f64) -> (f64, usize) {
    let mut r = 0.0f64;
    let mut violations = 0;
    for w in rec.rows.windows(2) {
        let dv = w[1].lyapunov - w[0].lyapunov;
        r = r.max((dv / dt + 2.0 * w[0].u * w[0].u / delta).abs());
        if dv > 1e-8 * dt {
            violations += 1;
        }
    }
    (r, violations)
}

fn dissipation() -> Check {
    let delta = 10.0;
    let dts = [1e-3, 5e-4, 2.5e-4];
    let mut res = Vec::new();
    for &dt in &dts {
        let (basis, params, rec) = generic_run(16, delta, dt, 5.0, 1);
        let (r, violations) = residual_from_rows(&rec, dt, delta);
        ensure(
            (r - rec.stats.dissipation_residual).abs() <= 1e-6 * r,
            format!("dt = {dt}: recomputed residual {r:e} vs reported {:e}", rec.stats.dissipation_residual),
        )?;
        let v_end = v_oracle(rec.final_state.coeffs(), basis.eigenvalues(), params.alpha());
        ensure(
            (v_end - rec.rows.last().unwrap().lyapunov).abs() <= 1e-12,
            "recorded V disagrees with its definition",
        )?;
        ensure(violations == 0, format!("dt = {dt}: {violations} steps raise V by more than 1e-8 dt"))?;
        ensure(rec.stats.monotonicity_violations == 0, "integrator counted monotonicity violations")?;
        res.push(r);
    }
    let ratios: Vec<f64> = res.windows(2).map(|w| w[0] / w[1]).collect();
    for (i, q) in ratios.iter().enumerate() {
        ensure(
            (3.0..=5.0).contains(q),
            format!("r({})/r({}) = {q:.4} outside [3, 5]", dts[i], dts[i + 1]),
        )?;
    }
    Ok(format!(
        "delta = {delta}: r = {:.3e}, {:.3e}, {:.3e}; ratios {:.4}, {:.4}; V non-increasing",
        res[0], res[1], res[2], ratios[0], ratios[1]
    ))
}

fn control_energy() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let spec = load("sweep_alpha.toml", &[]);
    let report = sweep_into(&spec, dir.path()).map_err(|e| e.to_string())?;
    let expected_rows = spec.sweep.alpha_fraction.len() * spec.sweep.dt.len();
    ensure(report.rows.len() == expected_rows, format!("{} rows, expected {expected_rows}", report.rows.len()))?;
    let mut worst = f64::NEG_INFINITY;
    for row in &report.rows {
        let s = row.summary.as_ref().ok_or_else(|| format!("run {} failed: {}", row.index, row.verdict))?;
        let t = &s.trajectory;
        let spent = 2.0 / t.delta * t.cum_u2;
        let budget = t.initial_lyapunov - t.final_lyapunov + 1e-6;
        ensure(spent <= budget, format!("run {}: (2/delta) Σu²dt = {spent} > {budget}", row.index))?;
        ensure(t.monotonicity_violations == 0, format!("run {}: V increased", row.index))?;
        worst = worst.max(spent - (t.initial_lyapunov - t.final_lyapunov));
    }
    Ok(format!("{} runs, max excess (2/delta)Σu²dt - ΔV = {worst:.3e}", report.rows.len()))
}

fn invariance() -> Check {
    let (basis, control) = common::generic(4000, 16);
    let params = FeedbackParams::new(1e-4, 1.0).unwrap();
    let cfg = IntegratorConfig::new(1e-3, 10.0, 1, UEval::HalfStepMidpoint).unwrap();
    let mut worst_overlap = 0.0f64;
    let mut worst_u = 0.0f64;
    for theta in [0.0, PI / 3.0, PI] {
        let z0 = State::basis_vector(16, 1).scaled(Complex64::from_polar(1.0, theta));
        let rec = evolve_closed_loop(&z0, &params, &cfg, &basis, &control).unwrap();
        for r in &rec.rows {
            worst_overlap = worst_overlap.max(1.0 - r.overlap);
        }
        for &u in &rec.controls {
            worst_u = worst_u.max(u.abs());
        }
    }
    ensure(worst_overlap <= 1e-10, format!("overlap dropped by {worst_overlap:e}"))?;
    ensure(worst_u <= 1e-12, format!("|u| reached {worst_u:e}"))?;
    Ok(format!("max 1 - overlap = {worst_overlap:.3e}, max |u| = {worst_u:.3e}"))
}

fn formula_equivalence() -> Check {
    let k = 16;
    let (basis, control) = common::generic(4000, k);
    let grads = control.gradients(&basis);
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let coeffs: Vec<Complex64> = (0..k)
            .map(|_| Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
            .collect();
        let z = State::normalized_from(coeffs).unwrap();
        let log_alpha: f64 = -7.0 + 4.0 * rand::Rng::random::<f64>(&mut rng);
        let params = FeedbackParams::new(10f64.powf(log_alpha), 1.0).unwrap();
        let u = feedback(&z, &basis, &control, &params).unwrap();
        let ut = feedback_tilde(&z, &basis, &control, &params, &grads).unwrap();
        worst = worst.max((u - ut).abs() / (1.0 + u.abs()));
    }
    ensure(worst <= 1e-8, format!("max |u - ũ|/(1 + |u|) = {worst:e}"))?;
    Ok(format!("1000 states, max |u - ũ|/(1 + |u|) = {worst:.3e}"))
}

fn checker_ground_truth() -> Check {
    let (basis, control) = common::free_particle(19_999, 8);
    let report = check_conditions(&basis, &control, 1e-8, 1e-6).unwrap();
    ensure(!report.passed(), "V = 0, Q = x was not flagged")?;
    let couplings: Vec<usize> = report.coupling_violations.iter().map(|v| v.j).collect();
    ensure(couplings.contains(&3), format!("coupling violations {couplings:?} lack j = 3"))?;
    let triples: Vec<(usize, usize, usize)> =
        report.resonance_violations.iter().map(|v| (v.j, v.p, v.q)).collect();
    ensure(triples.contains(&(4, 7, 8)), format!("resonances {triples:?} lack (4, 7, 8)"))?;

    let mut compared = 0;
    for k in 2..=8 {
        for (basis, control) in [common::free_particle(19_999, k), common::generic(2000, k)] {
            for eps in [1e-6, 1e-3, 1e-2, 5e-2] {
                let r = check_conditions(&basis, &control, 1e-8, eps).unwrap();
                let got: Vec<_> = r.resonance_violations.iter().map(|v| (v.j, v.p, v.q)).collect();
                let want = common::brute_force_resonances(basis.eigenvalues(), eps);
                ensure(got == want, format!("K = {k}, eps = {eps}: {got:?} vs brute force {want:?}"))?;
                let q = control.q_matrix();
                let want_c: Vec<usize> = (2..=k).filter(|&j| q[(0, j - 1)].abs() <= 1e-8).collect();
                let got_c: Vec<usize> = r.coupling_violations.iter().map(|v| v.j).collect();
                ensure(got_c == want_c, format!("K = {k}: couplings {got_c:?} vs {want_c:?}"))?;
                compared += 1;
            }
        }
    }
    Ok(format!(
        "couplings {couplings:?}, {} resonances incl. (4,7,8); {compared} brute-force comparisons agree",
        triples.len()
    ))
}

fn convergence() -> Check {
    let spec = load("generic.toml", &[]);
    let t_max = spec.integrator.t_final;
    let started = Instant::now();
    let base = execute(&spec).map_err(|e| e.to_string())?;
    let s = &base.summary.trajectory;
    ensure(base.summary.verdict == "generic", "fixture is not certified generic")?;
    ensure(
        (s.alpha - 0.5 * base.summary.alpha_star.unwrap()).abs() <= 1e-15 * s.alpha,
        "alpha is not 0.5 alpha*",
    )?;
    let reached = base.record.rows.iter().find(|r| r.overlap >= 0.99).map(|r| r.t);
    let t_hit = reached.ok_or_else(|| format!("overlap never reached 0.99 (final {})", s.final_overlap))?;
    ensure(s.final_overlap >= 0.99, format!("final overlap {}", s.final_overlap))?;
    let decrease = (s.initial_lyapunov - s.final_lyapunov) / s.initial_lyapunov;
    ensure(decrease >= 0.99, format!("V decreased by {:.2}% only", 100.0 * decrease))?;
    ensure(s.monotonicity_violations == 0, "V increased")?;

    let refined = execute(&load("generic.toml", &["grid.k_modes=32"])).map_err(|e| e.to_string())?;
    let diff = (refined.summary.trajectory.final_overlap - s.final_overlap).abs();
    ensure(diff <= 1e-3, format!("K = 16 vs 32 final overlap differs by {diff:e}"))?;
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(120), format!("took {elapsed:?}"))?;
    Ok(format!(
        "overlap >= 0.99 at t = {t_hit:.1} (T_max = {t_max}), final {:.6}; V down {:.3}%; |ΔK overlap| = {diff:.1e}; {:.1} s",
        s.final_overlap,
        100.0 * decrease,
        elapsed.as_secs_f64()
    ))
}

fn determinism() -> Check {
    let mut checked = Vec::new();
    for (name, overrides) in [
        ("generic.toml", vec!["integrator.t_final=5", "integrator.record_stride=10"]),
        (
            "generic.toml",
            vec!["initial.kind=random", "initial.re=[]", "initial.n_modes=6", "seed=11", "feedback.alpha=1e-5", "integrator.t_final=2"],
        ),
    ] {
        let spec = load(name, &overrides);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_into(&spec, a.path()).map_err(|e| e.to_string())?;
        run_into(&spec, b.path()).map_err(|e| e.to_string())?;
        for file in ["trajectory.csv", "basis.csv", "summary.json", "conditions.json"] {
            let x = std::fs::read(a.path().join(file)).unwrap();
            let y = std::fs::read(b.path().join(file)).unwrap();
            ensure(x == y, format!("{file} differs between identical runs"))?;
            checked.push(file);
        }
    }
    // sweep tables: identical except for the wall-clock column
    let spec = load("sweep_alpha.toml", &["integrator.t_final=1", "grid.m_points=800"]);
    let strip = |dir: &std::path::Path| -> Vec<String> {
        std::fs::read_to_string(dir.join("sweep.csv"))
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    sweep_into(&spec, a.path()).map_err(|e| e.to_string())?;
    sweep_into(&spec, b.path()).map_err(|e| e.to_string())?;
    ensure(strip(a.path()) == strip(b.path()), "sweep.csv differs beyond wall_time_s")?;
    for i in 0..6 {
        let f = format!("run_{i:03}/trajectory.csv");
        ensure(
            std::fs::read(a.path().join(&f)).unwrap() == std::fs::read(b.path().join(&f)).unwrap(),
            format!("{f} differs"),
        )?;
    }
    Ok(format!("{} artifact pairs and 6 sweep runs byte-identical", checked.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("eigensolver oracle", eigensolver),
        ("unitarity", unitarity),
        ("dissipation identity", dissipation),
        ("control energy", control_energy),
        ("target invariance", invariance),
        ("formula equivalence", formula_equivalence),
        ("condition checker ground truth", checker_ground_truth),
        ("convergence", convergence),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail}) [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail}) [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
