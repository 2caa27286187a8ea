//! Strang splitting for `i ż = A z + u Q z` in the truncated eigenbasis.
//!
//! One step is `exp(-iΛ dt/2) · exp(-i u dt Q) · exp(-iΛ dt/2)`. The free
//! factor is diagonal and the control factor goes through the precomputed
//! eigendecomposition of `Q`, so every factor is unitary.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::{self, FeedbackParams};
use crate::operators::ControlOperator;
use crate::spectral::{SpectralBasis, State};

/// A step may raise `V` by at most this times `dt` before a closed-loop run aborts.
pub const ABORT_INCREASE_PER_DT: f64 = 1e-6;
/// Increases above this times `dt` are counted as monotonicity violations.
pub const MONOTONICITY_TOL_PER_DT: f64 = 1e-8;

/// Where the feedback is evaluated inside a closed-loop step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UEval {
    /// `u(z_n)` from the state at the start of the step.
    StartOfStep,
    /// After the first free half-step, `u` is predicted there and then
    /// re-evaluated at the midpoint of the control sub-step.
    #[default]
    HalfStepMidpoint,
}

impl std::str::FromStr for UEval {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "start_of_step" => Ok(UEval::StartOfStep),
            "half_step_midpoint" => Ok(UEval::HalfStepMidpoint),
            other => Err(Error::Spec(format!(
                "unknown u_eval '{other}' (expected start_of_step or half_step_midpoint)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_final: f64,
    pub record_stride: usize,
    pub u_eval: UEval,
}

impl IntegratorConfig {
    pub fn new(dt: f64, t_final: f64, record_stride: usize, u_eval: UEval) -> Result<Self> {
        let cfg = Self {
            dt,
            t_final,
            record_stride,
            u_eval,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "t_final must be > 0, got {}",
                self.t_final
            )));
        }
        if self.dt > self.t_final {
            return Err(Error::InvalidParameter(format!(
                "dt = {} exceeds t_final = {}",
                self.dt, self.t_final
            )));
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidParameter("record_stride must be >= 1".into()));
        }
        Ok(())
    }

    /// `round(t_final / dt)`; the run ends at `n_steps * dt`.
    pub fn n_steps(&self) -> usize {
        ((self.t_final / self.dt).round() as usize).max(1)
    }

    /// Warns when `dt max|λ_k| > π`, i.e. the top retained mode rotates by
    /// more than half a turn per step.
    pub fn resolution_warning(&self, basis: &SpectralBasis) -> Option<String> {
        let lam_max = basis.eigenvalues().iter().fold(0.0f64, |m, l| m.max(l.abs()));
        let phase = self.dt * lam_max;
        (phase > std::f64::consts::PI).then(|| {
            format!("dt * max|lambda_k| = {phase:.3} > pi; top modes are under-resolved in time")
        })
    }
}

/// `exp(iφ) - 1`, nudged by a few ulps so that `|1 + w|² - 1 = 2 Re w + |w|²`
/// is as close to zero as floating point allows. The free phase is applied as
/// `c + c w`, so repeated application neither drifts in modulus nor in angle.
fn phase_increment(phi: f64) -> Complex64 {
    fn two_prod(a: f64, b: f64) -> (f64, f64) {
        let p = a * b;
        (p, a.mul_add(b, -p))
    }
    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }
    fn modulus_err(w: Complex64) -> f64 {
        let (rr, rr_lo) = two_prod(w.re, w.re);
        let (ii, ii_lo) = two_prod(w.im, w.im);
        let (s1, e1) = two_sum(2.0 * w.re, rr);
        let (s2, e2) = two_sum(s1, ii);
        (s2 + (e1 + e2 + rr_lo + ii_lo)).abs()
    }
    fn nudge(x: f64, k: i64) -> f64 {
        let mut v = x;
        for _ in 0..k.unsigned_abs() {
            v = if k > 0 { v.next_up() } else { v.next_down() };
        }
        v
    }
    let w0 = crate::operators::expm1_i(phi);
    let mut best = (modulus_err(w0), w0);
    for dr in -3..=3 {
        for di in -3..=3 {
            let w = Complex64::new(nudge(w0.re, dr), nudge(w0.im, di));
            let err = modulus_err(w);
            if err < best.0 {
                best = (err, w);
            }
        }
    }
    best.1
}

/// Reusable per-`dt` propagation state.
struct Stepper<'a> {
    basis: &'a SpectralBasis,
    control: &'a ControlOperator,
    dt: f64,
    half_increments: Vec<Complex64>,
    mid: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl<'a> Stepper<'a> {
    fn new(basis: &'a SpectralBasis, control: &'a ControlOperator, dt: f64) -> Result<Self> {
        if control.k_modes() != basis.k_modes() {
            return Err(Error::DimensionMismatch {
                what: "control operator modes",
                expected: basis.k_modes(),
                got: control.k_modes(),
            });
        }
        let k = basis.k_modes();
        Ok(Self {
            basis,
            control,
            dt,
            half_increments: basis
                .eigenvalues()
                .iter()
                .map(|l| phase_increment(-0.5 * l * dt))
                .collect(),
            mid: vec![Complex64::new(0.0, 0.0); k],
            scratch: vec![Complex64::new(0.0, 0.0); k],
        })
    }

    fn free_half(&self, c: &mut [Complex64]) {
        for (ck, w) in c.iter_mut().zip(&self.half_increments) {
            *ck += *ck * w;
        }
    }

    fn step_prescribed(&self, c: &mut [Complex64], u: f64) {
        self.free_half(c);
        self.control.propagate(u * self.dt, c);
        self.free_half(c);
    }

    /// Advances `c` one closed-loop step and returns the control that was applied.
    fn step_closed(&mut self, c: &mut [Complex64], params: &FeedbackParams, policy: UEval) -> f64 {
        let lam = self.basis.eigenvalues();
        match policy {
            UEval::StartOfStep => {
                let u = feedback::feedback_raw(c, lam, self.control, params, &mut self.scratch);
                self.step_prescribed(c, u);
                u
            }
            UEval::HalfStepMidpoint => {
                self.free_half(c);
                let u_pred = feedback::feedback_raw(c, lam, self.control, params, &mut self.scratch);
                self.mid.copy_from_slice(c);
                self.control.propagate(0.5 * u_pred * self.dt, &mut self.mid);
                let u = feedback::feedback_raw(&self.mid, lam, self.control, params, &mut self.scratch);
                self.control.propagate(u * self.dt, c);
                self.free_half(c);
                u
            }
        }
    }
}

/// One Strang step with a prescribed control value.
pub fn step(
    state: &State,
    u_value: f64,
    dt: f64,
    basis: &SpectralBasis,
    control: &ControlOperator,
) -> Result<State> {
    if !u_value.is_finite() {
        return Err(Error::NonFiniteControl(u_value));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
    }
    if state.len() != basis.k_modes() {
        return Err(Error::DimensionMismatch {
            what: "state coefficients",
            expected: basis.k_modes(),
            got: state.len(),
        });
    }
    let stepper = Stepper::new(basis, control, dt)?;
    let mut c = state.coeffs().to_vec();
    stepper.step_prescribed(&mut c, u_value);
    Ok(State::new(c))
}

/// One recorded sample. `u` is the control applied on the step that starts
/// at `t` (the last row repeats the final step's control); `cum_u2` is
/// `Σ u_n² dt` over the steps before `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub u: f64,
    pub lyapunov: f64,
    pub norm: f64,
    pub overlap: f64,
    pub h1_dist: f64,
    pub h2_proxy: f64,
    pub cum_u2: f64,
}

/// Per-step statistics, accumulated over every step (not only recorded ones).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub n_steps: usize,
    pub dt: f64,
    pub initial_lyapunov: f64,
    pub final_lyapunov: f64,
    pub final_overlap: f64,
    pub max_norm_drift: f64,
    pub monotonicity_violations: usize,
    /// `max_n |(V_{n+1} - V_n)/dt + (2/δ) u_n²|`
    pub dissipation_residual: f64,
    /// `Σ u_n² dt`
    pub cum_u2: f64,
    /// Largest single-step increase of `V` (negative when `V` always decreased).
    pub max_lyapunov_increase: f64,
}

#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub rows: Vec<TrajectoryRow>,
    /// Control applied on every step, for replay.
    pub controls: Vec<f64>,
    pub final_state: State,
    pub stats: RunStats,
    pub warnings: Vec<String>,
}

pub const CSV_HEADER: &str = "t,u,lyapunov,norm,overlap,h1_dist,h2_proxy,cum_u2";

impl TrajectoryRecord {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.rows.len() * 200);
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let fields = [r.t, r.u, r.lyapunov, r.norm, r.overlap, r.h1_dist, r.h2_proxy, r.cum_u2];
            let line: Vec<String> = fields.iter().map(|v| crate::fmt_f64(*v)).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv_string().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn summary(&self, params: &FeedbackParams, basis: &SpectralBasis) -> TrajectorySummary {
        TrajectorySummary {
            t_final: self.stats.n_steps as f64 * self.stats.dt,
            dt: self.stats.dt,
            alpha: params.alpha(),
            delta: params.delta(),
            k: basis.k_modes(),
            m_points: basis.m_points(),
            final_overlap: self.stats.final_overlap,
            final_lyapunov: self.stats.final_lyapunov,
            max_norm_drift: self.stats.max_norm_drift,
            monotonicity_violations: self.stats.monotonicity_violations,
            initial_lyapunov: self.stats.initial_lyapunov,
            cum_u2: self.stats.cum_u2,
            dissipation_residual: self.stats.dissipation_residual,
            warnings: self.warnings.clone(),
        }
    }
}

/// JSON summary of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub t_final: f64,
    pub dt: f64,
    pub alpha: f64,
    pub delta: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub m_points: usize,
    pub final_overlap: f64,
    pub final_lyapunov: f64,
    pub max_norm_drift: f64,
    pub monotonicity_violations: usize,
    pub initial_lyapunov: f64,
    pub cum_u2: f64,
    pub dissipation_residual: f64,
    pub warnings: Vec<String>,
}

enum Drive<'s> {
    Closed(UEval),
    Open(&'s [f64]),
}

fn evolve(
    state0: &State,
    params: &FeedbackParams,
    config: &IntegratorConfig,
    basis: &SpectralBasis,
    control: &ControlOperator,
    drive: Drive<'_>,
) -> Result<TrajectoryRecord> {
    config.validate()?;
    if state0.len() != basis.k_modes() {
        return Err(Error::DimensionMismatch {
            what: "state coefficients",
            expected: basis.k_modes(),
            got: state0.len(),
        });
    }
    state0.check_on_sphere(feedback::SPHERE_TOL)?;
    let n_steps = config.n_steps();
    if let Drive::Open(samples) = drive {
        if samples.len() < n_steps {
            return Err(Error::ControlTooShort {
                needed: n_steps,
                got: samples.len(),
            });
        }
        if let Some(bad) = samples[..n_steps].iter().find(|u| !u.is_finite()) {
            return Err(Error::NonFiniteControl(*bad));
        }
    }
    let closed = matches!(drive, Drive::Closed(_));

    let dt = config.dt;
    let lam = basis.eigenvalues();
    let alpha = params.alpha();
    let two_over_delta = 2.0 / params.delta();
    let mut stepper = Stepper::new(basis, control, dt)?;
    let mut c = state0.coeffs().to_vec();

    let sample = |c: &[Complex64], t: f64, u: f64, cum_u2: f64, lyap: f64| {
        let norm = c.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let dist = feedback::distance_raw(c, lam);
        let h2 = c
            .iter()
            .zip(lam)
            .map(|(v, l)| (1.0 + l * l) * v.norm_sqr())
            .sum::<f64>()
            .sqrt();
        TrajectoryRow {
            t,
            u,
            lyapunov: lyap,
            norm,
            overlap: dist.overlap,
            h1_dist: dist.h1_dist,
            h2_proxy: h2,
            cum_u2,
        }
    };

    let initial_lyapunov = feedback::lyapunov_raw(&c, lam, alpha);
    let mut lyap = initial_lyapunov;
    let mut cum_u2 = 0.0;
    let mut controls = Vec::with_capacity(n_steps);
    let mut rows = Vec::with_capacity(n_steps / config.record_stride + 2);
    let mut pending: Option<TrajectoryRow> = Some(sample(&c, 0.0, f64::NAN, 0.0, lyap));
    let mut max_norm_drift = (state0.norm() - 1.0).abs();
    let mut monotonicity_violations = 0;
    let mut dissipation_residual = 0.0f64;
    let mut max_increase = f64::NEG_INFINITY;

    for n in 0..n_steps {
        let u = match drive {
            Drive::Closed(policy) => stepper.step_closed(&mut c, params, policy),
            Drive::Open(samples) => {
                stepper.step_prescribed(&mut c, samples[n]);
                samples[n]
            }
        };
        if !u.is_finite() {
            return Err(Error::NonFiniteControl(u));
        }
        if let Some(mut row) = pending.take() {
            row.u = u;
            rows.push(row);
        }
        controls.push(u);
        let new_lyap = feedback::lyapunov_raw(&c, lam, alpha);
        let increase = new_lyap - lyap;
        max_increase = max_increase.max(increase);
        if increase > MONOTONICITY_TOL_PER_DT * dt {
            monotonicity_violations += 1;
        }
        if closed && increase > ABORT_INCREASE_PER_DT * dt {
            return Err(Error::LyapunovIncrease {
                step: n,
                t: (n + 1) as f64 * dt,
                before: lyap,
                after: new_lyap,
            });
        }
        dissipation_residual = dissipation_residual.max((increase / dt + two_over_delta * u * u).abs());
        cum_u2 += u * u * dt;
        lyap = new_lyap;
        let norm = c.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        max_norm_drift = max_norm_drift.max((norm - 1.0).abs());

        let done = n + 1;
        if done % config.record_stride == 0 || done == n_steps {
            // u is filled in by the next step, or by the final fix-up below
            pending = Some(sample(&c, done as f64 * dt, f64::NAN, cum_u2, lyap));
        }
    }
    if let Some(mut row) = pending.take() {
        row.u = *controls.last().expect("n_steps >= 1");
        rows.push(row);
    }

    let final_overlap = c[0].norm_sqr();
    let warnings = config.resolution_warning(basis).into_iter().collect();
    Ok(TrajectoryRecord {
        rows,
        controls,
        final_state: State::new(c),
        stats: RunStats {
            n_steps,
            dt,
            initial_lyapunov,
            final_lyapunov: lyap,
            final_overlap,
            max_norm_drift,
            monotonicity_violations,
            dissipation_residual,
            cum_u2,
            max_lyapunov_increase: max_increase,
        },
        warnings,
    })
}

/// Integrates the closed loop `i ż = A z + u(z) Q z`.
///
/// Aborts with [`Error::LyapunovIncrease`] if a step raises `V` by more than
/// `1e-6 dt`, which indicates an integration or sign error.
pub fn evolve_closed_loop(
    state0: &State,
    params: &FeedbackParams,
    config: &IntegratorConfig,
    basis: &SpectralBasis,
    control: &ControlOperator,
) -> Result<TrajectoryRecord> {
    evolve(state0, params, config, basis, control, Drive::Closed(config.u_eval))
}

/// Integrates with a prescribed piecewise-constant control (`u_samples[n]` on
/// step `n`). `params` only weights the recorded Lyapunov values.
pub fn evolve_open_loop(
    state0: &State,
    u_samples: &[f64],
    params: &FeedbackParams,
    config: &IntegratorConfig,
    basis: &SpectralBasis,
    control: &ControlOperator,
) -> Result<TrajectoryRecord> {
    evolve(state0, params, config, basis, control, Drive::Open(u_samples))
}
