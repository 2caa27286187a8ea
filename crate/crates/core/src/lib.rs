//! Spectral simulator for Lyapunov feedback stabilization of the bilinear
//! Schrödinger equation
//!
//! ```text
//! i ż = (-Δ + V) z + u(z) Q z,   z = 0 on the boundary of (a, b)
//! ```
//!
//! The operator `A = -Δ + V` is discretized by second-order finite
//! differences, the dynamics are Galerkin-truncated to the lowest `K`
//! eigenmodes of `A` and propagated by a unitary Strang splitting.

pub mod conditions;
pub mod error;
pub mod experiment;
pub mod feedback;
pub mod integrator;
pub mod operators;
pub mod spectral;
pub mod tridiag;

pub use conditions::{check_conditions, GenericityReport, Verdict};
pub use error::{Error, Result};
pub use experiment::{
    execute, expand_sweep, run, run_into, sweep, sweep_into, ExperimentSpec, RunOutcome, RunSummary,
    SweepReport, SweepRow, SPEC_KEYS,
};
pub use feedback::{
    alpha_star, distance_to_target, feedback, feedback_tilde, lyapunov, FeedbackParams,
    TargetDistance,
};
pub use integrator::{
    evolve_closed_loop, evolve_open_loop, step, IntegratorConfig, TrajectoryRecord,
    TrajectoryRow, TrajectorySummary, UEval,
};
pub use operators::{apply_a, project_p1, ControlOperator, QGradients};
pub use spectral::{Grid, Potential, SobolevNorms, SpectralBasis, State};

pub use num_complex::Complex64;

/// Formats a double with 17 significant digits (round-trip exact).
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}
