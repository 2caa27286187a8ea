//! Lyapunov function, explicit feedback law and target-set diagnostics.
//!
//! Inner products follow `<f, g> = ∫ f conj(g)`, so in eigenbasis coefficients
//! `<f, g> = Σ f_k conj(g_k)`.
//!
//! ```text
//! V(z) = α ||A P_1 z||² + 1 - |<z, e_1>|²
//! u(z) = -δ Im[ α <A P_1 (Q z), A P_1 z> - <Q z, e_1><e_1, z> ]
//! ```
//!
//! Along the closed loop `i ż = A z + u(z) Q z` this gives `dV/dt = -(2/δ) u²`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{ControlOperator, QGradients};
use crate::spectral::{SpectralBasis, State};

/// Tolerance on `| ||z|| - 1 |` for arguments that must lie on the unit sphere.
pub const SPHERE_TOL: f64 = 1e-9;

/// Gains of the Lyapunov function (`alpha`) and of the feedback (`delta`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackParams {
    alpha: f64,
    delta: f64,
}

impl FeedbackParams {
    pub fn new(alpha: f64, delta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must be > 0, got {alpha}")));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!("delta must be > 0, got {delta}")));
        }
        Ok(Self { alpha, delta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

fn check_modes(state: &State, basis: &SpectralBasis) -> Result<()> {
    if state.len() != basis.k_modes() {
        return Err(Error::DimensionMismatch {
            what: "state coefficients",
            expected: basis.k_modes(),
            got: state.len(),
        });
    }
    Ok(())
}

pub fn lyapunov(state: &State, basis: &SpectralBasis, params: &FeedbackParams) -> Result<f64> {
    check_modes(state, basis)?;
    state.check_on_sphere(SPHERE_TOL)?;
    Ok(lyapunov_raw(state.coeffs(), basis.eigenvalues(), params.alpha))
}

pub(crate) fn lyapunov_raw(c: &[Complex64], lam: &[f64], alpha: f64) -> f64 {
    let weighted: f64 = c
        .iter()
        .zip(lam)
        .skip(1)
        .map(|(ck, l)| l * l * ck.norm_sqr())
        .sum();
    alpha * weighted + 1.0 - c[0].norm_sqr()
}

/// Spectral form of the feedback law (the production path).
pub fn feedback(
    state: &State,
    basis: &SpectralBasis,
    control: &ControlOperator,
    params: &FeedbackParams,
) -> Result<f64> {
    check_modes(state, basis)?;
    state.check_on_sphere(SPHERE_TOL)?;
    let mut scratch = vec![Complex64::new(0.0, 0.0); state.len()];
    Ok(feedback_raw(state.coeffs(), basis.eigenvalues(), control, params, &mut scratch))
}

/// `scratch` receives `Q c`.
pub(crate) fn feedback_raw(
    c: &[Complex64],
    lam: &[f64],
    control: &ControlOperator,
    params: &FeedbackParams,
    scratch: &mut [Complex64],
) -> f64 {
    control.apply_into(c, scratch);
    let mut excited = Complex64::new(0.0, 0.0);
    for ((dk, ck), l) in scratch.iter().zip(c).zip(lam).skip(1) {
        excited += dk * ck.conj() * (l * l);
    }
    let ground = scratch[0] * c[0].conj();
    -params.delta * (params.alpha * excited - ground).im
}

/// Rewritten feedback: the `<Q A z, A z>` term (which is real) is dropped and
/// `A(Q z)` is expanded with the commutator `[A, Q] z = -2 ∇Q·∇z - z ΔQ`,
/// evaluated on the grid. Exists to cross-check [`feedback`].
pub fn feedback_tilde(
    state: &State,
    basis: &SpectralBasis,
    control: &ControlOperator,
    params: &FeedbackParams,
    grads: &QGradients,
) -> Result<f64> {
    check_modes(state, basis)?;
    state.check_on_sphere(SPHERE_TOL)?;
    let c = state.coeffs();
    let lam = basis.eigenvalues();
    let alpha = params.alpha;
    let zero = Complex64::new(0.0, 0.0);

    let d = control.apply(c);
    let az: Vec<Complex64> = c.iter().zip(lam).map(|(ck, l)| ck * l).collect();

    // <α A P_1(Q z), A(-<z, e_1> e_1)>
    let ground_part: Vec<Complex64> = (0..c.len())
        .map(|k| if k == 0 { -c[0] * lam[0] } else { zero })
        .collect();
    let t1: Complex64 = d
        .iter()
        .zip(lam)
        .zip(&ground_part)
        .skip(1)
        .map(|((dk, l), g)| dk * l * g.conj())
        .sum::<Complex64>()
        * alpha;

    // <α A(-<Q z, e_1> e_1), A z>
    let t2 = -d[0] * lam[0] * az[0].conj() * alpha;

    // <α (-2 ∇Q·∇z - z ΔQ), A z> on the grid
    let z_grid = basis.to_grid(state)?;
    let az_grid = basis.to_grid(&State::new(az))?;
    let comm = grads.commutator(&z_grid);
    let t3 = basis.grid_inner(&comm, &az_grid) * alpha;

    // -<Q z, e_1><e_1, z>
    let t4 = -d[0] * c[0].conj();

    Ok(-params.delta * (t1 + t2 + t3 + t4).im)
}

/// Phase-aligned distances to the target circle `{c e_1 : |c| = 1}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetDistance {
    pub l2_dist: f64,
    pub h1_dist: f64,
    /// `|<z, e_1>|²`
    pub overlap: f64,
    /// False when `c_1 = 0`; the optimal phase is then taken as 0.
    pub phase_defined: bool,
}

pub fn distance_to_target(state: &State, basis: &SpectralBasis) -> Result<TargetDistance> {
    check_modes(state, basis)?;
    state.check_on_sphere(SPHERE_TOL)?;
    Ok(distance_raw(state.coeffs(), basis.eigenvalues()))
}

pub(crate) fn distance_raw(c: &[Complex64], lam: &[f64]) -> TargetDistance {
    let c1 = c[0];
    let modulus = c1.norm();
    let phase_defined = modulus > 0.0;
    let overlap = c1.norm_sqr();
    let l2_dist = (2.0 - 2.0 * modulus).max(0.0).sqrt();
    // |c_1 - e^{i arg c_1}| = 1 - |c_1|, or |0 - 1| = 1 when the phase is undefined
    let ground = if phase_defined { 1.0 - modulus } else { 1.0 };
    let mut h1 = (1.0 + lam[0].abs()) * ground * ground;
    for (ck, l) in c.iter().zip(lam).skip(1) {
        h1 += (1.0 + l.abs()) * ck.norm_sqr();
    }
    TargetDistance {
        l2_dist,
        h1_dist: h1.sqrt(),
        overlap,
        phase_defined,
    }
}

/// Supremum of the `alpha` values for which `V(z_0) < 1`:
/// `|c_1|² / Σ_{k≥2} λ_k² |c_k|²`. Callers normally use a fraction of it.
pub fn alpha_star(state0: &State, basis: &SpectralBasis) -> Result<f64> {
    check_modes(state0, basis)?;
    state0.check_on_sphere(SPHERE_TOL)?;
    let c = state0.coeffs();
    let ground = c[0].norm_sqr();
    if ground == 0.0 {
        return Err(Error::AlphaStar("<z0, e1> = 0, so V(z0) < 1 cannot hold for any alpha"));
    }
    let denom: f64 = c
        .iter()
        .zip(basis.eigenvalues())
        .skip(1)
        .map(|(ck, l)| l * l * ck.norm_sqr())
        .sum();
    if denom == 0.0 {
        return Err(Error::AlphaStar("initial state already lies on the target circle"));
    }
    Ok(ground / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{Grid, Potential};
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn fixture(k: usize) -> (SpectralBasis, ControlOperator) {
        let grid = Grid::new(0.0, 1.0, 600).unwrap();
        let v = Potential::from_fn(&grid, |x| 20.0 * (-50.0 * (x - 0.4f64).powi(2)).exp()).unwrap();
        let basis = SpectralBasis::build(grid, &v, k).unwrap();
        let q = ControlOperator::assemble_with_boundary(&grid.nodes(), (0.0, 1.0), &basis).unwrap();
        (basis, q)
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn lyapunov_single_modes() {
        let (basis, _) = fixture(6);
        let p = FeedbackParams::new(0.01, 1.0).unwrap();
        assert_eq!(lyapunov(&State::basis_vector(6, 1), &basis, &p).unwrap(), 0.0);
        let l2 = basis.lambda(2);
        let v2 = lyapunov(&State::basis_vector(6, 2), &basis, &p).unwrap();
        assert!((v2 - (0.01 * l2 * l2 + 1.0)).abs() < 1e-12 * v2);
        let mut mix = vec![c(0.0, 0.0); 6];
        mix[0] = c(FRAC_1_SQRT_2, 0.0);
        mix[1] = c(FRAC_1_SQRT_2, 0.0);
        let vm = lyapunov(&State::new(mix), &basis, &p).unwrap();
        assert!((vm - (0.01 * l2 * l2 / 2.0 + 0.5)).abs() < 1e-12 * vm);
    }

    #[test]
    fn requires_unit_norm() {
        let (basis, q) = fixture(4);
        let p = FeedbackParams::new(1.0, 1.0).unwrap();
        let s = State::basis_vector(4, 1).scaled(c(1.1, 0.0));
        assert!(matches!(lyapunov(&s, &basis, &p), Err(Error::NotNormalized { .. })));
        assert!(feedback(&s, &basis, &q, &p).is_err());
        assert!(distance_to_target(&s, &basis).is_err());
    }

    #[test]
    fn feedback_vanishes_on_target_circle() {
        let (basis, q) = fixture(8);
        let p = FeedbackParams::new(0.3, 2.0).unwrap();
        for theta in [0.0, 0.7, PI / 3.0, PI, 5.0] {
            let s = State::basis_vector(8, 1).scaled(Complex64::from_polar(1.0, theta));
            let u = feedback(&s, &basis, &q, &p).unwrap();
            assert!(u.abs() <= 1e-12, "theta={theta}: u={u}");
        }
    }

    #[test]
    fn tilde_form_agrees_on_structured_states() {
        let (basis, q) = fixture(8);
        let grads = q.gradients(&basis);
        let p = FeedbackParams::new(1e-3, 1.0).unwrap();
        let e1 = State::basis_vector(8, 1);
        assert!(feedback_tilde(&e1, &basis, &q, &p, &grads).unwrap().abs() < 1e-10);
        let e2 = State::basis_vector(8, 2);
        let u = feedback(&e2, &basis, &q, &p).unwrap();
        let ut = feedback_tilde(&e2, &basis, &q, &p, &grads).unwrap();
        assert!((u - ut).abs() <= 1e-8 * (1.0 + u.abs()));
        let mix = State::normalized_from(vec![c(1.0, 0.0), c(0.0, 1.0), c(0.3, -0.2), c(0.0, 0.0), c(0.1, 0.1), c(0.0, 0.0), c(0.0, 0.05), c(0.02, 0.0)]).unwrap();
        let u = feedback(&mix, &basis, &q, &p).unwrap();
        let ut = feedback_tilde(&mix, &basis, &q, &p, &grads).unwrap();
        assert!(u.abs() > 1e-3);
        assert!((u - ut).abs() <= 1e-8 * (1.0 + u.abs()), "{u} vs {ut}");
    }

    #[test]
    fn distances() {
        let (basis, _) = fixture(5);
        let d = distance_to_target(&State::basis_vector(5, 1), &basis).unwrap();
        assert_eq!((d.l2_dist, d.h1_dist, d.overlap), (0.0, 0.0, 1.0));
        let d = distance_to_target(&State::basis_vector(5, 1).scaled(c(0.0, 1.0)), &basis).unwrap();
        assert_eq!((d.l2_dist, d.h1_dist, d.overlap), (0.0, 0.0, 1.0));
        let d = distance_to_target(&State::basis_vector(5, 2), &basis).unwrap();
        assert!((d.l2_dist - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(d.overlap, 0.0);
        assert!(!d.phase_defined);
        let want = ((1.0 + basis.lambda(1).abs()) + (1.0 + basis.lambda(2).abs())).sqrt();
        assert!((d.h1_dist - want).abs() < 1e-12 * want);
    }

    #[test]
    fn alpha_star_cases() {
        let (basis, _) = fixture(5);
        let s = State::new(vec![c(FRAC_1_SQRT_2, 0.0), c(FRAC_1_SQRT_2, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        let a = alpha_star(&s, &basis).unwrap();
        let l2 = basis.lambda(2);
        assert!((a - 1.0 / (l2 * l2)).abs() < 1e-12 * a);
        assert!(alpha_star(&State::basis_vector(5, 2), &basis).is_err());
        assert!(alpha_star(&State::basis_vector(5, 1), &basis).is_err());
        let s = State::new(vec![c(0.99f64.sqrt(), 0.0), c(0.0, 0.0), c(0.0, 0.1), c(0.0, 0.0), c(0.0, 0.0)]);
        let a = alpha_star(&s, &basis).unwrap();
        let l3 = basis.lambda(3);
        assert!((a - 0.99 / (0.01 * l3 * l3)).abs() < 1e-10 * a);
    }

    #[test]
    fn params_validation() {
        assert!(FeedbackParams::new(0.0, 1.0).is_err());
        assert!(FeedbackParams::new(1.0, -1.0).is_err());
        assert!(FeedbackParams::new(f64::NAN, 1.0).is_err());
    }
}
