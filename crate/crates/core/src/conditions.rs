//! Audit of the genericity assumptions on `(V, Q)`: every excited mode couples
//! to the ground state through `Q`, and no transition frequency out of the
//! ground state is shared with another pair of modes.
//!
//! Only the retained modes `1..=K` are checked.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::ControlOperator;
use crate::spectral::SpectralBasis;

pub const DEFAULT_EPS_COUPLING: f64 = 1e-8;
pub const DEFAULT_EPS_GAP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

/// `|<Q e_1, e_j>| <= eps_coupling`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingViolation {
    pub j: usize,
    pub value: f64,
}

/// `|(λ_1 - λ_j) - (λ_p - λ_q)| <= eps_gap (1 + |λ_1 - λ_j|)` with `{1, j} != {p, q}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceViolation {
    pub j: usize,
    pub p: usize,
    pub q: usize,
    pub mismatch: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenericityReport {
    pub verdict: Verdict,
    pub eps_coupling: f64,
    pub eps_gap: f64,
    pub coupling_violations: Vec<CouplingViolation>,
    pub resonance_violations: Vec<ResonanceViolation>,
    pub k_modes: usize,
    pub scope: String,
}

impl GenericityReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// True when the unordered pairs `{1, j}` and `{p, q}` coincide.
pub fn is_trivial_pair(j: usize, p: usize, q: usize) -> bool {
    (p == 1 && q == j) || (p == j && q == 1)
}

/// Relative resonance test shared by every search strategy.
#[inline]
pub fn resonance_mismatch(eigenvalues: &[f64], j: usize, p: usize, q: usize, eps_gap: f64) -> Option<f64> {
    let target = eigenvalues[0] - eigenvalues[j - 1];
    let mismatch = target - (eigenvalues[p - 1] - eigenvalues[q - 1]);
    (mismatch.abs() <= eps_gap * (1.0 + target.abs())).then_some(mismatch)
}

pub fn check_conditions(
    basis: &SpectralBasis,
    control: &ControlOperator,
    eps_coupling: f64,
    eps_gap: f64,
) -> Result<GenericityReport> {
    if !(eps_coupling > 0.0 && eps_gap > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "thresholds must be positive (eps_coupling = {eps_coupling}, eps_gap = {eps_gap})"
        )));
    }
    let k = basis.k_modes();
    if control.k_modes() != k {
        return Err(Error::DimensionMismatch {
            what: "control operator modes",
            expected: k,
            got: control.k_modes(),
        });
    }

    let coupling_violations = (2..=k)
        .filter_map(|j| {
            let value = control.element(1, j);
            (value.abs() <= eps_coupling).then_some(CouplingViolation { j, value })
        })
        .collect::<Vec<_>>();

    let lam = basis.eigenvalues();
    let mut gaps: Vec<(f64, usize, usize)> = Vec::with_capacity(k * k);
    for p in 1..=k {
        for q in 1..=k {
            gaps.push((lam[p - 1] - lam[q - 1], p, q));
        }
    }
    gaps.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut resonance_violations = Vec::new();
    for j in 2..=k {
        let target = lam[0] - lam[j - 1];
        // widened window, then the exact predicate
        let tol = 2.0 * eps_gap * (1.0 + target.abs());
        let start = gaps.partition_point(|g| g.0 < target - tol);
        let end = gaps.partition_point(|g| g.0 <= target + tol);
        let mut found: Vec<ResonanceViolation> = gaps[start..end]
            .iter()
            .filter(|&&(_, p, q)| !is_trivial_pair(j, p, q))
            .filter_map(|&(_, p, q)| {
                resonance_mismatch(lam, j, p, q, eps_gap).map(|mismatch| ResonanceViolation {
                    j,
                    p,
                    q,
                    mismatch,
                })
            })
            .collect();
        found.sort_by_key(|v| (v.p, v.q));
        resonance_violations.extend(found);
    }

    let verdict = if coupling_violations.is_empty() && resonance_violations.is_empty() {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(GenericityReport {
        verdict,
        eps_coupling,
        eps_gap,
        coupling_violations,
        resonance_violations,
        k_modes: k,
        scope: format!("audit covers the {k} retained modes only; higher modes are not checked"),
    })
}
