//! Finite-difference discretization of A = -d²/dx² + V on an interval with
//! Dirichlet boundary conditions, its lowest eigenpairs, and transforms
//! between grid values and eigenbasis coefficients.
//!
//! All inner products use the quadrature `<f, g> = h Σ f_i conj(g_i)` over
//! interior nodes, which makes the discrete operator exactly self-adjoint.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tridiag::SymTridiagonal;

/// Uniform grid on `(a, b)` with `m_points` interior nodes `x_i = a + i h`, `i = 1..=m_points`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    a: f64,
    b: f64,
    m_points: usize,
    h: f64,
}

impl Grid {
    pub fn new(a: f64, b: f64, m_points: usize) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || b <= a {
            return Err(Error::InvalidParameter(format!(
                "grid interval must satisfy a < b, got ({a}, {b})"
            )));
        }
        if m_points == 0 {
            return Err(Error::InvalidParameter("m_points must be positive".into()));
        }
        let h = (b - a) / (m_points as f64 + 1.0);
        Ok(Self { a, b, m_points, h })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn m_points(&self) -> usize {
        self.m_points
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Interior node `i` (1-based, so `node(0) == a` and `node(m_points + 1) == b`).
    pub fn node(&self, i: usize) -> f64 {
        self.a + i as f64 * self.h
    }

    /// Interior nodes `x_1..x_m`.
    pub fn nodes(&self) -> Vec<f64> {
        (1..=self.m_points).map(|i| self.node(i)).collect()
    }

    /// Samples `f` at the interior nodes.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (1..=self.m_points).map(|i| f(self.node(i))).collect()
    }
}

/// Real potential sampled at the interior nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Potential {
    values: Vec<f64>,
}

impl Potential {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "potential has a non-finite value at node {}",
                i + 1
            )));
        }
        Ok(Self { values })
    }

    pub fn zero(grid: &Grid) -> Self {
        Self {
            values: vec![0.0; grid.m_points()],
        }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid.sample(f))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Eigenbasis coefficients `c_k = <z, e_k>` of a wavefunction.
///
/// Normalization is not enforced here; operations that require a point of the
/// unit sphere check it themselves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    coeffs: Vec<Complex64>,
}

impl State {
    pub fn new(coeffs: Vec<Complex64>) -> Self {
        Self { coeffs }
    }

    pub fn zeros(k_modes: usize) -> Self {
        Self {
            coeffs: vec![Complex64::new(0.0, 0.0); k_modes],
        }
    }

    /// The `k`-th eigenmode (1-based, so `basis_vector(n, 1)` is the ground state).
    pub fn basis_vector(k_modes: usize, k: usize) -> Self {
        assert!(k >= 1 && k <= k_modes, "mode index {k} out of 1..={k_modes}");
        let mut s = Self::zeros(k_modes);
        s.coeffs[k - 1] = Complex64::new(1.0, 0.0);
        s
    }

    /// Builds a normalized state from arbitrary (non-zero) coefficients.
    pub fn normalized_from(coeffs: Vec<Complex64>) -> Result<Self> {
        let s = Self::new(coeffs);
        let n = s.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::InvalidParameter(
                "cannot normalize a zero or non-finite state".into(),
            ));
        }
        Ok(s.scaled(Complex64::new(1.0 / n, 0.0)))
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    /// `<self, other> = Σ self_k conj(other_k)`.
    pub fn inner(&self, other: &State) -> Complex64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a * b.conj())
            .sum()
    }

    /// Fails unless `| ||z|| - 1 | <= tol`.
    pub fn check_on_sphere(&self, tol: f64) -> Result<()> {
        let n = self.norm();
        if (n - 1.0).abs() <= tol {
            Ok(())
        } else {
            Err(Error::NotNormalized { norm: n })
        }
    }
}

/// L² norm and the graph norms of A^{1/2} and A, used as H¹ / H² proxies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SobolevNorms {
    pub l2: f64,
    pub h1_proxy: f64,
    pub h2_proxy: f64,
}

/// Truncated eigenbasis of the discrete operator.
#[derive(Clone, Debug)]
pub struct SpectralBasis {
    grid: Grid,
    potential: Potential,
    eigenvalues: Vec<f64>,
    /// `m_points × k_modes`, column `k` holds `e_{k+1}` at the interior nodes.
    eigenvectors: DMatrix<f64>,
}

impl SpectralBasis {
    /// Builds the `k_modes` lowest eigenpairs of the tridiagonal matrix with
    /// diagonal `2/h² + V(x_i)` and off-diagonal `-1/h²`.
    pub fn build(grid: Grid, potential: &Potential, k_modes: usize) -> Result<Self> {
        let m = grid.m_points();
        if potential.len() != m {
            return Err(Error::DimensionMismatch {
                what: "potential samples",
                expected: m,
                got: potential.len(),
            });
        }
        if k_modes == 0 || k_modes > m {
            return Err(Error::InvalidParameter(format!(
                "k_modes must be in 1..={m}, got {k_modes}"
            )));
        }
        let op = Self::operator_matrix(&grid, potential)?;
        let (eigenvalues, vectors) = op.lowest_eigenpairs(k_modes)?;
        if k_modes >= 2 {
            let gap = eigenvalues[1] - eigenvalues[0];
            if gap <= 1e-12 * eigenvalues[0].abs().max(1.0) {
                return Err(Error::DegenerateGroundState { gap });
            }
        }
        // unit Euclidean -> unit discrete L²
        let scale = 1.0 / grid.h().sqrt();
        let mut eigenvectors = DMatrix::<f64>::zeros(m, k_modes);
        for (k, v) in vectors.iter().enumerate() {
            for (i, x) in v.iter().enumerate() {
                eigenvectors[(i, k)] = x * scale;
            }
        }
        Ok(Self {
            grid,
            potential: potential.clone(),
            eigenvalues,
            eigenvectors,
        })
    }

    /// The discrete operator as a symmetric tridiagonal matrix.
    pub fn operator_matrix(grid: &Grid, potential: &Potential) -> Result<SymTridiagonal> {
        let inv_h2 = 1.0 / (grid.h() * grid.h());
        let diag = potential.values().iter().map(|v| 2.0 * inv_h2 + v).collect();
        let off = vec![-inv_h2; grid.m_points().saturating_sub(1)];
        SymTridiagonal::new(diag, off)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn k_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn m_points(&self) -> usize {
        self.grid.m_points()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Eigenvalue of mode `k` (1-based).
    pub fn lambda(&self, k: usize) -> f64 {
        self.eigenvalues[k - 1]
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// Grid samples of mode `k` (1-based).
    pub fn mode(&self, k: usize) -> &[f64] {
        let m = self.m_points();
        &self.eigenvectors.as_slice()[(k - 1) * m..k * m]
    }

    /// Σ_k c_k e_k at the interior nodes.
    pub fn to_grid(&self, state: &State) -> Result<Vec<Complex64>> {
        self.check_len(state)?;
        let m = self.m_points();
        let mut out = vec![Complex64::new(0.0, 0.0); m];
        for (k, c) in state.coeffs().iter().enumerate() {
            if *c == Complex64::new(0.0, 0.0) {
                continue;
            }
            for (o, e) in out.iter_mut().zip(self.mode(k + 1)) {
                *o += c * e;
            }
        }
        Ok(out)
    }

    /// Truncated projection `c_k = h Σ_i f(x_i) e_k(x_i)`.
    pub fn from_grid(&self, values: &[Complex64]) -> Result<State> {
        if values.len() != self.m_points() {
            return Err(Error::DimensionMismatch {
                what: "grid values",
                expected: self.m_points(),
                got: values.len(),
            });
        }
        let h = self.grid.h();
        let coeffs = (1..=self.k_modes())
            .map(|k| {
                let s: Complex64 = values.iter().zip(self.mode(k)).map(|(f, e)| f * e).sum();
                s * h
            })
            .collect();
        Ok(State::new(coeffs))
    }

    /// Real-valued variant of [`from_grid`](Self::from_grid).
    pub fn project_real(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.m_points() {
            return Err(Error::DimensionMismatch {
                what: "grid values",
                expected: self.m_points(),
                got: values.len(),
            });
        }
        let h = self.grid.h();
        Ok((1..=self.k_modes())
            .map(|k| h * values.iter().zip(self.mode(k)).map(|(f, e)| f * e).sum::<f64>())
            .collect())
    }

    /// Discrete L² inner product of grid functions, `h Σ f conj(g)`.
    pub fn grid_inner(&self, f: &[Complex64], g: &[Complex64]) -> Complex64 {
        f.iter().zip(g).map(|(a, b)| a * b.conj()).sum::<Complex64>() * self.grid.h()
    }

    pub fn sobolev_norms(&self, state: &State) -> SobolevNorms {
        let mut l2 = 0.0;
        let mut h1 = 0.0;
        let mut h2 = 0.0;
        for (c, lam) in state.coeffs().iter().zip(&self.eigenvalues) {
            let p = c.norm_sqr();
            l2 += p;
            h1 += (1.0 + lam.abs()) * p;
            h2 += (1.0 + lam * lam) * p;
        }
        SobolevNorms {
            l2: l2.sqrt(),
            h1_proxy: h1.sqrt(),
            h2_proxy: h2.sqrt(),
        }
    }

    /// Largest `|h Σ e_j e_k - δ_jk|` over the retained modes.
    pub fn orthonormality_residual(&self) -> f64 {
        let gram = self.eigenvectors.transpose() * &self.eigenvectors * self.grid.h();
        let k = self.k_modes();
        let mut worst = 0.0f64;
        for i in 0..k {
            for j in 0..k {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - want).abs());
            }
        }
        worst
    }

    /// Writes the `k, lambda_k` table as CSV.
    pub fn write_eigenvalues_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(f, "k,lambda_k").map_err(|e| Error::io(path, e))?;
        for (k, lam) in self.eigenvalues.iter().enumerate() {
            writeln!(f, "{},{}", k + 1, crate::fmt_f64(*lam)).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    fn check_len(&self, state: &State) -> Result<()> {
        if state.len() != self.k_modes() {
            return Err(Error::DimensionMismatch {
                what: "state coefficients",
                expected: self.k_modes(),
                got: state.len(),
            });
        }
        Ok(())
    }
}

/// Reads node samples: one real per non-empty line.
pub fn read_samples(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::with_capacity(expected);
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: f64 = line.parse().map_err(|_| {
            Error::Spec(format!(
                "{}:{}: cannot parse '{line}' as a real number",
                path.display(),
                lineno + 1
            ))
        })?;
        values.push(v);
    }
    if values.len() != expected {
        return Err(Error::Spec(format!(
            "{}: expected {expected} samples, found {}",
            path.display(),
            values.len()
        )));
    }
    Ok(values)
}
