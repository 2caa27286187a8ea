//! Control operator matrix elements, the ground-state projector and the
//! action of A = -Δ + V in its own eigenbasis.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{SpectralBasis, State};

/// Multiplication operator `Q(x)` restricted to the truncated eigenbasis.
#[derive(Clone, Debug)]
pub struct ControlOperator {
    grid_values: Vec<f64>,
    boundary: (f64, f64),
    q_matrix: DMatrix<f64>,
    /// Columns are orthonormal eigenvectors of `q_matrix`.
    q_vectors: DMatrix<f64>,
    q_values: Vec<f64>,
}

impl ControlOperator {
    /// Assembles `Q_jk = h Σ_i Q(x_i) e_j(x_i) e_k(x_i)`. Boundary values of `Q`
    /// (used only by the grid-derivative terms) are extrapolated linearly.
    pub fn assemble(q_values: &[f64], basis: &SpectralBasis) -> Result<Self> {
        let m = q_values.len();
        let boundary = match m {
            0 => (0.0, 0.0),
            1 => (q_values[0], q_values[0]),
            _ => (
                2.0 * q_values[0] - q_values[1],
                2.0 * q_values[m - 1] - q_values[m - 2],
            ),
        };
        Self::assemble_with_boundary(q_values, boundary, basis)
    }

    /// Same as [`assemble`](Self::assemble) with explicit `Q(a)`, `Q(b)`.
    pub fn assemble_with_boundary(
        q_values: &[f64],
        boundary: (f64, f64),
        basis: &SpectralBasis,
    ) -> Result<Self> {
        let m = basis.m_points();
        if q_values.len() != m {
            return Err(Error::DimensionMismatch {
                what: "control samples",
                expected: m,
                got: q_values.len(),
            });
        }
        if q_values.iter().any(|v| !v.is_finite()) || !boundary.0.is_finite() || !boundary.1.is_finite() {
            return Err(Error::InvalidParameter("control profile has non-finite values".into()));
        }
        let k = basis.k_modes();
        let h = basis.grid().h();
        let e = basis.eigenvectors();
        let mut weighted = e.clone();
        for (i, q) in q_values.iter().enumerate() {
            for col in 0..k {
                weighted[(i, col)] *= q * h;
            }
        }
        let raw = e.transpose() * weighted;
        let q_matrix = (&raw + raw.transpose()) * 0.5;

        let eig = SymmetricEigen::new(q_matrix.clone());
        let mut q_vectors = eig.eigenvectors;
        reorthonormalize(&mut q_vectors);
        let q_values_eig: Vec<f64> = eig.eigenvalues.iter().copied().collect();

        Ok(Self {
            grid_values: q_values.to_vec(),
            boundary,
            q_matrix,
            q_vectors,
            q_values: q_values_eig,
        })
    }

    pub fn grid_values(&self) -> &[f64] {
        &self.grid_values
    }

    pub fn boundary(&self) -> (f64, f64) {
        self.boundary
    }

    pub fn q_matrix(&self) -> &DMatrix<f64> {
        &self.q_matrix
    }

    /// `Q_jk` with 1-based mode indices.
    pub fn element(&self, j: usize, k: usize) -> f64 {
        self.q_matrix[(j - 1, k - 1)]
    }

    pub fn k_modes(&self) -> usize {
        self.q_matrix.nrows()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.q_values
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.q_vectors
    }

    /// `max |R diag(μ) R^T - Q|`.
    pub fn reconstruction_error(&self) -> f64 {
        let k = self.k_modes();
        let mut scaled = self.q_vectors.clone();
        for col in 0..k {
            for row in 0..k {
                scaled[(row, col)] *= self.q_values[col];
            }
        }
        let rebuilt = scaled * self.q_vectors.transpose();
        (rebuilt - &self.q_matrix).amax()
    }

    /// `max |Q - Q^T|`.
    pub fn symmetry_error(&self) -> f64 {
        (&self.q_matrix - self.q_matrix.transpose()).amax()
    }

    /// d = Q c.
    pub fn apply(&self, c: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); c.len()];
        self.apply_into(c, &mut out);
        out
    }

    pub(crate) fn apply_into(&self, c: &[Complex64], out: &mut [Complex64]) {
        let k = self.k_modes();
        let q = self.q_matrix.as_slice();
        for (j, o) in out.iter_mut().enumerate().take(k) {
            // column j equals row j (symmetric)
            let col = &q[j * k..(j + 1) * k];
            let mut acc = Complex64::new(0.0, 0.0);
            for (qv, cv) in col.iter().zip(c) {
                acc += cv * qv;
            }
            *o = acc;
        }
    }

    /// Rotates into the eigenbasis of `Q`: `w = R^T c`.
    pub(crate) fn rotate_in(&self, c: &[Complex64], w: &mut [Complex64]) {
        let k = self.k_modes();
        let r = self.q_vectors.as_slice();
        for (j, wj) in w.iter_mut().enumerate().take(k) {
            let col = &r[j * k..(j + 1) * k];
            let mut acc = Complex64::new(0.0, 0.0);
            for (rv, cv) in col.iter().zip(c) {
                acc += cv * rv;
            }
            *wj = acc;
        }
    }

    /// `c += R w`.
    pub(crate) fn rotate_out_add(&self, w: &[Complex64], c: &mut [Complex64]) {
        let k = self.k_modes();
        let r = self.q_vectors.as_slice();
        for (j, wj) in w.iter().enumerate().take(k) {
            if *wj == Complex64::new(0.0, 0.0) {
                continue;
            }
            let col = &r[j * k..(j + 1) * k];
            for (ci, rv) in c.iter_mut().zip(col) {
                *ci += wj * rv;
            }
        }
    }

    /// Applies `exp(-i θ Q)` in place through the precomputed eigendecomposition.
    ///
    /// Evaluated as `c + R (exp(-iθμ) - 1) R^T c` so that `θ -> 0` is the exact
    /// identity and the orthogonality error of `R` is scaled by `θ`.
    pub fn propagate(&self, theta: f64, c: &mut [Complex64]) {
        if theta == 0.0 {
            return;
        }
        let k = self.k_modes();
        let mut w = vec![Complex64::new(0.0, 0.0); k];
        self.rotate_in(c, &mut w);
        for (wj, mu) in w.iter_mut().zip(&self.q_values) {
            *wj *= expm1_i(-theta * mu);
        }
        self.rotate_out_add(&w, c);
    }

    /// Discrete derivative data of `Q` for the grid form of the feedback.
    pub fn gradients(&self, basis: &SpectralBasis) -> QGradients {
        QGradients::new(&self.grid_values, self.boundary, basis.grid().h())
    }
}

/// `exp(iφ) - 1` without cancellation for small φ.
pub(crate) fn expm1_i(phi: f64) -> Complex64 {
    let s = (0.5 * phi).sin();
    Complex64::new(-2.0 * s * s, phi.sin())
}

/// Modified Gram-Schmidt, applied twice.
fn reorthonormalize(m: &mut DMatrix<f64>) {
    let k = m.ncols();
    for _ in 0..2 {
        for j in 0..k {
            for i in 0..j {
                let p = m.column(j).dot(&m.column(i));
                let ci = m.column(i).clone_owned();
                m.column_mut(j).axpy(-p, &ci, 1.0);
            }
            let n = m.column(j).norm();
            m.column_mut(j).scale_mut(1.0 / n);
        }
    }
}

/// Node-sampled derivatives of `Q`: forward differences `(Q_{i+1} - Q_i)/h`
/// on the `m + 1` cells (including the boundary nodes) and the second
/// difference `ΔQ` at the interior nodes.
#[derive(Clone, Debug)]
pub struct QGradients {
    h: f64,
    forward_diff: Vec<f64>,
    laplacian: Vec<f64>,
}

impl QGradients {
    pub fn new(interior: &[f64], boundary: (f64, f64), h: f64) -> Self {
        let m = interior.len();
        let full: Vec<f64> = std::iter::once(boundary.0)
            .chain(interior.iter().copied())
            .chain(std::iter::once(boundary.1))
            .collect();
        let forward_diff = full.windows(2).map(|w| (w[1] - w[0]) / h).collect();
        let laplacian = (1..=m)
            .map(|i| (full[i + 1] - 2.0 * full[i] + full[i - 1]) / (h * h))
            .collect();
        Self {
            h,
            forward_diff,
            laplacian,
        }
    }

    pub fn forward_diff(&self) -> &[f64] {
        &self.forward_diff
    }

    pub fn laplacian(&self) -> &[f64] {
        &self.laplacian
    }

    /// `∇Q·∇z` at the interior nodes as the mean of forward and backward
    /// difference products (Dirichlet zeros outside).
    pub fn grad_dot(&self, z: &[Complex64]) -> Vec<Complex64> {
        let m = z.len();
        let zero = Complex64::new(0.0, 0.0);
        let at = |i: isize| -> Complex64 {
            if i < 0 || i as usize >= m {
                zero
            } else {
                z[i as usize]
            }
        };
        (0..m)
            .map(|i| {
                let ii = i as isize;
                let fwd = (at(ii + 1) - z[i]) / self.h * self.forward_diff[i + 1];
                let bwd = (z[i] - at(ii - 1)) / self.h * self.forward_diff[i];
                (fwd + bwd) * 0.5
            })
            .collect()
    }

    /// `-2 ∇Q·∇z - z ΔQ`, which equals the commutator `[A, Q] z` of the discrete operator.
    pub fn commutator(&self, z: &[Complex64]) -> Vec<Complex64> {
        self.grad_dot(z)
            .iter()
            .zip(z)
            .zip(&self.laplacian)
            .map(|((g, zi), l)| -2.0 * g - zi * l)
            .collect()
    }
}

/// `A z`: multiplies coefficient `k` by `λ_k`.
pub fn apply_a(state: &State, basis: &SpectralBasis) -> Result<State> {
    if state.len() != basis.k_modes() {
        return Err(Error::DimensionMismatch {
            what: "state coefficients",
            expected: basis.k_modes(),
            got: state.len(),
        });
    }
    Ok(State::new(
        state
            .coeffs()
            .iter()
            .zip(basis.eigenvalues())
            .map(|(c, l)| c * l)
            .collect(),
    ))
}

/// `P_1 z = z - <z, e_1> e_1`.
pub fn project_p1(state: &State) -> State {
    let mut out = state.clone();
    if let Some(c) = out.coeffs_mut().first_mut() {
        *c = Complex64::new(0.0, 0.0);
    }
    out
}
