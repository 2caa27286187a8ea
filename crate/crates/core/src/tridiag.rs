//! Lowest eigenpairs of a real symmetric tridiagonal matrix.
//!
//! Eigenvalues come from Sturm-sequence bisection, eigenvectors from inverse
//! iteration with partial-pivoting LU and modified Gram-Schmidt against the
//! vectors already found. Only the `k` smallest pairs are computed, so the
//! cost is O(n k) instead of the O(n^2) of a full dense solve.

use crate::error::{Error, Result};

/// Symmetric tridiagonal matrix stored by diagonals.
#[derive(Clone, Debug)]
pub struct SymTridiagonal {
    diag: Vec<f64>,
    off: Vec<f64>,
}

impl SymTridiagonal {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::InvalidParameter("empty tridiagonal matrix".into()));
        }
        if off.len() + 1 != diag.len() {
            return Err(Error::DimensionMismatch {
                what: "tridiagonal off-diagonal",
                expected: diag.len() - 1,
                got: off.len(),
            });
        }
        if diag.iter().chain(off.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "tridiagonal matrix has non-finite entries".into(),
            ));
        }
        Ok(Self { diag, off })
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn off(&self) -> &[f64] {
        &self.off
    }

    /// y = T x
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        let n = self.len();
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                acc += self.off[i] * x[i + 1];
            }
            y[i] = acc;
        }
    }

    /// Gershgorin interval containing the whole spectrum.
    pub fn gershgorin(&self) -> (f64, f64) {
        let n = self.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let mut r = 0.0;
            if i > 0 {
                r += self.off[i - 1].abs();
            }
            if i + 1 < n {
                r += self.off[i].abs();
            }
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        (lo, hi)
    }

    fn norm_bound(&self) -> f64 {
        let (lo, hi) = self.gershgorin();
        lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE)
    }

    fn pivmin(&self) -> f64 {
        let max_off2 = self.off.iter().fold(1.0f64, |m, e| m.max(e * e));
        f64::MIN_POSITIVE * max_off2
    }

    /// Number of eigenvalues strictly below `x` (Sturm count via LDL^T inertia).
    pub fn count_below(&self, x: f64) -> usize {
        let pivmin = self.pivmin();
        let mut count = 0;
        let mut q = self.diag[0] - x;
        if q.abs() < pivmin {
            q = -pivmin;
        }
        if q < 0.0 {
            count += 1;
        }
        for i in 1..self.len() {
            q = self.diag[i] - x - self.off[i - 1] * self.off[i - 1] / q;
            if q.abs() < pivmin {
                q = -pivmin;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// Eigenvalue with 0-based index `j` in ascending order, by bisection on `[lo, hi]`.
    fn bisect(&self, j: usize, mut lo: f64, mut hi: f64) -> f64 {
        let tol = 2.0 * f64::EPSILON * self.norm_bound();
        for _ in 0..256 {
            let mid = 0.5 * (lo + hi);
            if hi - lo <= tol.max(2.0 * f64::EPSILON * mid.abs()) || mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid) > j {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Solve (T - shift I) x = b in place (b overwritten by x), LU with partial pivoting.
    fn shifted_solve(&self, shift: f64, b: &mut [f64]) {
        let n = self.len();
        let tiny = f64::EPSILON * self.norm_bound();
        let mut d: Vec<f64> = self.diag.iter().map(|v| v - shift).collect();
        if n == 1 {
            if d[0].abs() < tiny {
                d[0] = tiny;
            }
            b[0] /= d[0];
            return;
        }
        let dl = self.off.clone();
        let mut du = self.off.clone();
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        for i in 0..n - 1 {
            if d[i].abs() >= dl[i].abs() {
                if d[i].abs() < tiny {
                    d[i] = tiny;
                }
                let fact = dl[i] / d[i];
                d[i + 1] -= fact * du[i];
                b[i + 1] -= fact * b[i];
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                let temp = d[i + 1];
                d[i + 1] = du[i] - fact * temp;
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -fact * du2[i];
                }
                du[i] = temp;
                let tb = b[i];
                b[i] = b[i + 1];
                b[i + 1] = tb - fact * b[i + 1];
            }
        }
        if d[n - 1].abs() < tiny {
            d[n - 1] = tiny;
        }
        b[n - 1] /= d[n - 1];
        b[n - 2] = (b[n - 2] - du[n - 2] * b[n - 1]) / d[n - 2];
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - du[i] * b[i + 1] - du2[i] * b[i + 2]) / d[i];
        }
    }

    /// The `k` smallest eigenpairs, eigenvalues ascending, eigenvectors with
    /// unit Euclidean norm and sign fixed so the first non-negligible entry is positive.
    pub fn lowest_eigenpairs(&self, k: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let n = self.len();
        if k == 0 || k > n {
            return Err(Error::InvalidParameter(format!(
                "requested {k} eigenpairs of a {n}x{n} matrix"
            )));
        }
        let (glo, ghi) = self.gershgorin();
        let norm = self.norm_bound();

        let mut values = Vec::with_capacity(k);
        let mut lo = glo;
        for j in 0..k {
            let lam = self.bisect(j, lo, ghi);
            values.push(lam);
            // next eigenvalue is >= this one; back off by the bisection tolerance
            lo = lam - 4.0 * f64::EPSILON * norm;
        }

        let resid_tol = 1e3 * f64::EPSILON * norm * (n as f64).sqrt();
        let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut tx = vec![0.0; n];
        for j in 0..k {
            let lam = values[j];
            let mut x: Vec<f64> = (0..n)
                .map(|i| 1.0 + 0.5 * ((i as f64 + 1.0) * 0.618_033_988_749_895 * (j as f64 + 1.0)).sin())
                .collect();
            normalize(&mut x);
            // iterate until the residual stops improving, then accept if small enough
            let mut best = f64::INFINITY;
            for _ in 0..12 {
                self.shifted_solve(lam, &mut x);
                for _ in 0..2 {
                    for v in &vectors {
                        let p = dot(&x, v);
                        axpy(-p, v, &mut x);
                    }
                }
                if normalize(&mut x) == 0.0 {
                    return Err(Error::Eigensolver(format!(
                        "inverse iteration collapsed for eigenvalue {j}"
                    )));
                }
                self.mul_vec(&x, &mut tx);
                let rq = dot(&x, &tx);
                let res = tx
                    .iter()
                    .zip(&x)
                    .map(|(t, v)| (t - rq * v).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let stalled = res > 0.5 * best;
                best = best.min(res);
                if stalled && best <= resid_tol {
                    break;
                }
            }
            if best > resid_tol {
                return Err(Error::Eigensolver(format!(
                    "inverse iteration did not converge for eigenvalue index {j} (lambda = {lam:e})"
                )));
            }
            fix_sign(&mut x);
            vectors.push(x);
        }

        // Rayleigh quotients are the reported eigenvalues.
        for (lam, v) in values.iter_mut().zip(&vectors) {
            self.mul_vec(v, &mut tx);
            *lam = dot(v, &tx);
        }
        for j in 1..k {
            if values[j] < values[j - 1] {
                return Err(Error::Eigensolver(format!(
                    "eigenvalues out of order at index {j}: {} < {}",
                    values[j],
                    values[j - 1]
                )));
            }
        }
        Ok((values, vectors))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn normalize(x: &mut [f64]) -> f64 {
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return 0.0;
    }
    for v in x.iter_mut() {
        *v /= scale;
    }
    let nrm = dot(x, x).sqrt();
    for v in x.iter_mut() {
        *v /= nrm;
    }
    nrm
}

/// Make the first entry larger than 1e-8 of the max entry positive.
pub(crate) fn fix_sign(x: &mut [f64]) {
    let max = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if let Some(first) = x.iter().copied().find(|v| v.abs() > 1e-8 * max) {
        if first < 0.0 {
            x.iter_mut().for_each(|v| *v = -*v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian(n: usize) -> SymTridiagonal {
        SymTridiagonal::new(vec![2.0; n], vec![-1.0; n - 1]).unwrap()
    }

    #[test]
    fn discrete_laplacian_spectrum_is_exact() {
        let n = 50;
        let t = laplacian(n);
        let (vals, vecs) = t.lowest_eigenpairs(6).unwrap();
        for (j, lam) in vals.iter().enumerate() {
            let theta = (j + 1) as f64 * std::f64::consts::PI / (2.0 * (n + 1) as f64);
            let exact = 4.0 * theta.sin().powi(2);
            assert!((lam - exact).abs() < 1e-13, "{j}: {lam} vs {exact}");
        }
        for a in 0..6 {
            for b in 0..6 {
                let d = dot(&vecs[a], &vecs[b]);
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-13);
            }
            assert!(vecs[a][0] > 0.0);
        }
    }

    #[test]
    fn sturm_count_brackets_eigenvalues() {
        let t = laplacian(10);
        let (vals, _) = t.lowest_eigenpairs(10).unwrap();
        for (j, lam) in vals.iter().enumerate() {
            assert_eq!(t.count_below(lam - 1e-9), j);
            assert_eq!(t.count_below(lam + 1e-9), j + 1);
        }
    }

    #[test]
    fn matches_dense_solver_on_random_matrix() {
        let n = 40;
        let diag: Vec<f64> = (0..n).map(|i| ((i * 7919) % 13) as f64 * 0.37 - 2.0).collect();
        let off: Vec<f64> = (0..n - 1).map(|i| 0.5 + ((i * 104729) % 11) as f64 * 0.1).collect();
        let t = SymTridiagonal::new(diag.clone(), off.clone()).unwrap();
        let (vals, _) = t.lowest_eigenpairs(n).unwrap();
        let mut dense = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            dense[(i, i)] = diag[i];
            if i + 1 < n {
                dense[(i, i + 1)] = off[i];
                dense[(i + 1, i)] = off[i];
            }
        }
        let mut reference: Vec<f64> = dense.symmetric_eigen().eigenvalues.iter().copied().collect();
        reference.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in vals.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn one_by_one() {
        let t = SymTridiagonal::new(vec![3.5], vec![]).unwrap();
        let (vals, vecs) = t.lowest_eigenpairs(1).unwrap();
        assert!((vals[0] - 3.5).abs() < 1e-15);
        assert_eq!(vecs[0], vec![1.0]);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(SymTridiagonal::new(vec![], vec![]).is_err());
        assert!(SymTridiagonal::new(vec![1.0, 2.0], vec![]).is_err());
        assert!(SymTridiagonal::new(vec![1.0, f64::NAN], vec![0.0]).is_err());
        assert!(laplacian(4).lowest_eigenpairs(5).is_err());
        assert!(laplacian(4).lowest_eigenpairs(0).is_err());
    }
}
