#![allow(dead_code)]

use std::path::PathBuf;

use schrostab::{Complex64, ControlOperator, Grid, Potential, SpectralBasis, State};

pub fn specs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../specs")
}

pub fn well(x: f64) -> f64 {
    20.0 * (-50.0 * (x - 0.4) * (x - 0.4)).exp()
}

/// Gaussian well on (0, 1) with `Q = x`.
pub fn generic(m: usize, k: usize) -> (SpectralBasis, ControlOperator) {
    let grid = Grid::new(0.0, 1.0, m).unwrap();
    let basis = SpectralBasis::build(grid, &Potential::from_fn(&grid, well).unwrap(), k).unwrap();
    let q = ControlOperator::assemble_with_boundary(&grid.nodes(), (0.0, 1.0), &basis).unwrap();
    (basis, q)
}

pub fn free_particle(m: usize, k: usize) -> (SpectralBasis, ControlOperator) {
    let grid = Grid::new(0.0, 1.0, m).unwrap();
    let basis = SpectralBasis::build(grid, &Potential::zero(&grid), k).unwrap();
    let q = ControlOperator::assemble_with_boundary(&grid.nodes(), (0.0, 1.0), &basis).unwrap();
    (basis, q)
}

pub fn two_mode(k: usize) -> State {
    let mut c = vec![Complex64::new(0.0, 0.0); k];
    c[0] = Complex64::new(1.0, 0.0);
    c[1] = Complex64::new(1.0, 0.0);
    State::normalized_from(c).unwrap()
}

/// Every `(j, p, q)` with `{1, j} != {p, q}` and a matching gap, by direct enumeration.
pub fn brute_force_resonances(lam: &[f64], eps_gap: f64) -> Vec<(usize, usize, usize)> {
    let k = lam.len();
    let mut out = Vec::new();
    for j in 2..=k {
        let target = lam[0] - lam[j - 1];
        for p in 1..=k {
            for q in 1..=k {
                let same = (p == 1 && q == j) || (p == j && q == 1);
                if !same && (target - (lam[p - 1] - lam[q - 1])).abs() <= eps_gap * (1.0 + target.abs()) {
                    out.push((j, p, q));
                }
            }
        }
    }
    out
}
