use nalgebra::{DMatrix, DVector};

use crate::constraint::{assemble_pinned, vec_index, EquivariantBasis};
use crate::error::Result;
use crate::funclib::FunctionLibrary;
use crate::linalg::lstsq;
use crate::symmetry::Generator;

/// Outcome of constrained regression: coefficients, the final (pinned) basis
/// and the number of thresholding rounds.
pub struct EquivCFit {
    pub w: DMatrix<f64>,
    pub basis: EquivariantBasis,
    pub rounds: usize,
}

/// Least squares over `beta` for `dX ~ unvec(Q beta) Theta`.
fn fit_beta(basis: &EquivariantBasis, theta: &DMatrix<f64>, dx: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d, r) = (theta.nrows(), basis.dim, basis.r());
    if r == 0 {
        return DMatrix::zeros(d, basis.num_terms);
    }
    let mut a = DMatrix::zeros(n * d, r);
    for k in 0..r {
        let mut e = vec![0.0; r];
        e[k] = 1.0;
        let wk = basis.materialize(&e).expect("unit beta has basis length");
        let pred = theta * wk.transpose();
        for row in 0..n {
            for i in 0..d {
                a[(row * d + i, k)] = pred[(row, i)];
            }
        }
    }
    let b = DVector::from_fn(n * d, |idx, _| dx[(idx / d, idx % d)]);
    let (beta, _) = lstsq(&a, &b, 1e-12);
    basis.materialize(beta.as_slice()).expect("beta has basis length")
}

/// Equivariance-constrained sequentially thresholded least squares: entries
/// below `threshold` are pinned to zero by extra constraint rows, the
/// nullspace is recomputed and `beta` refit until the support is stable.
pub fn equiv_c_fit(
    theta: &DMatrix<f64>,
    dx: &DMatrix<f64>,
    lib: &FunctionLibrary,
    gens: &[Generator],
    threshold: f64,
    max_rounds: usize,
) -> Result<EquivCFit> {
    let (d, p) = (lib.dim(), lib.len());
    let mut pinned: Vec<usize> = Vec::new();
    let mut basis = assemble_pinned(lib, gens, &pinned)?;
    let mut w = fit_beta(&basis, theta, dx);
    let mut rounds = 0;
    while rounds < max_rounds.max(1) {
        rounds += 1;
        let mut grew = false;
        for j in 0..p {
            for i in 0..d {
                let idx = vec_index(d, i, j);
                if w[(i, j)].abs() < threshold && !pinned.contains(&idx) {
                    pinned.push(idx);
                    grew = true;
                }
            }
        }
        if !grew {
            break;
        }
        pinned.sort_unstable();
        basis = assemble_pinned(lib, gens, &pinned)?;
        if basis.r() == 0 {
            log::warn!("all coefficients were pinned; the constrained model is zero");
        }
        w = fit_beta(&basis, theta, dx);
    }
    for &idx in &pinned {
        w[(idx % d, idx / d)] = 0.0;
    }
    Ok(EquivCFit { w, basis, rounds })
}
