use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::lstsq;

const LSTSQ_TOL: f64 = 1e-12;

/// Least squares restricted to the `active` columns of `theta`; inactive
/// coefficients are exactly zero.
pub(crate) fn masked_lstsq(theta: &DMatrix<f64>, y: &DVector<f64>, active: &[bool]) -> DVector<f64> {
    let cols: Vec<usize> = (0..theta.ncols()).filter(|&j| active[j]).collect();
    let mut out = DVector::zeros(theta.ncols());
    if cols.is_empty() {
        return out;
    }
    let sub = theta.select_columns(&cols);
    let (x, rank) = lstsq(&sub, y, LSTSQ_TOL);
    if rank < cols.len() {
        log::warn!("rank-deficient support ({rank} < {}); using the minimum-norm solution", cols.len());
    }
    for (k, &j) in cols.iter().enumerate() {
        out[j] = x[k];
    }
    out
}

/// Sequentially thresholded least squares. Returns the `d x p` coefficients
/// and the number of rounds performed.
pub fn stlsq(theta: &DMatrix<f64>, dx: &DMatrix<f64>, threshold: f64, max_rounds: usize) -> Result<(DMatrix<f64>, usize)> {
    let (n, p) = theta.shape();
    if dx.nrows() != n {
        return Err(Error::Shape(format!("{n} library rows but {} label rows", dx.nrows())));
    }
    if !(threshold >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be non-negative, got {threshold}")));
    }
    if n < p {
        log::warn!("fewer samples ({n}) than library terms ({p})");
    }
    let d = dx.ncols();
    let mut w = DMatrix::zeros(d, p);
    let mut rounds = 0;
    for i in 0..d {
        let y = dx.column(i).into_owned();
        let mut active = vec![true; p];
        let mut coef = masked_lstsq(theta, &y, &active);
        let mut r = 0;
        while r < max_rounds.max(1) {
            r += 1;
            let next: Vec<bool> = (0..p).map(|j| active[j] && coef[j].abs() >= threshold).collect();
            for j in 0..p {
                if !next[j] {
                    coef[j] = 0.0;
                }
            }
            if next == active {
                break;
            }
            active = next;
            coef = masked_lstsq(theta, &y, &active);
        }
        rounds = rounds.max(r);
        w.set_row(i, &coef.transpose());
    }
    Ok((w, rounds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funclib::FunctionLibrary;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn oscillator_data(n: usize) -> (DMatrix<f64>, DMatrix<f64>, FunctionLibrary) {
        let lib = FunctionLibrary::new(2, 2, false);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
        let theta = DMatrix::from_fn(n, lib.len(), |k, j| lib.eval(&pts[k])[j]);
        let dx = DMatrix::from_fn(n, 2, |k, i| {
            let [a, b] = pts[k];
            if i == 0 { -0.1 * a - b } else { a - 0.1 * b }
        });
        (theta, dx, lib)
    }

    #[test]
    fn clean_oscillator_recovered() {
        let (theta, dx, _) = oscillator_data(300);
        let (w, _) = stlsq(&theta, &dx, 0.05, 10).unwrap();
        let mut truth = DMatrix::zeros(2, 6);
        truth[(0, 1)] = -0.1;
        truth[(0, 2)] = -1.0;
        truth[(1, 1)] = 1.0;
        truth[(1, 2)] = -0.1;
        assert!((&w - &truth).amax() <= 1e-4);
        for (a, b) in w.iter().zip(truth.iter()) {
            assert_eq!(*a == 0.0, *b == 0.0);
        }
    }

    #[test]
    fn zero_labels_give_zero() {
        let (theta, _, _) = oscillator_data(50);
        let (w, _) = stlsq(&theta, &DMatrix::zeros(50, 2), 0.05, 10).unwrap();
        assert_eq!(w, DMatrix::zeros(2, 6));
    }

    #[test]
    fn zero_threshold_is_least_squares() {
        let (theta, mut dx, _) = oscillator_data(80);
        dx[(3, 0)] += 0.3;
        let (w, _) = stlsq(&theta, &dx, 0.0, 10).unwrap();
        let (ls, _) = lstsq(&theta, &dx.column(0).into_owned(), 1e-12);
        assert!((w.row(0).transpose() - ls).amax() < 1e-12);
        assert!(w.iter().all(|v| *v != 0.0));
    }

    #[test]
    fn supports_shrink_monotonically() {
        let (theta, mut dx, _) = oscillator_data(60);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for v in dx.iter_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
        let mut prev = usize::MAX;
        for rounds in 1..6 {
            let (w, _) = stlsq(&theta, &dx, 0.2, rounds).unwrap();
            let nnz = w.iter().filter(|v| **v != 0.0).count();
            assert!(nnz <= prev);
            prev = nnz;
        }
    }
}
