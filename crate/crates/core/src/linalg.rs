//! Small dense linear-algebra helpers: matrix exponential, SVD nullspaces and
//! minimum-norm least squares.

use nalgebra::{DMatrix, DVector};

// Pade(13) coefficients for scaling and squaring.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(A)` by scaling and squaring with a degree-13 Pade approximant.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "expm needs a square matrix");
    let n = a.nrows();
    let nrm = norm1(a);
    if nrm == 0.0 {
        return DMatrix::identity(n, n);
    }
    let s = if nrm > THETA13 {
        (nrm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = a / 2f64.powi(s);
    let b = &PADE13;
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &id * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .expect("Pade denominator is nonsingular for scaled input");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// `exp(eps * L)`.
pub fn expm_scaled(l: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    expm(&(l * eps))
}

/// Full SVD pieces sorted by descending singular value: `(sigma, V)` where
/// `V` is `n x n` and the first `min(m, n)` columns pair with `sigma`.
pub fn svd_right(c: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (m, n) = c.shape();
    let padded;
    let mat = if m < n {
        padded = c.clone().resize_vertically(n, 0.0);
        &padded
    } else {
        c
    };
    let svd = mat.clone().svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sigma: Vec<f64> = order
        .iter()
        .map(|&i| svd.singular_values[i])
        .take(m.min(n))
        .collect();
    let mut v = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        v.set_column(col, &vt.row(i).transpose());
    }
    (sigma, v)
}

/// Orthonormal basis of the nullspace of `c`: singular values at or below
/// `rel_tol * sigma_max` count as zero.
pub struct Nullspace {
    pub basis: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub rank: usize,
}

pub fn nullspace(c: &DMatrix<f64>, rel_tol: f64) -> Nullspace {
    let n = c.ncols();
    if c.nrows() == 0 {
        return Nullspace {
            basis: DMatrix::identity(n, n),
            singular_values: vec![],
            rank: 0,
        };
    }
    let (sigma, v) = svd_right(c);
    let smax = sigma.first().copied().unwrap_or(0.0);
    let rank = if smax == 0.0 {
        0
    } else {
        sigma.iter().filter(|&&s| s > rel_tol * smax).count()
    };
    let basis = v.columns(rank, n - rank).into_owned();
    Nullspace {
        basis,
        singular_values: sigma,
        rank,
    }
}

/// Minimum-norm least-squares solution of `A x = b` with relative rank
/// tolerance; returns the solution and the numerical rank.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> (DVector<f64>, usize) {
    let n = a.ncols();
    if n == 0 {
        return (DVector::zeros(0), 0);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return (DVector::zeros(n), 0);
    }
    let eps = rel_tol * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let x = svd.solve(b, eps).expect("U and V^T were computed");
    (x, rank)
}

/// Row-major `d x d` matrix times vector for generic scalars.
pub fn matvec<S: crate::ad::Scalar>(m: &[S], v: &[S]) -> Vec<S> {
    let d = v.len();
    (0..m.len() / d)
        .map(|i| {
            let mut acc = S::zero();
            for j in 0..d {
                acc += m[i * d + j] * v[j];
            }
            acc
        })
        .collect()
}

/// Constant (f64) matrix times generic vector.
pub fn const_matvec<S: crate::ad::Scalar>(m: &DMatrix<f64>, v: &[S]) -> Vec<S> {
    (0..m.nrows())
        .map(|i| {
            let mut acc = S::zero();
            for j in 0..m.ncols() {
                let c = m[(i, j)];
                if c != 0.0 {
                    acc += v[j] * c;
                }
            }
            acc
        })
        .collect()
}
