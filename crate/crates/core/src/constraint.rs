//! Linear equivariance constraints `L W = W M` on SINDy coefficient matrices
//! and their nullspace parametrization `vec(W) = Q beta`.
//!
//! `vec` is column-major throughout: entry `(i, j)` of a `d x p` matrix sits
//! at index `j * d + i`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::funclib::FunctionLibrary;
use crate::linalg::nullspace;
use crate::symmetry::Generator;

/// Singular values at or below `RANK_TOL * sigma_max` count as zero.
pub const RANK_TOL: f64 = 1e-10;

/// `-M^T (x) I_d + I_p (x) L`, which annihilates `vec(W)` exactly when
/// `L W = W M`.
pub fn constraint_block(m: &DMatrix<f64>, l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() || !l.is_square() {
        return Err(Error::Shape(format!(
            "constraint block needs square matrices, got {:?} and {:?}",
            m.shape(),
            l.shape()
        )));
    }
    let (p, d) = (m.nrows(), l.nrows());
    let id_d = DMatrix::<f64>::identity(d, d);
    let id_p = DMatrix::<f64>::identity(p, p);
    Ok(id_p.kronecker(l) - m.transpose().kronecker(&id_d))
}

pub fn vec_col_major(w: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(w.as_slice())
}

pub fn unvec_col_major(v: &DVector<f64>, d: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(d, p, v.as_slice())
}

/// Column-major index of coefficient `(equation, term)`.
pub fn vec_index(d: usize, equation: usize, term: usize) -> usize {
    term * d + equation
}

#[derive(Clone, Debug)]
pub struct EquivariantBasis {
    pub dim: usize,
    pub num_terms: usize,
    pub c: DMatrix<f64>,
    /// `dp x r`, orthonormal columns.
    pub q: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    /// Generator matrices and their structure matrices `M`, in assembly order.
    pub structure: Vec<(DMatrix<f64>, DMatrix<f64>)>,
}

/// Whether the nullspace dimension is stable when the rank threshold moves
/// by a factor of ten either way.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralGap {
    /// Smallest singular value kept in the rank, relative to the largest.
    pub last_kept: Option<f64>,
    /// Largest singular value treated as zero, relative to the largest.
    pub first_dropped: Option<f64>,
    pub stable: bool,
}

impl EquivariantBasis {
    pub fn r(&self) -> usize {
        self.q.ncols()
    }

    pub fn materialize(&self, beta: &[f64]) -> Result<DMatrix<f64>> {
        if beta.len() != self.r() {
            return Err(Error::Shape(format!("beta has length {}, basis has {}", beta.len(), self.r())));
        }
        let v = &self.q * DVector::from_column_slice(beta);
        Ok(unvec_col_major(&v, self.dim, self.num_terms))
    }

    /// Orthogonal projection `Q Q^T vec(W)` onto the equivariant subspace.
    pub fn project(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if w.shape() != (self.dim, self.num_terms) {
            return Err(Error::Shape(format!("expected {}x{}", self.dim, self.num_terms)));
        }
        let v = &self.q * (self.q.transpose() * vec_col_major(w));
        Ok(unvec_col_major(&v, self.dim, self.num_terms))
    }

    /// `beta` coordinates of `W` (exact for equivariant `W`).
    pub fn coordinates(&self, w: &DMatrix<f64>) -> DVector<f64> {
        self.q.transpose() * vec_col_major(w)
    }

    pub fn spectral_gap(&self) -> SpectralGap {
        let smax = self.singular_values.first().copied().unwrap_or(0.0);
        if smax == 0.0 {
            return SpectralGap {
                last_kept: None,
                first_dropped: None,
                stable: true,
            };
        }
        let rel: Vec<f64> = self.singular_values.iter().map(|s| s / smax).collect();
        let rank_at = |tol: f64| rel.iter().filter(|&&s| s > tol).count();
        let rank = rank_at(RANK_TOL);
        SpectralGap {
            last_kept: rank.checked_sub(1).map(|i| rel[i]),
            first_dropped: rel.get(rank).copied(),
            stable: rank_at(RANK_TOL * 10.0) == rank && rank_at(RANK_TOL / 10.0) == rank,
        }
    }

    /// Maximum of `||L W - W M||_F` over the assembled generators.
    pub fn defect(&self, w: &DMatrix<f64>) -> f64 {
        self.structure
            .iter()
            .map(|(l, m)| (l * w - w * m).norm())
            .fold(0.0, f64::max)
    }

    /// Per-equation templates `dxi/dt = (c*b1 + ...)*term + ...`.
    pub fn templates(&self, lib: &FunctionLibrary) -> Vec<String> {
        let names = lib.term_names();
        (0..self.dim)
            .map(|i| {
                let mut parts = Vec::new();
                for (j, name) in names.iter().enumerate() {
                    let row = self.q.row(vec_index(self.dim, i, j));
                    let coef: Vec<String> = row
                        .iter()
                        .enumerate()
                        .filter(|(_, q)| q.abs() > 1e-12)
                        .map(|(k, q)| format!("{q:.6}*b{}", k + 1))
                        .collect();
                    if coef.is_empty() {
                        continue;
                    }
                    let c = if coef.len() == 1 { coef[0].clone() } else { format!("({})", signed_join(&coef)) };
                    parts.push(if name == "1" { c } else { format!("{c}*{name}") });
                }
                let rhs = if parts.is_empty() { "0".to_string() } else { signed_join(&parts) };
                format!("dx{}/dt = {rhs}", i + 1)
            })
            .collect()
    }
}

fn signed_join(parts: &[String]) -> String {
    parts.join(" + ").replace("+ -", "- ")
}

/// Deterministic orthonormal basis of `span(basis)`: reduced row echelon form
/// of `basis^T` followed by Gram-Schmidt in pivot order, with each pivot
/// entry made positive. Subspaces spanned by coordinate directions come out
/// as those unit vectors.
fn canonical_basis(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, r) = basis.shape();
    let mut a = basis.transpose();
    let mut pivots = Vec::with_capacity(r);
    let mut row = 0;
    for col in 0..n {
        if row == r {
            break;
        }
        let (best, val) = (row..r)
            .map(|i| (i, a[(i, col)].abs()))
            .fold((row, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if val <= 1e-9 {
            continue;
        }
        a.swap_rows(row, best);
        let piv = a[(row, col)];
        let scaled = a.row(row) / piv;
        a.set_row(row, &scaled);
        for i in 0..r {
            if i != row {
                let f = a[(i, col)];
                if f != 0.0 {
                    let upd = a.row(i) - a.row(row) * f;
                    a.set_row(i, &upd);
                }
            }
        }
        for v in a.row_mut(row).iter_mut() {
            if v.abs() < 1e-13 {
                *v = 0.0;
            }
        }
        pivots.push(col);
        row += 1;
    }
    let mut q = DMatrix::<f64>::zeros(n, pivots.len());
    for k in 0..pivots.len() {
        let mut v = a.row(k).transpose();
        for _ in 0..2 {
            for m in 0..k {
                let proj = q.column(m).dot(&v);
                v -= q.column(m) * proj;
            }
        }
        let nrm = v.norm();
        v /= nrm;
        if v[pivots[k]] < 0.0 {
            v = -v;
        }
        for x in v.iter_mut() {
            if x.abs() < 1e-14 {
                *x = 0.0;
            }
        }
        q.set_column(k, &v);
    }
    q
}

/// Stacks one constraint block per linear generator and solves for the
/// nullspace. `pinned` lists column-major coefficient indices forced to zero.
pub fn assemble_pinned(lib: &FunctionLibrary, gens: &[Generator], pinned: &[usize]) -> Result<EquivariantBasis> {
    if lib.has_exponentials() {
        return Err(Error::ExponentialLibrary);
    }
    let (d, p) = (lib.dim(), lib.len());
    let n = d * p;
    let mut structure = Vec::with_capacity(gens.len());
    for g in gens {
        let l = g.as_linear().ok_or_else(|| {
            Error::InvalidArgument(format!("generator `{}` is not linear; use a regularization engine", g.label))
        })?;
        let m = lib.generator_structure_matrix(l)?;
        structure.push((l.clone(), m));
    }
    let mut c = DMatrix::zeros(structure.len() * n + pinned.len(), n);
    for (k, (l, m)) in structure.iter().enumerate() {
        c.view_mut((k * n, 0), (n, n)).copy_from(&constraint_block(m, l)?);
    }
    for (k, &idx) in pinned.iter().enumerate() {
        if idx >= n {
            return Err(Error::Shape(format!("pinned index {idx} out of range {n}")));
        }
        c[(structure.len() * n + k, idx)] = 1.0;
    }
    let ns = nullspace(&c, RANK_TOL);
    Ok(EquivariantBasis {
        dim: d,
        num_terms: p,
        q: canonical_basis(&ns.basis),
        singular_values: ns.singular_values,
        c,
        structure,
    })
}

pub fn assemble(lib: &FunctionLibrary, gens: &[Generator]) -> Result<EquivariantBasis> {
    assemble_pinned(lib, gens, &[])
}
