//! Polynomial (optionally exponential-augmented) function libraries
//! `Theta(x)` and the symbolic coordinate map onto them.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ad::Scalar;
use crate::error::{Error, Result};
use crate::expr::{canonicalize, CanonicalForm, Expr, TermKey};

/// The serialized form of a library: `{dim, degree, exponentials}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibrarySpec {
    pub dim: usize,
    pub degree: u32,
    #[serde(default)]
    pub exponentials: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FunctionLibrary {
    spec: LibrarySpec,
    terms: Vec<TermKey>,
    index: HashMap<TermKey, usize>,
}

/// All exponent vectors over `dim` variables with total degree `deg`, in
/// descending lexicographic order (x1^2, x1*x2, x2^2, ...).
fn monomials_of_degree(dim: usize, deg: u32) -> Vec<Vec<u32>> {
    if dim == 1 {
        return vec![vec![deg]];
    }
    let mut out = Vec::new();
    for first in (0..=deg).rev() {
        for mut rest in monomials_of_degree(dim - 1, deg - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

impl FunctionLibrary {
    /// Builds the graded-lexicographic library: all monomials of total degree
    /// `<= degree`, constant first, then `exp(x_i)` for each `i` if requested.
    pub fn new(dim: usize, degree: u32, exponentials: bool) -> Self {
        assert!(dim >= 1, "library dimension must be positive");
        let mut terms = Vec::new();
        for deg in 0..=degree {
            terms.extend(monomials_of_degree(dim, deg).into_iter().map(TermKey::monomial));
        }
        if exponentials {
            terms.extend((0..dim).map(|i| TermKey::exponential(dim, i)));
        }
        let index = terms.iter().cloned().enumerate().map(|(i, k)| (k, i)).collect();
        FunctionLibrary {
            spec: LibrarySpec {
                dim,
                degree,
                exponentials,
            },
            terms,
            index,
        }
    }

    pub fn from_spec(spec: LibrarySpec) -> Result<Self> {
        if spec.dim == 0 {
            return Err(Error::config("library.dim", "must be positive"));
        }
        Ok(Self::new(spec.dim, spec.degree, spec.exponentials))
    }

    pub fn spec(&self) -> LibrarySpec {
        self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn degree(&self) -> u32 {
        self.spec.degree
    }

    pub fn has_exponentials(&self) -> bool {
        self.spec.exponentials
    }

    /// Number of terms `p`.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[TermKey] {
        &self.terms
    }

    pub fn index_of(&self, key: &TermKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn term_names(&self) -> Vec<String> {
        self.terms.iter().map(|t| t.to_string()).collect()
    }

    pub fn term_exprs(&self) -> Vec<Expr> {
        self.terms.iter().map(TermKey::to_expr).collect()
    }

    /// `Theta(x)`, generic over the scalar type.
    pub fn eval_with<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        debug_assert_eq!(x.len(), self.dim());
        let q = self.degree() as usize;
        // pw[i][k] = x_i^k
        let pw: Vec<Vec<S>> = x
            .iter()
            .map(|&xi| {
                let mut v = Vec::with_capacity(q + 1);
                v.push(S::cst(1.0));
                for k in 1..=q {
                    v.push(v[k - 1] * xi);
                }
                v
            })
            .collect();
        let ex: Vec<Option<S>> = if self.has_exponentials() {
            x.iter().map(|&xi| Some(xi.exp())).collect()
        } else {
            vec![None; x.len()]
        };
        self.terms
            .iter()
            .map(|t| {
                let mut v: Option<S> = None;
                for i in 0..t.dim() {
                    let p = t.powers[i] as usize;
                    if p > 0 {
                        v = Some(v.map_or(pw[i][p], |a| a * pw[i][p]));
                    }
                    if t.exps[i] > 0 {
                        let e = ex[i].unwrap_or_else(|| x[i].exp()).powi(t.exps[i]);
                        v = Some(v.map_or(e, |a| a * e));
                    }
                }
                v.unwrap_or(S::cst(1.0))
            })
            .collect()
    }

    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_vec(self.eval_with(x))
    }

    /// `J_Theta(x)` as a row-major `p x d` buffer, generic over the scalar type.
    pub fn jacobian_with<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let d = self.dim();
        let mut out = vec![S::zero(); self.len() * d];
        for (mu, t) in self.terms.iter().enumerate() {
            for j in 0..d {
                let (p, k) = (t.powers[j], t.exps[j]);
                if p == 0 && k == 0 {
                    continue;
                }
                // d/dx_j [x_j^p e^{k x_j}] = (p x_j^{p-1} + k x_j^p) e^{k x_j}
                let mut factor = match (p, k) {
                    (0, _) => S::cst(k as f64),
                    (1, 0) => S::cst(1.0),
                    (_, 0) => x[j].powi(p - 1) * p as f64,
                    _ => x[j].powi(p - 1) * p as f64 + x[j].powi(p) * k as f64,
                };
                if k > 0 {
                    factor = factor * x[j].exp().powi(k);
                }
                for i in 0..d {
                    if i == j {
                        continue;
                    }
                    if t.powers[i] > 0 {
                        factor = factor * x[i].powi(t.powers[i]);
                    }
                    if t.exps[i] > 0 {
                        factor = factor * x[i].exp().powi(t.exps[i]);
                    }
                }
                out[mu * d + j] = factor;
            }
        }
        out
    }

    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.dim(), &self.jacobian_with(x))
    }

    /// Row `i` holds the library coordinates of `forms[i]`.
    pub fn coordinates(&self, forms: &[CanonicalForm]) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(forms.len(), self.len());
        for (i, cf) in forms.iter().enumerate() {
            for (k, c) in cf.iter() {
                let j = self
                    .index_of(k)
                    .ok_or_else(|| Error::NotInSpan(format!("term `{k}` is outside the library")))?;
                m[(i, j)] = c;
            }
        }
        Ok(m)
    }

    /// The symbolic map `M_Theta`: stacks the coordinate vectors of each
    /// component. Fails with `NotInSpan` if any component leaves the span.
    pub fn m_theta(&self, components: &[Expr]) -> Result<DMatrix<f64>> {
        let forms = components
            .iter()
            .map(|e| canonicalize(e, self))
            .collect::<Result<Vec<_>>>()?;
        self.coordinates(&forms)
    }

    /// Symbolic components of `J_Theta(x) L x`, one per library term.
    pub fn generator_components(&self, l: &DMatrix<f64>) -> Result<Vec<Expr>> {
        let d = self.dim();
        if l.nrows() != d || l.ncols() != d {
            return Err(Error::Shape(format!(
                "generator matrix is {}x{}, library dimension is {d}",
                l.nrows(),
                l.ncols()
            )));
        }
        // (L x)_j as expressions
        let lx: Vec<Expr> = (0..d)
            .map(|j| {
                (0..d)
                    .filter(|&k| l[(j, k)] != 0.0)
                    .map(|k| Expr::Const(l[(j, k)]) * Expr::Var(k))
                    .reduce(|a, b| a + b)
                    .unwrap_or(Expr::Const(0.0))
            })
            .collect();
        Ok(self
            .term_exprs()
            .iter()
            .map(|term| {
                (0..d)
                    .map(|j| term.differentiate(j) * lx[j].clone())
                    .reduce(|a, b| a + b)
                    .unwrap_or(Expr::Const(0.0))
            })
            .collect())
    }

    /// `M_{Theta,L} = M_Theta(J_Theta(.) L (.))`, a `p x p` matrix with
    /// `J_Theta(x) L x = M Theta(x)` identically. Polynomial libraries only.
    pub fn generator_structure_matrix(&self, l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if self.has_exponentials() {
            return Err(Error::ExponentialLibrary);
        }
        self.m_theta(&self.generator_components(l)?)
    }
}
