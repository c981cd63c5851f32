//! Sparse-regression models `h(x) = W Theta(x)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ad::Scalar;
use crate::expr::{CanonicalForm, Expr};
use crate::funclib::FunctionLibrary;
use crate::ode::VectorField;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct SindyModel {
    pub lib: FunctionLibrary,
    /// `d x p` coefficient matrix.
    pub w: DMatrix<f64>,
    pub provenance: Provenance,
}

impl SindyModel {
    pub fn new(lib: FunctionLibrary, w: DMatrix<f64>) -> Self {
        assert_eq!(w.shape(), (lib.dim(), lib.len()), "coefficient shape");
        SindyModel {
            lib,
            w,
            provenance: Provenance::default(),
        }
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn dim(&self) -> usize {
        self.lib.dim()
    }

    pub fn field(&self) -> CoefficientField<'_, f64> {
        CoefficientField::new(&self.lib, self.w.transpose().as_slice().to_vec())
    }

    pub fn h(&self, x: &[f64]) -> DVector<f64> {
        &self.w * self.lib.eval(x)
    }

    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        &self.w * self.lib.jacobian(x)
    }

    /// Per-equation canonical forms of the nonzero coefficients.
    pub fn forms(&self) -> Vec<CanonicalForm> {
        (0..self.dim())
            .map(|i| {
                CanonicalForm::from_terms(
                    self.lib
                        .terms()
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| self.w[(i, j)] != 0.0)
                        .map(|(j, k)| (k.clone(), self.w[(i, j)])),
                )
            })
            .collect()
    }

    pub fn to_exprs(&self) -> Vec<Expr> {
        self.forms().iter().map(CanonicalForm::to_expr).collect()
    }

    /// Human-readable equations, e.g. `dx1/dt = -0.1*x1 - 1*x2`.
    pub fn equations(&self) -> Vec<String> {
        format_equations(&self.lib, &self.w)
    }
}

pub fn format_equations(lib: &FunctionLibrary, w: &DMatrix<f64>) -> Vec<String> {
    let names = lib.term_names();
    (0..w.nrows())
        .map(|i| {
            let mut rhs = String::new();
            for (j, name) in names.iter().enumerate() {
                let c = w[(i, j)];
                if c == 0.0 {
                    continue;
                }
                let mag = format!("{:.6}", c.abs());
                let body = if name == "1" { mag } else { format!("{mag}*{name}") };
                if rhs.is_empty() {
                    rhs = if c < 0.0 { format!("-{body}") } else { body };
                } else {
                    rhs.push_str(if c < 0.0 { " - " } else { " + " });
                    rhs.push_str(&body);
                }
            }
            if rhs.is_empty() {
                rhs.push('0');
            }
            format!("dx{}/dt = {rhs}", i + 1)
        })
        .collect()
}

/// `h(x) = W Theta(x)` with coefficients of arbitrary scalar type, so the
/// same field can be evaluated plainly or on the differentiation tape.
/// Coefficients are row-major `d x p`; entries outside `active` are treated
/// as exact zeros.
pub struct CoefficientField<'a, S> {
    lib: &'a FunctionLibrary,
    w: Vec<S>,
    active: Option<&'a [bool]>,
}

impl<'a, S: Scalar> CoefficientField<'a, S> {
    pub fn new(lib: &'a FunctionLibrary, w: Vec<S>) -> Self {
        assert_eq!(w.len(), lib.dim() * lib.len());
        CoefficientField { lib, w, active: None }
    }

    pub fn with_mask(mut self, active: &'a [bool]) -> Self {
        self.active = Some(active);
        self
    }

    fn is_active(&self, idx: usize) -> bool {
        self.active.is_none_or(|m| m[idx])
    }
}

impl<S: Scalar> VectorField<S> for CoefficientField<'_, S> {
    fn dim(&self) -> usize {
        self.lib.dim()
    }

    fn eval(&self, x: &[S]) -> Vec<S> {
        let theta = self.lib.eval_with(x);
        let p = theta.len();
        (0..self.lib.dim())
            .map(|i| {
                let mut acc = S::zero();
                for (j, &t) in theta.iter().enumerate() {
                    if self.is_active(i * p + j) {
                        acc += self.w[i * p + j] * t;
                    }
                }
                acc
            })
            .collect()
    }

    fn jacobian(&self, x: &[S]) -> Vec<S> {
        let jt = self.lib.jacobian_with(x);
        let d = self.lib.dim();
        let p = self.lib.len();
        let mut out = vec![S::zero(); d * d];
        for i in 0..d {
            for j in 0..p {
                if !self.is_active(i * p + j) {
                    continue;
                }
                let w = self.w[i * p + j];
                for k in 0..d {
                    out[i * d + k] += w * jt[j * d + k];
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_matches_matrix_form() {
        let lib = FunctionLibrary::new(2, 2, false);
        let w = DMatrix::from_row_slice(2, 6, &[0.0, -0.1, -1.0, 0.5, 0.0, 0.0, 0.0, 1.0, -0.1, 0.0, 0.0, 0.2]);
        let m = SindyModel::new(lib, w);
        let x = [0.4, -1.3];
        let f = m.field();
        let hv = f.eval(&x);
        let h = m.h(&x);
        assert!((hv[0] - h[0]).abs() < 1e-15 && (hv[1] - h[1]).abs() < 1e-15);
        let j = f.jacobian(&x);
        let jm = m.jacobian(&x);
        for r in 0..2 {
            for c in 0..2 {
                assert!((j[r * 2 + c] - jm[(r, c)]).abs() < 1e-15);
            }
        }
        assert_eq!(
            m.equations(),
            [
                "dx1/dt = -0.100000*x1 - 1.000000*x2 + 0.500000*x1^2",
                "dx2/dt = 1.000000*x1 - 0.100000*x2 + 0.200000*x2^2"
            ]
        );
    }
}
