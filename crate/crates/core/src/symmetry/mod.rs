//! Infinitesimal symmetry generators, the group elements they generate, the
//! infinitesimal criterion `J_h v = J_v h`, and symmetry-regularization losses.

mod loss;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ad::Scalar;
use crate::error::{Error, Result};
use crate::expr::{parse, Expr};
use crate::linalg::{const_matvec, expm_scaled};
use crate::ode::{flow, flow_jacobian, ExprField, VectorField};

pub use loss::{
    loss_fgfe, loss_fgie, loss_igfe, loss_igie, sindy_loss_gradient, symmetry_loss, LossKind,
    LossSettings, LossValue, SymmetryCache, DEGENERATE_DENOMINATOR,
};

/// RK4 substeps used to exponentiate symbolic generators.
pub const DEFAULT_ACT_STEPS: usize = 64;

#[derive(Clone, Debug)]
pub enum GeneratorKind {
    /// `v(x) = L x`.
    Linear(DMatrix<f64>),
    /// Closed-form time-independent vector field.
    Symbolic(ExprField),
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub kind: GeneratorKind,
    pub label: String,
}

/// Config form: `{"kind":"linear","matrix":[[..]]}` or
/// `{"kind":"symbolic","components":["x2","-x1"]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum GeneratorSpec {
    Linear {
        matrix: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    Symbolic {
        components: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
}

impl Generator {
    pub fn linear(l: DMatrix<f64>, label: impl Into<String>) -> Result<Self> {
        if !l.is_square() {
            return Err(Error::Shape(format!("generator matrix is {}x{}", l.nrows(), l.ncols())));
        }
        if l.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("generator matrix entry".into()));
        }
        Ok(Generator {
            kind: GeneratorKind::Linear(l),
            label: label.into(),
        })
    }

    pub fn symbolic(components: Vec<Expr>, label: impl Into<String>) -> Result<Self> {
        let d = components.len();
        for c in &components {
            c.check_dim(d)?;
        }
        Ok(Generator {
            kind: GeneratorKind::Symbolic(ExprField::new(components)),
            label: label.into(),
        })
    }

    pub fn from_spec(spec: &GeneratorSpec, dim: usize) -> Result<Self> {
        match spec {
            GeneratorSpec::Linear { matrix, label } => {
                if matrix.len() != dim || matrix.iter().any(|r| r.len() != dim) {
                    return Err(Error::config("generators.matrix", format!("expected a {dim}x{dim} matrix")));
                }
                let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
                Generator::linear(
                    DMatrix::from_row_slice(dim, dim, &flat),
                    label.clone().unwrap_or_else(|| "linear".into()),
                )
            }
            GeneratorSpec::Symbolic { components, label } => {
                if components.len() != dim {
                    return Err(Error::config(
                        "generators.components",
                        format!("expected {dim} components"),
                    ));
                }
                let exprs = components
                    .iter()
                    .map(|c| parse(c, dim))
                    .collect::<Result<Vec<_>>>()?;
                Generator::symbolic(exprs, label.clone().unwrap_or_else(|| "symbolic".into()))
            }
        }
    }

    pub fn to_spec(&self) -> GeneratorSpec {
        let label = Some(self.label.clone());
        match &self.kind {
            GeneratorKind::Linear(l) => GeneratorSpec::Linear {
                matrix: l.row_iter().map(|r| r.iter().copied().collect()).collect(),
                label,
            },
            GeneratorKind::Symbolic(f) => GeneratorSpec::Symbolic {
                components: f.components().iter().map(|c| c.to_string()).collect(),
                label,
            },
        }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            GeneratorKind::Linear(l) => l.nrows(),
            GeneratorKind::Symbolic(f) => VectorField::<f64>::dim(f),
        }
    }

    pub fn as_linear(&self) -> Option<&DMatrix<f64>> {
        match &self.kind {
            GeneratorKind::Linear(l) => Some(l),
            GeneratorKind::Symbolic(_) => None,
        }
    }

    /// `v(x)` and `J_v(x)`.
    pub fn infinitesimal_action(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.dim();
        let v = VectorField::<f64>::eval(self, x);
        let j = VectorField::<f64>::jacobian(self, x);
        (DVector::from_vec(v), DMatrix::from_row_slice(d, d, &j))
    }

    pub fn element(&self, epsilon: f64) -> GroupElement {
        GroupElement::new(self.clone(), epsilon)
    }
}

impl<S: Scalar> VectorField<S> for Generator {
    fn dim(&self) -> usize {
        Generator::dim(self)
    }

    fn eval(&self, x: &[S]) -> Vec<S> {
        match &self.kind {
            GeneratorKind::Linear(l) => const_matvec(l, x),
            GeneratorKind::Symbolic(f) => f.eval(x),
        }
    }

    fn jacobian(&self, x: &[S]) -> Vec<S> {
        match &self.kind {
            GeneratorKind::Linear(l) => l.transpose().iter().map(|&v| S::cst(v)).collect(),
            GeneratorKind::Symbolic(f) => f.jacobian(x),
        }
    }
}

/// `g = exp(epsilon v)`.
#[derive(Clone, Debug)]
pub struct GroupElement {
    pub generator: Generator,
    pub epsilon: f64,
    matrix: Option<DMatrix<f64>>,
}

impl GroupElement {
    pub fn new(generator: Generator, epsilon: f64) -> Self {
        assert!(epsilon.is_finite(), "group parameter must be finite");
        let matrix = generator.as_linear().map(|l| expm_scaled(l, epsilon));
        GroupElement {
            generator,
            epsilon,
            matrix,
        }
    }

    pub fn inverse(&self) -> GroupElement {
        GroupElement::new(self.generator.clone(), -self.epsilon)
    }

    /// `g . x`: matrix exponential for linear generators, RK4 flow of `v`
    /// over time `epsilon` otherwise.
    pub fn act_with<S: Scalar>(&self, x: &[S], steps: usize) -> Result<Vec<S>> {
        if self.epsilon == 0.0 {
            return Ok(x.to_vec());
        }
        match (&self.matrix, &self.generator.kind) {
            (Some(m), _) => Ok(const_matvec(m, x)),
            (None, GeneratorKind::Symbolic(f)) => flow(f, x, self.epsilon, steps),
            (None, GeneratorKind::Linear(_)) => unreachable!("linear generators cache exp(eps L)"),
        }
    }

    pub fn act(&self, x: &[f64], steps: usize) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(self.act_with(x, steps)?))
    }

    /// `J_g(x)`: `exp(eps L)` for linear generators, variational flow otherwise.
    pub fn jacobian(&self, x: &[f64], steps: usize) -> Result<DMatrix<f64>> {
        let d = x.len();
        if self.epsilon == 0.0 {
            return Ok(DMatrix::identity(d, d));
        }
        match (&self.matrix, &self.generator.kind) {
            (Some(m), _) => Ok(m.clone()),
            (None, GeneratorKind::Symbolic(f)) => {
                let (_, j) = flow_jacobian(f, x, self.epsilon, steps)?;
                Ok(DMatrix::from_row_slice(d, d, &j))
            }
            (None, GeneratorKind::Linear(_)) => unreachable!("linear generators cache exp(eps L)"),
        }
    }
}

/// Residual statistics of `||J_h v - J_v h|| / (1 + ||J_v h||)` over samples.
#[derive(Clone, Debug, Serialize)]
pub struct CriterionReport {
    pub max: f64,
    pub mean: f64,
    /// Largest unnormalized residual `||J_h v - J_v h||`.
    pub max_abs: f64,
    pub samples: usize,
    pub tol: f64,
    pub consistent: bool,
}

pub const DEFAULT_CRITERION_TOL: f64 = 1e-8;

pub fn check_infinitesimal_criterion<F: VectorField<f64>>(
    h: &F,
    generator: &Generator,
    samples: &[Vec<f64>],
    tol: f64,
) -> CriterionReport {
    assert!(!samples.is_empty(), "criterion check needs at least one sample");
    let d = h.dim();
    let mut max: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut terms = Vec::with_capacity(samples.len());
    for x in samples {
        let hx = DVector::from_vec(h.eval(x));
        let jh = DMatrix::from_row_slice(d, d, &h.jacobian(x));
        let (v, jv) = generator.infinitesimal_action(x);
        let jvh = &jv * &hx;
        let raw = (&jh * &v - &jvh).norm();
        let r = raw / (1.0 + jvh.norm());
        max = max.max(r);
        max_abs = max_abs.max(raw);
        terms.push(r);
    }
    let mean = crate::ad::pairwise_sum(&terms) / terms.len() as f64;
    CriterionReport {
        max,
        mean,
        max_abs,
        samples: samples.len(),
        tol,
        consistent: max <= tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, LN_2};

    fn rotation() -> Generator {
        Generator::linear(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]), "rotation").unwrap()
    }

    fn scaling_symbolic() -> Generator {
        Generator::symbolic(vec![parse("2*x1", 2).unwrap(), parse("x2", 2).unwrap()], "scaling").unwrap()
    }

    fn field(src: &[&str]) -> ExprField {
        let d = src.len();
        ExprField::new(src.iter().map(|s| parse(s, d).unwrap()).collect())
    }

    #[test]
    fn rotation_acts_by_closed_form() {
        let y = rotation().element(FRAC_PI_2).act(&[1.0, 0.0], 64).unwrap();
        assert!(y[0].abs() < 1e-12 && (y[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_element() {
        for g in [rotation(), scaling_symbolic()] {
            let e = g.element(0.0);
            assert_eq!(e.act(&[0.3, 0.4], 64).unwrap().as_slice(), &[0.3, 0.4]);
            assert_eq!(e.jacobian(&[0.3, 0.4], 64).unwrap(), DMatrix::identity(2, 2));
        }
    }

    #[test]
    fn symbolic_scaling_flow() {
        let a: f64 = 1.7;
        let g = scaling_symbolic().element(a.ln());
        let y = g.act(&[1.0, 1.0], 64).unwrap();
        assert!((y[0] - a * a).abs() < 1e-8 && (y[1] - a).abs() < 1e-8);
        let j = g.jacobian(&[0.4, -0.9], 64).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[a * a, 0.0, 0.0, a]);
        assert!((j - expect).amax() < 1e-8);
    }

    #[test]
    fn linear_jacobian_is_state_independent() {
        let g = rotation().element(0.4);
        let j1 = g.jacobian(&[1.0, 2.0], 64).unwrap();
        let j2 = g.jacobian(&[-5.0, 0.1], 64).unwrap();
        assert_eq!(j1, j2);
        assert_eq!(j1, expm_scaled(rotation().as_linear().unwrap(), 0.4));
        let s = Generator::linear(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]), "s").unwrap();
        let j = s.element(LN_2).jacobian(&[3.0, 3.0], 64).unwrap();
        assert!((j[(0, 0)] - 4.0).abs() < 1e-12 && (j[(1, 1)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn infinitesimal_actions() {
        let (v, _) = rotation().infinitesimal_action(&[0.7, -1.1]);
        assert_eq!(v.as_slice(), &[-1.1, -0.7]);
        let zero = Generator::linear(DMatrix::zeros(2, 2), "zero").unwrap();
        assert_eq!(zero.infinitesimal_action(&[1.0, 2.0]).0.as_slice(), &[0.0, 0.0]);
        let seir = Generator::symbolic(
            vec![
                Expr::Const(0.0),
                Expr::Const(0.0),
                Expr::Const(0.0),
                parse("x1 + x2 + x3 + x4", 4).unwrap(),
            ],
            "population",
        )
        .unwrap();
        let (_, j) = seir.infinitesimal_action(&[0.1, 0.2, 0.3, 0.4]);
        let mut expect = DMatrix::zeros(4, 4);
        expect.row_mut(3).fill(1.0);
        assert_eq!(j, expect);
    }

    #[test]
    fn criterion_examples() {
        let pts: Vec<Vec<f64>> = (0..50)
            .map(|i| {
                let t = i as f64 * 0.37;
                vec![t.cos() * (0.5 + 0.03 * i as f64), t.sin()]
            })
            .collect();
        let osc = field(&["-0.1*x1 - x2", "x1 - 0.1*x2"]);
        let rep = check_infinitesimal_criterion(&osc, &rotation(), &pts, DEFAULT_CRITERION_TOL);
        assert!(rep.max <= 1e-12 && rep.consistent);

        let growth = field(&["-0.3*x1 + 0.1*x2^2", "x2"]);
        let lin = Generator::linear(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]), "s").unwrap();
        assert!(check_infinitesimal_criterion(&growth, &lin, &pts, 1e-8).max <= 1e-12);
        assert!(check_infinitesimal_criterion(&growth, &scaling_symbolic(), &pts, 1e-8).max <= 1e-12);

        let broken = field(&["x1^2", "0"]);
        let rep = check_infinitesimal_criterion(&broken, &rotation(), &[vec![1.0, 1.0]], 1e-8);
        assert!((rep.max_abs - 5f64.sqrt()).abs() < 1e-14);
        assert!(rep.max >= 1.0 && !rep.consistent);
    }

    #[test]
    fn spec_roundtrip() {
        let spec: GeneratorSpec =
            serde_json::from_str(r#"{"kind":"symbolic","components":["x2","-x1"]}"#).unwrap();
        let g = Generator::from_spec(&spec, 2).unwrap();
        let (v, _) = g.infinitesimal_action(&[1.0, 2.0]);
        assert_eq!(v.as_slice(), &[2.0, -1.0]);
        let spec: GeneratorSpec =
            serde_json::from_str(r#"{"kind":"linear","matrix":[[0,1],[-1,0]]}"#).unwrap();
        assert!(Generator::from_spec(&spec, 2).unwrap().as_linear().is_some());
        assert!(Generator::from_spec(&spec, 3).is_err());
        assert!(serde_json::from_str::<GeneratorSpec>(r#"{"kind":"linear","matrix":[[1]],"bogus":1}"#).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn inverse_undoes_action(
                x in proptest::collection::vec(0.2f64..1.0, 2),
                eps in -0.5f64..0.5,
            ) {
                for g in [rotation(), scaling_symbolic()] {
                    let e = g.element(eps);
                    let back = e.inverse().act(e.act(&x, 64).unwrap().as_slice(), 64).unwrap();
                    prop_assert!((back[0] - x[0]).abs() < 1e-8 && (back[1] - x[1]).abs() < 1e-8);
                }
            }

            #[test]
            fn linear_action_is_linear(
                x in proptest::collection::vec(-2.0f64..2.0, 2),
                y in proptest::collection::vec(-2.0f64..2.0, 2),
                a in -2.0f64..2.0, b in -2.0f64..2.0, eps in -1.0f64..1.0,
            ) {
                let e = rotation().element(eps);
                let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
                let lhs = e.act(&combo, 64).unwrap();
                let rhs = e.act(&x, 64).unwrap() * a + e.act(&y, 64).unwrap() * b;
                prop_assert!((lhs - rhs).amax() < 1e-14);
            }
        }
    }
}
