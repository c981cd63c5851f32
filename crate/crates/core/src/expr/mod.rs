//! Symbolic expression trees over state variables `x1..xd`.
//!
//! Grammar accepted by [`parse`] (whitespace is ignored):
//!
//! ```text
//! sum     = product { ("+" | "-") product } ;
//! product = unary { ("*" | "/") unary } ;
//! unary   = "-" unary | power ;
//! power   = atom [ "^" integer ] ;
//! atom    = number | variable | "exp" "(" sum ")" | "(" sum ")" ;
//! variable = "x" integer ;            (* 1-based, x1 .. xd *)
//! number  = digits [ "." digits ] [ ("e" | "E") [ "+" | "-" ] digits ] ;
//! ```
//!
//! Exponents are non-negative integer literals. Printing with `Display`
//! produces text that parses back to an expression with bit-identical
//! evaluation.

mod canon;
mod diff;
mod parse;

use std::fmt;

use crate::ad::Scalar;
use crate::error::{Error, Result};

pub use canon::{canonicalize, expand, CanonicalForm, TermKey};
pub use parse::parse;

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Zero-based variable index; printed as `x{index + 1}`.
    Var(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Exp(Box<Expr>),
    Pow(Box<Expr>, u32),
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    pub fn exp(self) -> Expr {
        Expr::Exp(Box::new(self))
    }

    pub fn pow(self, n: u32) -> Expr {
        Expr::Pow(Box::new(self), n)
    }

    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Const(_) | Expr::Var(_) => vec![],
            Expr::Neg(a) | Expr::Exp(a) | Expr::Pow(a, _) => vec![a],
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => vec![a, b],
        }
    }

    pub fn depth(&self) -> usize {
        1 + self.children().iter().map(|c| c.depth()).max().unwrap_or(0)
    }

    pub fn node_count(&self) -> usize {
        1 + self.children().iter().map(|c| c.node_count()).sum::<usize>()
    }

    /// Largest variable index used, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Var(i) => Some(*i),
            _ => self.children().iter().filter_map(|c| c.max_var()).max(),
        }
    }

    pub fn contains_div(&self) -> bool {
        matches!(self, Expr::Div(..)) || self.children().iter().any(|c| c.contains_div())
    }

    /// Checks every variable index against `dim`.
    pub fn check_dim(&self, dim: usize) -> Result<()> {
        match self.max_var() {
            Some(i) if i >= dim => Err(Error::VariableOutOfRange { index: i + 1, dim }),
            _ => Ok(()),
        }
    }

    /// IEEE evaluation. Division by zero propagates as inf/NaN.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_with(x)
    }

    /// Like [`Expr::eval`] but reports non-finite results as an error.
    pub fn eval_finite(&self, x: &[f64]) -> Result<f64> {
        let v = self.eval(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!("{self} evaluated to {v} at {x:?}")))
        }
    }

    pub fn eval_with<S: Scalar>(&self, x: &[S]) -> S {
        match self {
            Expr::Const(c) => S::cst(*c),
            Expr::Var(i) => x[*i],
            Expr::Add(a, b) => a.eval_with(x) + b.eval_with(x),
            Expr::Sub(a, b) => a.eval_with(x) - b.eval_with(x),
            Expr::Mul(a, b) => a.eval_with(x) * b.eval_with(x),
            Expr::Div(a, b) => a.eval_with(x) / b.eval_with(x),
            Expr::Neg(a) => -a.eval_with(x),
            Expr::Exp(a) => a.eval_with(x).exp(),
            Expr::Pow(a, n) => a.eval_with(x).powi(*n),
        }
    }

    /// Symbolic partial derivative with respect to variable `var` (zero-based).
    pub fn differentiate(&self, var: usize) -> Expr {
        diff::differentiate(self, var)
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }
}

macro_rules! binop {
    ($tr:ident, $m:ident, $var:ident) => {
        impl std::ops::$tr for Expr {
            type Output = Expr;
            fn $m(self, rhs: Expr) -> Expr {
                Expr::$var(Box::new(self), Box::new(rhs))
            }
        }
    };
}
binop!(Add, add, Add);
binop!(Sub, sub, Sub);
binop!(Mul, mul, Mul);
binop!(Div, div, Div);

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, child: &Expr, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({child})")
    } else {
        write!(f, "{child}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if c.is_sign_negative() {
                    write!(f, "(-{:?})", -c)
                } else {
                    write!(f, "{c:?}")
                }
            }
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                let p = self.precedence();
                let op = match self {
                    Expr::Add(..) => " + ",
                    Expr::Sub(..) => " - ",
                    Expr::Mul(..) => "*",
                    _ => "/",
                };
                write_child(f, a, a.precedence() < p)?;
                f.write_str(op)?;
                write_child(f, b, b.precedence() <= p)
            }
            Expr::Neg(a) => {
                f.write_str("-")?;
                write_child(f, a, a.precedence() < 3)
            }
            Expr::Exp(a) => write!(f, "exp({a})"),
            Expr::Pow(a, n) => {
                write_child(f, a, a.precedence() <= 4)?;
                write!(f, "^{n}")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(s: &str, d: usize) -> Expr {
        parse(s, d).unwrap()
    }

    #[test]
    fn oscillator_rhs_evaluates() {
        let e = p("-0.1*x1 - x2", 2);
        for &(a, b) in &[(1.0, 2.0), (-0.3, 0.7), (0.0, 0.0)] {
            assert_eq!(e.eval(&[a, b]), -0.1 * a - b);
        }
    }

    #[test]
    fn zero_literal() {
        assert_eq!(p("0", 1), Expr::Const(0.0));
    }

    #[test]
    fn lotka_volterra_rhs_at_origin() {
        let e = p("2/3 - (4/3)*exp(x2)", 2);
        assert!((e.eval(&[0.0, 0.0]) + 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn eval_examples() {
        assert_eq!(p("x1*x2^2", 2).eval(&[0.75, 2.0]), 3.0);
        assert_eq!(Expr::Const(5.0).eval(&[1.0, -4.0]), 5.0);
        assert_eq!(p("exp(x1)", 1).eval(&[0.0]), 1.0);
    }

    #[test]
    fn division_by_zero_is_flagged() {
        let e = p("1/x1", 1);
        assert!(e.eval(&[0.0]).is_infinite());
        assert!(matches!(e.eval_finite(&[0.0]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn structure_queries() {
        let e = p("x1*x2^2 + exp(x1)", 2);
        assert_eq!(e.depth(), 4);
        assert_eq!(e.node_count(), 7);
        assert_eq!(e.max_var(), Some(1));
        assert!(e.check_dim(1).is_err());
    }

    #[test]
    fn display_is_readable() {
        assert_eq!(p("-0.1*x1 - x2", 2).to_string(), "-0.1*x1 - x2");
        assert_eq!(p("x1 - (x2 - x1)", 2).to_string(), "x1 - (x2 - x1)");
        assert_eq!(p("(-x1)^2", 1).to_string(), "(-x1)^2");
        assert_eq!(Expr::Const(-2.5).to_string(), "(-2.5)");
    }

    pub(crate) fn arb_expr(dim: usize) -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (-5.0f64..5.0).prop_map(Expr::Const),
            (0..dim).prop_map(Expr::Var),
        ];
        leaf.prop_recursive(5, 48, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| a + b),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| a - b),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| a * b),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| a / b),
                inner.clone().prop_map(|a| -a),
                inner.clone().prop_map(|a| a.exp()),
                (inner, 0u32..4).prop_map(|(a, n)| a.pow(n)),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_roundtrip_preserves_evaluation(
            e in arb_expr(3),
            x in proptest::collection::vec(-2.0f64..2.0, 3),
        ) {
            prop_assume!(e.depth() <= 6);
            let back = parse(&e.to_string(), 3).unwrap();
            let (a, b) = (e.eval(&x), back.eval(&x));
            prop_assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()), "{} vs {}", a, b);
        }
    }
}
