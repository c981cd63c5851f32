//! Expansion of expressions into linear combinations of monomial/exponential
//! basis terms.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::Expr;
use crate::error::{Error, Result};
use crate::funclib::FunctionLibrary;

/// Coefficients with magnitude below this are dropped after expansion.
pub const DROP_TOL: f64 = 1e-12;

const MAX_TERMS: usize = 20_000;

/// A basis term `prod_i x_i^powers[i] * exp(x_i)^exps[i]`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TermKey {
    pub powers: Vec<u32>,
    pub exps: Vec<u32>,
}

impl TermKey {
    pub fn one(dim: usize) -> TermKey {
        TermKey {
            powers: vec![0; dim],
            exps: vec![0; dim],
        }
    }

    pub fn monomial(powers: Vec<u32>) -> TermKey {
        let dim = powers.len();
        TermKey {
            powers,
            exps: vec![0; dim],
        }
    }

    pub fn exponential(dim: usize, var: usize) -> TermKey {
        let mut k = TermKey::one(dim);
        k.exps[var] = 1;
        k
    }

    pub fn dim(&self) -> usize {
        self.powers.len()
    }

    pub fn degree(&self) -> u32 {
        self.powers.iter().sum()
    }

    pub fn is_constant(&self) -> bool {
        self.powers.iter().all(|&p| p == 0) && self.exps.iter().all(|&e| e == 0)
    }

    pub fn has_exp(&self) -> bool {
        self.exps.iter().any(|&e| e > 0)
    }

    fn times(&self, other: &TermKey) -> TermKey {
        TermKey {
            powers: self.powers.iter().zip(&other.powers).map(|(a, b)| a + b).collect(),
            exps: self.exps.iter().zip(&other.exps).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut v = 1.0;
        for (i, &xi) in x.iter().enumerate() {
            if self.powers[i] > 0 {
                v *= xi.powi(self.powers[i] as i32);
            }
            if self.exps[i] > 0 {
                v *= (self.exps[i] as f64 * xi).exp();
            }
        }
        v
    }

    pub fn to_expr(&self) -> Expr {
        let mut factors = Vec::new();
        for i in 0..self.dim() {
            match self.powers[i] {
                0 => {}
                1 => factors.push(Expr::Var(i)),
                n => factors.push(Expr::Var(i).pow(n)),
            }
            match self.exps[i] {
                0 => {}
                1 => factors.push(Expr::Var(i).exp()),
                n => factors.push(Expr::Var(i).exp().pow(n)),
            }
        }
        factors
            .into_iter()
            .reduce(|a, b| a * b)
            .unwrap_or(Expr::Const(1.0))
    }
}

impl fmt::Display for TermKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_constant() {
            return f.write_str("1");
        }
        let mut first = true;
        let mut sep = |f: &mut fmt::Formatter<'_>| -> fmt::Result {
            if !first {
                f.write_str("*")?;
            }
            first = false;
            Ok(())
        };
        for i in 0..self.dim() {
            match self.powers[i] {
                0 => {}
                1 => {
                    sep(f)?;
                    write!(f, "x{}", i + 1)?;
                }
                n => {
                    sep(f)?;
                    write!(f, "x{}^{}", i + 1, n)?;
                }
            }
            match self.exps[i] {
                0 => {}
                1 => {
                    sep(f)?;
                    write!(f, "exp(x{})", i + 1)?;
                }
                n => {
                    sep(f)?;
                    write!(f, "exp(x{})^{}", i + 1, n)?;
                }
            }
        }
        Ok(())
    }
}

/// Map from basis term to its (nonzero) coefficient.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CanonicalForm {
    terms: BTreeMap<TermKey, f64>,
}

impl CanonicalForm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_terms(terms: impl IntoIterator<Item = (TermKey, f64)>) -> Self {
        let mut cf = CanonicalForm::new();
        for (k, c) in terms {
            *cf.terms.entry(k).or_insert(0.0) += c;
        }
        cf.prune();
        cf
    }

    fn constant(dim: usize, c: f64) -> Self {
        CanonicalForm::from_terms([(TermKey::one(dim), c)])
    }

    fn prune(&mut self) {
        self.terms.retain(|_, c| c.abs() >= DROP_TOL);
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn get(&self, key: &TermKey) -> f64 {
        self.terms.get(key).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TermKey, f64)> {
        self.terms.iter().map(|(k, &c)| (k, c))
    }

    pub fn keys(&self) -> impl Iterator<Item = &TermKey> {
        self.terms.keys()
    }

    /// Rebuilds `sum c_k * term_k` as an expression.
    pub fn to_expr(&self) -> Expr {
        self.terms
            .iter()
            .map(|(k, &c)| {
                if k.is_constant() {
                    Expr::Const(c)
                } else {
                    Expr::Const(c) * k.to_expr()
                }
            })
            .reduce(|a, b| a + b)
            .unwrap_or(Expr::Const(0.0))
    }

    fn as_constant(&self) -> Option<f64> {
        match self.terms.len() {
            0 => Some(0.0),
            1 => {
                let (k, &c) = self.terms.iter().next()?;
                k.is_constant().then_some(c)
            }
            _ => None,
        }
    }

    fn add(&self, other: &Self, sign: f64) -> Self {
        let mut out = self.clone();
        for (k, &c) in &other.terms {
            *out.terms.entry(k.clone()).or_insert(0.0) += sign * c;
        }
        out
    }

    fn scale(&self, s: f64) -> Self {
        CanonicalForm {
            terms: self.terms.iter().map(|(k, &c)| (k.clone(), s * c)).collect(),
        }
    }

    fn mul(&self, other: &Self) -> Result<Self> {
        if self.terms.len() * other.terms.len() > MAX_TERMS * 4 {
            return Err(Error::NotInSpan("expansion too large".into()));
        }
        let mut out = BTreeMap::new();
        for (ka, &ca) in &self.terms {
            for (kb, &cb) in &other.terms {
                *out.entry(ka.times(kb)).or_insert(0.0) += ca * cb;
            }
        }
        if out.len() > MAX_TERMS {
            return Err(Error::NotInSpan("expansion too large".into()));
        }
        Ok(CanonicalForm { terms: out })
    }
}

/// Expands `e` over `dim` variables without reference to any library.
///
/// Fails with `NotInSpan` on division by a non-constant, on `exp` of anything
/// other than `c + sum k_i x_i` with non-negative integer `k_i`, and on
/// expansions exceeding an internal size limit.
pub fn expand(e: &Expr, dim: usize) -> Result<CanonicalForm> {
    let mut cf = expand_rec(e, dim)?;
    cf.prune();
    Ok(cf)
}

fn expand_rec(e: &Expr, dim: usize) -> Result<CanonicalForm> {
    Ok(match e {
        Expr::Const(c) => CanonicalForm::constant(dim, *c),
        Expr::Var(i) => {
            if *i >= dim {
                return Err(Error::VariableOutOfRange { index: i + 1, dim });
            }
            let mut k = TermKey::one(dim);
            k.powers[*i] = 1;
            CanonicalForm::from_terms([(k, 1.0)])
        }
        Expr::Add(a, b) => expand_rec(a, dim)?.add(&expand_rec(b, dim)?, 1.0),
        Expr::Sub(a, b) => expand_rec(a, dim)?.add(&expand_rec(b, dim)?, -1.0),
        Expr::Neg(a) => expand_rec(a, dim)?.scale(-1.0),
        Expr::Mul(a, b) => expand_rec(a, dim)?.mul(&expand_rec(b, dim)?)?,
        Expr::Div(a, b) => {
            let mut den = expand_rec(b, dim)?;
            den.prune();
            match den.as_constant() {
                Some(c) if c != 0.0 => expand_rec(a, dim)?.scale(1.0 / c),
                _ => return Err(Error::NotInSpan(format!("division by non-constant `{b}`"))),
            }
        }
        Expr::Pow(a, n) => {
            let base = expand_rec(a, dim)?;
            let mut acc = CanonicalForm::constant(dim, 1.0);
            for _ in 0..*n {
                acc = acc.mul(&base)?;
            }
            acc
        }
        Expr::Exp(a) => {
            let mut arg = expand_rec(a, dim)?;
            arg.prune();
            let mut key = TermKey::one(dim);
            let mut offset = 0.0;
            for (k, c) in arg.iter() {
                if k.is_constant() {
                    offset = c;
                    continue;
                }
                let single = k.exps.iter().all(|&x| x == 0)
                    && k.powers.iter().filter(|&&p| p > 0).count() == 1
                    && k.degree() == 1;
                if !single || c < 0.0 || c.fract() != 0.0 {
                    return Err(Error::NotInSpan(format!("exp of non-affine argument `{a}`")));
                }
                let i = k.powers.iter().position(|&p| p == 1).unwrap_or(0);
                key.exps[i] += c as u32;
            }
            CanonicalForm::from_terms([(key, offset.exp())])
        }
    })
}

/// Expands `e` and expresses it in the coordinates of `lib`.
///
/// Returns `NotInSpan` if the expansion needs any term outside the library.
pub fn canonicalize(e: &Expr, lib: &FunctionLibrary) -> Result<CanonicalForm> {
    let cf = expand(e, lib.dim())?;
    for k in cf.keys() {
        if lib.index_of(k).is_none() {
            return Err(Error::NotInSpan(format!("term `{k}` is outside the library")));
        }
    }
    Ok(cf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::expr::tests::arb_expr;
    use proptest::prelude::*;

    fn lib2() -> FunctionLibrary {
        FunctionLibrary::new(2, 2, false)
    }

    #[test]
    fn binomial_expansion() {
        let cf = canonicalize(&parse("(x1+x2)^2", 2).unwrap(), &lib2()).unwrap();
        assert_eq!(cf.len(), 3);
        assert_eq!(cf.get(&TermKey::monomial(vec![2, 0])), 1.0);
        assert_eq!(cf.get(&TermKey::monomial(vec![1, 1])), 2.0);
        assert_eq!(cf.get(&TermKey::monomial(vec![0, 2])), 1.0);
    }

    #[test]
    fn cubic_is_not_in_quadratic_span() {
        let r = canonicalize(&parse("x1^3", 2).unwrap(), &lib2());
        assert!(matches!(r, Err(Error::NotInSpan(_))));
    }

    #[test]
    fn zero_times_variable_is_empty() {
        let cf = canonicalize(&parse("0*x1", 2).unwrap(), &lib2()).unwrap();
        assert!(cf.is_empty());
    }

    #[test]
    fn cancellation_below_threshold_is_dropped() {
        let cf = expand(&parse("x1^2 - x1*x1 + 1e-13*x2", 2).unwrap(), 2).unwrap();
        assert!(cf.is_empty());
    }

    #[test]
    fn constant_division_and_affine_exp() {
        let lib = FunctionLibrary::new(2, 2, true);
        let cf = canonicalize(&parse("2/3 - (4/3)*exp(x2)", 2).unwrap(), &lib).unwrap();
        assert!((cf.get(&TermKey::one(2)) - 2.0 / 3.0).abs() < 1e-15);
        assert!((cf.get(&TermKey::exponential(2, 1)) + 4.0 / 3.0).abs() < 1e-15);

        let cf = expand(&parse("exp(x1 + 1)", 2).unwrap(), 2).unwrap();
        assert!((cf.get(&TermKey::exponential(2, 0)) - 1f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn rejects_division_and_nonaffine_exp() {
        assert!(expand(&parse("1/x1", 2).unwrap(), 2).is_err());
        assert!(expand(&parse("exp(x1*x2)", 2).unwrap(), 2).is_err());
        assert!(expand(&parse("exp(-x1)", 2).unwrap(), 2).is_err());
        // exp(2 x1) expands but is not a library term
        let lib = FunctionLibrary::new(2, 2, true);
        assert!(canonicalize(&parse("exp(2*x1)", 2).unwrap(), &lib).is_err());
    }

    #[test]
    fn key_order_is_traversal_independent() {
        let a = expand(&parse("x1*x2 + x2^2 + 3", 2).unwrap(), 2).unwrap();
        let b = expand(&parse("3 + x2*x2 + x2*x1", 2).unwrap(), 2).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn canonicalization_is_idempotent(e in arb_expr(2)) {
            prop_assume!(e.depth() <= 6);
            if let Ok(cf) = expand(&e, 2) {
                prop_assume!(cf.iter().all(|(_, c)| c.is_finite() && c.abs() < 1e12));
                let again = expand(&cf.to_expr(), 2).unwrap();
                prop_assert_eq!(cf, again);
            }
        }

        #[test]
        fn expansion_evaluates_like_the_expression(
            e in arb_expr(2),
            x in proptest::collection::vec(-1.0f64..1.0, 2),
        ) {
            prop_assume!(e.depth() <= 5);
            if let Ok(cf) = expand(&e, 2) {
                let direct = e.eval(&x);
                prop_assume!(direct.is_finite() && direct.abs() < 1e6);
                let via: f64 = cf.iter().map(|(k, c)| c * k.eval(&x)).sum();
                prop_assert!((direct - via).abs() <= 1e-8 * (1.0 + direct.abs()));
            }
        }
    }
}
