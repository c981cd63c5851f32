use std::cell::RefCell;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Generator, GroupElement, DEFAULT_ACT_STEPS};
use crate::ad::{gradient, pairwise_sum, Scalar, Var};
use crate::error::{Error, Result};
use crate::funclib::FunctionLibrary;
use crate::linalg::matvec;
use crate::model::CoefficientField;
use crate::ode::{flow, flow_jvp, VectorField};

/// Pairs whose denominator falls below this are skipped and counted.
pub const DEGENERATE_DENOMINATOR: f64 = 1e-30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Infinitesimal group action against the finite-time flow.
    Igfe,
    /// Finite group element against the finite-time flow.
    Fgfe,
    /// Finite group element against the infinitesimal dynamics.
    Fgie,
    /// Infinitesimal group action against the infinitesimal dynamics.
    Igie,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Igfe, LossKind::Fgfe, LossKind::Fgie, LossKind::Igie];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Igfe => "igfe",
            LossKind::Fgfe => "fgfe",
            LossKind::Fgie => "fgie",
            LossKind::Igie => "igie",
        }
    }

    pub fn uses_flow(self) -> bool {
        matches!(self, LossKind::Igfe | LossKind::Fgfe)
    }

    pub fn uses_group_element(self) -> bool {
        matches!(self, LossKind::Fgfe | LossKind::Fgie)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSettings {
    pub tau: f64,
    pub eps: f64,
    /// RK4 substeps for the flow of `h` over `tau`.
    pub flow_steps: usize,
    /// RK4 substeps for symbolic group elements.
    pub act_steps: usize,
}

impl LossSettings {
    pub fn new(tau: f64) -> Self {
        LossSettings {
            tau,
            eps: 0.1,
            flow_steps: 64,
            act_steps: DEFAULT_ACT_STEPS,
        }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_flow_steps(mut self, steps: usize) -> Self {
        self.flow_steps = steps;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossValue {
    pub value: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

struct Entry {
    v: Vec<f64>,
    jv: Vec<f64>,
    gx: Vec<f64>,
    jg: Vec<f64>,
}

/// Everything about a batch that does not depend on the dynamics: `v(x)`,
/// `J_v(x)`, `g . x` and `J_g(x)` for every (generator, point) pair.
pub struct SymmetryCache {
    points: Vec<Vec<f64>>,
    elements: Vec<GroupElement>,
    act_steps: usize,
    entries: Vec<Entry>,
}

impl SymmetryCache {
    pub fn new(gens: &[Generator], points: Vec<Vec<f64>>, eps: f64, act_steps: usize) -> Result<Self> {
        if let Some(d) = points.first().map(Vec::len) {
            if points.iter().any(|p| p.len() != d) || gens.iter().any(|g| g.dim() != d) {
                return Err(Error::Shape("batch points and generators disagree on dimension".into()));
            }
        }
        let elements: Vec<GroupElement> = gens.iter().map(|g| g.element(eps)).collect();
        let pairs: Vec<(usize, usize)> = (0..gens.len())
            .flat_map(|g| (0..points.len()).map(move |i| (g, i)))
            .collect();
        let entries = pairs
            .par_iter()
            .map(|&(g, i)| {
                let x = &points[i];
                let el = &elements[g];
                Ok(Entry {
                    v: VectorField::<f64>::eval(&el.generator, x),
                    jv: VectorField::<f64>::jacobian(&el.generator, x),
                    gx: el.act_with(x, act_steps)?,
                    jg: el.jacobian(x, act_steps)?.transpose().as_slice().to_vec(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SymmetryCache {
            points,
            elements,
            act_steps,
            entries,
        })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn eps(&self) -> f64 {
        self.elements.first().map_or(0.0, |e| e.epsilon)
    }

    pub fn num_pairs(&self) -> usize {
        self.entries.len()
    }

    fn pair(&self, k: usize) -> (&GroupElement, &[f64], &Entry) {
        let n = self.points.len();
        (&self.elements[k / n], &self.points[k % n], &self.entries[k])
    }
}

fn sq_norm<S: Scalar>(v: &[S]) -> S {
    let mut acc = S::zero();
    for &x in v {
        acc += x * x;
    }
    acc
}

fn diff<S: Scalar>(a: &[S], b: &[S]) -> Vec<S> {
    a.iter().zip(b).map(|(&p, &q)| p - q).collect()
}

fn lift<S: Scalar>(v: &[f64]) -> Vec<S> {
    v.iter().map(|&x| S::cst(x)).collect()
}

/// Numerator and denominator of one (point, generator) term.
fn pair_terms<S: Scalar, F: VectorField<S>>(
    kind: LossKind,
    h: &F,
    cache: &SymmetryCache,
    k: usize,
    s: &LossSettings,
) -> Result<(S, S)> {
    let (el, x, e) = cache.pair(k);
    let xs = lift::<S>(x);
    match kind {
        LossKind::Igfe => {
            let (y, jfv) = flow_jvp(h, &xs, &lift(&e.v), s.tau, s.flow_steps)?;
            let vy = VectorField::<S>::eval(&el.generator, &y);
            Ok((sq_norm(&diff(&jfv, &vy)), sq_norm(&jfv)))
        }
        LossKind::Fgfe => {
            let a = flow(h, &lift(&e.gx), s.tau, s.flow_steps)?;
            let b = flow(h, &xs, s.tau, s.flow_steps)?;
            let gb = el.act_with(&b, cache.act_steps)?;
            Ok((sq_norm(&diff(&a, &gb)), sq_norm(&diff(&a, &b))))
        }
        LossKind::Fgie => {
            let jgh = matvec(&lift(&e.jg), &h.eval(&xs));
            let hgx = h.eval(&lift(&e.gx));
            Ok((sq_norm(&diff(&jgh, &hgx)), sq_norm(&jgh)))
        }
        LossKind::Igie => {
            let jvh = matvec(&lift(&e.jv), &h.eval(&xs));
            let jhv = matvec(&h.jacobian(&xs), &lift(&e.v));
            Ok((sq_norm(&diff(&jvh, &jhv)), sq_norm(&jvh)))
        }
    }
}

fn check_settings(kind: LossKind, cache: &SymmetryCache, s: &LossSettings) -> Result<()> {
    if kind.uses_flow() && !(s.tau > 0.0 && s.tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("flow time must be positive, got {}", s.tau)));
    }
    if kind.uses_flow() && s.flow_steps == 0 {
        return Err(Error::InvalidArgument("flow needs at least one substep".into()));
    }
    if kind == LossKind::Fgfe && cache.num_pairs() > 0 && cache.eps() == 0.0 {
        return Err(Error::InvalidArgument(
            "the finite-flow equivariance loss is undefined at the identity element".into(),
        ));
    }
    if cache.num_pairs() == 0 && !cache.elements.is_empty() {
        return Err(Error::InvalidArgument("symmetry batch is empty".into()));
    }
    Ok(())
}

fn finish(terms: Vec<Option<f64>>) -> Result<LossValue> {
    let kept: Vec<f64> = terms.iter().flatten().copied().collect();
    let skipped = terms.len() - kept.len();
    if terms.is_empty() {
        return Ok(LossValue {
            value: 0.0,
            evaluated: 0,
            skipped: 0,
        });
    }
    if kept.is_empty() {
        return Err(Error::DegenerateBatch(skipped));
    }
    Ok(LossValue {
        value: pairwise_sum(&kept) / kept.len() as f64,
        evaluated: kept.len(),
        skipped,
    })
}

/// Mean relative symmetry defect of `h` over all (generator, point) pairs in
/// the cache.
pub fn symmetry_loss<F: VectorField<f64>>(
    kind: LossKind,
    h: &F,
    cache: &SymmetryCache,
    s: &LossSettings,
) -> Result<LossValue> {
    check_settings(kind, cache, s)?;
    let terms = (0..cache.num_pairs())
        .into_par_iter()
        .map(|k| {
            let (num, den) = pair_terms(kind, h, cache, k, s)?;
            Ok((den >= DEGENERATE_DENOMINATOR).then(|| num / den))
        })
        .collect::<Result<Vec<_>>>()?;
    finish(terms)
}

fn one_shot<F: VectorField<f64>>(
    kind: LossKind,
    h: &F,
    gens: &[Generator],
    batch: &[Vec<f64>],
    s: &LossSettings,
) -> Result<LossValue> {
    let eps = if kind.uses_group_element() { s.eps } else { 0.0 };
    let cache = SymmetryCache::new(gens, batch.to_vec(), eps, s.act_steps)?;
    symmetry_loss(kind, h, &cache, s)
}

pub fn loss_igfe<F: VectorField<f64>>(
    h: &F,
    gens: &[Generator],
    batch: &[Vec<f64>],
    s: &LossSettings,
) -> Result<LossValue> {
    one_shot(LossKind::Igfe, h, gens, batch, s)
}

pub fn loss_fgfe<F: VectorField<f64>>(
    h: &F,
    gens: &[Generator],
    batch: &[Vec<f64>],
    s: &LossSettings,
) -> Result<LossValue> {
    one_shot(LossKind::Fgfe, h, gens, batch, s)
}

pub fn loss_fgie<F: VectorField<f64>>(
    h: &F,
    gens: &[Generator],
    batch: &[Vec<f64>],
    s: &LossSettings,
) -> Result<LossValue> {
    one_shot(LossKind::Fgie, h, gens, batch, s)
}

pub fn loss_igie<F: VectorField<f64>>(
    h: &F,
    gens: &[Generator],
    batch: &[Vec<f64>],
    s: &LossSettings,
) -> Result<LossValue> {
    one_shot(LossKind::Igie, h, gens, batch, s)
}

/// Loss of the model `h = W Theta` and its exact gradient with respect to the
/// row-major `d x p` coefficients `w`. Entries outside `mask` are held at
/// zero and receive zero gradient.
pub fn sindy_loss_gradient(
    kind: LossKind,
    lib: &FunctionLibrary,
    w: &[f64],
    mask: Option<&[bool]>,
    cache: &SymmetryCache,
    s: &LossSettings,
) -> Result<(LossValue, Vec<f64>)> {
    check_settings(kind, cache, s)?;
    let per_pair = (0..cache.num_pairs())
        .into_par_iter()
        .map(|k| {
            let outcome: RefCell<Result<bool>> = RefCell::new(Ok(false));
            let (val, grad) = gradient(w, |wv: &[Var]| {
                let mut field = CoefficientField::new(lib, wv.to_vec());
                if let Some(m) = mask {
                    field = field.with_mask(m);
                }
                match pair_terms(kind, &field, cache, k, s) {
                    Ok((num, den)) if den.value() >= DEGENERATE_DENOMINATOR => {
                        *outcome.borrow_mut() = Ok(true);
                        num / den
                    }
                    Ok(_) => Var::cst(0.0),
                    Err(e) => {
                        *outcome.borrow_mut() = Err(e);
                        Var::cst(0.0)
                    }
                }
            });
            Ok(outcome.into_inner()?.then_some((val, grad)))
        })
        .collect::<Result<Vec<_>>>()?;
    let value = finish(per_pair.iter().map(|t| t.as_ref().map(|(v, _)| *v)).collect())?;
    let mut grad = vec![0.0; w.len()];
    if value.evaluated > 0 {
        let mut column = Vec::with_capacity(value.evaluated);
        for (j, g) in grad.iter_mut().enumerate() {
            column.clear();
            column.extend(per_pair.iter().flatten().map(|(_, gr)| gr[j]));
            *g = pairwise_sum(&column) / value.evaluated as f64;
        }
    }
    Ok((value, grad))
}
