//! Genetic-programming symbolic regression with an optional finite-group
//! symmetry penalty evaluated on pre-transformed data.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::linalg::lstsq;
use crate::symmetry::{GroupElement, Generator, DEFAULT_ACT_STEPS};

/// Divisors with magnitude at or below this evaluate the quotient to 1.
pub const PROTECTED_DIV_EPS: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GpOp {
    Add,
    Sub,
    Mul,
    Div,
    Exp,
}

impl GpOp {
    fn arity(self) -> usize {
        if self == GpOp::Exp {
            1
        } else {
            2
        }
    }

    fn build(self, mut args: Vec<Expr>) -> Expr {
        let b = |e: Expr| Box::new(e);
        match self {
            GpOp::Exp => Expr::Exp(b(args.pop().expect("unary"))),
            _ => {
                let r = args.pop().expect("binary");
                let l = args.pop().expect("binary");
                match self {
                    GpOp::Add => Expr::Add(b(l), b(r)),
                    GpOp::Sub => Expr::Sub(b(l), b(r)),
                    GpOp::Mul => Expr::Mul(b(l), b(r)),
                    _ => Expr::Div(b(l), b(r)),
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    pub population: usize,
    pub generations: usize,
    pub operators: Vec<GpOp>,
    pub max_depth: usize,
    pub init_depth: [usize; 2],
    pub parsimony: f64,
    pub tournament: usize,
    pub crossover: f64,
    pub subtree_mutation: f64,
    pub point_mutation: f64,
    pub const_range: [f64; 2],
    pub constant_refit: bool,
    /// Evenly spaced training rows used for fitness.
    pub max_points: usize,
    /// Rows used for the symmetry penalty.
    pub penalty_points: usize,
    pub lambda: f64,
    /// Stop early once the best fitness drops below this.
    pub target_fitness: f64,
    pub seed: Option<u64>,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            population: 256,
            generations: 100,
            operators: vec![GpOp::Add, GpOp::Sub, GpOp::Mul, GpOp::Div, GpOp::Exp],
            max_depth: 8,
            init_depth: [2, 4],
            parsimony: 1e-3,
            tournament: 7,
            crossover: 0.7,
            subtree_mutation: 0.2,
            point_mutation: 0.1,
            const_range: [-2.0, 2.0],
            constant_refit: true,
            max_points: 2000,
            penalty_points: 256,
            lambda: 0.1,
            target_fitness: 0.0,
            seed: None,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("gp: {m}")));
        if self.population < 2 {
            return bad("population must be at least 2");
        }
        if self.operators.is_empty() {
            return bad("operator set is empty");
        }
        if self.tournament == 0 {
            return bad("tournament size must be positive");
        }
        if self.init_depth[0] > self.init_depth[1] || self.init_depth[1] > self.max_depth {
            return bad("init_depth must satisfy min <= max <= max_depth");
        }
        let rates = [self.crossover, self.subtree_mutation, self.point_mutation];
        if rates.iter().any(|r| !(*r >= 0.0)) || rates.iter().sum::<f64>() <= 0.0 {
            return bad("variation rates must be non-negative and not all zero");
        }
        if !(self.lambda >= 0.0) || !(self.parsimony >= 0.0) {
            return bad("lambda and parsimony must be non-negative");
        }
        if !(self.const_range[0] <= self.const_range[1]) {
            return bad("const_range must be ordered");
        }
        Ok(())
    }
}

/// Evaluates with protected division.
pub fn protected_eval(e: &Expr, x: &[f64]) -> f64 {
    match e {
        Expr::Const(c) => *c,
        Expr::Var(i) => x[*i],
        Expr::Add(a, b) => protected_eval(a, x) + protected_eval(b, x),
        Expr::Sub(a, b) => protected_eval(a, x) - protected_eval(b, x),
        Expr::Mul(a, b) => protected_eval(a, x) * protected_eval(b, x),
        Expr::Div(a, b) => {
            let den = protected_eval(b, x);
            if den.abs() <= PROTECTED_DIV_EPS {
                1.0
            } else {
                protected_eval(a, x) / den
            }
        }
        Expr::Neg(a) => -protected_eval(a, x),
        Expr::Exp(a) => protected_eval(a, x).exp(),
        Expr::Pow(a, n) => protected_eval(a, x).powi(*n as i32),
    }
}

/// Column-wise protected evaluation over many points.
fn eval_batch(e: &Expr, cols: &[Vec<f64>]) -> Vec<f64> {
    let n = cols.first().map_or(0, Vec::len);
    let zip = |a: Vec<f64>, b: Vec<f64>, f: fn(f64, f64) -> f64| -> Vec<f64> {
        a.into_iter().zip(b).map(|(x, y)| f(x, y)).collect()
    };
    match e {
        Expr::Const(c) => vec![*c; n],
        Expr::Var(i) => cols[*i].clone(),
        Expr::Add(a, b) => zip(eval_batch(a, cols), eval_batch(b, cols), |x, y| x + y),
        Expr::Sub(a, b) => zip(eval_batch(a, cols), eval_batch(b, cols), |x, y| x - y),
        Expr::Mul(a, b) => zip(eval_batch(a, cols), eval_batch(b, cols), |x, y| x * y),
        Expr::Div(a, b) => zip(eval_batch(a, cols), eval_batch(b, cols), |x, y| {
            if y.abs() <= PROTECTED_DIV_EPS {
                1.0
            } else {
                x / y
            }
        }),
        Expr::Neg(a) => eval_batch(a, cols).into_iter().map(|v| -v).collect(),
        Expr::Exp(a) => eval_batch(a, cols).into_iter().map(f64::exp).collect(),
        Expr::Pow(a, k) => eval_batch(a, cols).into_iter().map(|v| v.powi(*k as i32)).collect(),
    }
}

/// Rewrites protected division into plain expressions: a constant divisor
/// inside the protected band becomes the constant 1.
pub fn export_expr(e: &Expr) -> Expr {
    let b = |e: &Expr| Box::new(export_expr(e));
    match e {
        Expr::Div(num, den) if den.max_var().is_none() => {
            let v = protected_eval(den, &[]);
            if v.abs() <= PROTECTED_DIV_EPS {
                Expr::Const(1.0)
            } else {
                Expr::Div(b(num), Box::new(Expr::Const(v)))
            }
        }
        Expr::Const(_) | Expr::Var(_) => e.clone(),
        Expr::Add(l, r) => Expr::Add(b(l), b(r)),
        Expr::Sub(l, r) => Expr::Sub(b(l), b(r)),
        Expr::Mul(l, r) => Expr::Mul(b(l), b(r)),
        Expr::Div(l, r) => Expr::Div(b(l), b(r)),
        Expr::Neg(a) => Expr::Neg(b(a)),
        Expr::Exp(a) => Expr::Exp(b(a)),
        Expr::Pow(a, k) => Expr::Pow(b(a), *k),
    }
}

fn subtree(e: &Expr, mut n: usize) -> &Expr {
    let mut cur = e;
    'outer: loop {
        if n == 0 {
            return cur;
        }
        n -= 1;
        for c in cur.children() {
            let size = c.node_count();
            if n < size {
                cur = c;
                continue 'outer;
            }
            n -= size;
        }
        unreachable!("node index out of range");
    }
}

fn replace_subtree(e: &Expr, n: usize, new: &Expr) -> Expr {
    if n == 0 {
        return new.clone();
    }
    let mut k = n - 1;
    let mut rebuilt = Vec::new();
    let mut done = false;
    for c in e.children() {
        let size = c.node_count();
        if !done && k < size {
            rebuilt.push(replace_subtree(c, k, new));
            done = true;
        } else {
            if !done {
                k -= size;
            }
            rebuilt.push(c.clone());
        }
    }
    rebuild(e, rebuilt)
}

fn rebuild(e: &Expr, mut kids: Vec<Expr>) -> Expr {
    let b = Box::new;
    match e {
        Expr::Const(_) | Expr::Var(_) => e.clone(),
        Expr::Neg(_) => Expr::Neg(b(kids.pop().unwrap())),
        Expr::Exp(_) => Expr::Exp(b(kids.pop().unwrap())),
        Expr::Pow(_, k) => Expr::Pow(b(kids.pop().unwrap()), *k),
        _ => {
            let r = kids.pop().unwrap();
            let l = kids.pop().unwrap();
            match e {
                Expr::Add(..) => Expr::Add(b(l), b(r)),
                Expr::Sub(..) => Expr::Sub(b(l), b(r)),
                Expr::Mul(..) => Expr::Mul(b(l), b(r)),
                _ => Expr::Div(b(l), b(r)),
            }
        }
    }
}

fn expr_op(e: &Expr) -> Option<GpOp> {
    match e {
        Expr::Add(..) => Some(GpOp::Add),
        Expr::Sub(..) => Some(GpOp::Sub),
        Expr::Mul(..) => Some(GpOp::Mul),
        Expr::Div(..) => Some(GpOp::Div),
        Expr::Exp(..) => Some(GpOp::Exp),
        _ => None,
    }
}

/// Top-level additive terms with their signs.
fn additive_terms(e: &Expr, sign: f64, out: &mut Vec<(f64, Expr)>) {
    match e {
        Expr::Add(a, b) => {
            additive_terms(a, sign, out);
            additive_terms(b, sign, out);
        }
        Expr::Sub(a, b) => {
            additive_terms(a, sign, out);
            additive_terms(b, -sign, out);
        }
        Expr::Neg(a) => additive_terms(a, -sign, out),
        _ => out.push((sign, e.clone())),
    }
}

/// Splits a term into a leading constant multiplier and the rest.
fn split_scale(e: &Expr) -> (f64, Option<Expr>) {
    match e {
        Expr::Const(c) => (*c, None),
        Expr::Mul(a, b) => match (a.as_ref(), b.as_ref()) {
            (Expr::Const(c), rest) | (rest, Expr::Const(c)) => {
                let (k, r) = split_scale(rest);
                (c * k, r)
            }
            _ => (1.0, Some(e.clone())),
        },
        _ => (1.0, Some(e.clone())),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitnessParts {
    pub mse: f64,
    pub symm_penalty: f64,
    pub size: usize,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct GpCandidate {
    pub exprs: Vec<Expr>,
    pub fitness: Vec<FitnessParts>,
    pub generations: Vec<usize>,
}

/// Training data for one GP run plus the optional pre-transformed pairs.
pub struct GpProblem {
    dim: usize,
    cols: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    symmetry: Option<SymmetryPairs>,
}

struct SymmetryPairs {
    cols: Vec<Vec<f64>>,
    /// Per generator: transformed points (column form), and `J_g dX` split into
    /// off-diagonal sums and diagonal entries per output dimension.
    per_gen: Vec<TransformedPairs>,
}

struct TransformedPairs {
    g_cols: Vec<Vec<f64>>,
    off_diag: Vec<Vec<f64>>,
    diag: Vec<Vec<f64>>,
    scale: Vec<f64>,
}

fn evenly(n: usize, max: usize) -> Vec<usize> {
    if n <= max || max == 0 {
        return (0..n).collect();
    }
    (0..max).map(|k| k * n / max).collect()
}

fn columns(x: &DMatrix<f64>, rows: &[usize]) -> Vec<Vec<f64>> {
    (0..x.ncols()).map(|j| rows.iter().map(|&r| x[(r, j)]).collect()).collect()
}

impl GpProblem {
    /// `x` and `dx` are `N x d`.
    pub fn new(x: &DMatrix<f64>, dx: &DMatrix<f64>, cfg: &GpConfig, gens: &[Generator], eps: f64) -> Result<Self> {
        let (n, d) = x.shape();
        if dx.shape() != (n, d) || n == 0 {
            return Err(Error::Shape(format!("gp data {:?} vs labels {:?}", x.shape(), dx.shape())));
        }
        let rows = evenly(n, cfg.max_points);
        let symmetry = if gens.is_empty() || cfg.lambda == 0.0 {
            None
        } else {
            let prow = evenly(n, cfg.penalty_points);
            let mut per_gen = Vec::new();
            for g in gens {
                if g.dim() != d {
                    return Err(Error::Shape(format!("generator {} has dimension {}", g.label, g.dim())));
                }
                let el = GroupElement::new(g.clone(), eps);
                let mut g_cols = vec![Vec::with_capacity(prow.len()); d];
                let mut off_diag = vec![Vec::with_capacity(prow.len()); d];
                let mut diag = vec![Vec::with_capacity(prow.len()); d];
                let mut scale = vec![0.0; d];
                for &r in &prow {
                    let xr: Vec<f64> = (0..d).map(|j| x[(r, j)]).collect();
                    let gx = el.act(&xr, DEFAULT_ACT_STEPS)?;
                    let jg = el.jacobian(&xr, DEFAULT_ACT_STEPS)?;
                    for i in 0..d {
                        g_cols[i].push(gx[i]);
                        let mut off = 0.0;
                        let mut full = 0.0;
                        for j in 0..d {
                            let t = jg[(i, j)] * dx[(r, j)];
                            full += t;
                            if j != i {
                                off += t;
                            }
                        }
                        off_diag[i].push(off);
                        diag[i].push(jg[(i, i)]);
                        scale[i] += full * full;
                    }
                }
                for s in &mut scale {
                    *s /= prow.len() as f64;
                }
                per_gen.push(TransformedPairs {
                    g_cols,
                    off_diag,
                    diag,
                    scale,
                });
            }
            Some(SymmetryPairs {
                cols: columns(x, &prow),
                per_gen,
            })
        };
        Ok(GpProblem {
            dim: d,
            cols: columns(x, &rows),
            targets: columns(dx, &rows),
            symmetry,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Finite-group penalty for output `i`: mean over generators of the
    /// normalized residual of `h_i(g x) = (J_g h(x))_i`, with the other
    /// components of `h` replaced by the observed derivatives.
    pub fn symmetry_penalty(&self, e: &Expr, i: usize) -> f64 {
        let Some(sym) = &self.symmetry else {
            return 0.0;
        };
        let at_x = eval_batch(e, &sym.cols);
        let mut total = 0.0;
        let mut used = 0;
        for tp in &sym.per_gen {
            if tp.scale[i] < 1e-30 {
                continue;
            }
            let at_gx = eval_batch(e, &tp.g_cols);
            let n = at_x.len() as f64;
            let r: f64 = (0..at_x.len())
                .map(|k| {
                    let res = tp.off_diag[i][k] + tp.diag[i][k] * at_x[k] - at_gx[k];
                    res * res
                })
                .sum::<f64>()
                / n;
            total += r / tp.scale[i];
            used += 1;
        }
        if used == 0 {
            0.0
        } else {
            total / used as f64
        }
    }

    /// Fitness of a candidate for output `i` with the given penalty weight.
    pub fn fitness(&self, e: &Expr, i: usize, cfg: &GpConfig, lambda: f64) -> FitnessParts {
        let y = &self.targets[i];
        let pred = eval_batch(e, &self.cols);
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let mse = y.iter().zip(&pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
        let nmse = if var > 0.0 { mse / var } else { mse };
        let size = e.node_count();
        let symm_penalty = if lambda > 0.0 { self.symmetry_penalty(e, i) } else { 0.0 };
        let mut total = nmse + cfg.parsimony * size as f64 + lambda * symm_penalty;
        if !total.is_finite() {
            total = f64::INFINITY;
        }
        FitnessParts {
            mse,
            symm_penalty,
            size,
            total,
        }
    }

    /// Least-squares refit of the multipliers of the top-level additive terms.
    fn refit(&self, e: &Expr, i: usize) -> Option<Expr> {
        let mut terms = Vec::new();
        additive_terms(e, 1.0, &mut terms);
        let mut bases: Vec<Option<Expr>> = Vec::new();
        for (_, t) in &terms {
            let base = split_scale(t).1;
            if !bases.contains(&base) {
                bases.push(base);
            }
        }
        let n = self.targets[i].len();
        let mut a = DMatrix::zeros(n, bases.len());
        for (c, base) in bases.iter().enumerate() {
            let col = match base {
                Some(b) => eval_batch(b, &self.cols),
                None => vec![1.0; n],
            };
            if col.iter().any(|v| !v.is_finite()) {
                return None;
            }
            a.set_column(c, &DVector::from_vec(col));
        }
        let (coef, _) = lstsq(&a, &DVector::from_column_slice(&self.targets[i]), 1e-12);
        if coef.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut out: Option<Expr> = None;
        for (base, &c) in bases.iter().zip(coef.iter()) {
            let term = match base {
                Some(b) => Expr::Mul(Box::new(Expr::Const(c)), Box::new(b.clone())),
                None => Expr::Const(c),
            };
            out = Some(match out {
                None => term,
                Some(acc) => Expr::Add(Box::new(acc), Box::new(term)),
            });
        }
        out
    }
}

struct Breeder<'a> {
    cfg: &'a GpConfig,
    dim: usize,
    rng: ChaCha8Rng,
}

impl Breeder<'_> {
    fn terminal(&mut self) -> Expr {
        if self.rng.random_bool(0.3) {
            let [lo, hi] = self.cfg.const_range;
            Expr::Const(if lo == hi { lo } else { self.rng.random_range(lo..hi) })
        } else {
            Expr::Var(self.rng.random_range(0..self.dim))
        }
    }

    fn random_op(&mut self) -> GpOp {
        let ops = &self.cfg.operators;
        ops[self.rng.random_range(0..ops.len())]
    }

    fn tree(&mut self, depth: usize, full: bool) -> Expr {
        let stop = depth <= 1 || (!full && self.rng.random_bool(0.3));
        if stop {
            return self.terminal();
        }
        let op = self.random_op();
        let args = (0..op.arity()).map(|_| self.tree(depth - 1, full)).collect();
        op.build(args)
    }

    /// Ramped half-and-half initialization.
    fn population(&mut self) -> Vec<Expr> {
        let [lo, hi] = self.cfg.init_depth;
        let lo = lo.max(1);
        (0..self.cfg.population)
            .map(|k| {
                let depth = lo + k % (hi.max(lo) - lo + 1);
                self.tree(depth, k % 2 == 0)
            })
            .collect()
    }

    fn tournament(&mut self, fit: &[f64]) -> usize {
        let mut best = self.rng.random_range(0..fit.len());
        for _ in 1..self.cfg.tournament {
            let c = self.rng.random_range(0..fit.len());
            if fit[c] < fit[best] {
                best = c;
            }
        }
        best
    }

    fn point_mutation(&mut self, e: &Expr) -> Expr {
        let n = self.rng.random_range(0..e.node_count());
        let node = subtree(e, n);
        let replacement = match expr_op(node) {
            Some(op) => {
                let same: Vec<GpOp> = self.cfg.operators.iter().copied().filter(|o| o.arity() == op.arity()).collect();
                let pick = same[self.rng.random_range(0..same.len())];
                pick.build(node.children().into_iter().cloned().collect())
            }
            None => self.terminal(),
        };
        replace_subtree(e, n, &replacement)
    }

    fn offspring(&mut self, pop: &[Expr], fit: &[f64]) -> Expr {
        let total = self.cfg.crossover + self.cfg.subtree_mutation + self.cfg.point_mutation;
        let r = self.rng.random_range(0.0..total);
        let parent = &pop[self.tournament(fit)];
        let child = if r < self.cfg.crossover {
            let donor = &pop[self.tournament(fit)];
            let a = self.rng.random_range(0..parent.node_count());
            let b = self.rng.random_range(0..donor.node_count());
            replace_subtree(parent, a, subtree(donor, b))
        } else if r < self.cfg.crossover + self.cfg.subtree_mutation {
            let a = self.rng.random_range(0..parent.node_count());
            let depth = self.rng.random_range(1..=3);
            let graft = self.tree(depth, false);
            replace_subtree(parent, a, &graft)
        } else {
            self.point_mutation(parent)
        };
        if child.depth() > self.cfg.max_depth {
            parent.clone()
        } else {
            child
        }
    }
}

struct Scored {
    exprs: Vec<Expr>,
    parts: Vec<FitnessParts>,
}

fn score_population(problem: &GpProblem, pop: Vec<Expr>, i: usize, cfg: &GpConfig, lambda: f64) -> Scored {
    let results: Vec<(Expr, FitnessParts)> = pop
        .into_par_iter()
        .map(|e| {
            let e = if cfg.constant_refit {
                problem
                    .refit(&e, i)
                    .filter(|r| r.depth() <= cfg.max_depth)
                    .unwrap_or(e)
            } else {
                e
            };
            let f = problem.fitness(&e, i, cfg, lambda);
            (e, f)
        })
        .collect();
    let (exprs, parts) = results.into_iter().unzip();
    Scored { exprs, parts }
}

fn evolve_dimension(problem: &GpProblem, i: usize, cfg: &GpConfig, seed: u64) -> Result<(Expr, FitnessParts, usize)> {
    let mut breeder = Breeder {
        cfg,
        dim: problem.dim,
        rng: crate::rng::stream(seed, i as u64),
    };
    let lambda = if problem.symmetry.is_some() { cfg.lambda } else { 0.0 };
    let mut scored = score_population(problem, breeder.population(), i, cfg, lambda);
    let mut reseeded = false;
    let mut best: Option<(Expr, FitnessParts, usize)> = None;
    for gen in 0..=cfg.generations {
        if scored.parts.iter().all(|p| !p.total.is_finite()) {
            if reseeded {
                return Err(Error::Discovery(format!(
                    "every GP candidate for dimension {} is non-finite after reseeding",
                    i + 1
                )));
            }
            log::warn!("all GP candidates non-finite in generation {gen}; reseeding");
            reseeded = true;
            breeder.rng = ChaCha8Rng::seed_from_u64(crate::rng::split_seed(seed, 1_000 + i as u64));
            scored = score_population(problem, breeder.population(), i, cfg, lambda);
            continue;
        }
        let fit: Vec<f64> = scored.parts.iter().map(|p| p.total).collect();
        let elite = (0..fit.len()).min_by(|&a, &b| fit[a].total_cmp(&fit[b])).expect("non-empty");
        if best.as_ref().is_none_or(|b| fit[elite] < b.1.total) {
            best = Some((scored.exprs[elite].clone(), scored.parts[elite], gen));
        }
        if gen == cfg.generations || fit[elite] <= cfg.target_fitness {
            break;
        }
        let mut next = Vec::with_capacity(cfg.population);
        next.push(scored.exprs[elite].clone());
        while next.len() < cfg.population {
            next.push(breeder.offspring(&scored.exprs, &fit));
        }
        scored = score_population(problem, next, i, cfg, lambda);
    }
    best.ok_or_else(|| Error::Discovery("GP produced no finite candidate".into()))
}

/// Evolves one expression per output dimension.
pub fn gp_fit(problem: &GpProblem, cfg: &GpConfig, seed: u64) -> Result<GpCandidate> {
    cfg.validate()?;
    let mut exprs = Vec::new();
    let mut fitness = Vec::new();
    let mut generations = Vec::new();
    for i in 0..problem.dim {
        let (e, f, g) = evolve_dimension(problem, i, cfg, seed)?;
        exprs.push(export_expr(&e));
        fitness.push(f);
        generations.push(g);
    }
    Ok(GpCandidate {
        exprs,
        fitness,
        generations,
    })
}
