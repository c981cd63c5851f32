use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::discover::FittedModel;
use crate::expr::{canonicalize, CanonicalForm, Expr, TermKey};
use crate::funclib::FunctionLibrary;
use crate::ode::{rk4_step, VectorField};

/// Support of one discovered equation, or a marker for expressions that do
/// not expand over the library (these match nothing).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermSet {
    Terms(CanonicalForm),
    NonCanonical,
}

impl TermSet {
    fn from_form(form: CanonicalForm, threshold: f64) -> TermSet {
        TermSet::Terms(CanonicalForm::from_terms(
            form.iter().filter(|(_, c)| c.abs() >= threshold).map(|(k, c)| (k.clone(), c)),
        ))
    }

    pub fn form(&self) -> Option<&CanonicalForm> {
        match self {
            TermSet::Terms(f) => Some(f),
            TermSet::NonCanonical => None,
        }
    }

    pub fn keys(&self) -> Vec<TermKey> {
        self.form().map(|f| f.keys().cloned().collect()).unwrap_or_default()
    }

    pub fn same_support(&self, other: &TermSet) -> bool {
        match (self, other) {
            (TermSet::Terms(a), TermSet::Terms(b)) => a.keys().eq(b.keys()),
            _ => false,
        }
    }
}

/// Per-equation term sets of a sparse model: the nonzero columns of each row
/// with magnitude at least `threshold`.
pub fn term_sets_of_matrix(lib: &FunctionLibrary, w: &DMatrix<f64>, threshold: f64) -> Vec<TermSet> {
    (0..w.nrows())
        .map(|i| {
            TermSet::Terms(CanonicalForm::from_terms(
                lib.terms()
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| w[(i, j)] != 0.0 && w[(i, j)].abs() >= threshold)
                    .map(|(j, k)| (k.clone(), w[(i, j)])),
            ))
        })
        .collect()
}

/// Per-equation term sets of symbolic expressions via canonical expansion.
pub fn term_sets_of_exprs(exprs: &[Expr], lib: &FunctionLibrary, threshold: f64) -> Vec<TermSet> {
    exprs
        .iter()
        .map(|e| match canonicalize(e, lib) {
            Ok(f) => TermSet::from_form(f, threshold),
            Err(_) => TermSet::NonCanonical,
        })
        .collect()
}

pub fn term_sets(model: &FittedModel, lib: &FunctionLibrary, threshold: f64) -> Vec<TermSet> {
    match model {
        FittedModel::Sparse(m) => term_sets_of_matrix(&m.lib, &m.w, threshold),
        FittedModel::Symbolic(e) => term_sets_of_exprs(e, lib, threshold),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuccessFlags {
    pub per_eq: Vec<bool>,
    pub joint: bool,
}

/// Exact support equality per equation; joint success needs all of them.
pub fn success(discovered: &[TermSet], truth: &[TermSet]) -> SuccessFlags {
    assert_eq!(discovered.len(), truth.len(), "equation count");
    let per_eq: Vec<bool> = discovered.iter().zip(truth).map(|(a, b)| a.same_support(b)).collect();
    let joint = per_eq.iter().all(|&b| b);
    SuccessFlags { per_eq, joint }
}

/// Squared coefficient error of one equation over the union of true and
/// discovered terms, missing terms counting as zero. A non-canonical
/// discovery counts every true coefficient as missed.
pub fn squared_error(discovered: &TermSet, truth: &CanonicalForm) -> f64 {
    match discovered {
        TermSet::NonCanonical => truth.iter().map(|(_, c)| c * c).sum(),
        TermSet::Terms(f) => {
            let mut keys: Vec<&TermKey> = truth.keys().chain(f.keys()).collect();
            keys.sort();
            keys.dedup();
            keys.iter().map(|k| (truth.get(k) - f.get(k)).powi(2)).sum()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RmseMode {
    Successful,
    All,
}

/// The parts of a run record that parameter RMSE needs.
pub trait RunErrors {
    fn eq_success(&self) -> &[bool];
    fn joint_success(&self) -> bool;
    fn sq_errors(&self) -> &[f64];
}

/// `sqrt(sum_k ||theta - theta_hat_k||^2 / K)` over the runs selected by
/// `mode`; `eq` picks one equation, `None` stacks all of them. Returns `None`
/// when the successful filter is empty.
pub fn rmse_params<R: RunErrors>(records: &[R], mode: RmseMode, eq: Option<usize>) -> Option<f64> {
    let selected: Vec<&R> = records
        .iter()
        .filter(|r| match (mode, eq) {
            (RmseMode::All, _) => true,
            (RmseMode::Successful, Some(i)) => r.eq_success()[i],
            (RmseMode::Successful, None) => r.joint_success(),
        })
        .collect();
    if selected.is_empty() {
        return None;
    }
    let total: f64 = selected
        .iter()
        .map(|r| match eq {
            Some(i) => r.sq_errors()[i],
            None => r.sq_errors().iter().sum(),
        })
        .sum();
    Some((total / selected.len() as f64).sqrt())
}

/// States with norm above this count as divergent.
pub const DIVERGENCE_NORM: f64 = 1e6;

/// Per-checkpoint error of one initial condition; `None` once divergent.
pub fn rollout_errors<F: VectorField<f64>, G: VectorField<f64>>(
    model: &F,
    truth: &G,
    x0: &[f64],
    dt: f64,
    checkpoint_steps: &[usize],
) -> Vec<Option<f64>> {
    let fm = |y: &[f64]| model.eval(y);
    let ft = |y: &[f64]| truth.eval(y);
    let mut xm = x0.to_vec();
    let mut xt = x0.to_vec();
    let mut diverged = false;
    let mut step = 0;
    let mut out = Vec::with_capacity(checkpoint_steps.len());
    for &target in checkpoint_steps {
        while step < target && !diverged {
            xm = rk4_step(&fm, &xm, dt);
            xt = rk4_step(&ft, &xt, dt);
            step += 1;
            let norm = xm.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm <= DIVERGENCE_NORM) {
                diverged = true;
            }
        }
        out.push(if diverged {
            None
        } else {
            Some(xm.iter().zip(&xt).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / xm.len() as f64)
        });
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LtpCurve {
    pub times: Vec<f64>,
    pub mean: Vec<Option<f64>>,
    pub std: Vec<Option<f64>>,
    /// Finite trajectories contributing at each checkpoint.
    pub counted: Vec<usize>,
    /// Trajectories divergent at each checkpoint.
    pub divergent: Vec<usize>,
}

/// Aggregates per-trajectory checkpoint errors (rows) into mean and
/// population standard deviation, excluding divergent entries.
pub fn aggregate_curve(times: &[f64], rows: &[Vec<Option<f64>>]) -> LtpCurve {
    let mut curve = LtpCurve {
        times: times.to_vec(),
        mean: vec![],
        std: vec![],
        counted: vec![],
        divergent: vec![],
    };
    for c in 0..times.len() {
        let vals: Vec<f64> = rows.iter().filter_map(|r| r[c]).collect();
        let n = vals.len();
        curve.counted.push(n);
        curve.divergent.push(rows.len() - n);
        if n == 0 {
            curve.mean.push(None);
            curve.std.push(None);
            continue;
        }
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        curve.mean.push(Some(mean));
        curve.std.push(Some(var.sqrt()));
    }
    curve
}

/// Long-term prediction error of `model` against `truth` from each initial
/// condition, at `checkpoints` evenly spaced times in `[0, horizon]`.
pub fn long_term_error<F: VectorField<f64>, G: VectorField<f64>>(
    model: &F,
    truth: &G,
    ics: &[Vec<f64>],
    horizon: f64,
    checkpoints: usize,
    dt: f64,
) -> LtpCurve {
    let total = (horizon / dt).round() as usize;
    let steps: Vec<usize> = (0..checkpoints).map(|k| k * total / (checkpoints - 1).max(1)).collect();
    let times: Vec<f64> = steps.iter().map(|&s| s as f64 * dt).collect();
    let rows: Vec<Vec<Option<f64>>> = ics.iter().map(|x0| rollout_errors(model, truth, x0, dt, &steps)).collect();
    aggregate_curve(&times, &rows)
}
