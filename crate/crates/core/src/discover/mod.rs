//! Discovery engines: sequentially thresholded least squares, equivariance
//! constrained regression, symmetry-regularized regression and genetic
//! programming with an optional symmetry penalty.

mod equiv_c;
mod equiv_r;
mod gp;
mod lbfgs;
mod stlsq;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::config::ArtifactMeta;
use crate::dynamics::{Dataset, Split};
use crate::error::{Error, Result};
use crate::expr::{parse, Expr};
use crate::funclib::{FunctionLibrary, LibrarySpec};
use crate::model::{Provenance, SindyModel};
use crate::symmetry::{Generator, LossKind, LossSettings, SymmetryCache, DEFAULT_ACT_STEPS};

pub use equiv_c::{equiv_c_fit, EquivCFit};
pub use equiv_r::{equiv_r_fit, EquationLoss, EquivRFit, EquivRSettings};
pub use gp::{export_expr, gp_fit, protected_eval, FitnessParts, GpCandidate, GpConfig, GpOp, GpProblem, PROTECTED_DIV_EPS};
pub use lbfgs::{minimize, LbfgsResult, LbfgsSettings};
pub use stlsq::stlsq;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "sindy")]
    Sindy,
    #[serde(rename = "equiv-c")]
    EquivC,
    #[serde(rename = "equiv-r")]
    EquivR,
    #[serde(rename = "gp")]
    Gp,
    #[serde(rename = "equiv-gp-r")]
    EquivGpR,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Sindy, Method::EquivC, Method::EquivR, Method::Gp, Method::EquivGpR];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sindy => "sindy",
            Method::EquivC => "equiv-c",
            Method::EquivR => "equiv-r",
            Method::Gp => "gp",
            Method::EquivGpR => "equiv-gp-r",
        }
    }

    pub fn is_symbolic(self) -> bool {
        matches!(self, Method::Gp | Method::EquivGpR)
    }

    pub fn uses_generators(self) -> bool {
        matches!(self, Method::EquivC | Method::EquivR | Method::EquivGpR)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoveryConfig {
    /// Thresholding cutoff; the system default when absent.
    pub threshold: Option<f64>,
    pub max_rounds: usize,
    /// Symmetry weight; chosen from `lambda_grid` on validation data when absent.
    pub lambda_symm: Option<f64>,
    pub lambda_grid: Vec<f64>,
    pub loss_kind: LossKind,
    pub tau: f64,
    pub eps: f64,
    pub flow_steps: usize,
    pub act_steps: usize,
    pub batch_size: usize,
    pub optimizer: LbfgsSettings,
    pub gp: GpConfig,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            threshold: None,
            max_rounds: 10,
            lambda_symm: None,
            lambda_grid: vec![0.01, 0.1, 1.0],
            loss_kind: LossKind::Igfe,
            tau: 0.2,
            eps: 0.1,
            flow_steps: 16,
            act_steps: DEFAULT_ACT_STEPS,
            batch_size: 512,
            optimizer: LbfgsSettings::default(),
            gp: GpConfig::default(),
        }
    }
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if let Some(t) = self.threshold {
            if !(t >= 0.0) {
                return bad(format!("threshold must be non-negative, got {t}"));
            }
        }
        if let Some(l) = self.lambda_symm {
            if !(l >= 0.0) {
                return bad(format!("lambda_symm must be non-negative, got {l}"));
            }
        }
        if self.lambda_symm.is_none() && (self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l >= 0.0))) {
            return bad("lambda_grid must be a non-empty list of non-negative weights".into());
        }
        if self.flow_steps == 0 || self.act_steps == 0 {
            return bad("flow_steps and act_steps must be positive".into());
        }
        if !self.tau.is_finite() || !self.eps.is_finite() {
            return bad("tau and eps must be finite".into());
        }
        self.gp.validate()
    }

    fn loss_settings(&self) -> LossSettings {
        LossSettings::new(self.tau)
            .with_eps(self.eps)
            .with_flow_steps(self.flow_steps)
    }
}

#[derive(Clone, Debug)]
pub enum FittedModel {
    Sparse(SindyModel),
    Symbolic(Vec<Expr>),
}

impl FittedModel {
    pub fn dim(&self) -> usize {
        match self {
            FittedModel::Sparse(m) => m.dim(),
            FittedModel::Symbolic(e) => e.len(),
        }
    }

    pub fn exprs(&self) -> Vec<Expr> {
        match self {
            FittedModel::Sparse(m) => m.to_exprs(),
            FittedModel::Symbolic(e) => e.clone(),
        }
    }

    pub fn equations(&self) -> Vec<String> {
        match self {
            FittedModel::Sparse(m) => m.equations(),
            FittedModel::Symbolic(e) => e.iter().enumerate().map(|(i, e)| format!("dx{}/dt = {e}", i + 1)).collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Diagnostics {
    pub rounds: Option<usize>,
    pub nullspace_dim: Option<usize>,
    pub lambda: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub symmetry_loss: Option<f64>,
    pub gp_fitness: Option<Vec<FitnessParts>>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Discovery {
    pub method: Method,
    pub threshold: f64,
    pub model: FittedModel,
    pub diagnostics: Diagnostics,
}

/// Default threshold for a named system, falling back to 0.05.
pub fn default_threshold(system: &str) -> f64 {
    crate::dynamics::system(system).map_or(0.05, |s| s.defaults.threshold)
}

fn row_subsample(x: &DMatrix<f64>, size: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = x.nrows();
    let mut rows: Vec<usize> = if n <= size {
        (0..n).collect()
    } else {
        sample(&mut crate::rng::stream(seed, 0x5EED), n, size).into_vec()
    };
    rows.sort_unstable();
    rows.iter().map(|&r| x.row(r).iter().copied().collect()).collect()
}

fn theta_matrix(lib: &FunctionLibrary, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut theta = DMatrix::zeros(x.nrows(), lib.len());
    for r in 0..x.nrows() {
        let row: Vec<f64> = x.row(r).iter().copied().collect();
        theta.set_row(r, &lib.eval(&row).transpose());
    }
    theta
}

/// Runs one discovery method on a dataset's training split (validation data
/// is used only to pick the symmetry weight).
pub fn discover(
    data: &Dataset,
    lib: &FunctionLibrary,
    gens: &[Generator],
    method: Method,
    cfg: &DiscoveryConfig,
    seed: u64,
) -> Result<Discovery> {
    cfg.validate()?;
    if lib.dim() != data.dim {
        return Err(Error::Shape(format!("library over {} variables, data has {}", lib.dim(), data.dim)));
    }
    let (x, dx) = data.stacked(Split::Train)?;
    let val = data.stacked(Split::Val).ok().filter(|(v, _)| v.nrows() > 0);
    let threshold = cfg.threshold.unwrap_or_else(|| default_threshold(&data.system));
    discover_arrays(&x, &dx, val.as_ref().map(|(a, b)| (a, b)), lib, gens, method, cfg, threshold, seed)
}

#[allow(clippy::too_many_arguments)]
pub fn discover_arrays(
    x: &DMatrix<f64>,
    dx: &DMatrix<f64>,
    val: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
    lib: &FunctionLibrary,
    gens: &[Generator],
    method: Method,
    cfg: &DiscoveryConfig,
    threshold: f64,
    seed: u64,
) -> Result<Discovery> {
    if method.uses_generators() && gens.is_empty() {
        return Err(Error::InvalidArgument(format!("method {method} needs at least one generator")));
    }
    let mut diag = Diagnostics::default();
    if x.nrows() < lib.len() {
        let msg = format!("{} samples for {} library terms", x.nrows(), lib.len());
        log::warn!("{msg}");
        diag.warnings.push(msg);
    }
    let sparse = |w: DMatrix<f64>| FittedModel::Sparse(SindyModel::new(lib.clone(), w));
    let model = match method {
        Method::Sindy => {
            let theta = theta_matrix(lib, x);
            let (w, rounds) = stlsq(&theta, dx, threshold, cfg.max_rounds)?;
            diag.rounds = Some(rounds);
            sparse(w)
        }
        Method::EquivC => {
            let theta = theta_matrix(lib, x);
            let fit = equiv_c_fit(&theta, dx, lib, gens, threshold, cfg.max_rounds)?;
            diag.rounds = Some(fit.rounds);
            diag.nullspace_dim = Some(fit.basis.r());
            if fit.basis.r() == 0 {
                diag.warnings.push("equivariant subspace collapsed to zero".into());
            }
            sparse(fit.w)
        }
        Method::EquivR => {
            let theta = theta_matrix(lib, x);
            let cache = SymmetryCache::new(gens, row_subsample(x, cfg.batch_size, seed), cfg.eps, cfg.act_steps)?;
            let settings = |lambda| EquivRSettings {
                threshold,
                max_rounds: cfg.max_rounds,
                lambda,
                loss: cfg.loss_kind,
                loss_settings: cfg.loss_settings(),
                optimizer: cfg.optimizer,
                init: None,
            };
            let fit = match cfg.lambda_symm {
                Some(l) => equiv_r_fit(&theta, dx, lib, &cache, &settings(l))?,
                None => {
                    let (vx, vdx) = val.unwrap_or((x, dx));
                    let veq = EquationLoss::new(&theta_matrix(lib, vx), vdx);
                    let mut best: Option<(f64, EquivRFit)> = None;
                    for &l in &cfg.lambda_grid {
                        let fit = equiv_r_fit(&theta, dx, lib, &cache, &settings(l))?;
                        let score = veq.value_grad(&fit.w).0;
                        log::debug!("lambda {l}: validation equation loss {score:.6e}");
                        if best.as_ref().is_none_or(|(s, _)| score < *s) {
                            best = Some((score, fit));
                        }
                    }
                    best.expect("non-empty grid").1
                }
            };
            diag.rounds = Some(fit.rounds);
            diag.lambda = Some(fit.lambda);
            diag.iterations = Some(fit.iterations);
            diag.converged = Some(fit.converged);
            diag.symmetry_loss = fit.symmetry_loss;
            if !fit.converged {
                diag.warnings.push("optimizer hit its iteration cap".into());
            }
            sparse(fit.w)
        }
        Method::Gp | Method::EquivGpR => {
            let mut gcfg = cfg.gp.clone();
            let gp_gens = if method == Method::EquivGpR { gens } else { &[] };
            if method == Method::EquivGpR {
                if let Some(l) = cfg.lambda_symm {
                    gcfg.lambda = l;
                }
                diag.lambda = Some(gcfg.lambda);
            }
            let problem = GpProblem::new(x, dx, &gcfg, gp_gens, cfg.eps)?;
            let cand = gp_fit(&problem, &gcfg, gcfg.seed.unwrap_or(seed))?;
            diag.gp_fitness = Some(cand.fitness);
            FittedModel::Symbolic(cand.exprs)
        }
    };
    Ok(Discovery {
        method,
        threshold,
        model,
        diagnostics: diag,
    })
}

/// The on-disk form of a discovered model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArtifact {
    pub artifact: ArtifactMeta,
    pub method: Method,
    pub system: String,
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub library: Option<LibrarySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terms: Option<Vec<String>>,
    /// Row-major coefficient rows, one per equation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<Vec<Vec<f64>>>,
    pub expressions: Vec<String>,
    pub equations: Vec<String>,
    pub diagnostics: Diagnostics,
}

impl ModelArtifact {
    pub fn new(d: &Discovery, system: &str, meta: ArtifactMeta) -> Self {
        let (library, terms, w) = match &d.model {
            FittedModel::Sparse(m) => (
                Some(m.lib.spec()),
                Some(m.lib.term_names()),
                Some(m.w.row_iter().map(|r| r.iter().copied().collect()).collect()),
            ),
            FittedModel::Symbolic(_) => (None, None, None),
        };
        ModelArtifact {
            artifact: meta,
            method: d.method,
            system: system.to_string(),
            threshold: d.threshold,
            library,
            terms,
            w,
            expressions: d.model.exprs().iter().map(ToString::to_string).collect(),
            equations: d.model.equations(),
            diagnostics: d.diagnostics.clone(),
        }
    }

    pub fn model(&self) -> Result<FittedModel> {
        match (&self.library, &self.w) {
            (Some(spec), Some(rows)) => {
                let lib = FunctionLibrary::from_spec(*spec)?;
                if rows.len() != lib.dim() || rows.iter().any(|r| r.len() != lib.len()) {
                    return Err(Error::Shape("coefficient rows do not match the library".into()));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                let provenance = Provenance {
                    method: self.method.name().into(),
                    config_hash: self.artifact.config_hash.clone(),
                    seed: self.artifact.seed,
                };
                Ok(FittedModel::Sparse(
                    SindyModel::new(lib.clone(), DMatrix::from_row_slice(lib.dim(), lib.len(), &flat)).with_provenance(provenance),
                ))
            }
            _ => {
                let d = self.expressions.len();
                Ok(FittedModel::Symbolic(
                    self.expressions.iter().map(|s| parse(s, d)).collect::<Result<_>>()?,
                ))
            }
        }
    }
}
