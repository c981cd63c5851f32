use nalgebra::DMatrix;

use super::lbfgs::{minimize, LbfgsSettings};
use super::stlsq::masked_lstsq;
use crate::error::{Error, Result};
use crate::funclib::FunctionLibrary;
use crate::symmetry::{sindy_loss_gradient, LossKind, LossSettings, SymmetryCache};

#[derive(Clone, Debug)]
pub struct EquivRSettings {
    pub threshold: f64,
    pub max_rounds: usize,
    pub lambda: f64,
    pub loss: LossKind,
    pub loss_settings: LossSettings,
    pub optimizer: LbfgsSettings,
    /// Starting coefficients; least squares when absent.
    pub init: Option<DMatrix<f64>>,
}

#[derive(Clone, Debug)]
pub struct EquivRFit {
    pub w: DMatrix<f64>,
    pub rounds: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Weight actually used (halved once after a non-finite objective).
    pub lambda: f64,
    pub symmetry_loss: Option<f64>,
}

/// `(1/N) ||dX - W Theta||_F^2` through its sufficient statistics.
pub struct EquationLoss {
    c: f64,
    g: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl EquationLoss {
    pub fn new(theta: &DMatrix<f64>, dx: &DMatrix<f64>) -> Self {
        let n = theta.nrows().max(1) as f64;
        EquationLoss {
            c: dx.norm_squared() / n,
            g: theta.transpose() * theta / n,
            b: dx.transpose() * theta / n,
        }
    }

    /// Value and gradient for row-major `d x p` coefficients.
    pub fn value_grad(&self, w: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let wg = w * &self.g;
        let v = self.c - 2.0 * w.dot(&self.b) + w.dot(&wg);
        (v.max(0.0), (wg - &self.b) * 2.0)
    }
}

fn row_major(w: &DMatrix<f64>) -> Vec<f64> {
    w.transpose().as_slice().to_vec()
}

fn from_row_major(v: &[f64], d: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(d, p, v)
}

struct RoundOutcome {
    w: DMatrix<f64>,
    iterations: usize,
    converged: bool,
}

#[allow(clippy::too_many_arguments)]
fn optimize_round(
    eq: &EquationLoss,
    lib: &FunctionLibrary,
    cache: &SymmetryCache,
    s: &EquivRSettings,
    lambda: f64,
    mask: &[bool],
    w0: &DMatrix<f64>,
) -> Result<RoundOutcome> {
    let (d, p) = (lib.dim(), lib.len());
    let active: Vec<usize> = (0..d * p).filter(|&k| mask[k]).collect();
    if active.is_empty() {
        return Ok(RoundOutcome {
            w: DMatrix::zeros(d, p),
            iterations: 0,
            converged: true,
        });
    }
    let full0 = row_major(w0);
    let z0: Vec<f64> = active.iter().map(|&k| full0[k]).collect();
    let expand = |z: &[f64]| {
        let mut full = vec![0.0; d * p];
        for (&k, &v) in active.iter().zip(z) {
            full[k] = v;
        }
        full
    };
    let objective = |z: &[f64]| -> Result<(f64, Vec<f64>)> {
        let full = expand(z);
        let (mut f, gw) = eq.value_grad(&from_row_major(&full, d, p));
        let mut g_full = row_major(&gw);
        if lambda > 0.0 && cache.num_pairs() > 0 {
            let (sv, sg) = sindy_loss_gradient(s.loss, lib, &full, Some(mask), cache, &s.loss_settings)?;
            f += lambda * sv.value;
            for (a, b) in g_full.iter_mut().zip(&sg) {
                *a += lambda * b;
            }
        }
        Ok((f, active.iter().map(|&k| g_full[k]).collect()))
    };
    let r = minimize(objective, &z0, &s.optimizer)?;
    Ok(RoundOutcome {
        w: from_row_major(&expand(&r.x), d, p),
        iterations: r.iterations,
        converged: r.converged,
    })
}

/// Symmetry-regularized sparse regression: L-BFGS on equation loss plus
/// `lambda` times a symmetry loss, wrapped in sequential thresholding with
/// support masks.
pub fn equiv_r_fit(
    theta: &DMatrix<f64>,
    dx: &DMatrix<f64>,
    lib: &FunctionLibrary,
    cache: &SymmetryCache,
    s: &EquivRSettings,
) -> Result<EquivRFit> {
    let (d, p) = (lib.dim(), lib.len());
    if !(s.lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be non-negative, got {}", s.lambda)));
    }
    let eq = EquationLoss::new(theta, dx);
    let mut w = match &s.init {
        Some(w) => w.clone(),
        None => {
            let mut w = DMatrix::zeros(d, p);
            for i in 0..d {
                let c = masked_lstsq(theta, &dx.column(i).into_owned(), &vec![true; p]);
                w.set_row(i, &c.transpose());
            }
            w
        }
    };
    let mut mask = vec![true; d * p];
    let mut lambda = s.lambda;
    let mut halved = false;
    let (mut rounds, mut iterations, mut converged) = (0, 0, true);
    while rounds < s.max_rounds.max(1) {
        let out = match optimize_round(&eq, lib, cache, s, lambda, &mask, &w) {
            Ok(o) => o,
            Err(e) if !halved && lambda > 0.0 => {
                log::warn!("symmetry-regularized round failed ({e}); halving lambda to {}", lambda / 2.0);
                lambda /= 2.0;
                halved = true;
                continue;
            }
            Err(e) => return Err(Error::Discovery(format!("symmetry-regularized fit failed: {e}"))),
        };
        rounds += 1;
        iterations += out.iterations;
        converged &= out.converged;
        w = out.w;
        let next: Vec<bool> = (0..d * p).map(|k| mask[k] && w[(k / p, k % p)].abs() >= s.threshold).collect();
        for k in 0..d * p {
            if !next[k] {
                w[(k / p, k % p)] = 0.0;
            }
        }
        if next == mask {
            break;
        }
        mask = next;
    }
    if !converged {
        log::info!("optimizer stopped before reaching the gradient tolerance");
    }
    let symmetry_loss = if lambda > 0.0 && cache.num_pairs() > 0 {
        sindy_loss_gradient(s.loss, lib, &row_major(&w), Some(&mask), cache, &s.loss_settings)
            .ok()
            .map(|(v, _)| v.value)
    } else {
        None
    };
    Ok(EquivRFit {
        w,
        rounds,
        iterations,
        converged,
        lambda,
        symmetry_loss,
    })
}
