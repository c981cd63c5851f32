use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpSettings {
    pub max_fit_points: usize,
    pub max_predict_points: usize,
    /// Candidate length scales, in units of the sampling interval.
    pub length_scales: Vec<f64>,
    /// Candidate noise standard deviations, relative to the data std.
    pub noise_ratios: Vec<f64>,
}

impl Default for GpSettings {
    fn default() -> Self {
        GpSettings {
            max_fit_points: 500,
            max_predict_points: 2000,
            length_scales: vec![5.0, 10.0, 20.0, 50.0, 100.0],
            noise_ratios: vec![1e-4, 1e-3, 1e-2, 0.05, 0.1, 0.2, 0.5],
        }
    }
}

const JITTERS: [f64; 6] = [0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

fn even_subsample(n: usize, m: usize) -> Vec<usize> {
    if n <= m {
        return (0..n).collect();
    }
    let mut idx: Vec<usize> = (0..m)
        .map(|k| ((k as f64) * (n - 1) as f64 / (m - 1) as f64).round() as usize)
        .collect();
    idx.dedup();
    idx
}

fn kernel(t: &[f64], s: &[f64], sf2: f64, ell: f64) -> DMatrix<f64> {
    DMatrix::from_fn(t.len(), s.len(), |i, j| {
        let r = (t[i] - s[j]) / ell;
        sf2 * (-0.5 * r * r).exp()
    })
}

fn factor(mut k: DMatrix<f64>, scale: f64) -> Result<Cholesky<f64, Dyn>> {
    let n = k.nrows();
    let mut added = 0.0;
    for &j in &JITTERS {
        let extra = j * scale - added;
        for i in 0..n {
            k[(i, i)] += extra;
        }
        added = j * scale;
        if let Some(c) = Cholesky::new(k.clone()) {
            return Ok(c);
        }
    }
    Err(Error::Cholesky(JITTERS[JITTERS.len() - 1]))
}

fn log_marginal(chol: &Cholesky<f64, Dyn>, y: &DVector<f64>) -> f64 {
    let alpha = chol.solve(y);
    let logdet: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    -0.5 * y.dot(&alpha) - logdet - 0.5 * y.len() as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// Posterior mean of a squared-exponential GP with constant (data-mean) prior
/// mean. `sigma_f` is the data std; `(length, sigma_n)` are picked from the
/// grid by log marginal likelihood on an evenly subsampled training set.
pub fn gp_smooth_series(t: &[f64], y: &[f64], dt: f64, cfg: &GpSettings) -> Result<Vec<f64>> {
    let n = y.len();
    if n < 10 {
        return Err(Error::InvalidArgument(format!("smoothing needs at least 10 samples, got {n}")));
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let std = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    if !(std > 0.0) {
        return Ok(y.to_vec());
    }
    let sf2 = std * std;
    let fit_idx = even_subsample(n, cfg.max_fit_points.max(2));
    let tf: Vec<f64> = fit_idx.iter().map(|&i| t[i]).collect();
    let yf = DVector::from_iterator(fit_idx.len(), fit_idx.iter().map(|&i| y[i] - mean));
    let mut best: Option<(f64, f64, f64)> = None;
    for &ls in &cfg.length_scales {
        let ell = ls * dt;
        let base = kernel(&tf, &tf, sf2, ell);
        for &nr in &cfg.noise_ratios {
            let sn2 = (nr * std).powi(2);
            let mut k = base.clone();
            for i in 0..k.nrows() {
                k[(i, i)] += sn2;
            }
            let Ok(chol) = factor(k, sf2) else { continue };
            let lml = log_marginal(&chol, &yf);
            if lml.is_finite() && best.is_none_or(|(b, _, _)| lml > b) {
                best = Some((lml, ell, sn2));
            }
        }
    }
    let (_, ell, sn2) = best.ok_or(Error::Cholesky(JITTERS[JITTERS.len() - 1]))?;
    let pred_idx = even_subsample(n, cfg.max_predict_points.max(2));
    let tp: Vec<f64> = pred_idx.iter().map(|&i| t[i]).collect();
    let yp = DVector::from_iterator(pred_idx.len(), pred_idx.iter().map(|&i| y[i] - mean));
    let mut k = kernel(&tp, &tp, sf2, ell);
    for i in 0..k.nrows() {
        k[(i, i)] += sn2;
    }
    let alpha = factor(k, sf2)?.solve(&yp);
    let kstar = kernel(t, &tp, sf2, ell);
    Ok((kstar * alpha).iter().map(|v| v + mean).collect())
}

pub fn gp_smooth(mut traj: Trajectory, cfg: &GpSettings) -> Result<Trajectory> {
    let t = traj.times();
    let mut out = traj.states.clone();
    for j in 0..traj.dim() {
        let col: Vec<f64> = traj.states.column(j).iter().copied().collect();
        let s = gp_smooth_series(&t, &col, traj.dt, cfg)?;
        out.column_mut(j).copy_from_slice(&s);
    }
    traj.smoothed = Some(out);
    Ok(traj)
}
