use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsSettings {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub memory: usize,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        LbfgsSettings {
            max_iters: 500,
            grad_tol: 1e-8,
            memory: 10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Limited-memory BFGS with Armijo backtracking. Objective values of accepted
/// iterates never increase. Trial points where the objective fails or is
/// non-finite are treated as rejected steps.
pub fn minimize<F>(mut f: F, x0: &[f64], s: &LbfgsSettings) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x)?;
    let mut evaluations = 1;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("objective at the starting point".into()));
    }
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    while iterations < s.max_iters {
        if inf_norm(&g) <= s.grad_tol {
            return Ok(LbfgsResult {
                x,
                f: fx,
                iterations,
                evaluations,
                converged: true,
            });
        }
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (sv, yv, rho) in hist.iter().rev() {
            let a = rho * dot(sv, &q);
            for (qi, yi) in q.iter_mut().zip(yv) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = hist.back().map_or(1.0 / inf_norm(&g).max(1.0), |(sv, yv, _)| dot(sv, yv) / dot(yv, yv));
        for v in q.iter_mut() {
            *v *= gamma;
        }
        for ((sv, yv, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(yv, &q);
            for (qi, si) in q.iter_mut().zip(sv) {
                *qi += (a - b) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            hist.clear();
            dir = g.iter().map(|v| -v / inf_norm(&g).max(1.0)).collect();
            slope = dot(&g, &dir);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            evaluations += 1;
            if let Ok((ft, gt)) = f(&trial) {
                if ft.is_finite() && gt.iter().all(|v| v.is_finite()) && ft <= fx + ARMIJO_C1 * step * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            break;
        };
        assert!(fnew <= fx, "line search accepted an increasing step");
        iterations += 1;
        let sv: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&sv, &yv);
        if sy > 1e-12 * dot(&yv, &yv).sqrt() * dot(&sv, &sv).sqrt() {
            hist.push_back((sv, yv, 1.0 / sy));
            if hist.len() > s.memory.max(1) {
                hist.pop_front();
            }
        }
        let stalled = fx - fnew <= 1e-16 * fx.abs().max(1.0);
        x = xn;
        fx = fnew;
        g = gn;
        if stalled {
            break;
        }
    }
    let converged = inf_norm(&g) <= s.grad_tol;
    Ok(LbfgsResult {
        x,
        f: fx,
        iterations,
        evaluations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let r = minimize(
            |x| {
                let (a, b) = (x[0], x[1]);
                let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
                let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
                Ok((f, g))
            },
            &[-1.2, 1.0],
            &LbfgsSettings::default(),
        )
        .unwrap();
        assert!(r.converged, "{r:?}");
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn quadratic_in_few_steps() {
        let r = minimize(
            |x| {
                let f = 0.5 * (3.0 * x[0] * x[0] + x[1] * x[1]) - x[0];
                Ok((f, vec![3.0 * x[0] - 1.0, x[1]]))
            },
            &[5.0, -4.0],
            &LbfgsSettings::default(),
        )
        .unwrap();
        assert!(r.converged && r.iterations < 20);
        assert!((r.x[0] - 1.0 / 3.0).abs() < 1e-8);
    }

    #[test]
    fn bad_start_is_an_error() {
        let r = minimize(|_| Ok((f64::NAN, vec![0.0])), &[0.0], &LbfgsSettings::default());
        assert!(r.is_err());
    }

    #[test]
    fn non_finite_region_is_avoided() {
        // log barrier: undefined for x <= 0
        let r = minimize(
            |x| {
                let f = if x[0] > 0.0 { x[0] - x[0].ln() } else { f64::NAN };
                Ok((f, vec![1.0 - 1.0 / x[0]]))
            },
            &[3.0],
            &LbfgsSettings::default(),
        )
        .unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-6);
    }
}
