use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::ode::{rk4_step, VectorField};

/// Internal RK4 step used for every system.
pub const DT_INTERNAL: f64 = 0.002;

/// One sampled trajectory. Arrays are `T x d`, one row per time step.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    /// Observed (possibly noisy) states.
    pub states: DMatrix<f64>,
    /// Noise-free states, kept for evaluation.
    pub clean: DMatrix<f64>,
    pub smoothed: Option<DMatrix<f64>>,
    pub derivs: Option<DMatrix<f64>>,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.t0 + k as f64 * self.dt).collect()
    }

    /// Smoothed states when available, raw states otherwise.
    pub fn working_states(&self) -> &DMatrix<f64> {
        self.smoothed.as_ref().unwrap_or(&self.states)
    }

    pub fn initial_state(&self) -> Vec<f64> {
        self.clean.row(0).iter().copied().collect()
    }
}

/// Classical RK4 with `n_internal` steps of size `dt_internal`, recording
/// every `stride`-th state (including the initial one).
pub fn rk4_integrate<F: VectorField<f64>>(
    field: &F,
    x0: &[f64],
    dt_internal: f64,
    n_internal: usize,
    stride: usize,
) -> Result<Trajectory> {
    if !(dt_internal > 0.0) || stride == 0 {
        return Err(Error::InvalidArgument("integration needs dt > 0 and stride >= 1".into()));
    }
    let d = x0.len();
    let rows = n_internal / stride + 1;
    let mut out = DMatrix::zeros(rows, d);
    let rhs = |y: &[f64]| field.eval(y);
    let mut y = x0.to_vec();
    out.row_mut(0).copy_from_slice(&y);
    for step in 1..=n_internal {
        y = rk4_step(&rhs, &y, dt_internal);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationFailure { step });
        }
        if step % stride == 0 {
            out.row_mut(step / stride).copy_from_slice(&y);
        }
    }
    Ok(Trajectory {
        t0: 0.0,
        dt: dt_internal * stride as f64,
        states: out.clone(),
        clean: out,
        smoothed: None,
        derivs: None,
        seed: 0,
    })
}

/// Second-order central differences inside, second-order one-sided at the
/// ends, forward difference when only two samples exist.
pub fn finite_difference(x: &DMatrix<f64>, dt: f64) -> DMatrix<f64> {
    let (t, d) = x.shape();
    let mut dx = DMatrix::zeros(t, d);
    match t {
        0 | 1 => {
            log::warn!("derivative of a trajectory with {t} samples is set to zero");
        }
        2 => {
            log::warn!("two-sample trajectory: using a forward difference");
            for j in 0..d {
                let v = (x[(1, j)] - x[(0, j)]) / dt;
                dx[(0, j)] = v;
                dx[(1, j)] = v;
            }
        }
        _ => {
            for j in 0..d {
                dx[(0, j)] = (-3.0 * x[(0, j)] + 4.0 * x[(1, j)] - x[(2, j)]) / (2.0 * dt);
                for k in 1..t - 1 {
                    dx[(k, j)] = (x[(k + 1, j)] - x[(k - 1, j)]) / (2.0 * dt);
                }
                dx[(t - 1, j)] = (3.0 * x[(t - 1, j)] - 4.0 * x[(t - 2, j)] + x[(t - 3, j)]) / (2.0 * dt);
            }
        }
    }
    dx
}

pub fn estimate_derivatives(mut traj: Trajectory) -> Trajectory {
    traj.derivs = Some(finite_difference(traj.working_states(), traj.dt));
    traj
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::ode::ExprField;
    use std::f64::consts::TAU;

    fn harmonic() -> ExprField {
        ExprField::new(vec![parse("x2", 2).unwrap(), parse("-x1", 2).unwrap()])
    }

    fn period_error(h: f64) -> f64 {
        let n = (TAU / h).round() as usize;
        let tr = rk4_integrate(&harmonic(), &[1.0, 0.0], TAU / n as f64, n, n).unwrap();
        let last = tr.states.row(tr.len() - 1);
        ((last[0] - 1.0).powi(2) + last[1].powi(2)).sqrt()
    }

    #[test]
    fn full_period_returns_home() {
        assert!(period_error(DT_INTERNAL) <= 1e-8);
    }

    #[test]
    fn fourth_order_convergence() {
        for h in [0.2, 0.1, 0.05] {
            let order = (period_error(h) / period_error(h / 2.0)).log2();
            assert!(order >= 3.8, "observed order {order} at h = {h}");
        }
    }

    #[test]
    fn stride_and_constant_field() {
        let zero = ExprField::new(vec![parse("0", 2).unwrap(), parse("0", 2).unwrap()]);
        let tr = rk4_integrate(&zero, &[0.3, -0.4], 0.002, 100, 10).unwrap();
        assert_eq!(tr.len(), 11);
        assert!((tr.dt - 0.02).abs() < 1e-15);
        assert!(tr.states.row_iter().all(|r| r[0] == 0.3 && r[1] == -0.4));
    }

    #[test]
    fn blowup_reports_step() {
        let f = ExprField::new(vec![parse("x1^2", 1).unwrap()]);
        assert!(matches!(
            rk4_integrate(&f, &[1.0], 0.01, 1000, 1),
            Err(Error::IntegrationFailure { .. })
        ));
    }

    #[test]
    fn derivative_examples() {
        let ramp = DMatrix::from_fn(20, 1, |k, _| 0.7 * k as f64 * 0.1);
        let d = finite_difference(&ramp, 0.1);
        assert!(d.iter().all(|v| (v - 0.7).abs() < 1e-12));

        let dt = 0.01;
        let s = DMatrix::from_fn(700, 1, |k, _| (k as f64 * dt).sin());
        let d = finite_difference(&s, dt);
        let err = |k: usize| (d[(k, 0)] - (k as f64 * dt).cos()).abs();
        let interior = (1..699).map(err).fold(0.0, f64::max);
        assert!(interior <= 2e-5, "{interior}");
        // one-sided stencils carry the larger h^2/3 truncation constant
        assert!(err(0) <= dt * dt / 3.0 * 1.01 && err(699) <= dt * dt / 3.0 * 1.01);

        let two = DMatrix::from_row_slice(2, 1, &[1.0, 1.5]);
        assert_eq!(finite_difference(&two, 0.5).as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn quadratic_is_exact() {
        let q = DMatrix::from_fn(10, 1, |k, _| {
            let t = k as f64 * 0.3;
            2.0 * t * t - t + 1.0
        });
        let d = finite_difference(&q, 0.3);
        for k in 0..10 {
            assert!((d[(k, 0)] - (4.0 * k as f64 * 0.3 - 1.0)).abs() < 1e-11);
        }
    }
}
