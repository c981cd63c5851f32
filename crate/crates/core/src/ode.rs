//! Fixed-step RK4 integration of vector fields, including the variational
//! equation used for flow Jacobians.

use crate::ad::Scalar;
use crate::error::{Error, Result};

/// A time-independent vector field with its Jacobian, evaluable at any scalar
/// type. Jacobians are row-major `d x d` buffers.
pub trait VectorField<S: Scalar>: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[S]) -> Vec<S>;
    fn jacobian(&self, x: &[S]) -> Vec<S>;
}

impl<S: Scalar, T: VectorField<S> + ?Sized> VectorField<S> for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, x: &[S]) -> Vec<S> {
        (**self).eval(x)
    }
    fn jacobian(&self, x: &[S]) -> Vec<S> {
        (**self).jacobian(x)
    }
}

fn axpy<S: Scalar>(x: &[S], k: &[S], h: f64) -> Vec<S> {
    x.iter().zip(k).map(|(&a, &b)| a + b * h).collect()
}

/// One classical RK4 step of size `h` for `x' = f(x)`.
pub fn rk4_step<S: Scalar>(f: &impl Fn(&[S]) -> Vec<S>, x: &[S], h: f64) -> Vec<S> {
    let k1 = f(x);
    let k2 = f(&axpy(x, &k1, 0.5 * h));
    let k3 = f(&axpy(x, &k2, 0.5 * h));
    let k4 = f(&axpy(x, &k3, h));
    x.iter()
        .enumerate()
        .map(|(i, &xi)| xi + (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0))
        .collect()
}

fn all_finite<S: Scalar>(x: &[S]) -> bool {
    x.iter().all(|v| v.value().is_finite())
}

/// Flow map `f_tau(x)` by `steps` RK4 steps (negative `tau` integrates backwards).
pub fn flow<S: Scalar, F: VectorField<S>>(field: &F, x: &[S], tau: f64, steps: usize) -> Result<Vec<S>> {
    let h = tau / steps as f64;
    let rhs = |y: &[S]| field.eval(y);
    let mut y = x.to_vec();
    for step in 0..steps {
        y = rk4_step(&rhs, &y, h);
        if !all_finite(&y) {
            return Err(Error::Divergence(format!("flow left the finite range at substep {step}")));
        }
    }
    Ok(y)
}

/// Integrates the flow together with `k` tangent directions: `D' = J(y) D`.
/// `tangents` is row-major `d x k`. Returns `(f_tau(x), D(tau))`.
pub fn flow_variational<S: Scalar, F: VectorField<S>>(
    field: &F,
    x: &[S],
    tangents: &[S],
    tau: f64,
    steps: usize,
) -> Result<(Vec<S>, Vec<S>)> {
    let d = x.len();
    let k = tangents.len() / d;
    let h = tau / steps as f64;
    let rhs = |z: &[S]| {
        let (y, dm) = z.split_at(d);
        let mut out = field.eval(y);
        let j = field.jacobian(y);
        for r in 0..d {
            for c in 0..k {
                let mut acc = S::zero();
                for m in 0..d {
                    acc += j[r * d + m] * dm[m * k + c];
                }
                out.push(acc);
            }
        }
        out
    };
    let mut z: Vec<S> = x.iter().chain(tangents.iter()).copied().collect();
    for step in 0..steps {
        z = rk4_step(&rhs, &z, h);
        if !all_finite(&z) {
            return Err(Error::Divergence(format!(
                "variational flow left the finite range at substep {step}"
            )));
        }
    }
    let dm = z.split_off(d);
    Ok((z, dm))
}

/// Flow and Jacobian-vector product `J_{f_tau}(x) u`.
pub fn flow_jvp<S: Scalar, F: VectorField<S>>(
    field: &F,
    x: &[S],
    u: &[S],
    tau: f64,
    steps: usize,
) -> Result<(Vec<S>, Vec<S>)> {
    flow_variational(field, x, u, tau, steps)
}

/// Flow and full Jacobian `J_{f_tau}(x)` (row-major).
pub fn flow_jacobian<S: Scalar, F: VectorField<S>>(
    field: &F,
    x: &[S],
    tau: f64,
    steps: usize,
) -> Result<(Vec<S>, Vec<S>)> {
    let d = x.len();
    let mut eye = vec![S::zero(); d * d];
    for i in 0..d {
        eye[i * d + i] = S::cst(1.0);
    }
    flow_variational(field, x, &eye, tau, steps)
}

/// A vector field given by symbolic components with precomputed symbolic
/// Jacobian.
#[derive(Clone, Debug)]
pub struct ExprField {
    components: Vec<crate::expr::Expr>,
    jacobian: Vec<crate::expr::Expr>,
}

impl ExprField {
    pub fn new(components: Vec<crate::expr::Expr>) -> Self {
        let d = components.len();
        let jacobian = components
            .iter()
            .flat_map(|c| (0..d).map(move |j| c.differentiate(j)))
            .collect();
        ExprField {
            components,
            jacobian,
        }
    }

    pub fn components(&self) -> &[crate::expr::Expr] {
        &self.components
    }
}

impl<S: Scalar> VectorField<S> for ExprField {
    fn dim(&self) -> usize {
        self.components.len()
    }
    fn eval(&self, x: &[S]) -> Vec<S> {
        self.components.iter().map(|c| c.eval_with(x)).collect()
    }
    fn jacobian(&self, x: &[S]) -> Vec<S> {
        self.jacobian.iter().map(|c| c.eval_with(x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn rotation() -> ExprField {
        ExprField::new(vec![parse("x2", 2).unwrap(), parse("-x1", 2).unwrap()])
    }

    #[test]
    fn flow_of_rotation_field() {
        let f = rotation();
        let y = flow(&f, &[1.0, 0.0], std::f64::consts::FRAC_PI_2, 200).unwrap();
        assert!((y[0] - 0.0).abs() < 1e-9 && (y[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn variational_matches_finite_differences() {
        let f = ExprField::new(vec![
            parse("0.75 - 0.1*x1 - x1*x2^2", 2).unwrap(),
            parse("0.1*x1 - x2 + x1*x2^2", 2).unwrap(),
        ]);
        let x = [0.7, 0.9];
        let (_, jac) = flow_jacobian(&f, &x, 0.5, 64).unwrap();
        let h = 1e-6;
        for c in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[c] += h;
            xm[c] -= h;
            let yp = flow(&f, &xp, 0.5, 64).unwrap();
            let ym = flow(&f, &xm, 0.5, 64).unwrap();
            for r in 0..2 {
                let fd = (yp[r] - ym[r]) / (2.0 * h);
                assert!((jac[r * 2 + c] - fd).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn zero_time_flow_is_identity() {
        let f = rotation();
        let (y, jv) = flow_jvp(&f, &[0.3, -0.2], &[1.0, 2.0], 0.0, 8).unwrap();
        assert_eq!(y, vec![0.3, -0.2]);
        assert_eq!(jv, vec![1.0, 2.0]);
    }

    #[test]
    fn blowup_is_reported() {
        let f = ExprField::new(vec![parse("x1^2", 1).unwrap()]);
        assert!(matches!(flow(&f, &[1.0], 5.0, 1000), Err(Error::Divergence(_))));
    }
}
