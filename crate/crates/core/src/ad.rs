//! Scalar abstraction shared by plain `f64` evaluation and a small
//! reverse-mode automatic differentiation tape.
//!
//! Everything that has to be differentiated with respect to a SINDy
//! coefficient matrix (flow maps, variational equations, symmetry losses) is
//! written once, generically over [`Scalar`]. Evaluating with `f64` gives the
//! value; evaluating with [`Var`] records a tape whose backward sweep yields the
//! exact gradient of the discretized computation.
//!
//! The tape is thread-local. [`gradient`] clears it on entry, so calls must not
//! be nested on the same thread.

use std::cell::RefCell;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + Send
    + Sync
    + 'static
{
    fn cst(v: f64) -> Self;
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn powi(self, n: u32) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }
}

impl Scalar for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn powi(self, n: u32) -> Self {
        f64::powi(self, n as i32)
    }
}

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
}

thread_local! {
    static TAPE: RefCell<Vec<Node>> = const { RefCell::new(Vec::new()) };
}

/// A value on the thread-local tape. Constants carry no tape index.
#[derive(Clone, Copy, Debug)]
pub struct Var {
    idx: u32,
    val: f64,
}

impl Var {
    fn push(val: f64, parents: [u32; 2], partials: [f64; 2]) -> Var {
        if parents[0] == NONE && parents[1] == NONE {
            return Var { idx: NONE, val };
        }
        let idx = TAPE.with(|t| {
            let mut t = t.borrow_mut();
            t.push(Node { parents, partials });
            (t.len() - 1) as u32
        });
        Var { idx, val }
    }

    fn unary(self, val: f64, d: f64) -> Var {
        Var::push(val, [self.idx, NONE], [d, 0.0])
    }

    fn binary(self, other: Var, val: f64, da: f64, db: f64) -> Var {
        Var::push(val, [self.idx, other.idx], [da, db])
    }
}

impl Add for Var {
    type Output = Var;
    fn add(self, o: Var) -> Var {
        self.binary(o, self.val + o.val, 1.0, 1.0)
    }
}
impl Sub for Var {
    type Output = Var;
    fn sub(self, o: Var) -> Var {
        self.binary(o, self.val - o.val, 1.0, -1.0)
    }
}
impl Mul for Var {
    type Output = Var;
    fn mul(self, o: Var) -> Var {
        self.binary(o, self.val * o.val, o.val, self.val)
    }
}
impl Div for Var {
    type Output = Var;
    fn div(self, o: Var) -> Var {
        let q = self.val / o.val;
        self.binary(o, q, 1.0 / o.val, -q / o.val)
    }
}
impl Neg for Var {
    type Output = Var;
    fn neg(self) -> Var {
        self.unary(-self.val, -1.0)
    }
}
impl Add<f64> for Var {
    type Output = Var;
    fn add(self, o: f64) -> Var {
        self.unary(self.val + o, 1.0)
    }
}
impl Sub<f64> for Var {
    type Output = Var;
    fn sub(self, o: f64) -> Var {
        self.unary(self.val - o, 1.0)
    }
}
impl Mul<f64> for Var {
    type Output = Var;
    fn mul(self, o: f64) -> Var {
        if o == 0.0 {
            return Var { idx: NONE, val: 0.0 };
        }
        self.unary(self.val * o, o)
    }
}
impl Div<f64> for Var {
    type Output = Var;
    fn div(self, o: f64) -> Var {
        self.unary(self.val / o, 1.0 / o)
    }
}
impl AddAssign for Var {
    fn add_assign(&mut self, o: Var) {
        *self = *self + o;
    }
}

impl Scalar for Var {
    fn cst(v: f64) -> Self {
        Var { idx: NONE, val: v }
    }
    fn value(self) -> f64 {
        self.val
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e)
    }
    fn powi(self, n: u32) -> Self {
        match n {
            0 => Var::cst(1.0),
            1 => self,
            _ => {
                let v = self.val.powi(n as i32);
                let d = n as f64 * self.val.powi(n as i32 - 1);
                self.unary(v, d)
            }
        }
    }
}

/// Evaluates `f` at `inputs` on a fresh tape and returns the value and the
/// gradient with respect to every input.
pub fn gradient<F>(inputs: &[f64], f: F) -> (f64, Vec<f64>)
where
    F: FnOnce(&[Var]) -> Var,
{
    TAPE.with(|t| t.borrow_mut().clear());
    let vars: Vec<Var> = inputs
        .iter()
        .map(|&v| {
            let idx = TAPE.with(|t| {
                let mut t = t.borrow_mut();
                t.push(Node {
                    parents: [NONE, NONE],
                    partials: [0.0, 0.0],
                });
                (t.len() - 1) as u32
            });
            Var { idx, val: v }
        })
        .collect();
    let out = f(&vars);
    let mut grad = vec![0.0; inputs.len()];
    if out.idx == NONE {
        TAPE.with(|t| t.borrow_mut().clear());
        return (out.val, grad);
    }
    TAPE.with(|t| {
        let tape = t.borrow();
        let mut adj = vec![0.0; out.idx as usize + 1];
        adj[out.idx as usize] = 1.0;
        for i in (0..=out.idx as usize).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = tape[i];
            for k in 0..2 {
                let p = node.parents[k];
                if p != NONE {
                    adj[p as usize] += a * node.partials[k];
                }
            }
        }
        for (g, v) in grad.iter_mut().zip(&vars) {
            *g = adj[v.idx as usize];
        }
    });
    TAPE.with(|t| t.borrow_mut().clear());
    (out.val, grad)
}

/// Pairwise (tree) summation; the result depends only on the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n if n <= 8 => xs.iter().sum(),
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_of_polynomial_and_exp() {
        let (v, g) = gradient(&[2.0, 3.0], |x| x[0] * x[0] * x[1] + x[1].exp() - x[0] / x[1]);
        let expect_v = 12.0 + 3f64.exp() - 2.0 / 3.0;
        assert!((v - expect_v).abs() < 1e-12);
        assert!((g[0] - (2.0 * 2.0 * 3.0 - 1.0 / 3.0)).abs() < 1e-12);
        assert!((g[1] - (4.0 + 3f64.exp() + 2.0 / 9.0)).abs() < 1e-12);
    }

    #[test]
    fn constant_output_has_zero_gradient() {
        let (v, g) = gradient(&[1.0], |x| x[0] * 0.0 + 5.0);
        assert_eq!(v, 5.0);
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn powi_matches_repeated_product() {
        let (_, g) = gradient(&[1.7], |x| x[0].powi(3));
        assert!((g[0] - 3.0 * 1.7f64.powi(2)).abs() < 1e-12);
    }

    #[test]
    fn pairwise_sum_matches_naive_for_integers() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499500.0);
    }
}
