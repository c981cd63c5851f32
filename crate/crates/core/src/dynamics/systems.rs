use nalgebra::DMatrix;
use rand::Rng;

use super::NoiseSpec;
use crate::error::{Error, Result};
use crate::expr::{parse, CanonicalForm, Expr, TermKey};
use crate::funclib::LibrarySpec;
use crate::ode::ExprField;
use crate::symmetry::Generator;

pub const SYSTEM_NAMES: [&str; 5] = ["oscillator", "growth", "lv", "glycolytic", "seir"];

#[derive(Clone, Debug, PartialEq)]
pub enum Sampler {
    /// Uniform radius in `[r_min, r_max]` and uniform angle.
    Annulus { r_min: f64, r_max: f64 },
    /// Uniform in `[lo, hi]^d`.
    Box { lo: f64, hi: f64 },
    /// Uniform densities in `[0, 1]^2`, log-transformed, kept when the
    /// conserved quantity lies in `[h_min, h_max]`.
    LogDensity { h_min: f64, h_max: f64, max_draws: usize },
}

/// Conserved quantity of the canonical Lotka-Volterra system.
pub fn lotka_volterra_hamiltonian(x: &[f64]) -> f64 {
    x[0].exp() - x[0] + 1.333 * x[1].exp() - 0.667 * x[1]
}

impl Sampler {
    pub fn sample<R: Rng>(&self, dim: usize, rng: &mut R) -> Result<Vec<f64>> {
        match *self {
            Sampler::Annulus { r_min, r_max } => {
                let r = rng.random_range(r_min..=r_max);
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                Ok(vec![r * theta.cos(), r * theta.sin()])
            }
            Sampler::Box { lo, hi } => Ok((0..dim).map(|_| rng.random_range(lo..=hi)).collect()),
            Sampler::LogDensity { h_min, h_max, max_draws } => {
                for _ in 0..max_draws {
                    let p1: f64 = rng.random();
                    let p2: f64 = rng.random();
                    if p1 <= 0.0 || p2 <= 0.0 {
                        continue;
                    }
                    let x = vec![p1.ln(), p2.ln()];
                    let h = lotka_volterra_hamiltonian(&x);
                    if (h_min..=h_max).contains(&h) {
                        return Ok(x);
                    }
                }
                Err(Error::SamplerExhausted(max_draws))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemDefaults {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Samples per trajectory.
    pub steps: usize,
    pub dt: f64,
    pub noise: NoiseSpec,
    pub threshold: f64,
    pub library: LibrarySpec,
    pub sampler: Sampler,
}

#[derive(Clone, Debug)]
pub struct OdeSystem {
    pub name: String,
    pub dim: usize,
    pub rhs: Vec<Expr>,
    /// Ground-truth expansion of each equation.
    pub truth: Vec<CanonicalForm>,
    pub generators: Vec<Generator>,
    pub defaults: SystemDefaults,
}

impl OdeSystem {
    pub fn field(&self) -> ExprField {
        ExprField::new(self.rhs.clone())
    }
}

fn mono(p: &[u32]) -> TermKey {
    TermKey::monomial(p.to_vec())
}

fn form(terms: Vec<(TermKey, f64)>) -> CanonicalForm {
    CanonicalForm::from_terms(terms)
}

fn rhs(src: &[&str]) -> Vec<Expr> {
    src.iter()
        .map(|s| parse(s, src.len()).expect("built-in system equations parse"))
        .collect()
}

fn lib(dim: usize, degree: u32, exponentials: bool) -> LibrarySpec {
    LibrarySpec {
        dim,
        degree,
        exponentials,
    }
}

fn linear(rows: &[&[f64]], label: &str) -> Generator {
    let d = rows.len();
    let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Generator::linear(DMatrix::from_row_slice(d, d, &flat), label).expect("built-in generator is square")
}

fn oscillator() -> OdeSystem {
    OdeSystem {
        name: "oscillator".into(),
        dim: 2,
        rhs: rhs(&["-0.1*x1 - x2", "x1 - 0.1*x2"]),
        truth: vec![
            form(vec![(mono(&[1, 0]), -0.1), (mono(&[0, 1]), -1.0)]),
            form(vec![(mono(&[1, 0]), 1.0), (mono(&[0, 1]), -0.1)]),
        ],
        generators: vec![linear(&[&[0.0, 1.0], &[-1.0, 0.0]], "rotation")],
        defaults: SystemDefaults {
            n_train: 50,
            n_val: 10,
            n_test: 10,
            steps: 100,
            dt: 0.2,
            noise: NoiseSpec::AdditiveRelative { sigma: 0.2 },
            threshold: 0.05,
            library: lib(2, 2, false),
            sampler: Sampler::Annulus { r_min: 0.5, r_max: 2.0 },
        },
    }
}

fn growth() -> OdeSystem {
    OdeSystem {
        name: "growth".into(),
        dim: 2,
        rhs: rhs(&["-0.3*x1 + 0.1*x2^2", "x2"]),
        truth: vec![
            form(vec![(mono(&[1, 0]), -0.3), (mono(&[0, 2]), 0.1)]),
            form(vec![(mono(&[0, 1]), 1.0)]),
        ],
        generators: vec![linear(&[&[2.0, 0.0], &[0.0, 1.0]], "scaling")],
        defaults: SystemDefaults {
            n_train: 100,
            n_val: 20,
            n_test: 20,
            steps: 100,
            dt: 0.02,
            noise: NoiseSpec::Multiplicative { sigma: 0.05 },
            threshold: 0.05,
            library: lib(2, 2, false),
            sampler: Sampler::Box { lo: 0.2, hi: 1.0 },
        },
    }
}

fn lotka_volterra() -> OdeSystem {
    OdeSystem {
        name: "lv".into(),
        dim: 2,
        rhs: rhs(&["2/3 - (4/3)*exp(x2)", "-1 + exp(x1)"]),
        truth: vec![
            form(vec![(TermKey::one(2), 2.0 / 3.0), (TermKey::exponential(2, 1), -(4.0 / 3.0))]),
            form(vec![(TermKey::one(2), -1.0), (TermKey::exponential(2, 0), 1.0)]),
        ],
        generators: vec![],
        defaults: SystemDefaults {
            n_train: 200,
            n_val: 20,
            n_test: 20,
            steps: 10_000,
            dt: 0.002,
            noise: NoiseSpec::AdditiveRelative { sigma: 0.99 },
            threshold: 0.15,
            library: lib(2, 2, true),
            sampler: Sampler::LogDensity {
                h_min: 3.0,
                h_max: 4.5,
                max_draws: 100_000,
            },
        },
    }
}

fn glycolytic() -> OdeSystem {
    OdeSystem {
        name: "glycolytic".into(),
        dim: 2,
        rhs: rhs(&["0.75 - 0.1*x1 - x1*x2^2", "0.1*x1 - x2 + x1*x2^2"]),
        truth: vec![
            form(vec![(TermKey::one(2), 0.75), (mono(&[1, 0]), -0.1), (mono(&[1, 2]), -1.0)]),
            form(vec![(mono(&[1, 0]), 0.1), (mono(&[0, 1]), -1.0), (mono(&[1, 2]), 1.0)]),
        ],
        generators: vec![],
        defaults: SystemDefaults {
            n_train: 10,
            n_val: 2,
            n_test: 2,
            steps: 10_000,
            dt: 0.002,
            noise: NoiseSpec::AdditiveRelative { sigma: 0.2 },
            threshold: 0.075,
            library: lib(2, 3, false),
            sampler: Sampler::Box { lo: 0.5, hi: 1.0 },
        },
    }
}

fn seir() -> OdeSystem {
    OdeSystem {
        name: "seir".into(),
        dim: 4,
        rhs: rhs(&["0.15 - 0.6*x1*x3", "0.6*x1*x3 - x2", "x2 - 0.5*x3", "-0.15 + 0.5*x3"]),
        truth: vec![
            form(vec![(TermKey::one(4), 0.15), (mono(&[1, 0, 1, 0]), -0.6)]),
            form(vec![(mono(&[1, 0, 1, 0]), 0.6), (mono(&[0, 1, 0, 0]), -1.0)]),
            form(vec![(mono(&[0, 1, 0, 0]), 1.0), (mono(&[0, 0, 1, 0]), -0.5)]),
            form(vec![(TermKey::one(4), -0.15), (mono(&[0, 0, 1, 0]), 0.5)]),
        ],
        generators: vec![linear(
            &[
                &[0.0, 0.0, 0.0, 0.0],
                &[0.0, 0.0, 0.0, 0.0],
                &[0.0, 0.0, 0.0, 0.0],
                &[1.0, 1.0, 1.0, 1.0],
            ],
            "population",
        )],
        defaults: SystemDefaults {
            n_train: 20,
            n_val: 5,
            n_test: 5,
            steps: 500,
            dt: 0.02,
            noise: NoiseSpec::AdditiveRelative { sigma: 0.05 },
            threshold: 0.05,
            library: lib(4, 2, false),
            sampler: Sampler::Box { lo: 0.0, hi: 1.0 },
        },
    }
}

/// Looks up a built-in system by name.
pub fn system(name: &str) -> Result<OdeSystem> {
    match name.to_ascii_lowercase().as_str() {
        "oscillator" | "damped-oscillator" => Ok(oscillator()),
        "growth" => Ok(growth()),
        "lv" | "lotka-volterra" => Ok(lotka_volterra()),
        "glycolytic" | "selkov" => Ok(glycolytic()),
        "seir" => Ok(seir()),
        _ => Err(Error::UnknownSystem(name.to_string())),
    }
}
