use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    None,
    /// Gaussian with per-dimension standard deviation `sigma * std(x_i)`.
    AdditiveRelative { sigma: f64 },
    /// `x_i (1 + eps_i)` with `eps_i ~ N(0, sigma^2)`.
    Multiplicative { sigma: f64 },
}

impl NoiseSpec {
    pub fn sigma(&self) -> f64 {
        match *self {
            NoiseSpec::None => 0.0,
            NoiseSpec::AdditiveRelative { sigma } | NoiseSpec::Multiplicative { sigma } => sigma,
        }
    }

    /// Same kind with a different level.
    pub fn with_sigma(&self, sigma: f64) -> NoiseSpec {
        match self {
            NoiseSpec::None if sigma == 0.0 => NoiseSpec::None,
            NoiseSpec::None | NoiseSpec::AdditiveRelative { .. } => NoiseSpec::AdditiveRelative { sigma },
            NoiseSpec::Multiplicative { .. } => NoiseSpec::Multiplicative { sigma },
        }
    }
}

pub(crate) fn column_std(x: &nalgebra::DMatrix<f64>, j: usize) -> f64 {
    let n = x.nrows() as f64;
    let col = x.column(j);
    let mean = col.mean();
    (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Perturbs `states` from `clean`; clean states are left untouched. Additive
/// noise is relative to the std of the trajectory's own clean states. Draws
/// are taken row by row, dimension by dimension.
pub fn add_noise<R: Rng>(mut traj: Trajectory, spec: &NoiseSpec, rng: &mut R) -> Trajectory {
    let (t, d) = traj.clean.shape();
    traj.states = traj.clean.clone();
    match *spec {
        NoiseSpec::None => {}
        NoiseSpec::AdditiveRelative { sigma } => {
            let scale: Vec<f64> = (0..d).map(|j| sigma * column_std(&traj.clean, j)).collect();
            for k in 0..t {
                for j in 0..d {
                    let z: f64 = rng.sample(StandardNormal);
                    traj.states[(k, j)] += scale[j] * z;
                }
            }
        }
        NoiseSpec::Multiplicative { sigma } => {
            for k in 0..t {
                for j in 0..d {
                    let z: f64 = rng.sample(StandardNormal);
                    traj.states[(k, j)] *= 1.0 + sigma * z;
                }
            }
        }
    }
    traj
}
