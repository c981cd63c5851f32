//! Ground-truth systems and the data pipeline: simulation, initial-condition
//! sampling, noise, Gaussian-process smoothing and derivative estimation.

mod dataset;
mod gp;
mod noise;
mod simulate;
mod systems;

pub use dataset::{generate_dataset, DataSettings, Dataset, Split};
pub use gp::{gp_smooth, gp_smooth_series, GpSettings};
pub use noise::{add_noise, NoiseSpec};
pub use simulate::{estimate_derivatives, finite_difference, rk4_integrate, Trajectory, DT_INTERNAL};
pub use systems::{system, OdeSystem, Sampler, SystemDefaults, SYSTEM_NAMES};
