//! Run configuration, its content hash, and the metadata stamped on every
//! emitted artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::discover::{DiscoveryConfig, Method};
use crate::dynamics::{system, DataSettings, GpSettings, NoiseSpec, OdeSystem};
use crate::error::{Error, Result};
use crate::funclib::{FunctionLibrary, LibrarySpec};
use crate::symmetry::{Generator, GeneratorSpec};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactMeta {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl ArtifactMeta {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        ArtifactMeta {
            tool_version: TOOL_VERSION.to_string(),
            config_hash: config_hash.into(),
            seed,
        }
    }
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Optional overrides of a system's data-generation defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataOverrides {
    pub n_train: Option<usize>,
    pub n_val: Option<usize>,
    pub n_test: Option<usize>,
    pub steps: Option<usize>,
    pub dt: Option<f64>,
    pub dt_internal: Option<f64>,
    pub noise: Option<NoiseSpec>,
    /// Noise level with the system's default noise kind.
    pub noise_level: Option<f64>,
    /// `false` skips smoothing and differentiates the raw states.
    pub smooth: Option<bool>,
    pub gp: Option<GpSettings>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSettings {
    pub methods: Vec<Method>,
    /// Runs per method; 20 for regression methods and 5 for GP when absent.
    pub runs: Option<usize>,
    /// Long-term prediction horizon; the trajectory length when absent.
    pub horizon: Option<f64>,
    pub checkpoints: usize,
    /// Test initial conditions per run; all test trajectories when absent.
    pub test_ics: Option<usize>,
    pub long_term: bool,
}

impl Default for BenchmarkSettings {
    fn default() -> Self {
        BenchmarkSettings {
            methods: vec![Method::Sindy, Method::EquivC],
            runs: None,
            horizon: None,
            checkpoints: 11,
            test_ics: None,
            long_term: true,
        }
    }
}

impl BenchmarkSettings {
    pub fn runs_for(&self, m: Method) -> usize {
        self.runs.unwrap_or(if m.is_symbolic() { 5 } else { 20 })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub system: Option<String>,
    /// Directory of a previously generated dataset.
    pub dataset: Option<PathBuf>,
    pub data: DataOverrides,
    pub library: Option<LibrarySpec>,
    pub generators: Option<Vec<GeneratorSpec>>,
    pub method: Option<Method>,
    pub discovery: DiscoveryConfig,
    pub benchmark: BenchmarkSettings,
    pub seed: u64,
    /// Where artifacts go; not part of the hash, so results do not depend on it.
    #[serde(skip_serializing)]
    pub output: Option<PathBuf>,
}

impl Config {
    /// Parses and validates a JSON document; errors carry the path of the
    /// offending key.
    pub fn from_json_str(text: &str) -> Result<Config> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Config> {
        Config::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(name) = &self.system {
            system(name).map_err(|_| Error::config("system", format!("unknown system `{name}`")))?;
        }
        let d = &self.data;
        for (key, v) in [("data.n_train", d.n_train), ("data.steps", d.steps)] {
            if v == Some(0) {
                return Err(Error::config(key, "must be positive"));
            }
        }
        for (key, v) in [("data.dt", d.dt), ("data.dt_internal", d.dt_internal)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::config(key, "must be a positive number"));
                }
            }
        }
        if let Some(s) = d.noise_level {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::config("data.noise_level", "must be non-negative"));
            }
        }
        if d.noise.is_some() && d.noise_level.is_some() {
            return Err(Error::config("data.noise_level", "give either `noise` or `noise_level`, not both"));
        }
        if let Some(lib) = &self.library {
            if lib.dim == 0 {
                return Err(Error::config("library.dim", "must be positive"));
            }
        }
        self.discovery
            .validate()
            .map_err(|e| Error::config("discovery", e.to_string().trim_start_matches("invalid argument: ").to_string()))?;
        let b = &self.benchmark;
        if b.methods.is_empty() {
            return Err(Error::config("benchmark.methods", "at least one method is required"));
        }
        if b.runs == Some(0) {
            return Err(Error::config("benchmark.runs", "must be positive"));
        }
        if let Some(h) = b.horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::config("benchmark.horizon", "must be a positive number"));
            }
        }
        if b.checkpoints < 2 {
            return Err(Error::config("benchmark.checkpoints", "need at least two checkpoints"));
        }
        Ok(())
    }

    /// SHA-256 of the normalized document (defaults filled, fixed key order).
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn meta(&self) -> ArtifactMeta {
        ArtifactMeta::new(self.hash(), self.seed)
    }

    pub fn ode_system(&self) -> Result<OdeSystem> {
        let name = self
            .system
            .as_deref()
            .ok_or_else(|| Error::config("system", "a system name is required"))?;
        system(name)
    }

    pub fn data_settings(&self, sys: &OdeSystem) -> DataSettings {
        let mut s = DataSettings::for_system(sys);
        let d = &self.data;
        s.n_train = d.n_train.unwrap_or(s.n_train);
        s.n_val = d.n_val.unwrap_or(s.n_val);
        s.n_test = d.n_test.unwrap_or(s.n_test);
        s.steps = d.steps.unwrap_or(s.steps);
        s.dt = d.dt.unwrap_or(s.dt);
        s.dt_internal = d.dt_internal.unwrap_or(s.dt_internal);
        if let Some(n) = d.noise {
            s.noise = n;
        }
        if let Some(level) = d.noise_level {
            s.noise = if level == 0.0 { NoiseSpec::None } else { s.noise.with_sigma(level) };
        }
        if let Some(gp) = &d.gp {
            s.smoothing = Some(gp.clone());
        }
        if d.smooth == Some(false) {
            s.smoothing = None;
        }
        s
    }

    /// The configured library, else the system default, else degree 2.
    pub fn library(&self, sys: Option<&OdeSystem>, dim: usize) -> Result<FunctionLibrary> {
        let spec = match (&self.library, sys) {
            (Some(l), _) => *l,
            (None, Some(s)) => s.defaults.library,
            (None, None) => LibrarySpec {
                dim,
                degree: 2,
                exponentials: false,
            },
        };
        if spec.dim != dim {
            return Err(Error::config("library.dim", format!("library has {} variables, data has {dim}", spec.dim)));
        }
        FunctionLibrary::from_spec(spec).map_err(|e| Error::config("library", e.to_string()))
    }

    /// The configured generators, else the system's known symmetries.
    pub fn generators(&self, sys: Option<&OdeSystem>, dim: usize) -> Result<Vec<Generator>> {
        match (&self.generators, sys) {
            (Some(specs), _) => specs
                .iter()
                .enumerate()
                .map(|(k, g)| Generator::from_spec(g, dim).map_err(|e| Error::config(format!("generators[{k}]"), e.to_string())))
                .collect(),
            (None, Some(s)) => Ok(s.generators.clone()),
            (None, None) => Ok(Vec::new()),
        }
    }
}
