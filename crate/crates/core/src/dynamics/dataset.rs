use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{add_noise, estimate_derivatives, gp_smooth, rk4_integrate, GpSettings, NoiseSpec, OdeSystem, Trajectory};
use crate::error::{Error, Result};
use crate::rng::{split_seed, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSettings {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub steps: usize,
    pub dt: f64,
    pub dt_internal: f64,
    pub noise: NoiseSpec,
    /// `None` disables smoothing; derivatives then come from the raw states.
    pub smoothing: Option<GpSettings>,
}

impl DataSettings {
    pub fn for_system(sys: &OdeSystem) -> Self {
        let d = &sys.defaults;
        DataSettings {
            n_train: d.n_train,
            n_val: d.n_val,
            n_test: d.n_test,
            steps: d.steps,
            dt: d.dt,
            dt_internal: super::DT_INTERNAL,
            noise: d.noise,
            smoothing: Some(GpSettings::default()),
        }
    }

    fn stride(&self) -> Result<usize> {
        let ratio = self.dt / self.dt_internal;
        let stride = ratio.round();
        if !(stride >= 1.0) || (ratio - stride).abs() > 1e-9 * ratio {
            return Err(Error::config(
                "data.dt",
                format!("sampling interval {} is not a multiple of the internal step {}", self.dt, self.dt_internal),
            ));
        }
        Ok(stride as usize)
    }

    fn total(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub system: String,
    pub dim: usize,
    pub seed: u64,
    pub settings: DataSettings,
    pub train: Vec<Trajectory>,
    pub val: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

fn make_trajectory(sys: &OdeSystem, s: &DataSettings, stride: usize, seed: u64, index: usize) -> Result<Trajectory> {
    let mut rng = stream(seed, index as u64);
    let x0 = sys.defaults.sampler.sample(sys.dim, &mut rng)?;
    let n_internal = s.steps.saturating_sub(1) * stride;
    let mut tr = rk4_integrate(&sys.field(), &x0, s.dt_internal, n_internal, stride)?;
    tr.dt = s.dt;
    tr.seed = split_seed(seed, index as u64);
    tr = add_noise(tr, &s.noise, &mut rng);
    if let Some(gp) = &s.smoothing {
        tr = gp_smooth(tr, gp)?;
    }
    Ok(estimate_derivatives(tr))
}

/// Simulates every trajectory from its own random stream
/// `split_seed(seed, index)`, indices running over train, val, then test.
pub fn generate_dataset(sys: &OdeSystem, s: &DataSettings, seed: u64) -> Result<Dataset> {
    let stride = s.stride()?;
    if s.steps < 2 {
        return Err(Error::config("data.steps", "need at least two samples per trajectory"));
    }
    let mut all = (0..s.total())
        .into_par_iter()
        .map(|i| make_trajectory(sys, s, stride, seed, i))
        .collect::<Result<Vec<_>>>()?;
    let test = all.split_off(s.n_train + s.n_val);
    let val = all.split_off(s.n_train);
    Ok(Dataset {
        system: sys.name.clone(),
        dim: sys.dim,
        seed,
        settings: s.clone(),
        train: all,
        val,
        test,
    })
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Trajectory] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn dt(&self) -> f64 {
        self.settings.dt
    }

    /// Stacked working states and derivative labels of a split, `N x d` each.
    pub fn stacked(&self, split: Split) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let trajs = self.split(split);
        let n: usize = trajs.iter().map(Trajectory::len).sum();
        let mut x = DMatrix::zeros(n, self.dim);
        let mut dx = DMatrix::zeros(n, self.dim);
        let mut row = 0;
        for tr in trajs {
            let derivs = tr
                .derivs
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("trajectory has no derivative estimates".into()))?;
            let len = tr.len();
            x.view_mut((row, 0), (len, self.dim)).copy_from(tr.working_states());
            dx.view_mut((row, 0), (len, self.dim)).copy_from(derivs);
            row += len;
        }
        Ok((x, dx))
    }

    pub fn save(&self, dir: &Path, meta: &crate::config::ArtifactMeta) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for (split, trajs) in [(Split::Train, &self.train), (Split::Val, &self.val), (Split::Test, &self.test)] {
            for (k, tr) in trajs.iter().enumerate() {
                let name = format!("{}_{k:04}.csv", serde_json::to_value(split)?.as_str().unwrap_or("split"));
                write_csv(&dir.join(&name), tr)?;
                files.push(ManifestEntry {
                    split,
                    file: name,
                    seed: tr.seed,
                });
            }
        }
        let manifest = Manifest {
            artifact: meta.clone(),
            system: self.system.clone(),
            dim: self.dim,
            seed: self.seed,
            settings: self.settings.clone(),
            trajectories: files,
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<(Dataset, crate::config::ArtifactMeta)> {
        let text = fs::read_to_string(dir.join("manifest.json"))?;
        let m: Manifest = serde_json::from_str(&text)?;
        let mut ds = Dataset {
            system: m.system,
            dim: m.dim,
            seed: m.seed,
            settings: m.settings,
            train: vec![],
            val: vec![],
            test: vec![],
        };
        for e in &m.trajectories {
            let tr = read_csv(&dir.join(&e.file), m.dim, ds.settings.dt, e.seed)?;
            match e.split {
                Split::Train => ds.train.push(tr),
                Split::Val => ds.val.push(tr),
                Split::Test => ds.test.push(tr),
            }
        }
        Ok((ds, m.artifact))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    split: Split,
    file: String,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    artifact: crate::config::ArtifactMeta,
    system: String,
    dim: usize,
    seed: u64,
    settings: DataSettings,
    trajectories: Vec<ManifestEntry>,
}

fn header(d: usize, smoothed: bool, derivs: bool) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    let mut group = |p: &str| h.extend((1..=d).map(|i| format!("{p}{i}")));
    group("x");
    group("xc");
    if smoothed {
        group("xs");
    }
    if derivs {
        group("dx");
    }
    h
}

fn write_csv(path: &Path, tr: &Trajectory) -> Result<()> {
    let d = tr.dim();
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header(d, tr.smoothed.is_some(), tr.derivs.is_some())).map_err(csv_err)?;
    let times = tr.times();
    for (k, t) in times.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        let mut push = |m: &DMatrix<f64>| rec.extend((0..d).map(|j| m[(k, j)].to_string()));
        push(&tr.states);
        push(&tr.clean);
        if let Some(s) = &tr.smoothed {
            push(s);
        }
        if let Some(s) = &tr.derivs {
            push(s);
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn read_csv(path: &Path, d: usize, dt: f64, seed: u64) -> Result<Trajectory> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let hdr: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let has = |p: &str| hdr.iter().any(|h| h == &format!("{p}1"));
    let (smoothed, derivs) = (has("xs"), has("dx"));
    if hdr != header(d, smoothed, derivs) {
        return Err(Error::InvalidArgument(format!("unexpected columns in {}", path.display())));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let vals = rec
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        rows.push(vals);
    }
    let t = rows.len();
    let block = |g: usize| DMatrix::from_fn(t, d, |k, j| rows[k][1 + g * d + j]);
    let mut g = 2;
    let smoothed = smoothed.then(|| {
        g += 1;
        block(g - 1)
    });
    let derivs = derivs.then(|| block(g));
    Ok(Trajectory {
        t0: rows.first().map_or(0.0, |r| r[0]),
        dt,
        states: block(0),
        clean: block(1),
        smoothed,
        derivs,
        seed,
    })
}
