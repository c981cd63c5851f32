//! Benchmark metrics (term-set success, parameter RMSE, long-term prediction
//! error) and the multi-run harness that writes report files.

mod metrics;

use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ArtifactMeta, Config};
use crate::discover::{discover, FittedModel, Method};
use crate::dynamics::{generate_dataset, Dataset, OdeSystem};
use crate::error::{Error, Result};
use crate::funclib::FunctionLibrary;
use crate::ode::ExprField;
use crate::rng::split_seed;
use crate::symmetry::Generator;

pub use metrics::{
    aggregate_curve, long_term_error, rmse_params, rollout_errors, squared_error, success, term_sets,
    term_sets_of_exprs, term_sets_of_matrix, LtpCurve, RmseMode, RunErrors, SuccessFlags, TermSet,
    DIVERGENCE_NORM,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermRecord {
    pub term: String,
    pub coef: f64,
}

/// Term records of one equation; `None` marks a non-canonical discovery.
pub type EquationTerms = Option<Vec<TermRecord>>;

fn to_records(ts: &TermSet) -> EquationTerms {
    ts.form().map(|f| {
        f.iter()
            .map(|(k, c)| TermRecord {
                term: k.to_string(),
                coef: c,
            })
            .collect()
    })
}

fn record_success(found: &EquationTerms, truth: &[TermRecord]) -> bool {
    match found {
        None => false,
        Some(f) => {
            let mut a: Vec<&str> = f.iter().map(|t| t.term.as_str()).collect();
            let mut b: Vec<&str> = truth.iter().map(|t| t.term.as_str()).collect();
            a.sort_unstable();
            b.sort_unstable();
            a == b
        }
    }
}

fn record_sq_error(found: &EquationTerms, truth: &[TermRecord]) -> f64 {
    let coef = |list: &[TermRecord], name: &str| list.iter().find(|t| t.term == name).map_or(0.0, |t| t.coef);
    let empty = Vec::new();
    let f = found.as_ref().unwrap_or(&empty);
    let mut names: Vec<&str> = truth.iter().chain(f.iter()).map(|t| t.term.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    names.iter().map(|n| (coef(truth, n) - coef(f, n)).powi(2)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub method: Method,
    pub error: Option<String>,
    pub equations: Vec<String>,
    pub terms: Vec<EquationTerms>,
    pub success: Vec<bool>,
    pub joint: bool,
    pub sq_errors: Vec<f64>,
    /// Rows are test initial conditions, columns checkpoints; `None` is divergent.
    pub ltp: Vec<Vec<Option<f64>>>,
}

impl RunErrors for RunRecord {
    fn eq_success(&self) -> &[bool] {
        &self.success
    }
    fn joint_success(&self) -> bool {
        self.joint
    }
    fn sq_errors(&self) -> &[f64] {
        &self.sq_errors
    }
}

impl RunRecord {
    fn new(run: usize, seed: u64, method: Method, terms: Vec<EquationTerms>, truth: &[Vec<TermRecord>]) -> Self {
        let success: Vec<bool> = terms.iter().zip(truth).map(|(f, t)| record_success(f, t)).collect();
        let sq_errors = terms.iter().zip(truth).map(|(f, t)| record_sq_error(f, t)).collect();
        RunRecord {
            run,
            seed,
            method,
            error: None,
            equations: vec![],
            joint: success.iter().all(|&b| b),
            success,
            sq_errors,
            terms,
            ltp: vec![],
        }
    }

    fn failed(run: usize, seed: u64, method: Method, truth: &[Vec<TermRecord>], err: &Error) -> Self {
        let mut r = RunRecord::new(run, seed, method, vec![Some(vec![]); truth.len()], truth);
        r.success = vec![false; truth.len()];
        r.joint = false;
        r.error = Some(err.to_string());
        r
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSummary {
    pub method: Method,
    pub runs: usize,
    pub failures: usize,
    pub success: Vec<f64>,
    pub success_all: f64,
    pub rmse_successful: Vec<Option<f64>>,
    pub rmse_successful_joint: Option<f64>,
    pub rmse_all: Vec<f64>,
    pub rmse_all_joint: f64,
    pub ltp: LtpCurve,
}

impl MethodSummary {
    pub fn from_records(method: Method, recs: &[&RunRecord], dim: usize, times: &[f64]) -> Self {
        let owned: Vec<RunRecord> = recs.iter().map(|r| (*r).clone()).collect();
        let k = owned.len().max(1) as f64;
        let rows: Vec<Vec<Option<f64>>> = owned.iter().flat_map(|r| r.ltp.iter().cloned()).collect();
        MethodSummary {
            method,
            runs: owned.len(),
            failures: owned.iter().filter(|r| r.error.is_some()).count(),
            success: (0..dim).map(|i| owned.iter().filter(|r| r.success[i]).count() as f64 / k).collect(),
            success_all: owned.iter().filter(|r| r.joint).count() as f64 / k,
            rmse_successful: (0..dim).map(|i| rmse_params(&owned, RmseMode::Successful, Some(i))).collect(),
            rmse_successful_joint: rmse_params(&owned, RmseMode::Successful, None),
            rmse_all: (0..dim)
                .map(|i| rmse_params(&owned, RmseMode::All, Some(i)).unwrap_or(0.0))
                .collect(),
            rmse_all_joint: rmse_params(&owned, RmseMode::All, None).unwrap_or(0.0),
            ltp: aggregate_curve(times, &rows),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkReport {
    pub artifact: ArtifactMeta,
    pub system: String,
    pub config: Config,
    pub truth: Vec<Vec<TermRecord>>,
    pub checkpoint_times: Vec<f64>,
    pub methods: Vec<MethodSummary>,
    pub records: Vec<RunRecord>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunTiming {
    pub run: usize,
    pub method: Method,
    pub seconds: f64,
}

pub struct BenchmarkOutput {
    pub report: BenchmarkReport,
    pub timings: Vec<RunTiming>,
}

fn truth_records(sys: &OdeSystem, lib: &FunctionLibrary) -> Result<Vec<Vec<TermRecord>>> {
    term_sets_of_exprs(&sys.rhs, lib, 0.0)
        .iter()
        .map(|t| to_records(t).ok_or_else(|| Error::Discovery(format!("true dynamics of {} do not expand over the library", sys.name))))
        .collect()
}

struct Shared<'a> {
    cfg: &'a Config,
    sys: &'a OdeSystem,
    lib: &'a FunctionLibrary,
    gens: &'a [Generator],
    truth: &'a [Vec<TermRecord>],
    checkpoint_steps: Vec<usize>,
    dt_ltp: f64,
}

fn run_method(sh: &Shared, data: &Dataset, run: usize, seed: u64, method: Method) -> RunRecord {
    let found = discover(data, sh.lib, sh.gens, method, &sh.cfg.discovery, seed);
    let d = match found {
        Ok(d) => d,
        Err(e) => {
            log::warn!("run {run} ({method}) failed: {e}");
            return RunRecord::failed(run, seed, method, sh.truth, &e);
        }
    };
    let sets = term_sets(&d.model, sh.lib, d.threshold);
    let mut rec = RunRecord::new(run, seed, method, sets.iter().map(to_records).collect(), sh.truth);
    rec.equations = d.model.equations();
    if sh.cfg.benchmark.long_term {
        let n_ic = sh.cfg.benchmark.test_ics.unwrap_or(data.test.len()).min(data.test.len());
        let truth_field = sh.sys.field();
        let ics: Vec<Vec<f64>> = data.test[..n_ic].iter().map(|t| t.clean.row(0).iter().copied().collect()).collect();
        rec.ltp = ics
            .iter()
            .map(|x0| match &d.model {
                FittedModel::Sparse(m) => rollout_errors(&m.field(), &truth_field, x0, sh.dt_ltp, &sh.checkpoint_steps),
                FittedModel::Symbolic(e) => {
                    rollout_errors(&ExprField::new(e.clone()), &truth_field, x0, sh.dt_ltp, &sh.checkpoint_steps)
                }
            })
            .collect();
    }
    rec
}

/// Runs every configured method on independently regenerated datasets; run
/// `k` of every method sees the same data, drawn from `split_seed(seed, k)`.
pub fn run_benchmark(cfg: &Config) -> Result<BenchmarkOutput> {
    cfg.validate()?;
    let sys = cfg.ode_system()?;
    let settings = cfg.data_settings(&sys);
    let lib = cfg.library(Some(&sys), sys.dim)?;
    let gens = cfg.generators(Some(&sys), sys.dim)?;
    let truth = truth_records(&sys, &lib)?;
    let b = &cfg.benchmark;
    let horizon = b.horizon.unwrap_or(settings.dt * (settings.steps - 1) as f64);
    let dt_ltp = settings.dt_internal;
    let total = (horizon / dt_ltp).round() as usize;
    let checkpoint_steps: Vec<usize> = (0..b.checkpoints).map(|k| k * total / (b.checkpoints - 1)).collect();
    let times: Vec<f64> = checkpoint_steps.iter().map(|&s| s as f64 * dt_ltp).collect();
    let shared = Shared {
        cfg,
        sys: &sys,
        lib: &lib,
        gens: &gens,
        truth: &truth,
        checkpoint_steps,
        dt_ltp,
    };
    let max_runs = b.methods.iter().map(|&m| b.runs_for(m)).max().unwrap_or(0);
    let per_run: Vec<Vec<(RunRecord, f64)>> = (0..max_runs)
        .into_par_iter()
        .map(|k| {
            let seed = split_seed(cfg.seed, k as u64);
            let methods: Vec<Method> = b.methods.iter().copied().filter(|&m| b.runs_for(m) > k).collect();
            let start = Instant::now();
            let data = generate_dataset(&sys, &settings, seed);
            let data_time = start.elapsed().as_secs_f64();
            methods
                .into_iter()
                .map(|m| {
                    let t = Instant::now();
                    let rec = match &data {
                        Ok(data) => run_method(&shared, data, k, seed, m),
                        Err(e) => RunRecord::failed(k, seed, m, &truth, e),
                    };
                    (rec, data_time + t.elapsed().as_secs_f64())
                })
                .collect()
        })
        .collect();
    let mut records = Vec::new();
    let mut timings = Vec::new();
    for (rec, secs) in per_run.into_iter().flatten() {
        timings.push(RunTiming {
            run: rec.run,
            method: rec.method,
            seconds: secs,
        });
        records.push(rec);
    }
    records.sort_by_key(|r| (r.method, r.run));
    let methods = summarize(&b.methods, &records, sys.dim, &times);
    Ok(BenchmarkOutput {
        report: BenchmarkReport {
            artifact: cfg.meta(),
            system: sys.name.clone(),
            config: cfg.clone(),
            truth,
            checkpoint_times: times,
            methods,
            records,
        },
        timings,
    })
}

fn summarize(methods: &[Method], records: &[RunRecord], dim: usize, times: &[f64]) -> Vec<MethodSummary> {
    methods
        .iter()
        .map(|&m| {
            let recs: Vec<&RunRecord> = records.iter().filter(|r| r.method == m).collect();
            MethodSummary::from_records(m, &recs, dim, times)
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "N/A".to_string(), |x| format!("{x}"))
}

impl BenchmarkReport {
    /// Recomputes every derived field from the stored run records.
    pub fn audit(&self) -> Result<()> {
        let dim = self.truth.len();
        for r in &self.records {
            if r.terms.len() != dim || r.success.len() != dim || r.sq_errors.len() != dim {
                return Err(Error::Audit(format!("run {} ({}) has the wrong equation count", r.run, r.method)));
            }
            let mut fresh = RunRecord::new(r.run, r.seed, r.method, r.terms.clone(), &self.truth);
            if r.error.is_some() {
                fresh.success = vec![false; dim];
                fresh.joint = false;
            }
            if fresh.success != r.success || fresh.joint != r.joint || fresh.sq_errors != r.sq_errors {
                return Err(Error::Audit(format!("run {} ({}) flags or errors disagree with its terms", r.run, r.method)));
            }
        }
        let methods: Vec<Method> = self.methods.iter().map(|m| m.method).collect();
        let fresh = summarize(&methods, &self.records, dim, &self.checkpoint_times);
        if fresh != self.methods {
            return Err(Error::Audit("aggregates disagree with the run records".into()));
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("report.json"))?;
        let report: BenchmarkReport = serde_json::from_str(&text)?;
        report.audit()?;
        Ok(report)
    }

    pub fn tables_csv(&self) -> Result<String> {
        let dim = self.truth.len();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["method".to_string(), "metric".to_string()];
        header.extend((1..=dim).map(|i| format!("Eq.{i}")));
        header.push("All".into());
        w.write_record(&header).map_err(csv_err)?;
        for m in &self.methods {
            let rows: [(&str, Vec<String>, String); 3] = [
                ("success", m.success.iter().map(|v| format!("{v}")).collect(), format!("{}", m.success_all)),
                (
                    "rmse_successful",
                    m.rmse_successful.iter().map(|v| fmt_opt(*v)).collect(),
                    fmt_opt(m.rmse_successful_joint),
                ),
                ("rmse_all", m.rmse_all.iter().map(|v| format!("{v}")).collect(), format!("{}", m.rmse_all_joint)),
            ];
            for (metric, per_eq, all) in rows {
                let mut rec = vec![m.method.name().to_string(), metric.to_string()];
                rec.extend(per_eq);
                rec.push(all);
                w.write_record(&rec).map_err(csv_err)?;
            }
        }
        finish_csv(w)
    }

    pub fn ltp_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "time", "mean", "std", "counted", "divergent"]).map_err(csv_err)?;
        for m in &self.methods {
            let c = &m.ltp;
            for k in 0..c.times.len() {
                w.write_record([
                    m.method.name().to_string(),
                    format!("{}", c.times[k]),
                    fmt_opt(c.mean[k]),
                    fmt_opt(c.std[k]),
                    c.counted[k].to_string(),
                    c.divergent[k].to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        finish_csv(w)
    }

    /// Writes `report.json`, `tables.csv` and `ltp.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        fs::write(dir.join("report.json"), json)?;
        fs::write(dir.join("tables.csv"), self.tables_csv()?)?;
        fs::write(dir.join("ltp.csv"), self.ltp_csv()?)?;
        Ok(())
    }

    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }
}

/// Wall-clock timings go to their own file so the report stays reproducible.
pub fn save_timings(dir: &Path, timings: &[RunTiming]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for t in timings {
        w.serialize(t).map_err(csv_err)?;
    }
    fs::write(dir.join("timings.csv"), finish_csv(w)?)?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(std::io::Error::other(e)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(methods: &str, noise: f64) -> Config {
        Config::from_json_str(&format!(
            r#"{{"system": "oscillator", "seed": 5,
                "data": {{"n_train": 5, "n_val": 2, "n_test": 2, "noise_level": {noise}}},
                "benchmark": {{"methods": {methods}, "runs": 2, "checkpoints": 3}}}}"#
        ))
        .unwrap()
    }

    #[test]
    fn clean_sindy_run_succeeds() {
        let mut cfg = tiny_config(r#"["sindy"]"#, 0.0);
        cfg.benchmark.runs = Some(1);
        let out = run_benchmark(&cfg).unwrap();
        let s = out.report.summary(Method::Sindy).unwrap();
        assert_eq!(s.success_all, 1.0);
        assert_eq!(s.failures, 0);
        assert!(s.rmse_successful_joint.is_some());
        assert_eq!(s.ltp.divergent.iter().sum::<usize>(), 0);
    }

    #[test]
    fn report_roundtrip_and_audit() {
        let cfg = tiny_config(r#"["sindy", "equiv-c"]"#, 0.2);
        let out = run_benchmark(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        out.report.save(dir.path()).unwrap();
        let back = BenchmarkReport::load(dir.path()).unwrap();
        assert_eq!(back, out.report);
        let tables = fs::read_to_string(dir.path().join("tables.csv")).unwrap();
        assert_eq!(tables.lines().next().unwrap(), "method,metric,Eq.1,Eq.2,All");
        assert_eq!(tables.lines().filter(|l| l.contains(",success,")).count(), 2);

        let mut tampered = out.report.clone();
        tampered.records[0].joint = !tampered.records[0].joint;
        assert!(matches!(tampered.audit(), Err(Error::Audit(_))));
        let mut tampered = out.report;
        tampered.methods[0].success_all += 0.5;
        assert!(matches!(tampered.audit(), Err(Error::Audit(_))));
    }

    #[test]
    fn scaling_coefficients_keeps_flags() {
        let truth = vec![vec![
            TermRecord { term: "x1".into(), coef: 1.0 },
            TermRecord { term: "x2".into(), coef: -0.5 },
        ]];
        let found = Some(vec![
            TermRecord { term: "x2".into(), coef: 3.0 },
            TermRecord { term: "x1".into(), coef: -7.0 },
        ]);
        assert!(record_success(&found, &truth[0]));
        assert!(!record_success(&None, &truth[0]));
        let r = RunRecord::new(0, 0, Method::Sindy, vec![Some(vec![])], &truth);
        assert_eq!(r.sq_errors, vec![1.25]);
    }
}
