//! `liesindy`: generate datasets, inspect equivariance constraints, check
//! symmetries, discover equations and run benchmarks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use liesindy::bench::{run_benchmark, save_timings};
use liesindy::config::Config;
use liesindy::constraint::assemble;
use liesindy::discover::{discover, Method, ModelArtifact};
use liesindy::dynamics::{generate_dataset, Dataset};
use liesindy::expr::parse;
use liesindy::ode::{ExprField, VectorField};
use liesindy::rng::stream;
use liesindy::symmetry::{check_infinitesimal_criterion, DEFAULT_CRITERION_TOL};
use liesindy::Error;

/// Writes a line to stdout, ignoring a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(name = "liesindy", version, about = "Symmetry-informed discovery of ODE governing equations")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in system (oscillator, growth, lv, glycolytic, seir).
    #[arg(long)]
    system: Option<String>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output location; all written files go under it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate, perturb, smooth and differentiate trajectories.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Noise level with the system's default noise kind (0 for clean data).
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Solve the equivariance constraint and print the basis.
    Nullspace {
        #[command(flatten)]
        common: Common,
    },
    /// Check the infinitesimal symmetry criterion of a vector field.
    CheckSymmetry {
        #[command(flatten)]
        common: Common,
        /// Field components separated by `;` (default: the system's equations).
        #[arg(long)]
        field: Option<String>,
        /// Discovered model to check instead of the true equations.
        #[arg(long, conflicts_with = "field")]
        model: Option<PathBuf>,
        /// Explicit point `x1,x2,...` (repeatable); replaces random samples.
        #[arg(long = "point")]
        points: Vec<String>,
        /// Random points drawn from the system's initial-condition sampler.
        #[arg(long, default_value_t = 200)]
        samples: usize,
        /// Largest normalized residual still counted as consistent
        #[arg(long, default_value_t = DEFAULT_CRITERION_TOL)]
        tol: f64,
    },
    /// Discover equations from a dataset (generated on the fly when absent).
    Discover {
        #[command(flatten)]
        common: Common,
        /// Dataset directory written by `generate`
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// sindy, equiv-c, equiv-r, gp or equiv-gp-r
        #[arg(long)]
        method: Option<Method>,
    },
    /// Repeated discovery runs with success, RMSE and long-term error tables.
    Benchmark {
        #[command(flatten)]
        common: Common,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
    Symmetry(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::UnknownSystem(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn load_config(common: &Common, edit: impl FnOnce(&mut Config)) -> std::result::Result<Config, Failure> {
    let mut cfg = match &common.config {
        Some(p) => Config::from_file(p).map_err(|e| match e {
            Error::Io(io) => Failure::Config(format!("cannot read {}: {io}", p.display())),
            other => Failure::from(other),
        })?,
        None => Config::default(),
    };
    if let Some(s) = &common.system {
        cfg.system = Some(s.clone());
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output = Some(out.clone());
    }
    edit(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn output_dir(cfg: &Config) -> std::result::Result<PathBuf, Failure> {
    cfg.output
        .clone()
        .ok_or_else(|| Failure::Config("invalid configuration at `output`: an output location is required (--out)".into()))
}

fn write_json(path: &Path, value: &serde_json::Value) -> CmdResult {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn cmd_generate(common: &Common, noise: Option<f64>) -> CmdResult {
    let cfg = load_config(common, |c| {
        if noise.is_some() {
            c.data.noise = None;
            c.data.noise_level = noise;
        }
    })?;
    let out = output_dir(&cfg)?;
    let sys = cfg.ode_system()?;
    let settings = cfg.data_settings(&sys);
    let data = generate_dataset(&sys, &settings, cfg.seed)?;
    data.save(&out, &cfg.meta())?;
    say!(
        "{}: {} train / {} val / {} test trajectories, T = {}, dt = {} -> {}",
        sys.name,
        data.train.len(),
        data.val.len(),
        data.test.len(),
        settings.steps,
        settings.dt,
        out.display()
    );
    Ok(())
}

fn cmd_nullspace(common: &Common) -> CmdResult {
    let cfg = load_config(common, |_| {})?;
    let sys = cfg.ode_system().ok();
    let dim = match (&cfg.library, &sys) {
        (Some(l), _) => l.dim,
        (None, Some(s)) => s.dim,
        (None, None) => return Err(Failure::Config("invalid configuration at `system`: give a system or a library".into())),
    };
    let lib = cfg.library(sys.as_ref(), dim)?;
    let gens = cfg.generators(sys.as_ref(), dim)?;
    let basis = assemble(&lib, &gens)?;
    let gap = basis.spectral_gap();
    say!("r = {}", basis.r());
    say!("free parameters: {} of {}", basis.r(), lib.dim() * lib.len());
    if !gap.stable {
        say!("warning: the nullspace dimension is sensitive to the rank threshold");
    }
    let templates = basis.templates(&lib);
    for t in &templates {
        say!("{t}");
    }
    if let Some(out) = &cfg.output {
        let q: Vec<Vec<f64>> = basis.q.column_iter().map(|c| c.iter().copied().collect()).collect();
        write_json(
            &out.join("nullspace.json"),
            &json!({
                "artifact": cfg.meta(),
                "library": lib.spec(),
                "terms": lib.term_names(),
                "generators": gens.iter().map(|g| g.to_spec()).collect::<Vec<_>>(),
                "r": basis.r(),
                "singular_values": basis.singular_values,
                "basis": q,
                "templates": templates,
                "spectral_gap": {"last_kept": gap.last_kept, "first_dropped": gap.first_dropped, "stable": gap.stable},
            }),
        )?;
    }
    Ok(())
}

fn parse_point(text: &str, dim: usize) -> std::result::Result<Vec<f64>, Failure> {
    let p: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Failure::Config(format!("invalid point `{text}`: {e}")))?;
    if p.len() != dim {
        return Err(Failure::Config(format!("point `{text}` has {} coordinates, expected {dim}", p.len())));
    }
    Ok(p)
}

fn cmd_check_symmetry(
    common: &Common,
    field: Option<&str>,
    model: Option<&Path>,
    points: &[String],
    samples: usize,
    tol: f64,
) -> CmdResult {
    let cfg = load_config(common, |_| {})?;
    let sys = cfg.ode_system().ok();
    let h: ExprField = match (field, model, &sys) {
        (Some(text), _, _) => {
            let parts: Vec<&str> = text.split(';').collect();
            let d = parts.len();
            ExprField::new(parts.iter().map(|p| parse(p, d)).collect::<liesindy::Result<Vec<_>>>()?)
        }
        (None, Some(path), _) => {
            let text = std::fs::read_to_string(path)?;
            let art: ModelArtifact = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            ExprField::new(art.model()?.exprs())
        }
        (None, None, Some(s)) => s.field(),
        (None, None, None) => return Err(Failure::Config("invalid configuration at `system`: give a system, --field or --model".into())),
    };
    let dim = VectorField::<f64>::dim(&h);
    let gens = cfg.generators(sys.as_ref(), dim)?;
    if gens.is_empty() {
        return Err(Failure::Config("invalid configuration at `generators`: no generators to check".into()));
    }
    let pts: Vec<Vec<f64>> = if !points.is_empty() {
        points.iter().map(|p| parse_point(p, dim)).collect::<std::result::Result<_, _>>()?
    } else {
        let s = sys
            .as_ref()
            .ok_or_else(|| Failure::Config("invalid configuration at `system`: random samples need a system sampler (or use --point)".into()))?;
        let mut rng = stream(cfg.seed, 0);
        (0..samples.max(1))
            .map(|_| s.defaults.sampler.sample(dim, &mut rng))
            .collect::<liesindy::Result<_>>()?
    };
    let mut all_ok = true;
    let mut reports = Vec::new();
    for g in &gens {
        let r = check_infinitesimal_criterion(&h, g, &pts, tol);
        say!(
            "{}: max residual {:.3e} (mean {:.3e}, max unnormalized {:.3e}) over {} points -> {}",
            g.label,
            r.max,
            r.mean,
            r.max_abs,
            r.samples,
            if r.consistent { "consistent" } else { "VIOLATED" }
        );
        all_ok &= r.consistent;
        reports.push(json!({"generator": g.label, "max": r.max, "mean": r.mean, "max_abs": r.max_abs,
            "samples": r.samples, "tol": r.tol, "consistent": r.consistent}));
    }
    if let Some(out) = &cfg.output {
        write_json(&out.join("symmetry_check.json"), &json!({"artifact": cfg.meta(), "reports": reports}))?;
    }
    if all_ok {
        Ok(())
    } else {
        Err(Failure::Symmetry("symmetry criterion violated".into()))
    }
}

fn cmd_discover(common: &Common, dataset: Option<&Path>, method: Option<Method>) -> CmdResult {
    let cfg = load_config(common, |c| {
        if let Some(d) = dataset {
            c.dataset = Some(d.to_path_buf());
        }
        if let Some(m) = method {
            c.method = Some(m);
        }
    })?;
    let method = cfg
        .method
        .ok_or_else(|| Failure::Config("invalid configuration at `method`: a discovery method is required".into()))?;
    let data = match &cfg.dataset {
        Some(dir) => Dataset::load(dir)?.0,
        None => {
            let sys = cfg.ode_system()?;
            generate_dataset(&sys, &cfg.data_settings(&sys), cfg.seed)?
        }
    };
    let sys = liesindy::dynamics::system(&data.system).ok();
    let lib = cfg.library(sys.as_ref(), data.dim)?;
    let gens = cfg.generators(sys.as_ref(), data.dim)?;
    let found = discover(&data, &lib, &gens, method, &cfg.discovery, cfg.seed)?;
    for eq in found.model.equations() {
        say!("{eq}");
    }
    for w in &found.diagnostics.warnings {
        log::warn!("{w}");
    }
    if let Some(out) = &cfg.output {
        let path = if out.extension().is_some_and(|e| e == "json") {
            out.clone()
        } else {
            out.join("model.json")
        };
        let art = ModelArtifact::new(&found, &data.system, cfg.meta());
        write_json(&path, &serde_json::to_value(&art).map_err(|e| Failure::Runtime(e.to_string()))?)?;
    }
    Ok(())
}

fn cmd_benchmark(common: &Common) -> CmdResult {
    let cfg = load_config(common, |_| {})?;
    let out = output_dir(&cfg)?;
    let result = run_benchmark(&cfg)?;
    result.report.save(&out)?;
    save_timings(&out, &result.timings)?;
    say!("{}", result.report.tables_csv()?.trim_end());
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    match &cli.command {
        Command::Generate { common, noise } => cmd_generate(common, *noise),
        Command::Nullspace { common } => cmd_nullspace(common),
        Command::CheckSymmetry {
            common,
            field,
            model,
            points,
            samples,
            tol,
        } => cmd_check_symmetry(common, field.as_deref(), model.as_deref(), points, *samples, *tol),
        Command::Discover { common, dataset, method } => cmd_discover(common, dataset.as_deref(), *method),
        Command::Benchmark { common } => cmd_benchmark(common),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Symmetry(m)) => {
            eprintln!("{m}");
            ExitCode::from(3)
        }
    }
}
