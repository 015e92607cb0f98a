//! Command-line front end: `validate`, `solve`, `verify`, `report`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::model::{check_assumptions, load_config, parse_config, ModelConfig, Status};
use crate::oracle::{convergence_report, default_battery, ConvergenceReport, Profile, ReportOptions};
use crate::report::{self, RunManifest, SingularityReport};
use crate::smooth_solver::{solve, HybridSolution, SolveOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ASSUMPTION: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_VERIFICATION: i32 = 4;

/// Default output directory when `--out` is not given.
pub const OUT_ENV: &str = "SINGULAR_RENEWAL_OUT";

#[derive(Debug, Parser)]
#[command(name = "singular-renewal", version, about = "Age-structured renewal equations with Dirac data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the assumptions on a configuration.
    Validate {
        config: PathBuf,
        #[arg(long)]
        check_order: Option<usize>,
    },
    /// Solve and write the field, trace, singularity report and manifest.
    Solve {
        /// Configuration file, or a manifest.json from an earlier run.
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, env = OUT_ENV, default_value = "out")]
        out: PathBuf,
    },
    /// Compare the hybrid solution with the mollified oracle.
    Verify {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Mollification scales, comma separated.
        #[arg(long, value_delimiter = ',')]
        eps_sequence: Option<Vec<f64>>,
        #[arg(long, env = OUT_ENV, default_value = "out")]
        out: PathBuf,
    },
    /// Print a summary of the artifacts in an output directory.
    Report {
        #[arg(env = OUT_ENV, default_value = "out")]
        dir: PathBuf,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub grid_step: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub check_order: Option<usize>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Assumption(_) => EXIT_ASSUMPTION,
        Error::Parse(_)
        | Error::Expression(_)
        | Error::Domain(_)
        | Error::Parameter(_)
        | Error::Io(_)
        | Error::Csv(_)
        | Error::Json(_) => EXIT_INPUT,
        Error::Numeric { .. } | Error::Smoothness(_) | Error::Geometry(_) | Error::Refinement(_) => EXIT_SOLVER,
    }
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            if e.use_stderr() {
                let _ = write!(err, "{e}");
            } else {
                let _ = write!(out, "{e}");
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::Validate { config, check_order } => cmd_validate(&config, check_order, out),
        Command::Solve { config, overrides, out: dir } => cmd_solve(&config, &overrides, &dir, out),
        Command::Verify { config, overrides, eps_sequence, out: dir } => {
            cmd_verify(&config, &overrides, eps_sequence, &dir, out)
        }
        Command::Report { dir } => cmd_report(&dir, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Load a configuration or the configuration embedded in a manifest, then apply overrides.
pub fn load_with_overrides(path: &Path, o: &Overrides) -> Result<ModelConfig> {
    let mut cfg = if path.extension().is_some_and(|e| e == "json") {
        let m = RunManifest::read(path)?;
        let base = m.config_path.parent().map(Path::to_path_buf).unwrap_or_default();
        parse_config(&m.config, &base)?
    } else {
        load_config(path)?
    };
    if let Some(t) = o.horizon {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Domain(format!("--horizon must be positive, got {t}")));
        }
        cfg.horizon = t;
    }
    if let Some(h) = o.grid_step {
        cfg.numerics.grid_step = Some(h);
    }
    if let Some(k) = o.check_order {
        cfg.numerics.check_order = k;
    }
    cfg.check_numerics()?;
    Ok(cfg)
}

fn print_verdicts(cfg: &ModelConfig, out: &mut dyn Write) -> Result<bool> {
    let verdicts = check_assumptions(cfg);
    let mut ok = true;
    for v in &verdicts {
        let tag = match v.status {
            Status::Pass => "pass",
            Status::Fail => "FAIL",
            Status::Warning => "warn",
        };
        write!(out, "{:<3} {tag}  {}", v.id, v.witness)?;
        for (k, x) in &v.data {
            write!(out, "  {k}={x}")?;
        }
        writeln!(out)?;
        ok &= !v.blocks();
    }
    Ok(ok)
}

pub fn cmd_validate(path: &Path, check_order: Option<usize>, out: &mut dyn Write) -> Result<i32> {
    let cfg = load_with_overrides(path, &Overrides { check_order, ..Default::default() })?;
    Ok(if print_verdicts(&cfg, out)? { EXIT_OK } else { EXIT_ASSUMPTION })
}

fn checked(cfg: &ModelConfig) -> Result<()> {
    if let Some(v) = check_assumptions(cfg).into_iter().find(|v| v.blocks()) {
        return Err(Error::Assumption(format!("{}: {}", v.id, v.witness)));
    }
    Ok(())
}

fn timed<T>(times: &mut BTreeMap<String, f64>, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let r = f();
    times.insert(stage.to_string(), start.elapsed().as_secs_f64());
    r
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Original configuration path, looking through a manifest.
fn config_origin(path: &Path) -> PathBuf {
    if path.extension().is_some_and(|e| e == "json") {
        if let Ok(m) = RunManifest::read(path) {
            return m.config_path;
        }
    }
    path.to_path_buf()
}

fn manifest(command: &str, path: &Path, cfg: &ModelConfig, sol: &HybridSolution, dir: &Path) -> Result<RunManifest> {
    Ok(RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        config_path: config_origin(path),
        config: cfg.to_toml()?,
        numerics: cfg.numerics.clone(),
        horizon: sol.horizon,
        grid_step: sol.h,
        output_dir: dir.to_path_buf(),
        files: Vec::new(),
        wall_times: BTreeMap::new(),
    })
}

/// Write every solve artifact; returns the file names.
pub fn write_solution(dir: &Path, cfg: &ModelConfig, sol: &HybridSolution) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut files: Vec<PathBuf> = report::write_field_csvs(dir, sol)?;
    files.push(report::write_trace_csv(dir, sol)?);
    files.push(report::write_singularity_report(dir, &SingularityReport::new(cfg, sol))?);
    files.push(report::write_ledger_csv(dir, &sol.ledger)?);
    let (a, b) = report::write_plot_data(dir, cfg, sol)?;
    files.extend([a, b]);
    Ok(files.iter().map(|p| file_name(p)).collect())
}

pub fn cmd_solve(path: &Path, o: &Overrides, dir: &Path, out: &mut dyn Write) -> Result<i32> {
    let mut times = BTreeMap::new();
    let cfg = timed(&mut times, "load", || load_with_overrides(path, o))?;
    timed(&mut times, "validate", || checked(&cfg))?;
    let sol = timed(&mut times, "solve", || solve(&cfg, &SolveOptions::default()))?;
    let files = timed(&mut times, "write", || write_solution(dir, &cfg, &sol))?;
    let mut m = manifest("solve", path, &cfg, &sol, dir)?;
    m.files = files;
    m.wall_times = times;
    m.write(dir)?;
    let events = sol.support.distinct_times(cfg.event_tolerance());
    writeln!(out, "horizon {}  grid step {}  events {}", sol.horizon, sol.h, events.len())?;
    for t in &events {
        writeln!(out, "  event t = {t}")?;
    }
    if sol.diagnostics.horizon_shrunk {
        writeln!(out, "note: horizon fell on an event time and was shrunk by one grid step")?;
    }
    writeln!(out, "wrote {} files to {}", m.files.len() + 1, dir.display())?;
    Ok(EXIT_OK)
}

/// `{8, 4, 2, 1} · 1e-3 · T` unless overridden.
pub fn eps_sequence(cfg: &ModelConfig, flag: Option<Vec<f64>>) -> Vec<f64> {
    flag.or_else(|| cfg.numerics.eps_sequence.clone())
        .unwrap_or_else(|| [8.0, 4.0, 2.0, 1.0].iter().map(|k| k * 1e-3 * cfg.horizon).collect())
}

/// Largest gap between the Richardson limits of two mollifier profiles, relative to the hybrid value.
pub fn profile_spread(a: &ConvergenceReport, b: &ConvergenceReport) -> Vec<(String, f64, bool)> {
    a.results
        .iter()
        .zip(&b.results)
        .map(|(x, y)| {
            let d = (x.extrapolated - y.extrapolated).abs() / x.hybrid.abs().max(1e-300);
            (x.name.clone(), d, d <= 2.0 * x.tolerance)
        })
        .collect()
}

pub fn cmd_verify(
    path: &Path,
    o: &Overrides,
    eps_flag: Option<Vec<f64>>,
    dir: &Path,
    out: &mut dyn Write,
) -> Result<i32> {
    let mut times = BTreeMap::new();
    let cfg = timed(&mut times, "load", || load_with_overrides(path, o))?;
    timed(&mut times, "validate", || checked(&cfg))?;
    let sol = timed(&mut times, "solve", || solve(&cfg, &SolveOptions::default()))?;
    let eps = eps_sequence(&cfg, eps_flag);
    if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Parameter(format!("bad ε sequence {eps:?}")));
    }
    let horizon = crate::oracle::default_oracle_horizon(&cfg)?;
    let battery = default_battery(&cfg, &sol, horizon);
    let opts = ReportOptions { profile: Profile::Poly4, step_ratio: cfg.numerics.oracle_step_ratio, horizon: Some(horizon) };
    let main = timed(&mut times, "oracle", || convergence_report(&cfg, &sol, &eps, &battery, &opts))?;
    let alt_opts = ReportOptions { profile: Profile::Poly6, ..opts };
    let alt = timed(&mut times, "oracle_alt_profile", || convergence_report(&cfg, &sol, &eps, &battery, &alt_opts))?;
    let spread = profile_spread(&main, &alt);

    fs::create_dir_all(dir)?;
    let csv = report::write_convergence_csv(dir, &main)?;
    let mut pass = true;
    writeln!(out, "oracle horizon {horizon}  eps {eps:?}  eps/h {}", opts.step_ratio)?;
    for (r, (_, d, ok)) in main.results.iter().zip(&spread) {
        let good = r.pass && *ok && r.monotone;
        pass &= good;
        let rate = r.rate.map_or("-".to_string(), |x| format!("{x:.2}"));
        writeln!(
            out,
            "{} {:<24} rel_err {:.3e} (tol {:.0e})  eps-rate {rate}  profile spread {d:.2e}{}",
            if good { "PASS" } else { "FAIL" },
            r.name,
            r.rel_err,
            r.tolerance,
            if r.monotone { "" } else { "  non-monotone" },
        )?;
    }
    let mut m = manifest("verify", path, &cfg, &sol, dir)?;
    m.files = vec![file_name(&csv)];
    m.wall_times = times;
    m.write(dir)?;
    Ok(if pass { EXIT_OK } else { EXIT_VERIFICATION })
}

pub fn cmd_report(dir: &Path, out: &mut dyn Write) -> Result<i32> {
    let text = fs::read_to_string(dir.join(report::SINGULARITY_FILE))?;
    let rep: serde_json::Value = serde_json::from_str(&text)?;
    writeln!(out, "horizon {}", rep["horizon"])?;
    if rep["horizon_shrunk"].as_bool() == Some(true) {
        writeln!(out, "horizon shrunk by one grid step (event on T)")?;
    }
    let events = rep["events"].as_array().cloned().unwrap_or_default();
    writeln!(out, "{} emission events", events.len())?;
    for e in &events {
        writeln!(
            out,
            "  t = {:<22} generation {:<2} {:<14} max order {}",
            e["time"].to_string(),
            e["generation"],
            e["kind"].as_str().unwrap_or(""),
            e["max_delta_order"]
        )?;
    }
    let lines = rep["lines"].as_array().cloned().unwrap_or_default();
    writeln!(out, "{} singular lines", lines.len())?;
    for l in &lines {
        writeln!(out, "  offset {:<22} constants {}", l["offset"].to_string(), l["constants"])?;
    }
    let d = &rep["diagnostics"];
    writeln!(
        out,
        "grid step {}  epsilon {}  residual {} (bound {})",
        d["grid_step"], d["epsilon"], d["residual"], d["residual_bound"]
    )?;
    let conv = dir.join(report::CONVERGENCE_FILE);
    if conv.exists() {
        let mut rdr = csv::Reader::from_path(&conv)?;
        let mut last: BTreeMap<String, (f64, f64)> = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |i: usize| rec.get(i).and_then(|s| s.parse().ok()).unwrap_or(f64::NAN);
            last.insert(rec.get(0).unwrap_or("").to_string(), (parse(4), parse(5)));
        }
        writeln!(out, "convergence ({} probes)", last.len())?;
        for (name, (hyb, err)) in last {
            writeln!(out, "  {name:<24} hybrid {hyb:<24} rel_err {err:.3e}")?;
        }
    }
    Ok(EXIT_OK)
}
