//! On-disk artifacts: field and trace CSVs, singularity report, order ledger,
//! plot sidecar, convergence table and run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::characteristics::{CharLine, EmissionEvent, Region};
use crate::error::Result;
use crate::model::{ModelConfig, Numerics};
use crate::oracle::ConvergenceReport;
use crate::singular::{CrossingAtoms, OrderLedger};
use crate::smooth_solver::{Diagnostics, HybridSolution, TraceSegment};

pub const FIELD_PREFIX: &str = "field_region_";
pub const TRACE_FILE: &str = "trace.csv";
pub const SINGULARITY_FILE: &str = "singularities.json";
pub const LEDGER_FILE: &str = "ledger.csv";
pub const PLOT_FIELD_FILE: &str = "plot_field.csv";
pub const PLOT_ANNOTATION_FILE: &str = "plot_annotations.json";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Largest number of samples per axis written to field CSVs.
pub const MAX_SAMPLES_PER_AXIS: usize = 256;

#[derive(Debug, Clone, Serialize)]
pub struct LineRecord {
    pub index: usize,
    #[serde(flatten)]
    pub line: CharLine,
    /// `c_i` of `S(x,t) Σ c_i δ^(i)(t - x - offset)`.
    pub constants: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SingularityReport {
    pub horizon: f64,
    pub horizon_shrunk: bool,
    pub event_times: Vec<f64>,
    pub events: Vec<EmissionEvent>,
    pub lines: Vec<LineRecord>,
    /// Atoms of `v` at each crossing.
    pub crossings: Vec<CrossingAtoms>,
    pub regions: Vec<Region>,
    pub segments: Vec<TraceSegment>,
    pub ledger: OrderLedger,
    pub diagnostics: Diagnostics,
}

impl SingularityReport {
    pub fn new(cfg: &ModelConfig, sol: &HybridSolution) -> Self {
        let lines = sol
            .support
            .lines
            .iter()
            .enumerate()
            .map(|(index, line)| LineRecord {
                index,
                line: *line,
                constants: sol.term(index).map(|t| t.constants.clone()).unwrap_or_default(),
            })
            .collect();
        SingularityReport {
            horizon: sol.horizon,
            horizon_shrunk: sol.diagnostics.horizon_shrunk,
            event_times: sol.support.distinct_times(cfg.event_tolerance()),
            events: sol.support.events.clone(),
            lines,
            crossings: sol.crossings.clone(),
            regions: sol.regions.clone(),
            segments: sol.trace.segments.clone(),
            ledger: sol.ledger.clone(),
            diagnostics: sol.diagnostics.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
struct FieldRow {
    x: f64,
    t: f64,
    u_smooth: f64,
}

#[derive(Debug, Serialize)]
struct PlotRow {
    region: usize,
    x: f64,
    t: f64,
    u_smooth: f64,
}

#[derive(Debug, Serialize)]
struct TraceRow {
    t: f64,
    v_r: f64,
    u0_smooth: f64,
}

#[derive(Debug, Serialize)]
struct LedgerRow {
    time: f64,
    kind: &'static str,
    generation: usize,
    line: usize,
    incoming_order: Option<u32>,
    increment: u32,
    emitted_order: u32,
    effective_order: Option<u32>,
    singular_order: Option<u32>,
}

#[derive(Debug, Serialize)]
struct ConvergenceRow<'a> {
    probe: &'a str,
    eps: f64,
    pairing: f64,
    extrapolate: f64,
    hybrid: f64,
    rel_err: f64,
}

/// Segment of a singular line inside the domain, for plotting.
#[derive(Debug, Clone, Serialize)]
pub struct LineAnnotation {
    pub index: usize,
    pub generation: usize,
    pub order: Option<u32>,
    pub from: (f64, f64),
    pub to: (f64, f64),
    pub label: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct AtomAnnotation {
    pub trace: &'static str,
    pub time: f64,
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlotAnnotations {
    pub max_age: f64,
    pub horizon: f64,
    pub lines: Vec<LineAnnotation>,
    pub atoms: Vec<AtomAnnotation>,
}

fn sample_stride(sol: &HybridSolution) -> usize {
    sol.nx.max(sol.nt).div_ceil(MAX_SAMPLES_PER_AXIS).max(1)
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// One `x,t,u_smooth` table per region.
pub fn write_field_csvs(dir: &Path, sol: &HybridSolution) -> Result<Vec<PathBuf>> {
    let stride = sample_stride(sol);
    let mut out = Vec::new();
    for r in 0..sol.regions.len() {
        let path = dir.join(format!("{FIELD_PREFIX}{r}.csv"));
        let rows = sol.field(r).samples_every(stride).into_iter().map(|(x, t, u)| FieldRow { x, t, u_smooth: u });
        write_csv(&path, rows)?;
        out.push(path);
    }
    Ok(out)
}

pub fn write_trace_csv(dir: &Path, sol: &HybridSolution) -> Result<PathBuf> {
    let path = dir.join(TRACE_FILE);
    let tr = &sol.trace;
    let rows = (0..tr.times.len()).map(|k| TraceRow { t: tr.times[k], v_r: tr.v_r[k], u0_smooth: tr.u0[k] });
    write_csv(&path, rows)?;
    Ok(path)
}

pub fn write_singularity_report(dir: &Path, report: &SingularityReport) -> Result<PathBuf> {
    let path = dir.join(SINGULARITY_FILE);
    write_json(&path, report)?;
    Ok(path)
}

pub fn write_ledger_csv(dir: &Path, ledger: &OrderLedger) -> Result<PathBuf> {
    let path = dir.join(LEDGER_FILE);
    let rows = ledger.entries.iter().map(|e| LedgerRow {
        time: e.time,
        kind: match e.kind {
            crate::characteristics::EventKind::Reflection => "reflection",
            crate::characteristics::EventKind::BoundaryAtom => "boundary_atom",
        },
        generation: e.generation,
        line: e.line,
        incoming_order: e.incoming_order,
        increment: e.increment,
        emitted_order: e.emitted_order,
        effective_order: e.effective_order,
        singular_order: e.singular_order,
    });
    write_csv(&path, rows)?;
    Ok(path)
}

pub fn plot_annotations(cfg: &ModelConfig, sol: &HybridSolution) -> PlotAnnotations {
    let (l, t_end) = (cfg.max_age, sol.horizon);
    let lines = sol
        .support
        .lines
        .iter()
        .enumerate()
        .filter_map(|(index, line)| {
            // x = t - offset, clipped to [0, L] × [0, T]
            let t0 = line.offset.max(0.0);
            let t1 = (l + line.offset).min(t_end);
            (t1 > t0).then(|| {
                let order = sol.term(index).and_then(|t| t.max_order());
                LineAnnotation {
                    index,
                    generation: line.generation,
                    order,
                    from: (t0 - line.offset, t0),
                    to: (t1 - line.offset, t1),
                    label: match order {
                        Some(o) => format!("delta^({o})"),
                        None => "cancelled".into(),
                    },
                }
            })
        })
        .collect();
    let atoms = sol
        .crossings
        .iter()
        .map(|c| AtomAnnotation { trace: "v", time: c.time, coefficients: c.coefficients.clone() })
        .collect();
    PlotAnnotations { max_age: l, horizon: t_end, lines, atoms }
}

/// Combined `region,x,t,u_smooth` table plus the annotation sidecar.
pub fn write_plot_data(dir: &Path, cfg: &ModelConfig, sol: &HybridSolution) -> Result<(PathBuf, PathBuf)> {
    let stride = sample_stride(sol);
    let field = dir.join(PLOT_FIELD_FILE);
    let rows = (0..sol.regions.len()).flat_map(|r| {
        sol.field(r)
            .samples_every(stride)
            .into_iter()
            .map(move |(x, t, u)| PlotRow { region: r, x, t, u_smooth: u })
    });
    write_csv(&field, rows)?;
    let side = dir.join(PLOT_ANNOTATION_FILE);
    write_json(&side, &plot_annotations(cfg, sol))?;
    Ok((field, side))
}

pub fn write_convergence_csv(dir: &Path, report: &ConvergenceReport) -> Result<PathBuf> {
    let path = dir.join(CONVERGENCE_FILE);
    let rows = report.results.iter().flat_map(|r| {
        r.eps.iter().zip(&r.pairings).map(move |(&eps, &pairing)| ConvergenceRow {
            probe: &r.name,
            eps,
            pairing,
            extrapolate: r.extrapolated,
            hybrid: r.hybrid,
            rel_err: r.rel_err,
        })
    });
    write_csv(&path, rows)?;
    Ok(path)
}

/// Everything needed to rerun a command and get the same files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_path: PathBuf,
    /// Resolved configuration, including defaults and overrides.
    pub config: String,
    pub numerics: Numerics,
    pub horizon: f64,
    pub grid_step: f64,
    pub output_dir: PathBuf,
    pub files: Vec<String>,
    /// Seconds per stage.
    pub wall_times: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        write_json(&path, self)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DataAtom;
    use crate::smooth_solver::{solve, SolveOptions};

    fn small() -> (ModelConfig, HybridSolution) {
        let mut cfg = ModelConfig::empty(1.0, 0.8);
        cfg.b_r = crate::function::SmoothFunction::expression("flat(x-0.2)*flat(1-x)").unwrap();
        cfg.initial_atoms = vec![DataAtom::new(1.0, 0, 0.25)];
        cfg.fertility_atoms = vec![DataAtom::new(1.0, 0, 0.6)];
        let sol = solve(&cfg, &SolveOptions { grid_step: Some(0.01), skip_residual: true }).unwrap();
        (cfg, sol)
    }

    #[test]
    fn artifacts_are_written_and_deterministic() {
        let (cfg, sol) = small();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for dir in [a.path(), b.path()] {
            write_field_csvs(dir, &sol).unwrap();
            write_trace_csv(dir, &sol).unwrap();
            write_singularity_report(dir, &SingularityReport::new(&cfg, &sol)).unwrap();
            write_ledger_csv(dir, &sol.ledger).unwrap();
            write_plot_data(dir, &cfg, &sol).unwrap();
        }
        let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert!(names.len() >= 6);
        for n in names {
            assert_eq!(fs::read(a.path().join(&n)).unwrap(), fs::read(b.path().join(&n)).unwrap());
        }
        let trace = fs::read_to_string(a.path().join(TRACE_FILE)).unwrap();
        assert!(trace.starts_with("t,v_r,u0_smooth\n"));
    }

    #[test]
    fn annotations_clip_lines_to_domain() {
        let (cfg, sol) = small();
        let ann = plot_annotations(&cfg, &sol);
        assert_eq!(ann.lines[0].from, (0.25, 0.0));
        assert!((ann.lines[0].to.0 - 1.0).abs() < 1e-12 && (ann.lines[0].to.1 - 0.75).abs() < 1e-12);
        assert_eq!(ann.atoms.len(), 1);
    }
}
