//! Experiment driver behind the command-line tool: runs one configuration,
//! writes the convergence table as CSV and fits experimental rates.

use std::fmt;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use crate::afem::{self, AfemOptions, ConvergenceRecord, Mode, Problem};
use crate::error::{Error, Result};
use crate::estimators::Weights;
use crate::mesh::{Domain, Mesh};
use crate::optimality::{NewtonOptions, ProblemData, Scheme, VdIntegration};
use crate::problems::{self, ManufacturedProblem};

pub const CSV_HEADER: [&str; 16] = [
    "step",
    "ndof",
    "h_max",
    "err_y",
    "err_p",
    "err_u",
    "err_lambda",
    "err_total",
    "est_y",
    "est_p",
    "est_u",
    "est_lambda",
    "est_total",
    "effectivity",
    "newton_iters",
    "wall_time_ms",
];

/// Columns fitted by default by `rates`.
pub const RATE_COLUMNS: [&str; 10] = [
    "err_y",
    "err_p",
    "err_u",
    "err_lambda",
    "err_total",
    "est_y",
    "est_p",
    "est_u",
    "est_lambda",
    "est_total",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExampleId {
    /// Unit square with an interior layer.
    One,
    /// L-shaped domain with a corner singularity; α and β are fixed.
    Two,
    /// Unit square without a known solution: f = 0,
    /// y_Ω = 10 sin(2πx₁) sin(πx₂), [a, b] = [−1, 1].
    Custom,
}

impl std::str::FromStr for ExampleId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1" => Ok(ExampleId::One),
            "2" => Ok(ExampleId::Two),
            "custom" => Ok(ExampleId::Custom),
            other => Err(Error::InvalidParameter(format!("unknown example '{other}' (expected 1, 2 or custom)"))),
        }
    }
}

impl fmt::Display for ExampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExampleId::One => "1",
            ExampleId::Two => "2",
            ExampleId::Custom => "custom",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub example: ExampleId,
    pub scheme: Scheme,
    pub mode: Mode,
    pub alpha: f64,
    pub beta: f64,
    pub max_ndof: usize,
    pub mark_fraction: f64,
    pub tol: f64,
    pub weights: Weights,
    pub out: PathBuf,
    /// Integrate the variational control terms with a plain rule of this
    /// degree instead of exact clipping.
    pub vd_quadrature: Option<usize>,
    /// Directory receiving one mesh file per step.
    pub dump_mesh: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            example: ExampleId::One,
            scheme: Scheme::Pc,
            mode: Mode::Adaptive,
            alpha: 1e-2,
            beta: 0.7,
            max_ndof: 10_000,
            mark_fraction: 0.5,
            tol: 1e-10,
            weights: Weights::default(),
            out: PathBuf::from("convergence.csv"),
            vd_quadrature: None,
            dump_mesh: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.max_ndof < 100 {
            return bad(format!("max_ndof must be at least 100, got {}", self.max_ndof));
        }
        if !(self.mark_fraction >= 0.0 && self.mark_fraction < 1.0) {
            return bad(format!("mark fraction must lie in [0, 1), got {}", self.mark_fraction));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return bad(format!("tolerance must be positive, got {}", self.tol));
        }
        let w = self.weights;
        if [w.state, w.adjoint, w.control, w.subgradient].iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return bad(format!("estimator weights must be nonnegative, got {w:?}"));
        }
        if self.example != ExampleId::Two && !(self.alpha > 0.0 && self.beta > 0.0) {
            return bad(format!("alpha and beta must be positive, got {} and {}", self.alpha, self.beta));
        }
        Ok(())
    }

    fn options(&self) -> AfemOptions {
        AfemOptions {
            mode: self.mode,
            max_ndof: self.max_ndof,
            mark_fraction: self.mark_fraction,
            weights: self.weights,
            newton: NewtonOptions {
                tol: self.tol,
                vd_integration: self.vd_quadrature.map_or(VdIntegration::Exact, VdIntegration::Quadrature),
                ..NewtonOptions::default()
            },
        }
    }
}

enum Built {
    Manufactured(ManufacturedProblem),
    Data(ProblemData, Domain),
}

impl Built {
    fn problem(&self) -> Problem<'_> {
        match self {
            Built::Manufactured(p) => Problem::Manufactured(p),
            Built::Data(d, domain) => Problem::Data(d, *domain),
        }
    }
}

fn build_problem(config: &RunConfig) -> Result<Built> {
    Ok(match config.example {
        ExampleId::One => Built::Manufactured(problems::example1(config.alpha, config.beta)?),
        ExampleId::Two => {
            let pr = problems::example2()?;
            if (config.alpha, config.beta) != (pr.data.law.alpha, pr.data.law.beta) {
                log::warn!(
                    "example 2 fixes alpha = {} and beta = {}; the given values are ignored",
                    pr.data.law.alpha,
                    pr.data.law.beta
                );
            }
            Built::Manufactured(pr)
        }
        ExampleId::Custom => {
            use std::f64::consts::PI;
            let data = ProblemData::new(config.alpha, config.beta, -1.0, 1.0, |_| 0.0, |x| {
                10.0 * (2.0 * PI * x[0]).sin() * (PI * x[1]).sin()
            })?;
            Built::Data(data, Domain::UnitSquare)
        }
    })
}

fn real(v: f64) -> String {
    format!("{v:.11e}")
}

fn opt_real(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), real)
}

/// The CSV fields of one record, in header order.
pub fn record_fields(r: &ConvergenceRecord) -> Vec<String> {
    let e = r.errors;
    let mut row = vec![r.step.to_string(), r.ndof.to_string(), real(r.h_max)];
    row.extend((0..4).map(|k| opt_real(e.map(|e| e[k]))));
    row.push(opt_real(r.err_total));
    row.extend(r.estimators.iter().map(|&v| real(v)));
    row.push(real(r.est_total));
    row.push(opt_real(r.effectivity));
    row.push(r.newton_iterations.to_string());
    row.push(format!("{:.3}", r.wall_time_ms));
    row
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_error(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => Error::Csv(format!("{}: {other:?}", path.display())),
    }
}

/// Writes a convergence table.
pub fn write_csv(path: &Path, records: &[ConvergenceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error(path))?;
    w.write_record(CSV_HEADER).map_err(csv_error(path))?;
    for r in records {
        w.write_record(record_fields(r)).map_err(csv_error(path))?;
    }
    w.flush().map_err(io_error(path))
}

/// Outcome of one experiment.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub config: RunConfig,
    pub records: Vec<ConvergenceRecord>,
    pub converged: bool,
    /// Fitted slopes of err_total and est_total against ndof.
    pub rates: Vec<RateFit>,
}

impl RunSummary {
    /// Mean effectivity over the last three rows.
    pub fn mean_effectivity(&self) -> Option<f64> {
        let eff: Vec<f64> = self.records.iter().rev().take(3).filter_map(|r| r.effectivity).collect();
        (!eff.is_empty()).then(|| eff.iter().sum::<f64>() / eff.len() as f64)
    }
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.config;
        writeln!(
            f,
            "example {} scheme {} mode {}: {} steps written to {}",
            c.example,
            c.scheme,
            c.mode,
            self.records.len(),
            c.out.display()
        )?;
        if let Some(last) = self.records.last() {
            writeln!(f, "final ndof        {}", last.ndof)?;
            if let (Some(e), Some(t)) = (last.errors, last.err_total) {
                writeln!(
                    f,
                    "final errors      y {:.4e}  p {:.4e}  u {:.4e}  lambda {:.4e}  total {:.4e}",
                    e[0], e[1], e[2], e[3], t
                )?;
            }
            let s = last.estimators;
            writeln!(
                f,
                "final estimator   y {:.4e}  p {:.4e}  u {:.4e}  lambda {:.4e}  total {:.4e}",
                s[0], s[1], s[2], s[3], last.est_total
            )?;
        }
        for r in &self.rates {
            writeln!(f, "rate {:<12} {:+.3}", r.column, r.slope)?;
        }
        if let Some(e) = self.mean_effectivity() {
            writeln!(f, "mean effectivity (last 3)  {e:.4}")?;
        }
        if self.converged {
            writeln!(f, "stopped early: no element was marked")?;
        }
        Ok(())
    }
}

/// Runs one configuration, streaming rows to `config.out`. On a solver
/// failure the rows computed so far stay in the file and the error is
/// returned.
pub fn run_experiment(config: &RunConfig) -> Result<RunSummary> {
    config.validate()?;
    let built = build_problem(config)?;
    let problem = built.problem();
    let initial = afem::count_ndof(&Mesh::initial(problem.domain())?, config.scheme);
    if config.max_ndof <= initial {
        return Err(Error::InvalidParameter(format!(
            "max_ndof {} must exceed the initial number of unknowns {initial}",
            config.max_ndof
        )));
    }
    if let Some(dir) = &config.dump_mesh {
        fs::create_dir_all(dir).map_err(io_error(dir))?;
    }
    let path = config.out.as_path();
    let mut writer = csv::Writer::from_path(path).map_err(csv_error(path))?;
    writer.write_record(CSV_HEADER).map_err(csv_error(path))?;
    writer.flush().map_err(io_error(path))?;
    let mut sink_error: Option<Error> = None;
    let run = afem::adaptive_solve_with(problem, config.scheme, &config.options(), |view| {
        if sink_error.is_some() {
            return;
        }
        let written = writer
            .write_record(record_fields(view.record))
            .map_err(csv_error(path))
            .and_then(|_| writer.flush().map_err(io_error(path)));
        if let Err(e) = written {
            sink_error = Some(e);
            return;
        }
        if let Some(dir) = &config.dump_mesh {
            let file = dir.join(format!("step_{:03}.mesh", view.record.step));
            let dumped = File::create(&file)
                .and_then(|f| view.mesh.write_text(std::io::BufWriter::new(f)))
                .map_err(io_error(&file));
            if let Err(e) = dumped {
                sink_error = Some(e);
            }
        }
    })?;
    if let Some(e) = sink_error {
        return Err(e);
    }
    if let Some(e) = run.failure {
        return Err(e);
    }
    let columns: &[&str] = if matches!(built, Built::Manufactured(_)) {
        &["err_total", "est_total"]
    } else {
        &["est_total"]
    };
    let rates = if run.records.len() >= 3 {
        fit_rates(path, columns)?
    } else {
        Vec::new()
    };
    Ok(RunSummary {
        config: config.clone(),
        records: run.records,
        converged: run.converged,
        rates,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub column: String,
    /// Least-squares slope of log(value) against log(ndof); NaN when fewer
    /// than two usable values remain.
    pub slope: f64,
    /// Rows entering the fit.
    pub rows: usize,
}

/// Least-squares slope of log y against log x.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if x.len() < 2 || sxx == 0.0 {
        return f64::NAN;
    }
    sxy / sxx
}

/// Slopes of the given columns against ndof over the last min(5, all) rows.
/// Zero or non-finite values are left out of the fit with a warning.
pub fn fit_rates(path: &Path, columns: &[&str]) -> Result<Vec<RateFit>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_error(path))?;
    let headers = reader.headers().map_err(csv_error(path))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let ndof_col = find("ndof")?;
    let cols = columns.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_error(path))?;
        let parse = |k: usize| {
            rec.get(k)
                .ok_or_else(|| Error::Csv(format!("short row in {}", path.display())))?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))
        };
        let ndof = parse(ndof_col)?;
        let values = cols.iter().map(|&k| parse(k)).collect::<Result<Vec<_>>>()?;
        rows.push((ndof, values));
    }
    if rows.len() < 3 {
        return Err(Error::TooFewRows(rows.len()));
    }
    let tail = &rows[rows.len() - rows.len().min(5)..];
    Ok(columns
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let (x, y): (Vec<f64>, Vec<f64>) = tail
                .iter()
                .filter(|(_, v)| v[j] > 0.0 && v[j].is_finite())
                .map(|(n, v)| (*n, v[j]))
                .unzip();
            if x.len() < tail.len() {
                log::warn!("{name}: {} zero or non-finite values left out of the fit", tail.len() - x.len());
            }
            RateFit {
                column: name.to_string(),
                slope: loglog_slope(&x, &y),
                rows: x.len(),
            }
        })
        .collect())
}
