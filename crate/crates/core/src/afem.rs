//! The adaptive loop: solve, estimate, mark, refine.

use std::fmt;
use std::time::Instant;

use crate::assembly;
use crate::error::{Error, Result};
use crate::estimators::{self, IndicatorSet, Weights};
use crate::mesh::{Domain, Mesh};
use crate::optimality::{self, NewtonOptions, ProblemData, Scheme, Solution};
use crate::problems::{self, ExactErrors, ManufacturedProblem};

/// Elements with E_K > fraction · max E (strict). All-zero indicators mark
/// nothing.
pub fn mark_max_strategy(values: &[f64], fraction: f64) -> Vec<usize> {
    let max = values.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Vec::new();
    }
    let threshold = fraction * max;
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > threshold)
        .map(|(k, _)| k)
        .collect()
}

/// Total number of unknowns of a scheme: state and adjoint on interior
/// vertices plus one control value per element (`Pc`) or interior vertex
/// (`P1`).
pub fn count_ndof(mesh: &Mesh, scheme: Scheme) -> usize {
    let n = mesh.num_interior_vertices();
    match scheme {
        Scheme::Pc => 2 * n + mesh.num_triangles(),
        Scheme::P1 => 3 * n,
        Scheme::Vd => 2 * n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Refine every element each round (one bisection sweep).
    Uniform,
    Adaptive,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Uniform => "uniform",
            Mode::Adaptive => "adaptive",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Mode::Uniform),
            "adaptive" => Ok(Mode::Adaptive),
            other => Err(Error::InvalidParameter(format!("unknown mode '{other}'"))),
        }
    }
}

/// One row of a convergence history. Errors are measured in the norm paired
/// with the scheme (energy for `Pc`, L² otherwise); they are absent when no
/// exact solution is known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRecord {
    pub step: usize,
    pub ndof: usize,
    pub h_max: f64,
    /// (e_y, e_p, e_u, e_λ)
    pub errors: Option<[f64; 4]>,
    pub err_total: Option<f64>,
    /// (ey, ep, eu, elam), unweighted
    pub estimators: [f64; 4],
    pub est_total: f64,
    pub effectivity: Option<f64>,
    pub newton_iterations: usize,
    pub wall_time_ms: f64,
}

/// What the loop solves: a manufactured problem (exact errors available) or
/// plain data on a domain.
#[derive(Debug, Clone, Copy)]
pub enum Problem<'a> {
    Manufactured(&'a ManufacturedProblem),
    Data(&'a ProblemData, Domain),
}

impl Problem<'_> {
    pub fn data(&self) -> &ProblemData {
        match self {
            Problem::Manufactured(p) => &p.data,
            Problem::Data(d, _) => d,
        }
    }

    pub fn domain(&self) -> Domain {
        match self {
            Problem::Manufactured(p) => p.domain,
            Problem::Data(_, d) => *d,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AfemOptions {
    pub mode: Mode,
    /// Stop once the number of unknowns reaches this value.
    pub max_ndof: usize,
    pub mark_fraction: f64,
    pub weights: Weights,
    pub newton: NewtonOptions,
}

impl Default for AfemOptions {
    fn default() -> Self {
        AfemOptions {
            mode: Mode::Adaptive,
            max_ndof: 10_000,
            mark_fraction: 0.5,
            weights: Weights::default(),
            newton: NewtonOptions::default(),
        }
    }
}

/// Everything known about one step, handed to the observer before the mesh
/// is refined.
pub struct StepView<'a> {
    pub mesh: &'a Mesh,
    pub solution: &'a Solution,
    pub indicators: &'a IndicatorSet,
    pub errors: Option<&'a ExactErrors>,
    pub record: &'a ConvergenceRecord,
}

#[derive(Debug)]
pub struct AfemRun {
    pub records: Vec<ConvergenceRecord>,
    /// The marking step selected nothing (all indicators zero).
    pub converged: bool,
    /// Set when a step failed; `records` holds the steps completed before.
    pub failure: Option<Error>,
}

/// Runs solve → estimate → mark → refine from the initial mesh of the
/// problem's domain until the number of unknowns reaches `max_ndof`.
pub fn adaptive_solve(problem: Problem<'_>, scheme: Scheme, options: &AfemOptions) -> Result<AfemRun> {
    adaptive_solve_with(problem, scheme, options, |_| {})
}

/// [`adaptive_solve`] with a callback invoked after every step.
pub fn adaptive_solve_with<F: FnMut(&StepView<'_>)>(
    problem: Problem<'_>,
    scheme: Scheme,
    options: &AfemOptions,
    mut observer: F,
) -> Result<AfemRun> {
    if !(options.mark_fraction >= 0.0 && options.mark_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "marking fraction must lie in [0, 1), got {}",
            options.mark_fraction
        )));
    }
    let mut mesh = Mesh::initial(problem.domain())?;
    let initial = count_ndof(&mesh, scheme);
    if options.max_ndof <= initial {
        return Err(Error::InvalidParameter(format!(
            "max_ndof {} must exceed the initial number of unknowns {initial}",
            options.max_ndof
        )));
    }
    let mut records = Vec::new();
    let mut warm: Option<Vec<f64>> = None;
    for step in 0.. {
        match run_step(problem, scheme, options, &mesh, warm.as_deref(), step, &mut observer) {
            Ok((record, indicators, solution)) => {
                let ndof = record.ndof;
                log::info!(
                    "step {step}: ndof {ndof}, estimator {:.3e}, newton {}",
                    record.est_total,
                    record.newton_iterations
                );
                records.push(record);
                if ndof >= options.max_ndof {
                    break;
                }
                let marked = match options.mode {
                    Mode::Uniform => (0..mesh.num_triangles()).collect(),
                    Mode::Adaptive => mark_max_strategy(&indicators.element_totals(), options.mark_fraction),
                };
                if marked.is_empty() {
                    return Ok(AfemRun {
                        records,
                        converged: true,
                        failure: None,
                    });
                }
                let refinement = mesh.refine(&marked)?;
                let p = refinement.prolongate(&solution.p.vertex_values(&mesh));
                mesh = refinement.mesh;
                warm = Some(assembly::restrict_to_interior(&mesh, &p));
            }
            Err(e) => {
                log::warn!("step {step} failed: {e}");
                return Ok(AfemRun {
                    records,
                    converged: false,
                    failure: Some(e),
                });
            }
        }
    }
    Ok(AfemRun {
        records,
        converged: false,
        failure: None,
    })
}

fn run_step<F: FnMut(&StepView<'_>)>(
    problem: Problem<'_>,
    scheme: Scheme,
    options: &AfemOptions,
    mesh: &Mesh,
    warm: Option<&[f64]>,
    step: usize,
    observer: &mut F,
) -> Result<(ConvergenceRecord, IndicatorSet, Solution)> {
    let start = Instant::now();
    let data = problem.data();
    let solution = optimality::solve_optimality(mesh, data, scheme, options.newton, warm)?;
    let indicators = estimators::compute_indicators(mesh, &solution, data, options.weights)?;
    let errors = match problem {
        Problem::Manufactured(p) => Some(problems::exact_error_norms(mesh, &solution, p)?),
        Problem::Data(..) => None,
    };
    let est_total = estimators::total_estimator(&indicators);
    let energy = scheme == Scheme::Pc;
    let err = errors.as_ref().map(|e| e.components(energy));
    let err_total = errors.as_ref().map(|e| if energy { e.energy } else { e.l2 });
    let record = ConvergenceRecord {
        step,
        ndof: count_ndof(mesh, scheme),
        h_max: mesh.h_max(),
        errors: err,
        err_total,
        estimators: indicators.components(),
        est_total,
        effectivity: err_total.map(|e| est_total / e),
        newton_iterations: solution.newton_iterations,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    observer(&StepView {
        mesh,
        solution: &solution,
        indicators: &indicators,
        errors: errors.as_ref(),
        record: &record,
    });
    Ok((record, indicators, solution))
}
