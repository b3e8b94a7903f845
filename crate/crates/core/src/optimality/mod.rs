//! Discrete optimality systems for the three control discretizations and
//! their solution by a semismooth Newton iteration in (y, p).
//!
//! The control is eliminated through the pointwise law applied to a scalar
//! functional of the adjoint: the cell average (piecewise constant controls),
//! the weighted quasi-interpolant θ_v (piecewise linear controls with lumped
//! inner product) or the adjoint itself (variational discretization).

pub mod clip;

use std::fmt;
use std::sync::Arc;

use log::debug;

use crate::assembly::{self, FeFunction, Space, HIGH_DEGREE};
use crate::error::{Error, Result};
use crate::linsolve::{self, norm, CoupledSolver, SparseMatrix};
use crate::mesh::{Mesh, Point};
use crate::quadrature;

pub use clip::{compute_tilde_pair, Piece, TildePair};

/// Pointwise map from a value q of the adjoint to the optimal control and
/// subgradient, for the bounds a < 0 < b.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlLaw {
    pub alpha: f64,
    pub beta: f64,
    pub a: f64,
    pub b: f64,
}

/// Affine pieces of the control law, ordered by increasing q.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Branch {
    /// q ≤ −β − αb: u = b.
    UpperBound,
    /// −β − αb < q ≤ −β: u = −(q + β)/α.
    UpperLinear,
    /// |q| < β: u = 0.
    Zero,
    /// β ≤ q < β − αa: u = −(q − β)/α.
    LowerLinear,
    /// q ≥ β − αa: u = a.
    LowerBound,
}

impl ControlLaw {
    pub fn new(alpha: f64, beta: f64, a: f64, b: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
        }
        if !(a < 0.0 && 0.0 < b && a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidParameter(format!("bounds must satisfy a < 0 < b, got [{a}, {b}]")));
        }
        Ok(ControlLaw { alpha, beta, a, b })
    }

    /// The four kinks of q ↦ u in increasing order.
    pub fn breakpoints(&self) -> [f64; 4] {
        [
            -self.beta - self.alpha * self.b,
            -self.beta,
            self.beta,
            self.beta - self.alpha * self.a,
        ]
    }

    pub fn branch(&self, q: f64) -> Branch {
        let [k0, k1, k2, k3] = self.breakpoints();
        if q <= k0 {
            Branch::UpperBound
        } else if q <= k1 {
            Branch::UpperLinear
        } else if q < k2 {
            Branch::Zero
        } else if q < k3 {
            Branch::LowerLinear
        } else {
            Branch::LowerBound
        }
    }

    /// (u, λ) with λ = Π[−1,1](−q/β) and u = Π[a,b](−(q + βλ)/α).
    pub fn law(&self, q: f64) -> (f64, f64) {
        let lambda = (-q / self.beta).clamp(-1.0, 1.0);
        // exact zero on the sparsity region, free of cancellation
        let u = if lambda.abs() < 1.0 {
            0.0
        } else {
            (-(q + self.beta * lambda) / self.alpha).clamp(self.a, self.b)
        };
        (u, lambda)
    }

    /// The control through the max/min identity
    /// α⁻¹{max(0,−q−β) + min(0,−q+β) − max(0,−q−β−αb) − min(0,−q+β−αa)}.
    pub fn control_maxmin(&self, q: f64) -> f64 {
        let (al, be) = (self.alpha, self.beta);
        ((-q - be).max(0.0) + (-q + be).min(0.0) - (-q - be - al * self.b).max(0.0) - (-q + be - al * self.a).min(0.0))
            / al
    }

    /// Generalized derivative du/dq, in {0, −1/α}.
    pub fn newton_slope(&self, q: f64) -> f64 {
        self.slope_of(self.branch(q))
    }

    /// du/dq by differentiating the max/min identity with max'(0) = 1 and
    /// min'(0) = 1.
    pub fn newton_slope_maxmin(&self, q: f64) -> f64 {
        let dmax = |s: f64| if s >= 0.0 { 1.0 } else { 0.0 };
        let dmin = |s: f64| if s <= 0.0 { 1.0 } else { 0.0 };
        let (al, be) = (self.alpha, self.beta);
        (-dmax(-q - be) - dmin(-q + be) + dmax(-q - be - al * self.b) + dmin(-q + be - al * self.a)) / al
    }

    pub fn slope_of(&self, branch: Branch) -> f64 {
        match branch {
            Branch::UpperLinear | Branch::LowerLinear => -1.0 / self.alpha,
            _ => 0.0,
        }
    }

    /// (u0, u1, l0, l1) with u = u0 + u1 q and λ = l0 + l1 q on the branch.
    pub fn affine(&self, branch: Branch) -> (f64, f64, f64, f64) {
        let (al, be) = (self.alpha, self.beta);
        match branch {
            Branch::UpperBound => (self.b, 0.0, 1.0, 0.0),
            Branch::UpperLinear => (-be / al, -1.0 / al, 1.0, 0.0),
            Branch::Zero => (0.0, 0.0, 0.0, -1.0 / be),
            Branch::LowerLinear => (be / al, -1.0 / al, -1.0, 0.0),
            Branch::LowerBound => (self.a, 0.0, -1.0, 0.0),
        }
    }
}

pub type DataFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;

/// Parameters and data of the control problem.
#[derive(Clone)]
pub struct ProblemData {
    pub law: ControlLaw,
    pub f: DataFn,
    pub y_omega: DataFn,
    /// Quadrature degree for loads built from `f` and `y_omega`.
    pub data_degree: usize,
}

impl fmt::Debug for ProblemData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemData")
            .field("law", &self.law)
            .field("data_degree", &self.data_degree)
            .finish_non_exhaustive()
    }
}

impl ProblemData {
    pub fn new(
        alpha: f64,
        beta: f64,
        a: f64,
        b: f64,
        f: impl Fn(Point) -> f64 + Send + Sync + 'static,
        y_omega: impl Fn(Point) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        Ok(ProblemData {
            law: ControlLaw::new(alpha, beta, a, b)?,
            f: Arc::new(f),
            y_omega: Arc::new(y_omega),
            data_degree: HIGH_DEGREE,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Piecewise constant controls.
    Pc,
    /// Piecewise linear controls with the lumped inner product.
    P1,
    /// Variational discretization: the control set is not discretized.
    Vd,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Pc, Scheme::P1, Scheme::Vd];
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Pc => "pc",
            Scheme::P1 => "p1",
            Scheme::Vd => "vd",
        })
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pc" => Ok(Scheme::Pc),
            "p1" => Ok(Scheme::P1),
            "vd" => Ok(Scheme::Vd),
            other => Err(Error::InvalidParameter(format!("unknown scheme '{other}'"))),
        }
    }
}

/// How the variational scheme integrates the kinked control terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VdIntegration {
    /// Clip along the kink lines and integrate each piece exactly.
    #[default]
    Exact,
    /// A plain rule of the given degree on each element.
    Quadrature(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub solver: CoupledSolver,
    pub vd_integration: VdIntegration,
    /// Iteration after which steps are damped by backtracking on the residual.
    pub damping_after: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-10,
            max_iter: 50,
            solver: CoupledSolver::DirectLu,
            vd_integration: VdIntegration::Exact,
            damping_after: 15,
        }
    }
}

/// The discrete control and subgradient.
#[derive(Debug, Clone, PartialEq)]
pub enum Control {
    /// Stored coefficients: P0 for `Pc`, nodal values at all vertices for `P1`.
    Discrete { u: FeFunction, lambda: FeFunction },
    /// Given pointwise by the control law applied to p.
    Variational,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub scheme: Scheme,
    pub law: ControlLaw,
    pub y: FeFunction,
    pub p: FeFunction,
    pub control: Control,
    pub newton_iterations: usize,
}

impl Solution {
    /// (u, λ) at a point of element `t`.
    pub fn control_at(&self, mesh: &Mesh, t: usize, bary: [f64; 3]) -> (f64, f64) {
        match &self.control {
            Control::Discrete { u, lambda } => (u.eval(mesh, t, bary), lambda.eval(mesh, t, bary)),
            Control::Variational => self.law.law(self.p.eval(mesh, t, bary)),
        }
    }

    /// Scheme-specific control coefficients (empty for the variational scheme).
    pub fn control_coefficients(&self) -> (&[f64], &[f64]) {
        match &self.control {
            Control::Discrete { u, lambda } => (&u.coefficients, &lambda.coefficients),
            Control::Variational => (&[], &[]),
        }
    }

    /// Values of the adjoint functional the control law is applied to: cell
    /// averages (`Pc`), θ_v (`P1`) or vertex values (`Vd`).
    pub fn control_argument(&self, mesh: &Mesh) -> Vec<f64> {
        control_argument(mesh, self.scheme, &self.p.vertex_values(mesh))
    }
}

fn control_argument(mesh: &Mesh, scheme: Scheme, p_full: &[f64]) -> Vec<f64> {
    match scheme {
        Scheme::Pc => assembly::cell_average_values(mesh, p_full),
        Scheme::P1 => {
            let w = assembly::lumped_weights(mesh);
            let mp = assembly::assemble_mass(mesh, Space::P1Full, Space::P1Full).mul_vec(p_full);
            mp.iter().zip(&w).map(|(m, w)| m / w).collect()
        }
        Scheme::Vd => p_full.to_vec(),
    }
}

/// Matrices and loads shared by every Newton iteration on one mesh.
struct System<'a> {
    mesh: &'a Mesh,
    scheme: Scheme,
    law: ControlLaw,
    options: NewtonOptions,
    stiffness: SparseMatrix,
    mass: SparseMatrix,
    load_f: Vec<f64>,
    load_yd: Vec<f64>,
    /// Interior rows, control columns: P0 for `Pc`, all vertices for `P1`.
    control_mass: Option<SparseMatrix>,
    /// Control-column normalization: |K| for `Pc`, ∫φ_v for `P1`.
    control_weights: Vec<f64>,
}

struct Linearization {
    control_load: Vec<f64>,
    coupling: SparseMatrix,
    classification: Vec<Branch>,
}

impl<'a> System<'a> {
    fn new(mesh: &'a Mesh, data: &ProblemData, scheme: Scheme, options: NewtonOptions) -> Result<Self> {
        let stiffness = assembly::assemble_stiffness(mesh);
        let mass = assembly::assemble_mass(mesh, Space::P1H10, Space::P1H10);
        let f = data.f.clone();
        let yd = data.y_omega.clone();
        let load_f = assembly::assemble_load(mesh, move |x| f(x), data.data_degree)?;
        let load_yd = assembly::assemble_load(mesh, move |x| yd(x), data.data_degree)?;
        let (control_mass, control_weights) = match scheme {
            Scheme::Pc => (
                Some(assembly::assemble_mass(mesh, Space::P1H10, Space::P0)),
                (0..mesh.num_triangles()).map(|t| mesh.area(t)).collect(),
            ),
            Scheme::P1 => (
                Some(assembly::assemble_mass(mesh, Space::P1H10, Space::P1Full)),
                assembly::lumped_weights(mesh),
            ),
            Scheme::Vd => (None, Vec::new()),
        };
        Ok(System {
            mesh,
            scheme,
            law: data.law,
            options,
            stiffness,
            mass,
            load_f,
            load_yd,
            control_mass,
            control_weights,
        })
    }

    fn n(&self) -> usize {
        self.stiffness.nrows()
    }

    fn linearize(&self, p: &[f64]) -> Linearization {
        let p_full = assembly::extend_by_zero(self.mesh, p);
        match self.scheme {
            Scheme::Pc | Scheme::P1 => {
                let q = control_argument(self.mesh, self.scheme, &p_full);
                let cm = self.control_mass.as_ref().expect("control mass");
                let u: Vec<f64> = q.iter().map(|&q| self.law.law(q).0).collect();
                let classification: Vec<Branch> = q.iter().map(|&q| self.law.branch(q)).collect();
                let scale: Vec<f64> = q
                    .iter()
                    .zip(&self.control_weights)
                    .map(|(&q, w)| self.law.newton_slope(q) / w)
                    .collect();
                // dc/dp = C diag(ξ / w) Cᵀ, with C the control mass matrix
                let coupling = cm.scale_columns(&scale).matmul(&cm.transpose());
                Linearization {
                    control_load: cm.mul_vec(&u),
                    coupling,
                    classification,
                }
            }
            Scheme::Vd => {
                let mesh = self.mesh;
                let n = self.n();
                let mut load = vec![0.0; n];
                let mut entries = Vec::new();
                for t in 0..mesh.num_triangles() {
                    let tri = mesh.triangles()[t];
                    let pv = [p_full[tri[0]], p_full[tri[1]], p_full[tri[2]]];
                    let geo = mesh.geometry(t);
                    let (local, coupling) = match self.options.vd_integration {
                        VdIntegration::Exact => clip::element_control_integrals(&geo, pv, &self.law),
                        VdIntegration::Quadrature(d) => {
                            clip::element_control_integrals_quadrature(&geo, pv, &self.law, d)
                        }
                    };
                    for i in 0..3 {
                        let Some(r) = mesh.dof_of_vertex(tri[i]) else { continue };
                        load[r] += local[i];
                        for j in 0..3 {
                            if let Some(c) = mesh.dof_of_vertex(tri[j]) {
                                if coupling[i][j] != 0.0 {
                                    entries.push((r, c, coupling[i][j]));
                                }
                            }
                        }
                    }
                }
                Linearization {
                    control_load: load,
                    coupling: SparseMatrix::from_triplets(n, n, &entries),
                    classification: p_full.iter().map(|&q| self.law.branch(q)).collect(),
                }
            }
        }
    }

    /// F1 = A y − c(p) − b_f, F2 = A p − M y + b_yΩ.
    fn residual(&self, y: &[f64], p: &[f64], control_load: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let ay = self.stiffness.mul_vec(y);
        let ap = self.stiffness.mul_vec(p);
        let my = self.mass.mul_vec(y);
        let f1 = (0..y.len()).map(|i| ay[i] - control_load[i] - self.load_f[i]).collect();
        let f2 = (0..y.len()).map(|i| ap[i] - my[i] + self.load_yd[i]).collect();
        (f1, f2)
    }

    fn residual_norm(&self, y: &[f64], p: &[f64]) -> f64 {
        let lin = self.linearize(p);
        let (f1, f2) = self.residual(y, p, &lin.control_load);
        norm(&f1).hypot(norm(&f2))
    }
}

/// Solves the discrete optimality system of `scheme` on `mesh`. `initial` is
/// an optional starting adjoint (interior values); the default is p = 0.
pub fn solve_optimality(
    mesh: &Mesh,
    data: &ProblemData,
    scheme: Scheme,
    options: NewtonOptions,
    initial: Option<&[f64]>,
) -> Result<Solution> {
    if !(options.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {}", options.tol)));
    }
    let sys = System::new(mesh, data, scheme, options)?;
    let n = sys.n();
    let mut p = match initial {
        Some(p0) if p0.len() == n => p0.to_vec(),
        Some(p0) => {
            return Err(Error::DimensionMismatch(format!(
                "initial adjoint has {} values, mesh has {n} interior vertices",
                p0.len()
            )))
        }
        None => vec![0.0; n],
    };
    let mut y = vec![0.0; n];
    if n == 0 {
        return Ok(build_solution(mesh, data, scheme, y, p, 0));
    }
    let mut lin = sys.linearize(&p);
    let mut increment = f64::INFINITY;
    for iter in 1..=options.max_iter {
        let (f1, f2) = sys.residual(&y, &p, &lin.control_load);
        let r1: Vec<f64> = f1.iter().map(|v| -v).collect();
        let r2: Vec<f64> = f2.iter().map(|v| -v).collect();
        let (dy, dp) = linsolve::solve_coupled(&sys.stiffness, &lin.coupling, &sys.mass, &r1, &r2, options.solver)?;

        let mut step = 1.0;
        if iter > options.damping_after {
            let f0 = norm(&f1).hypot(norm(&f2));
            while step > 1.0 / 1024.0 {
                let yt: Vec<f64> = (0..n).map(|i| y[i] + step * dy[i]).collect();
                let pt: Vec<f64> = (0..n).map(|i| p[i] + step * dp[i]).collect();
                if sys.residual_norm(&yt, &pt) < (1.0 - 1e-4 * step) * f0 {
                    break;
                }
                step *= 0.5;
            }
        }
        for i in 0..n {
            y[i] += step * dy[i];
            p[i] += step * dp[i];
        }
        let x_norm = norm(&y).hypot(norm(&p));
        increment = step * norm(&dy).hypot(norm(&dp));
        let next = sys.linearize(&p);
        let stable = next.classification == lin.classification;
        debug!(
            "{scheme} newton {iter}: increment {increment:.3e}, step {step}, classification {}",
            if stable { "stable" } else { "changed" }
        );
        lin = next;
        if stable && increment <= options.tol * x_norm.max(f64::MIN_POSITIVE) {
            return Ok(build_solution(mesh, data, scheme, y, p, iter));
        }
    }
    let last = build_solution(mesh, data, scheme, y, p, options.max_iter);
    Err(Error::NewtonDiverged {
        iterations: options.max_iter,
        increment,
        last: Box::new(last),
    })
}

fn build_solution(mesh: &Mesh, data: &ProblemData, scheme: Scheme, y: Vec<f64>, p: Vec<f64>, iterations: usize) -> Solution {
    let p_fe = FeFunction {
        space: Space::P1H10,
        coefficients: p,
    };
    let control = match scheme {
        Scheme::Vd => Control::Variational,
        _ => {
            let q = control_argument(mesh, scheme, &p_fe.vertex_values(mesh));
            let (u, lambda): (Vec<f64>, Vec<f64>) = q.iter().map(|&q| data.law.law(q)).unzip();
            let space = if scheme == Scheme::Pc { Space::P0 } else { Space::P1Full };
            Control::Discrete {
                u: FeFunction { space, coefficients: u },
                lambda: FeFunction {
                    space,
                    coefficients: lambda,
                },
            }
        }
    };
    Solution {
        scheme,
        law: data.law,
        y: FeFunction {
            space: Space::P1H10,
            coefficients: y,
        },
        p: p_fe,
        control,
        newton_iterations: iterations,
    }
}

/// J = ½‖y − y_Ω‖² + (α/2)‖u‖² + β‖u‖_{L¹}, with the lumped norms for `P1`.
pub fn evaluate_cost(mesh: &Mesh, sol: &Solution, data: &ProblemData) -> Result<f64> {
    let rule = quadrature::triangle_rule(data.data_degree)?;
    let mut tracking = 0.0;
    for t in 0..mesh.num_triangles() {
        let geo = mesh.geometry(t);
        let mut local = 0.0;
        for (bary, w) in rule.barycentric() {
            let d = sol.y.eval(mesh, t, bary) - (data.y_omega)(geo.point(bary));
            local += w * d * d;
        }
        tracking += local * geo.area;
    }
    let (al, be) = (data.law.alpha, data.law.beta);
    let control: f64 = match &sol.control {
        Control::Discrete { u, .. } => {
            let weights: Vec<f64> = match u.space {
                Space::P0 => (0..mesh.num_triangles()).map(|t| mesh.area(t)).collect(),
                _ => assembly::lumped_weights(mesh),
            };
            u.coefficients
                .iter()
                .zip(&weights)
                .map(|(u, w)| w * (0.5 * al * u * u + be * u.abs()))
                .sum()
        }
        Control::Variational => {
            let tilde = compute_tilde_pair(mesh, &sol.p, &data.law);
            (0..mesh.num_triangles())
                .map(|t| {
                    clip::integrate_pieces(&tilde.pieces[t], 2, |b| {
                        let u = tilde.eval(mesh, t, b).0;
                        0.5 * al * u * u + be * u.abs()
                    })
                })
                .sum()
        }
    };
    Ok(0.5 * tracking + control)
}

/// The variational-inequality pairing (p + αu + βλ, w − u) in the scheme's
/// inner products, for a competitor control `w`: P0 coefficients for `Pc`
/// and `Vd`, nodal values at all vertices for `P1`.
pub fn variational_inequality(mesh: &Mesh, sol: &Solution, w: &[f64]) -> f64 {
    let (al, be) = (sol.law.alpha, sol.law.beta);
    match &sol.control {
        Control::Discrete { u, lambda } => {
            let q = sol.control_argument(mesh);
            let weights: Vec<f64> = match u.space {
                Space::P0 => (0..mesh.num_triangles()).map(|t| mesh.area(t)).collect(),
                _ => assembly::lumped_weights(mesh),
            };
            (0..q.len())
                .map(|k| {
                    let (uk, lk) = (u.coefficients[k], lambda.coefficients[k]);
                    weights[k] * (q[k] + al * uk + be * lk) * (w[k] - uk)
                })
                .sum()
        }
        Control::Variational => {
            let tilde = compute_tilde_pair(mesh, &sol.p, &sol.law);
            (0..mesh.num_triangles())
                .map(|t| {
                    clip::integrate_pieces(&tilde.pieces[t], 2, |b| {
                        let q = tilde.p_at(mesh, t, b);
                        let (u, l) = sol.law.law(q);
                        (q + al * u + be * l) * (w[t] - u)
                    })
                })
                .sum()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Domain;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn law() -> ControlLaw {
        ControlLaw::new(0.1, 0.7, -3.0, 3.0).unwrap()
    }

    #[test]
    fn law_examples() {
        let l = law();
        assert_eq!(l.law(0.0), (0.0, 0.0));
        let q = -(l.beta + l.alpha);
        let (u, lam) = l.law(q);
        assert_abs_diff_eq!(u, 1.0, epsilon = 1e-14);
        assert_eq!(lam, 1.0);
        assert_abs_diff_eq!(l.control_maxmin(q), 1.0, epsilon = 1e-14);
        assert_eq!(l.law(1e300), (l.a, -1.0));
        assert_eq!(l.law(-1e300), (l.b, 1.0));
    }

    #[test]
    fn slope_examples() {
        let l = law();
        assert_eq!(l.newton_slope(0.3), 0.0);
        assert_eq!(l.newton_slope(-(l.beta + l.alpha)), -1.0 / l.alpha);
        assert_eq!(l.newton_slope(-(l.beta + l.alpha * l.b) - 1.0), 0.0);
        // conventions at the kinks
        let [k0, k1, k2, k3] = l.breakpoints();
        for k in [k0, k1, k2, k3] {
            assert_eq!(l.newton_slope(k), l.newton_slope_maxmin(k), "kink {k}");
        }
        assert_eq!(l.newton_slope(k1), -1.0 / l.alpha);
        assert_eq!(l.newton_slope(k2), -1.0 / l.alpha);
        assert_eq!(l.newton_slope(k0), 0.0);
        assert_eq!(l.newton_slope(k3), 0.0);
    }

    #[test]
    fn invalid_parameters() {
        assert!(ControlLaw::new(0.0, 1.0, -1.0, 1.0).is_err());
        assert!(ControlLaw::new(1.0, -1.0, -1.0, 1.0).is_err());
        assert!(ControlLaw::new(1.0, 1.0, 0.5, 1.0).is_err());
        assert!(ControlLaw::new(1.0, 1.0, -1.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn two_characterizations_agree(
            q in -20.0f64..20.0,
            alpha in 1e-3f64..2.0,
            beta in 1e-2f64..2.0,
            a in -5.0f64..-0.01,
            b in 0.01f64..5.0,
        ) {
            let l = ControlLaw::new(alpha, beta, a, b).unwrap();
            let (u, lam) = l.law(q);
            prop_assert!((u - l.control_maxmin(q)).abs() <= 1e-9 * (1.0 + u.abs()));
            prop_assert!((a..=b).contains(&u));
            prop_assert!((-1.0..=1.0).contains(&lam));
            if u > 0.0 { prop_assert_eq!(lam, 1.0); }
            if u < 0.0 { prop_assert_eq!(lam, -1.0); }
            prop_assert_eq!(l.newton_slope(q), l.newton_slope_maxmin(q));
            let (u0, u1, l0, l1) = l.affine(l.branch(q));
            prop_assert!((u - (u0 + u1 * q)).abs() <= 1e-9 * (1.0 + u.abs()));
            prop_assert!((lam - (l0 + l1 * q)).abs() <= 1e-12);
        }

        #[test]
        fn slope_matches_finite_difference(q in -10.0f64..10.0) {
            let l = law();
            let h = 1e-7;
            let fd = (l.law(q + h).0 - l.law(q - h).0) / (2.0 * h);
            let near_kink = l.breakpoints().iter().any(|k| (q - k).abs() < 2.0 * h);
            if !near_kink {
                prop_assert!((fd - l.newton_slope(q)).abs() < 1e-5 / l.alpha);
            }
        }
    }

    fn square(levels: usize) -> Mesh {
        let mut m = Mesh::initial(Domain::UnitSquare).unwrap();
        for _ in 0..levels {
            m = m.refine_uniform().unwrap().mesh;
        }
        m
    }

    fn smooth_data(alpha: f64, beta: f64) -> ProblemData {
        ProblemData::new(
            alpha,
            beta,
            -3.0,
            3.0,
            |x| (3.0 * x[0]).sin(),
            |x| 30.0 * (std::f64::consts::PI * x[0]).sin() * (std::f64::consts::PI * x[1]).sin() - 8.0,
        )
        .unwrap()
    }

    #[test]
    fn large_beta_gives_zero_control() {
        let m = square(3);
        let data = ProblemData::new(0.1, 100.0, -1.0, 1.0, |_| 1.0, |_| 0.0).unwrap();
        let reference = {
            let a = assembly::assemble_stiffness(&m);
            let b = assembly::assemble_load(&m, |_| 1.0, 19).unwrap();
            linsolve::solve_spd(&a, &b, 1e-13).unwrap()
        };
        for scheme in Scheme::ALL {
            let sol = solve_optimality(&m, &data, scheme, NewtonOptions::default(), None).unwrap();
            for t in 0..m.num_triangles() {
                assert_eq!(sol.control_at(&m, t, [0.2, 0.3, 0.5]).0, 0.0);
            }
            for (a, b) in sol.y.coefficients.iter().zip(&reference) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn newton_reaches_the_discrete_system() {
        let m = square(3);
        let data = smooth_data(0.05, 0.5);
        for scheme in Scheme::ALL {
            let sol = solve_optimality(&m, &data, scheme, NewtonOptions::default(), None).unwrap();
            let sys = System::new(&m, &data, scheme, NewtonOptions::default()).unwrap();
            let r = sys.residual_norm(&sol.y.coefficients, &sol.p.coefficients);
            let scale = norm(&sys.load_f) + norm(&sys.load_yd);
            assert!(r <= 1e-9 * scale, "{scheme}: residual {r}");
            assert!(sol.newton_iterations >= 1 && sol.newton_iterations < 50);
            // the control is nontrivial and touches a bound somewhere
            let any_active = (0..m.num_triangles()).any(|t| sol.control_at(&m, t, [1.0 / 3.0; 3]).0 != 0.0);
            assert!(any_active, "{scheme}");
        }
    }

    #[test]
    fn warm_and_cold_starts_agree() {
        let m = square(3);
        let data = smooth_data(0.02, 0.5);
        for scheme in Scheme::ALL {
            let cold = solve_optimality(&m, &data, scheme, NewtonOptions::default(), None).unwrap();
            let guess: Vec<f64> = (0..m.num_interior_vertices()).map(|i| (i as f64).sin()).collect();
            let warm = solve_optimality(&m, &data, scheme, NewtonOptions::default(), Some(&guess)).unwrap();
            for (a, b) in cold.p.coefficients.iter().zip(&warm.p.coefficients) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn schur_solver_gives_the_same_solution() {
        let m = square(2);
        let data = smooth_data(0.05, 0.5);
        let opts = NewtonOptions {
            solver: CoupledSolver::SchurGmres,
            ..NewtonOptions::default()
        };
        for scheme in Scheme::ALL {
            let a = solve_optimality(&m, &data, scheme, NewtonOptions::default(), None).unwrap();
            let b = solve_optimality(&m, &data, scheme, opts, None).unwrap();
            for (x, y) in a.p.coefficients.iter().zip(&b.p.coefficients) {
                assert!((x - y).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn vd_quadrature_fallback_is_close() {
        let m = square(3);
        let data = smooth_data(0.05, 0.5);
        let exact = solve_optimality(&m, &data, Scheme::Vd, NewtonOptions::default(), None).unwrap();
        let opts = NewtonOptions {
            vd_integration: VdIntegration::Quadrature(19),
            ..NewtonOptions::default()
        };
        let approx = solve_optimality(&m, &data, Scheme::Vd, opts, None).unwrap();
        let diff: f64 = exact
            .p
            .coefficients
            .iter()
            .zip(&approx.p.coefficients)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = exact.p.coefficients.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(diff <= 1e-3 * scale, "{diff} vs {scale}");
    }

    #[test]
    fn variational_inequality_holds() {
        let m = square(3);
        let data = smooth_data(0.05, 0.5);
        for scheme in Scheme::ALL {
            let sol = solve_optimality(&m, &data, scheme, NewtonOptions::default(), None).unwrap();
            let len = match scheme {
                Scheme::P1 => m.num_vertices(),
                _ => m.num_triangles(),
            };
            for k in 0..20 {
                let w: Vec<f64> = (0..len).map(|i| -3.0 + 6.0 * (((i * 37 + k * 11) % 23) as f64 / 22.0)).collect();
                assert!(variational_inequality(&m, &sol, &w) >= -1e-8, "{scheme}");
            }
        }
    }

    #[test]
    fn cost_examples() {
        let m = square(2);
        let data = ProblemData::new(0.5, 0.25, -2.0, 2.0, |_| 0.0, |x| x[0] + 1.0).unwrap();
        let zero = build_solution(&m, &data, Scheme::Pc, vec![0.0; m.num_interior_vertices()], vec![0.0; m.num_interior_vertices()], 0);
        // ½∫(x+1)² = ½·7/3
        assert_abs_diff_eq!(evaluate_cost(&m, &zero, &data).unwrap(), 7.0 / 6.0, epsilon = 1e-13);
        let c = 0.8;
        let mut p1 = build_solution(&m, &data, Scheme::P1, vec![0.0; m.num_interior_vertices()], vec![0.0; m.num_interior_vertices()], 0);
        p1.control = Control::Discrete {
            u: FeFunction { space: Space::P1Full, coefficients: vec![c; m.num_vertices()] },
            lambda: FeFunction { space: Space::P1Full, coefficients: vec![1.0; m.num_vertices()] },
        };
        let expected = 7.0 / 6.0 + 0.5 * 0.5 * c * c + 0.25 * c;
        assert_abs_diff_eq!(evaluate_cost(&m, &p1, &data).unwrap(), expected, epsilon = 1e-13);
    }

    #[test]
    fn converged_solution_minimizes_cost_locally() {
        let m = square(2);
        let data = smooth_data(0.1, 0.3);
        let sol = solve_optimality(&m, &data, Scheme::Pc, NewtonOptions::default(), None).unwrap();
        let j0 = evaluate_cost(&m, &sol, &data).unwrap();
        // perturb the control and re-solve the state: cost must not decrease
        let Control::Discrete { u, .. } = &sol.control else { unreachable!() };
        let a = assembly::assemble_stiffness(&m);
        let c = assembly::assemble_mass(&m, Space::P1H10, Space::P0);
        let bf = assembly::assemble_load(&m, |x| (3.0 * x[0]).sin(), 19).unwrap();
        for k in 0..m.num_triangles() {
            let mut w = u.coefficients.clone();
            w[k] = (w[k] + 0.3).clamp(-3.0, 3.0);
            let mut rhs = c.mul_vec(&w);
            for (r, b) in rhs.iter_mut().zip(&bf) {
                *r += b;
            }
            let y = linsolve::solve_spd(&a, &rhs, 1e-14).unwrap();
            let mut trial = sol.clone();
            trial.y.coefficients = y;
            trial.control = Control::Discrete {
                u: FeFunction { space: Space::P0, coefficients: w },
                lambda: FeFunction::zero(&m, Space::P0),
            };
            assert!(evaluate_cost(&m, &trial, &data).unwrap() >= j0 - 1e-12);
        }
    }
}
