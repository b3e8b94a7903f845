//! Manufactured test problems with known optimal state, adjoint, control and
//! subgradient, and the exact error norms of a discrete solution.
//!
//! The data are derived from the exact pair: f = −Δȳ − ū and y_Ω = ȳ + Δp̄,
//! with all Laplacians in closed form.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::assembly::{self, FeFunction, Space, HIGH_DEGREE};
use crate::error::{Error, Result};
use crate::linsolve;
use crate::mesh::{Domain, ElementGeometry, Mesh, Point};
use crate::optimality::{clip, compute_tilde_pair, Control, ProblemData, Solution};
use crate::quadrature;

pub type ScalarFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(Point) -> [f64; 2] + Send + Sync>;

/// A smooth (away from corners) scalar field with closed-form derivatives.
#[derive(Clone)]
pub struct ExactField {
    pub value: ScalarFn,
    pub gradient: GradientFn,
    pub laplacian: ScalarFn,
}

impl ExactField {
    pub fn new(
        value: impl Fn(Point) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(Point) -> [f64; 2] + Send + Sync + 'static,
        laplacian: impl Fn(Point) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ExactField {
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            laplacian: Arc::new(laplacian),
        }
    }

    pub fn at(&self, x: Point) -> f64 {
        (self.value)(x)
    }
}

impl fmt::Debug for ExactField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ExactField")
    }
}

#[derive(Debug, Clone)]
pub struct ManufacturedProblem {
    pub name: &'static str,
    pub domain: Domain,
    pub data: ProblemData,
    pub y: ExactField,
    pub p: ExactField,
}

impl ManufacturedProblem {
    /// Builds f and y_Ω from the exact pair and the control law.
    fn from_pair(
        name: &'static str,
        domain: Domain,
        (alpha, beta, a, b): (f64, f64, f64, f64),
        y: ExactField,
        p: ExactField,
    ) -> Result<Self> {
        let law = crate::optimality::ControlLaw::new(alpha, beta, a, b)?;
        let (yv, yl, pv, pl) = (y.value.clone(), y.laplacian.clone(), p.value.clone(), p.laplacian.clone());
        let f = move |x: Point| -yl(x) - law.law(pv(x)).0;
        let y_omega = move |x: Point| yv(x) + pl(x);
        let data = ProblemData::new(alpha, beta, a, b, f, y_omega)?;
        Ok(ManufacturedProblem {
            name,
            domain,
            data,
            y,
            p,
        })
    }

    pub fn exact_u(&self, x: Point) -> f64 {
        self.data.law.law(self.p.at(x)).0
    }

    pub fn exact_lambda(&self, x: Point) -> f64 {
        self.data.law.law(self.p.at(x)).1
    }

    /// Residuals f + Δȳ + ū and y_Ω − ȳ − Δp̄ with the Laplacians replaced
    /// by finite differences of the exact fields.
    pub fn fd_consistency(&self, x: Point) -> (f64, f64) {
        let lap_y = fd_laplacian(&*self.y.value, x);
        let lap_p = fd_laplacian(&*self.p.value, x);
        let rf = (self.data.f)(x) + lap_y + self.exact_u(x);
        let ry = (self.data.y_omega)(x) - self.y.at(x) - lap_p;
        (rf, ry)
    }
}

/// Five-point Laplacian at steps h and h/2 combined by Richardson
/// extrapolation (fourth order).
pub fn fd_laplacian(g: &dyn Fn(Point) -> f64, x: Point) -> f64 {
    let five = |h: f64| {
        (g([x[0] + h, x[1]]) + g([x[0] - h, x[1]]) + g([x[0], x[1] + h]) + g([x[0], x[1] - h]) - 4.0 * g(x)) / (h * h)
    };
    let (coarse, fine) = (five(1e-4), five(5e-5));
    (4.0 * fine - coarse) / 3.0
}

fn quad(t: f64) -> (f64, f64) {
    (t * t - t, 2.0 * t - 1.0)
}

/// Unit square, a = −3, b = 3, with a steep interior layer along x₁ = 1/2 in
/// the state:
/// ȳ = x₁x₂(x₁−1)(x₂−1) atan((x₁−0.5)/0.01), p̄ = 20 x₁x₂(1−x₁)(1−x₂).
pub fn example1(alpha: f64, beta: f64) -> Result<ManufacturedProblem> {
    const EPS: f64 = 0.01;
    // T = atan(s), s = (x₁ − 1/2)/ε, and its first two x₁-derivatives
    let layer = |x1: f64| {
        let s = (x1 - 0.5) / EPS;
        let q = 1.0 + s * s;
        (s.atan(), 1.0 / (EPS * q), -2.0 * s / (EPS * EPS * q * q))
    };
    let y = ExactField::new(
        move |x| {
            let (t, _, _) = layer(x[0]);
            quad(x[0]).0 * quad(x[1]).0 * t
        },
        move |x| {
            let (t, dt, _) = layer(x[0]);
            let (p1, dp1) = quad(x[0]);
            let (p2, dp2) = quad(x[1]);
            [p2 * (dp1 * t + p1 * dt), p1 * dp2 * t]
        },
        move |x| {
            let (t, dt, ddt) = layer(x[0]);
            let (p1, dp1) = quad(x[0]);
            let (p2, _) = quad(x[1]);
            p2 * (2.0 * t + 2.0 * dp1 * dt + p1 * ddt) + 2.0 * p1 * t
        },
    );
    let p = ExactField::new(
        |x| 20.0 * quad(x[0]).0 * quad(x[1]).0,
        |x| {
            let (p1, dp1) = quad(x[0]);
            let (p2, dp2) = quad(x[1]);
            [20.0 * dp1 * p2, 20.0 * p1 * dp2]
        },
        |x| 40.0 * (quad(x[0]).0 + quad(x[1]).0),
    );
    ManufacturedProblem::from_pair("example1", Domain::UnitSquare, (alpha, beta, -3.0, 3.0), y, p)
}

/// Polar angle in [0, 2π); on the L-shape this is the angle in [0, 3π/2].
fn polar(x: Point) -> (f64, f64) {
    let rho = x[0].hypot(x[1]);
    let mut omega = x[1].atan2(x[0]);
    if omega < 0.0 {
        omega += 2.0 * PI;
    }
    (rho, omega)
}

/// Φ = ρ^{2/3} sin(2ω/3) and ∇Φ = (2/3)ρ^{−1/3}(−sin(ω/3), cos(ω/3)); Φ is
/// harmonic away from the origin.
fn corner(x: Point) -> (f64, [f64; 2]) {
    let (rho, omega) = polar(x);
    if rho == 0.0 {
        return (0.0, [f64::NAN, f64::NAN]);
    }
    let c = 2.0 / 3.0 * rho.powf(-1.0 / 3.0);
    (
        rho.powf(2.0 / 3.0) * (2.0 * omega / 3.0).sin(),
        [-c * (omega / 3.0).sin(), c * (omega / 3.0).cos()],
    )
}

/// g Φ for a smooth factor g with Δg = −(π²/2) g.
fn times_corner(
    g: impl Fn(Point) -> (f64, [f64; 2]) + Send + Sync + Clone + 'static,
) -> ExactField {
    let (g1, g2) = (g.clone(), g.clone());
    ExactField::new(
        move |x| g(x).0 * corner(x).0,
        move |x| {
            let (v, dv) = g1(x);
            let (phi, dphi) = corner(x);
            [dv[0] * phi + v * dphi[0], dv[1] * phi + v * dphi[1]]
        },
        move |x| {
            let (v, dv) = g2(x);
            let (phi, dphi) = corner(x);
            -0.5 * PI * PI * v * phi + 2.0 * (dv[0] * dphi[0] + dv[1] * dphi[1])
        },
    )
}

/// L-shaped domain (−1,1)² ∖ [0,1)×(−1,0], α = 10⁻³, β = 0.2, a = −0.6,
/// b = 1, with corner singularities ρ^{2/3} sin(2ω/3) in both ȳ and p̄.
pub fn example2() -> Result<ManufacturedProblem> {
    let h = PI / 2.0;
    let y = times_corner(move |x: Point| {
        let (sy, cy) = (h * (x[1] + 1.0)).sin_cos();
        let (sx, cx) = (h * (x[0] + 1.0)).sin_cos();
        (0.2 * sy * sx, [0.2 * h * sy * cx, 0.2 * h * cy * sx])
    });
    let p = times_corner(move |x: Point| {
        let (sy, cy) = (h * x[1]).sin_cos();
        let (sx, cx) = (h * (x[0] + 1.0)).sin_cos();
        (0.5 * cy * sx, [0.5 * h * cy * cx, -0.5 * h * sy * sx])
    });
    ManufacturedProblem::from_pair("example2", Domain::LShape, (1e-3, 0.2, -0.6, 1.0), y, p)
}

/// Per-element error contributions (not squared).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ElementErrors {
    pub y_l2: Vec<f64>,
    pub y_h1: Vec<f64>,
    pub p_l2: Vec<f64>,
    pub p_h1: Vec<f64>,
    pub u: Vec<f64>,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactErrors {
    pub y_l2: f64,
    /// H¹ seminorm.
    pub y_h1: f64,
    pub p_l2: f64,
    pub p_h1: f64,
    pub u: f64,
    pub lambda: f64,
    /// (|e_y|²_{H¹} + |e_p|²_{H¹} + ‖e_u‖² + ‖e_λ‖²)^½
    pub energy: f64,
    /// (‖e_y‖² + ‖e_p‖² + ‖e_u‖² + ‖e_λ‖²)^½
    pub l2: f64,
    pub elements: ElementErrors,
}

impl ExactErrors {
    /// (e_y, e_p, e_u, e_λ) in the energy norm or the L² norm.
    pub fn components(&self, energy: bool) -> [f64; 4] {
        if energy {
            [self.y_h1, self.p_h1, self.u, self.lambda]
        } else {
            [self.y_l2, self.p_l2, self.u, self.lambda]
        }
    }
}

fn rss(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// L² and H¹-seminorm errors of a P1 function (values at all vertices) on one
/// element, squared.
fn field_error_sq(geo: &ElementGeometry, z: [f64; 3], exact: &ExactField, rule: &quadrature::TriangleRule) -> (f64, f64) {
    let gz = geo.gradient(z);
    let (mut l2, mut h1) = (0.0, 0.0);
    for (b, w) in rule.barycentric() {
        let x = geo.point(b);
        let e = exact.at(x) - (b[0] * z[0] + b[1] * z[1] + b[2] * z[2]);
        let g = (exact.gradient)(x);
        l2 += w * e * e;
        h1 += w * ((g[0] - gz[0]).powi(2) + (g[1] - gz[1]).powi(2));
    }
    (l2 * geo.area, h1 * geo.area)
}

/// Errors of a P1 approximation `z` (values at all vertices) of `exact`, per
/// element: (L², H¹ seminorm).
pub fn field_errors(mesh: &Mesh, z: &[f64], exact: &ExactField) -> Result<(Vec<f64>, Vec<f64>)> {
    let rule = quadrature::triangle_rule(HIGH_DEGREE)?;
    let mut l2 = Vec::with_capacity(mesh.num_triangles());
    let mut h1 = Vec::with_capacity(mesh.num_triangles());
    for t in 0..mesh.num_triangles() {
        let tri = mesh.triangles()[t];
        let (a, b) = field_error_sq(&mesh.geometry(t), [z[tri[0]], z[tri[1]], z[tri[2]]], exact, rule);
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::NonFiniteSample { element: t });
        }
        l2.push(a.sqrt());
        h1.push(b.sqrt());
    }
    Ok((l2, h1))
}

/// Exact errors of a discrete solution, by degree-19 quadrature on every
/// element. For the variational scheme the rule is applied on each clipping
/// piece of the discrete control.
pub fn exact_error_norms(mesh: &Mesh, sol: &Solution, problem: &ManufacturedProblem) -> Result<ExactErrors> {
    if mesh.domain() != problem.domain {
        return Err(Error::DomainMismatch {
            mesh: mesh.domain().to_string(),
            problem: problem.domain.to_string(),
        });
    }
    let (y_l2, y_h1) = field_errors(mesh, &sol.y.vertex_values(mesh), &problem.y)?;
    let (p_l2, p_h1) = field_errors(mesh, &sol.p.vertex_values(mesh), &problem.p)?;
    let rule = quadrature::triangle_rule(HIGH_DEGREE)?;
    let tilde = matches!(sol.control, Control::Variational).then(|| compute_tilde_pair(mesh, &sol.p, &sol.law));
    let mut u = Vec::with_capacity(mesh.num_triangles());
    let mut lambda = Vec::with_capacity(mesh.num_triangles());
    for t in 0..mesh.num_triangles() {
        let geo = mesh.geometry(t);
        let sq = |b: [f64; 3]| {
            let x = geo.point(b);
            let (ue, le) = problem.data.law.law(problem.p.at(x));
            let (uh, lh) = sol.control_at(mesh, t, b);
            ((ue - uh).powi(2), (le - lh).powi(2))
        };
        let (su, sl) = match &tilde {
            Some(tp) => {
                let su = clip::integrate_pieces(&tp.pieces[t], HIGH_DEGREE, |b| sq(b).0);
                let sl = clip::integrate_pieces(&tp.pieces[t], HIGH_DEGREE, |b| sq(b).1);
                (su, sl)
            }
            None => {
                let (mut su, mut sl) = (0.0, 0.0);
                for (b, w) in rule.barycentric() {
                    let (a, c) = sq(b);
                    su += w * a;
                    sl += w * c;
                }
                (su * geo.area, sl * geo.area)
            }
        };
        if !(su.is_finite() && sl.is_finite()) {
            return Err(Error::NonFiniteSample { element: t });
        }
        u.push(su.sqrt());
        lambda.push(sl.sqrt());
    }
    let elements = ElementErrors {
        y_l2,
        y_h1,
        p_l2,
        p_h1,
        u,
        lambda,
    };
    let (yl, yh, pl, ph, eu, el) = (
        rss(&elements.y_l2),
        rss(&elements.y_h1),
        rss(&elements.p_l2),
        rss(&elements.p_h1),
        rss(&elements.u),
        rss(&elements.lambda),
    );
    Ok(ExactErrors {
        y_l2: yl,
        y_h1: yh,
        p_l2: pl,
        p_h1: ph,
        u: eu,
        lambda: el,
        energy: rss(&[yh, ph, eu, el]),
        l2: rss(&[yl, pl, eu, el]),
        elements,
    })
}

/// −Δz = 2π² sin(πx) sin(πy) on the unit square, z = sin(πx) sin(πy).
pub fn poisson_sine() -> ExactField {
    ExactField::new(
        |x| (PI * x[0]).sin() * (PI * x[1]).sin(),
        |x| {
            [
                PI * (PI * x[0]).cos() * (PI * x[1]).sin(),
                PI * (PI * x[0]).sin() * (PI * x[1]).cos(),
            ]
        },
        |x| -2.0 * PI * PI * (PI * x[0]).sin() * (PI * x[1]).sin(),
    )
}

/// P1 solution of −Δz = g with homogeneous Dirichlet conditions.
pub fn solve_poisson<G: Fn(Point) -> f64>(mesh: &Mesh, g: G, degree: usize) -> Result<FeFunction> {
    let a = assembly::assemble_stiffness(mesh);
    let rhs = assembly::assemble_load(mesh, g, degree)?;
    let z = linsolve::solve_spd(&a, &rhs, 1e-12)?;
    FeFunction::new(mesh, Space::P1H10, z)
}
