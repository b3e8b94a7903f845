//! Residual a posteriori indicators for the state and adjoint equations, the
//! control and subgradient indicators built from the auxiliary pair, and
//! data oscillation.

use crate::assembly::FeFunction;
use crate::error::Result;
use crate::mesh::{ElementGeometry, Mesh, Point};
use crate::optimality::clip::{self, TildePair};
use crate::optimality::{compute_tilde_pair, Control, ProblemData, Scheme, Solution};
use crate::quadrature;

/// Mesh-size scaling of the residual indicators: h² volume / h edge terms for
/// the energy norm, h⁴ / h³ for the L² norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scaling {
    Energy,
    L2,
}

impl Scaling {
    fn exponent(self) -> i32 {
        match self {
            Scaling::Energy => 2,
            Scaling::L2 => 4,
        }
    }
}

/// Weights of the state, adjoint, control and subgradient contributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub state: f64,
    pub adjoint: f64,
    pub control: f64,
    pub subgradient: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            state: 1.0,
            adjoint: 1.0,
            control: 1.0,
            subgradient: 1.0,
        }
    }
}

/// Per-element indicator values (not squared).
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorSet {
    pub ey: Vec<f64>,
    pub ep: Vec<f64>,
    pub eu: Vec<f64>,
    pub elam: Vec<f64>,
    pub scaling: Scaling,
    pub weights: Weights,
}

impl IndicatorSet {
    /// E_K = (w₁ey² + w₂ep² + w₃eu² + w₄elam²)^½ per element.
    pub fn element_totals(&self) -> Vec<f64> {
        let w = &self.weights;
        (0..self.ey.len())
            .map(|k| {
                (w.state * self.ey[k].powi(2)
                    + w.adjoint * self.ep[k].powi(2)
                    + w.control * self.eu[k].powi(2)
                    + w.subgradient * self.elam[k].powi(2))
                .sqrt()
            })
            .collect()
    }

    /// Unweighted global values (ey, ep, eu, elam).
    pub fn components(&self) -> [f64; 4] {
        let l2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        [l2(&self.ey), l2(&self.ep), l2(&self.eu), l2(&self.elam)]
    }
}

pub fn total_estimator(ind: &IndicatorSet) -> f64 {
    ind.element_totals().iter().map(|e| e * e).sum::<f64>().sqrt()
}

/// Residual indicators of a P1 function `z` (all-vertex values) for −Δz = r:
/// h^s‖r‖²_K + h^{s−1}Σ_γ ‖[[∇z·ν]]‖²_γ over interior sides γ of K.
/// `volume_sq(t)` must return ‖r‖²_{L²(K)}.
pub fn residual_indicators<F: FnMut(usize) -> f64>(
    mesh: &Mesh,
    z: &[f64],
    scaling: Scaling,
    mut volume_sq: F,
) -> Vec<f64> {
    let s = scaling.exponent();
    let grads: Vec<[f64; 2]> = (0..mesh.num_triangles())
        .map(|t| {
            let tri = mesh.triangles()[t];
            mesh.geometry(t).gradient([z[tri[0]], z[tri[1]], z[tri[2]]])
        })
        .collect();
    let mut jump_sq = vec![0.0; mesh.num_triangles()];
    for e in mesh.edges().iter().filter(|e| !e.is_boundary()) {
        let [a, b] = e.vertices;
        let (pa, pb) = (mesh.vertices()[a], mesh.vertices()[b]);
        let len = (pb[0] - pa[0]).hypot(pb[1] - pa[1]);
        let normal = [(pb[1] - pa[1]) / len, -(pb[0] - pa[0]) / len];
        let [k1, k2] = e.triangles;
        let dg = [grads[k1][0] - grads[k2][0], grads[k1][1] - grads[k2][1]];
        let jump = dg[0] * normal[0] + dg[1] * normal[1];
        let contribution = jump * jump * len;
        jump_sq[k1] += contribution;
        jump_sq[k2] += contribution;
    }
    (0..mesh.num_triangles())
        .map(|t| {
            let h = mesh.diameter(t);
            (h.powi(s) * volume_sq(t) + h.powi(s - 1) * jump_sq[t]).sqrt()
        })
        .collect()
}

fn element_integral<F: FnMut([f64; 3], Point) -> f64>(geo: &ElementGeometry, degree: usize, mut g: F) -> f64 {
    let rule = quadrature::triangle_rule(degree).expect("supported degree");
    let mut sum = 0.0;
    for (bary, w) in rule.barycentric() {
        sum += w * g(bary, geo.point(bary));
    }
    sum * geo.area
}

/// (ey, ep) per element: residuals u_T + f with jumps of ∇y_T, and
/// y_T − y_Ω with jumps of ∇p_T.
pub fn state_adjoint_indicators(
    mesh: &Mesh,
    sol: &Solution,
    data: &ProblemData,
    scaling: Scaling,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let degree = data.data_degree;
    quadrature::triangle_rule(degree)?;
    let y = sol.y.vertex_values(mesh);
    let p = sol.p.vertex_values(mesh);
    let tilde = matches!(sol.control, Control::Variational).then(|| compute_tilde_pair(mesh, &sol.p, &data.law));
    let ey = residual_indicators(mesh, &y, scaling, |t| {
        let geo = mesh.geometry(t);
        match &tilde {
            Some(tp) => clip::integrate_pieces(&tp.pieces[t], degree, |b| {
                let r = tp.eval(mesh, t, b).0 + (data.f)(geo.point(b));
                r * r
            }),
            None => element_integral(&geo, degree, |b, x| {
                let r = sol.control_at(mesh, t, b).0 + (data.f)(x);
                r * r
            }),
        }
    });
    let ep = residual_indicators(mesh, &p, scaling, |t| {
        let geo = mesh.geometry(t);
        element_integral(&geo, degree, |b, x| {
            let r = sol.y.eval(mesh, t, b) - (data.y_omega)(x);
            r * r
        })
    });
    Ok((ey, ep))
}

/// (eu, elam) per element: ‖ũ − u_T‖_K and ‖λ̃ − λ_T‖_K, integrated exactly on
/// the clipping pieces. Both vanish for the variational scheme.
pub fn control_subgradient_indicators(mesh: &Mesh, sol: &Solution, data: &ProblemData) -> (Vec<f64>, Vec<f64>) {
    let nt = mesh.num_triangles();
    if let Control::Variational = sol.control {
        return (vec![0.0; nt], vec![0.0; nt]);
    }
    let tilde = compute_tilde_pair(mesh, &sol.p, &data.law);
    control_indicators_with(mesh, sol, &tilde)
}

fn control_indicators_with(mesh: &Mesh, sol: &Solution, tilde: &TildePair) -> (Vec<f64>, Vec<f64>) {
    let mut eu = Vec::with_capacity(mesh.num_triangles());
    let mut el = Vec::with_capacity(mesh.num_triangles());
    for t in 0..mesh.num_triangles() {
        let pieces = &tilde.pieces[t];
        let du = clip::integrate_pieces(pieces, 2, |b| {
            let (ut, _) = tilde.eval(mesh, t, b);
            (ut - sol.control_at(mesh, t, b).0).powi(2)
        });
        let dl = clip::integrate_pieces(pieces, 2, |b| {
            let (_, lt) = tilde.eval(mesh, t, b);
            (lt - sol.control_at(mesh, t, b).1).powi(2)
        });
        eu.push(du.max(0.0).sqrt());
        el.push(dl.max(0.0).sqrt());
    }
    (eu, el)
}

/// Scaling paired with each scheme: energy for piecewise constant controls,
/// L² otherwise.
pub fn scheme_scaling(scheme: Scheme) -> Scaling {
    match scheme {
        Scheme::Pc => Scaling::Energy,
        Scheme::P1 | Scheme::Vd => Scaling::L2,
    }
}

/// All indicators of a solution with the scheme's scaling. The variational
/// scheme's estimator has no control or subgradient part.
pub fn compute_indicators(mesh: &Mesh, sol: &Solution, data: &ProblemData, weights: Weights) -> Result<IndicatorSet> {
    let scaling = scheme_scaling(sol.scheme);
    let (ey, ep) = state_adjoint_indicators(mesh, sol, data, scaling)?;
    let (eu, elam) = control_subgradient_indicators(mesh, sol, data);
    Ok(IndicatorSet {
        ey,
        ep,
        eu,
        elam,
        scaling,
        weights,
    })
}

/// osc²_K = h_K^{2(κ+1)}‖g − Π_K^κ g‖²_K per element, with Π_K^κ the L²
/// projection onto polynomials of degree κ ∈ {0, 1}.
pub fn data_oscillation_elements<G: Fn(Point) -> f64>(mesh: &Mesh, g: G, kappa: usize, degree: usize) -> Result<Vec<f64>> {
    if kappa > 1 {
        return Err(crate::Error::InvalidParameter(format!("oscillation degree must be 0 or 1, got {kappa}")));
    }
    let rule = quadrature::triangle_rule(degree)?;
    let mut out = Vec::with_capacity(mesh.num_triangles());
    for t in 0..mesh.num_triangles() {
        let geo = mesh.geometry(t);
        let samples: Vec<([f64; 3], f64, f64)> = rule
            .barycentric()
            .map(|(b, w)| (b, w * geo.area, g(geo.point(b))))
            .collect();
        let projection: Box<dyn Fn([f64; 3]) -> f64> = if kappa == 0 {
            let mean = samples.iter().map(|(_, w, v)| w * v).sum::<f64>() / geo.area;
            Box::new(move |_| mean)
        } else {
            // local mass matrix |K|/12 (1 + δ_ij) against moments ∫ g λ_i
            let mut rhs = [0.0; 3];
            for (b, w, v) in &samples {
                for i in 0..3 {
                    rhs[i] += w * v * b[i];
                }
            }
            // inverse of (1 + δ_ij)/12 is 3(4δ_ij − 1)
            let s: f64 = rhs.iter().sum();
            let c: Vec<f64> = rhs.iter().map(|r| 3.0 * (4.0 * r - s) / geo.area).collect();
            Box::new(move |b: [f64; 3]| c[0] * b[0] + c[1] * b[1] + c[2] * b[2])
        };
        let err: f64 = samples.iter().map(|(b, w, v)| w * (v - projection(*b)).powi(2)).sum();
        let h = geo.diameter;
        out.push(h.powi(2 * (kappa as i32 + 1)) * err);
    }
    Ok(out)
}

/// osc_{𝒯,κ}(g) = (Σ_K osc²_K)^½.
pub fn data_oscillation<G: Fn(Point) -> f64>(mesh: &Mesh, g: G, kappa: usize, degree: usize) -> Result<f64> {
    Ok(data_oscillation_elements(mesh, g, kappa, degree)?.iter().sum::<f64>().sqrt())
}

/// Energy indicators of the discrete Poisson solution z_𝒯 (interior values)
/// with right-hand side g.
pub fn poisson_indicators<G: Fn(Point) -> f64>(mesh: &Mesh, z: &FeFunction, g: G, degree: usize) -> Result<Vec<f64>> {
    quadrature::triangle_rule(degree)?;
    let zv = z.vertex_values(mesh);
    Ok(residual_indicators(mesh, &zv, Scaling::Energy, |t| {
        element_integral(&mesh.geometry(t), degree, |_, x| g(x).powi(2))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::Space;
    use crate::mesh::Domain;
    use crate::optimality::{ControlLaw, Control};
    use approx::assert_abs_diff_eq;

    fn single() -> Mesh {
        Mesh::new(Domain::Custom, vec![[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]).unwrap()
    }

    fn law() -> ControlLaw {
        ControlLaw::new(0.1, 0.5, -1.0, 1.0).unwrap()
    }

    fn solution(mesh: &Mesh, scheme: Scheme, u: f64) -> Solution {
        let space = if scheme == Scheme::P1 { Space::P1Full } else { Space::P0 };
        Solution {
            scheme,
            law: law(),
            y: FeFunction::zero(mesh, Space::P1H10),
            p: FeFunction::zero(mesh, Space::P1H10),
            control: Control::Discrete {
                u: FeFunction { space, coefficients: vec![u; space.dim(mesh)] },
                lambda: FeFunction::zero(mesh, space),
            },
            newton_iterations: 0,
        }
    }

    fn data(f: f64) -> ProblemData {
        ProblemData::new(0.1, 0.5, -1.0, 1.0, move |_| f, |_| 0.0).unwrap()
    }

    #[test]
    fn single_element_scalings() {
        let m = single();
        let sol = solution(&m, Scheme::Pc, 0.0);
        let c = 1.7;
        let (e, _) = state_adjoint_indicators(&m, &sol, &data(c), Scaling::Energy).unwrap();
        let h = 5f64.sqrt();
        let area: f64 = 1.0;
        assert_abs_diff_eq!(e[0], h * c * area.sqrt(), epsilon = 1e-12);
        let (l, _) = state_adjoint_indicators(&m, &sol, &data(c), Scaling::L2).unwrap();
        assert_abs_diff_eq!(l[0], h * h * c * area.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(l[0] / e[0], h, epsilon = 1e-12);
    }

    #[test]
    fn affine_state_without_residual_has_no_state_indicator() {
        let mut m = Mesh::initial(Domain::UnitSquare).unwrap();
        for _ in 0..2 {
            m = m.refine_uniform().unwrap().mesh;
        }
        let z: Vec<f64> = m.vertices().iter().map(|x| 2.0 * x[0] - x[1] + 0.5).collect();
        let ind = residual_indicators(&m, &z, Scaling::Energy, |_| 0.0);
        assert!(ind.iter().all(|&v| v < 1e-12));
    }

    #[test]
    fn control_indicators_examples() {
        let m = single();
        // p = 0 on a single element: ũ = 0, λ̃ = 0
        let sol = solution(&m, Scheme::Pc, 0.0);
        let (eu, el) = control_subgradient_indicators(&m, &sol, &data(0.0));
        assert_eq!((eu[0], el[0]), (0.0, 0.0));
        // ũ ≡ 0 while u_T ≡ 1 gives |K|^½
        let sol = solution(&m, Scheme::Pc, 1.0);
        let (eu, _) = control_subgradient_indicators(&m, &sol, &data(0.0));
        assert_abs_diff_eq!(eu[0], 1.0, epsilon = 1e-14);
        let mut vd = sol.clone();
        vd.scheme = Scheme::Vd;
        vd.control = Control::Variational;
        let (eu, el) = control_subgradient_indicators(&m, &vd, &data(0.0));
        assert_eq!((eu[0], el[0]), (0.0, 0.0));
    }

    #[test]
    fn total_examples() {
        let mut ind = IndicatorSet {
            ey: vec![3.0],
            ep: vec![4.0],
            eu: vec![0.0],
            elam: vec![0.0],
            scaling: Scaling::L2,
            weights: Weights::default(),
        };
        assert_abs_diff_eq!(total_estimator(&ind), 5.0, epsilon = 1e-15);
        ind.weights = Weights { state: 2.0, adjoint: 2.0, control: 2.0, subgradient: 2.0 };
        assert_abs_diff_eq!(total_estimator(&ind), 5.0 * 2f64.sqrt(), epsilon = 1e-14);
        ind.ey = vec![0.0];
        ind.ep = vec![0.0];
        assert_eq!(total_estimator(&ind), 0.0);
    }

    #[test]
    fn oscillation_examples() {
        let m = single();
        let zero = data_oscillation(&m, |x| 3.0 * x[0] - x[1], 1, 4).unwrap();
        assert!(zero < 1e-12);
        assert!(data_oscillation(&m, |_| 2.0, 0, 4).unwrap() < 1e-14);
        // g = x on the triangle (0,0),(2,0),(0,1): mean 2/3,
        // ∫(x − 2/3)² = ∫x² − |K|(2/3)² = 2/3 − 4/9 = 2/9
        let osc = data_oscillation(&m, |x| x[0], 0, 4).unwrap();
        assert_abs_diff_eq!(osc * osc, 5.0 * 2.0 / 9.0, epsilon = 1e-13);
        // smooth g: a uniform refinement sweep pair (h halved) divides osc₀ by ~4
        let mut coarse = Mesh::initial(Domain::UnitSquare).unwrap();
        for _ in 0..4 {
            coarse = coarse.refine_uniform().unwrap().mesh;
        }
        let fine = coarse.refine_uniform().unwrap().mesh.refine_uniform().unwrap().mesh;
        let g = |x: Point| (2.0 * x[0]).sin() * (x[1] + 1.0).exp();
        let ratio = data_oscillation(&coarse, g, 0, 6).unwrap() / data_oscillation(&fine, g, 0, 6).unwrap();
        assert!((ratio - 4.0).abs() < 0.3, "ratio {ratio}");
    }
}
