//! Quadrature on the reference triangle and the unit interval.
//!
//! Low degrees use the classical symmetric rules (centroid, 3-point, 6-point
//! Dunavant, 7-point Radon). Every other degree uses a collapsed
//! Gauss-Legendre product rule, which has positive weights and interior
//! points for any degree. Each rule is checked against exact monomial
//! integrals when it is first built.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::mesh::ElementGeometry;

pub const MAX_DEGREE: usize = 40;

/// Points are reference coordinates (x, y) on the triangle
/// {x ≥ 0, y ≥ 0, x + y ≤ 1}; weights sum to 1/2.
#[derive(Debug, Clone)]
pub struct TriangleRule {
    pub degree: usize,
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl TriangleRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Barycentric coordinates (λ0, λ1, λ2) of each point, paired with the
    /// weight normalized to sum to one.
    pub fn barycentric(&self) -> impl Iterator<Item = ([f64; 3], f64)> + '_ {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| ([1.0 - p[0] - p[1], p[0], p[1]], 2.0 * w))
    }

    /// Largest relative error over the monomials x^i y^j with i + j ≤ degree.
    pub fn monomial_error(&self, degree: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..=degree {
            for j in 0..=degree - i {
                let q: f64 = self
                    .points
                    .iter()
                    .zip(&self.weights)
                    .map(|(p, w)| w * p[0].powi(i as i32) * p[1].powi(j as i32))
                    .sum();
                let exact = monomial_integral(i, j);
                worst = worst.max((q - exact).abs() / exact);
            }
        }
        worst
    }
}

/// ∫ x^i y^j over the reference triangle, i! j! / (i + j + 2)!.
pub fn monomial_integral(i: usize, j: usize) -> f64 {
    let mut v = 1.0;
    // i! j! / (i+j+2)! = 1 / ((i+j+2)(i+j+1) C(i+j, i))
    for k in 1..=j {
        v *= k as f64 / (i + k) as f64;
    }
    v / ((i + j + 2) as f64 * (i + j + 1) as f64)
}

/// Gauss-Legendre rule on [0, 1] with `n` points.
#[derive(Debug, Clone)]
pub struct LineRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

pub fn gauss_legendre(n: usize) -> LineRule {
    assert!(n > 0);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        // map [-1, 1] to [0, 1]
        nodes[n - 1 - i] = 0.5 * (x + 1.0);
        weights[n - 1 - i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    LineRule { nodes, weights }
}

/// P_n(x) and P_n'(x) by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

/// Rule on [0, 1] exact for polynomials of the given degree.
pub fn edge_rule(degree: usize) -> Result<&'static LineRule> {
    static RULES: OnceLock<Vec<LineRule>> = OnceLock::new();
    check_degree("edge", degree)?;
    let rules = RULES.get_or_init(|| {
        (0..=MAX_DEGREE)
            .map(|d| gauss_legendre((d + 1).div_ceil(2)))
            .collect()
    });
    Ok(&rules[degree])
}

fn check_degree(kind: &'static str, degree: usize) -> Result<()> {
    let supported = 1..=MAX_DEGREE;
    if kind == "edge" && degree == 0 {
        return Ok(());
    }
    if supported.contains(&degree) {
        Ok(())
    } else {
        Err(Error::UnsupportedDegree {
            kind,
            degree,
            supported,
        })
    }
}

/// The triangle rule of the given degree, built and verified once.
pub fn triangle_rule(degree: usize) -> Result<&'static TriangleRule> {
    static RULES: OnceLock<Vec<OnceLock<TriangleRule>>> = OnceLock::new();
    check_degree("triangle", degree)?;
    let slots = RULES.get_or_init(|| (0..=MAX_DEGREE).map(|_| OnceLock::new()).collect());
    let slot = &slots[degree];
    if let Some(rule) = slot.get() {
        return Ok(rule);
    }
    let rule = build_triangle_rule(degree);
    let err = rule.monomial_error(degree);
    if !(err <= 1e-12) {
        return Err(Error::QuadratureCheck(format!(
            "degree {degree} rule misses a monomial by relative {err:e}"
        )));
    }
    Ok(slot.get_or_init(|| rule))
}

fn symmetric_orbit(points: &mut Vec<[f64; 2]>, weights: &mut Vec<f64>, a: f64, w: f64) {
    // barycentric (a, a, 1-2a) and its permutations; reference (x, y) = (λ1, λ2)
    let b = 1.0 - 2.0 * a;
    for p in [[a, a], [b, a], [a, b]] {
        points.push(p);
        weights.push(0.5 * w);
    }
}

fn build_triangle_rule(degree: usize) -> TriangleRule {
    let mut points = Vec::new();
    let mut weights = Vec::new();
    match degree {
        1 => {
            points.push([1.0 / 3.0, 1.0 / 3.0]);
            weights.push(0.5);
        }
        2 => symmetric_orbit(&mut points, &mut weights, 1.0 / 6.0, 1.0 / 3.0),
        4 => {
            symmetric_orbit(&mut points, &mut weights, 0.445_948_490_915_964_886_32, 0.223_381_589_678_011_465_70);
            symmetric_orbit(&mut points, &mut weights, 0.091_576_213_509_770_743_46, 0.109_951_743_655_321_867_64);
        }
        5 => {
            let s = 15f64.sqrt();
            points.push([1.0 / 3.0, 1.0 / 3.0]);
            weights.push(0.5 * 0.225);
            symmetric_orbit(&mut points, &mut weights, (6.0 - s) / 21.0, (155.0 - s) / 1200.0);
            symmetric_orbit(&mut points, &mut weights, (6.0 + s) / 21.0, (155.0 + s) / 1200.0);
        }
        _ => {
            let ns = (degree + 1).div_ceil(2);
            let nt = (degree + 2).div_ceil(2);
            let gs = gauss_legendre(ns);
            let gt = gauss_legendre(nt);
            for (t, wt) in gt.nodes.iter().zip(&gt.weights) {
                for (s, ws) in gs.nodes.iter().zip(&gs.weights) {
                    points.push([s * (1.0 - t), *t]);
                    weights.push(ws * wt * (1.0 - t));
                }
            }
        }
    }
    TriangleRule {
        degree,
        points,
        weights,
    }
}

/// ∫_K f with a rule of the given degree.
pub fn integrate<F: FnMut([f64; 2]) -> f64>(geo: &ElementGeometry, degree: usize, mut f: F) -> Result<f64> {
    let rule = triangle_rule(degree)?;
    let mut sum = 0.0;
    for (bary, w) in rule.barycentric() {
        sum += w * f(geo.point(bary));
    }
    Ok(sum * geo.area)
}
