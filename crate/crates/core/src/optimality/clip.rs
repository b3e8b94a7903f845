//! Sub-triangulation of an element along the level lines of a linear
//! function at the kinks of the control law.
//!
//! On every piece the composition `law ∘ p` is affine, so products of it with
//! P1 functions are integrated exactly by a degree-2 rule on the piece.

use super::{Branch, ControlLaw};
use crate::assembly::FeFunction;
use crate::mesh::{ElementGeometry, Mesh};
use crate::quadrature;

/// Pieces thinner than this fraction of the element are dropped.
const SLIVER: f64 = 1e-15;

/// A sub-triangle of an element, given by the barycentric coordinates (with
/// respect to the element) of its three corners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub bary: [[f64; 3]; 3],
    pub area: f64,
    pub branch: Branch,
}

impl Piece {
    /// Maps barycentric coordinates on the piece to those on the element.
    pub fn to_element(&self, mu: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (k, m) in mu.iter().enumerate() {
            for (o, b) in out.iter_mut().zip(&self.bary[k]) {
                *o += m * b;
            }
        }
        out
    }

    pub fn centroid(&self) -> [f64; 3] {
        self.to_element([1.0 / 3.0; 3])
    }
}

fn value(b: &[f64; 3], p: [f64; 3]) -> f64 {
    b[0] * p[0] + b[1] * p[1] + b[2] * p[2]
}

/// Splits a convex polygon by the line {p = level} into the parts below and
/// above it (points on the line go to both sides).
fn split(poly: &[[f64; 3]], p: [f64; 3], level: f64) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
    let d: Vec<f64> = poly.iter().map(|b| value(b, p) - level).collect();
    if d.iter().all(|&x| x >= 0.0) {
        return (Vec::new(), poly.to_vec());
    }
    if d.iter().all(|&x| x <= 0.0) {
        return (poly.to_vec(), Vec::new());
    }
    let mut below = Vec::with_capacity(poly.len() + 1);
    let mut above = Vec::with_capacity(poly.len() + 1);
    let n = poly.len();
    for k in 0..n {
        let (bk, dk) = (poly[k], d[k]);
        let (bn, dn) = (poly[(k + 1) % n], d[(k + 1) % n]);
        if dk <= 0.0 {
            below.push(bk);
        }
        if dk >= 0.0 {
            above.push(bk);
        }
        if (dk < 0.0 && dn > 0.0) || (dk > 0.0 && dn < 0.0) {
            let t = dk / (dk - dn);
            let x = [
                bk[0] + t * (bn[0] - bk[0]),
                bk[1] + t * (bn[1] - bk[1]),
                bk[2] + t * (bn[2] - bk[2]),
            ];
            below.push(x);
            above.push(x);
        }
    }
    (below, above)
}

/// Twice the signed area of a barycentric triangle, relative to the element.
fn relative_area(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    // determinant of the 2x2 system in (λ1, λ2)
    ((b[1] - a[1]) * (c[2] - a[2]) - (c[1] - a[1]) * (b[2] - a[2])).abs()
}

/// Pieces of an element with vertex values `p` on which the control law is
/// affine.
pub fn clip_element(area: f64, p: [f64; 3], law: &ControlLaw) -> Vec<Piece> {
    let identity = vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut polys = vec![identity];
    for level in law.breakpoints() {
        if !(level > lo && level < hi) {
            continue;
        }
        let mut next = Vec::with_capacity(polys.len() + 1);
        for poly in polys {
            let (below, above) = split(&poly, p, level);
            for part in [below, above] {
                if part.len() >= 3 {
                    next.push(part);
                }
            }
        }
        polys = next;
    }
    let mut pieces = Vec::new();
    for poly in polys {
        for k in 1..poly.len() - 1 {
            let (a, b, c) = (poly[0], poly[k], poly[k + 1]);
            let rel = relative_area(a, b, c);
            if rel <= SLIVER {
                continue;
            }
            let centroid = [
                (a[0] + b[0] + c[0]) / 3.0,
                (a[1] + b[1] + c[1]) / 3.0,
                (a[2] + b[2] + c[2]) / 3.0,
            ];
            pieces.push(Piece {
                bary: [a, b, c],
                area: rel * area,
                branch: law.branch(value(&centroid, p)),
            });
        }
    }
    pieces
}

/// ∫ over the pieces of `g(element barycentric coordinates)`, with a rule of
/// the given degree on every piece.
pub fn integrate_pieces<F: FnMut([f64; 3]) -> f64>(pieces: &[Piece], degree: usize, mut g: F) -> f64 {
    let rule = quadrature::triangle_rule(degree).expect("supported degree");
    let mut sum = 0.0;
    for piece in pieces {
        let mut local = 0.0;
        for (mu, w) in rule.barycentric() {
            local += w * g(piece.to_element(mu));
        }
        sum += local * piece.area;
    }
    sum
}

/// The auxiliary pair λ̃ = Π[−1,1](−p/β), ũ = Π[a,b](−(p + βλ̃)/α), stored as
/// the clipping pieces of every element; on each piece both are affine in p.
#[derive(Debug, Clone)]
pub struct TildePair {
    pub law: ControlLaw,
    /// Nodal values of p at all vertices.
    pub p: Vec<f64>,
    pub pieces: Vec<Vec<Piece>>,
}

impl TildePair {
    pub fn p_at(&self, mesh: &Mesh, t: usize, bary: [f64; 3]) -> f64 {
        let tri = mesh.triangles()[t];
        value(&bary, [self.p[tri[0]], self.p[tri[1]], self.p[tri[2]]])
    }

    /// (ũ, λ̃) at a point of element `t`.
    pub fn eval(&self, mesh: &Mesh, t: usize, bary: [f64; 3]) -> (f64, f64) {
        self.law.law(self.p_at(mesh, t, bary))
    }

    /// Affine coefficients (u0, u1, l0, l1) on a piece: ũ = u0 + u1 p,
    /// λ̃ = l0 + l1 p.
    pub fn affine_on(&self, piece: &Piece) -> (f64, f64, f64, f64) {
        self.law.affine(piece.branch)
    }
}

pub fn compute_tilde_pair(mesh: &Mesh, p: &FeFunction, law: &ControlLaw) -> TildePair {
    let values = p.vertex_values(mesh);
    let pieces = (0..mesh.num_triangles())
        .map(|t| {
            let tri = mesh.triangles()[t];
            clip_element(mesh.area(t), [values[tri[0]], values[tri[1]], values[tri[2]]], law)
        })
        .collect();
    TildePair {
        law: *law,
        p: values,
        pieces,
    }
}

/// Exact ∫_K law(p) φ_i and ∫_K ξ(p) φ_i φ_j on one element.
pub fn element_control_integrals(geo: &ElementGeometry, p: [f64; 3], law: &ControlLaw) -> ([f64; 3], [[f64; 3]; 3]) {
    let pieces = clip_element(geo.area, p, law);
    let rule = quadrature::triangle_rule(2).expect("degree 2");
    let mut load = [0.0; 3];
    let mut coupling = [[0.0; 3]; 3];
    for piece in &pieces {
        let slope = law.slope_of(piece.branch);
        for (mu, w) in rule.barycentric() {
            let b = piece.to_element(mu);
            let (u, _) = law.law(value(&b, p));
            let wa = w * piece.area;
            for i in 0..3 {
                load[i] += wa * u * b[i];
                if slope != 0.0 {
                    for j in 0..3 {
                        coupling[i][j] += wa * slope * b[i] * b[j];
                    }
                }
            }
        }
    }
    (load, coupling)
}

/// The same integrals by a plain rule of the given degree on the element.
pub fn element_control_integrals_quadrature(
    geo: &ElementGeometry,
    p: [f64; 3],
    law: &ControlLaw,
    degree: usize,
) -> ([f64; 3], [[f64; 3]; 3]) {
    let rule = quadrature::triangle_rule(degree).expect("supported degree");
    let mut load = [0.0; 3];
    let mut coupling = [[0.0; 3]; 3];
    for (b, w) in rule.barycentric() {
        let q = value(&b, p);
        let (u, _) = law.law(q);
        let slope = law.newton_slope(q);
        let wa = w * geo.area;
        for i in 0..3 {
            load[i] += wa * u * b[i];
            for j in 0..3 {
                coupling[i][j] += wa * slope * b[i] * b[j];
            }
        }
    }
    (load, coupling)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn law() -> ControlLaw {
        ControlLaw::new(0.1, 0.7, -3.0, 3.0).unwrap()
    }

    #[test]
    fn constant_p_gives_one_piece() {
        let pieces = clip_element(0.5, [0.0; 3], &law());
        assert_eq!(pieces.len(), 1);
        assert_eq!(pieces[0].branch, Branch::Zero);
        assert!((pieces[0].area - 0.5).abs() < 1e-15);
    }

    #[test]
    fn one_crossing_gives_two_regions() {
        // p runs from 0 to 1 across the element; only the level β = 0.7 is crossed
        let pieces = clip_element(1.0, [0.0, 1.0, 0.0], &law());
        let branches: std::collections::BTreeSet<_> = pieces.iter().map(|p| format!("{:?}", p.branch)).collect();
        assert_eq!(branches.len(), 2);
        let total: f64 = pieces.iter().map(|p| p.area).sum();
        assert!((total - 1.0).abs() < 1e-14);
        // ũ = 0 on the zero region
        for piece in pieces.iter().filter(|p| p.branch == Branch::Zero) {
            let b = piece.centroid();
            assert!(value(&b, [0.0, 1.0, 0.0]) <= 0.7);
        }
    }

    #[test]
    fn all_four_levels() {
        let l = law();
        // breakpoints −1.0, −0.7, 0.7, 1.0
        let pieces = clip_element(2.0, [-2.0, 2.0, 0.0], &l);
        let total: f64 = pieces.iter().map(|p| p.area).sum();
        assert!((total - 2.0).abs() < 1e-13);
        let kinds: std::collections::HashSet<_> = pieces.iter().map(|p| p.branch).collect();
        assert_eq!(kinds.len(), 5);
    }

    fn subdivide(tris: Vec<[[f64; 3]; 3]>) -> Vec<[[f64; 3]; 3]> {
        let mid = |x: [f64; 3], y: [f64; 3]| [0.5 * (x[0] + y[0]), 0.5 * (x[1] + y[1]), 0.5 * (x[2] + y[2])];
        let mut next = Vec::new();
        for [a, b, c] in tris {
            let (ab, bc, ca) = (mid(a, b), mid(b, c), mid(c, a));
            next.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
        }
        next
    }

    proptest! {
        #[test]
        fn clipping_is_additive_and_label_free(
            p in prop::array::uniform3(-2.5f64..2.5),
            rot in 0usize..3,
        ) {
            let l = law();
            let geo = ElementGeometry::new([[0.1, 0.0], [1.0, 0.3], [0.4, 0.8]]);
            let pieces = clip_element(geo.area, p, &l);
            let total: f64 = pieces.iter().map(|x| x.area).sum();
            prop_assert!((total - geo.area).abs() <= 1e-12 * geo.area);
            // on each piece the law is affine: the centroid branch holds at the corners
            for piece in &pieces {
                for c in piece.bary {
                    let q = value(&c, p);
                    let (u0, u1, _, _) = l.affine(piece.branch);
                    prop_assert!((l.law(q).0 - (u0 + u1 * q)).abs() < 1e-9);
                }
            }
            let whole = integrate_pieces(&pieces, 2, |b| l.law(value(&b, p)).0 * b[0]);
            // the four children of a midpoint subdivision, each clipped on its own
            let mut split_sum = 0.0;
            for child in subdivide(vec![[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]]) {
                let pc = [value(&child[0], p), value(&child[1], p), value(&child[2], p)];
                let sub = clip_element(geo.area / 4.0, pc, &l);
                split_sum += integrate_pieces(&sub, 2, |mu| {
                    // element barycentric coordinates of the child point
                    let b0: f64 = (0..3).map(|k| mu[k] * child[k][0]).sum();
                    l.law(value(&mu, pc)).0 * b0
                });
            }
            let scale = integrate_pieces(&pieces, 2, |b| l.law(value(&b, p)).0.abs()) + 1e-12;
            prop_assert!((whole - split_sum).abs() <= 1e-12 * scale, "{whole} vs {split_sum}");
            // relabeling the vertices leaves ∫ law(p) unchanged
            let pr = [p[rot % 3], p[(rot + 1) % 3], p[(rot + 2) % 3]];
            let relabeled = clip_element(geo.area, pr, &l);
            let a1 = integrate_pieces(&pieces, 2, |b| l.law(value(&b, p)).0);
            let a2 = integrate_pieces(&relabeled, 2, |b| l.law(value(&b, pr)).0);
            prop_assert!((a1 - a2).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn clipped_integral_matches_frozen_oracle() {
        // ∫ u over the reference triangle for p = (−1.93, 1.41, 0.22),
        // α = 0.1, β = 0.7, [a, b] = [−3, 3]; reference value from nested
        // adaptive Gauss-Kronrod quadrature split at the kinks
        let l = law();
        let p = [-1.93, 1.41, 0.22];
        let pieces = clip_element(0.5, p, &l);
        let exact = integrate_pieces(&pieces, 2, |b| l.law(value(&b, p)).0);
        assert!((exact - 0.124_027_575_101_898_62).abs() <= 1e-13, "{exact}");
        // a plain degree-19 rule on a 4^5 subdivision is within 1e-4 relative
        let sub: Vec<Piece> = (0..5)
            .fold(vec![[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]], |t, _| subdivide(t))
            .into_iter()
            .map(|bary| Piece { bary, area: 0.5 / 1024.0, branch: Branch::Zero })
            .collect();
        let composite = integrate_pieces(&sub, 19, |b| l.law(value(&b, p)).0);
        assert!((exact - composite).abs() <= 1e-4 * exact.abs());
    }
}
