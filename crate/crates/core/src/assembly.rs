//! P1 and P0 finite element spaces: local matrices, global assembly, lumped
//! weights, cell averages and the weighted quasi-interpolant.
//!
//! Dirichlet conditions are imposed by elimination: the `P1H10` space carries
//! one coefficient per interior vertex, ordered as
//! [`Mesh::interior_vertex_ids`].

use crate::error::{Error, Result};
use crate::linsolve::SparseMatrix;
use crate::mesh::{ElementGeometry, Mesh, Point};
use crate::quadrature;

/// Rule degree for integrands built from P1 products and smooth data.
pub const ASSEMBLY_DEGREE: usize = 4;
/// Rule degree for manufactured data and exact error integrals.
pub const HIGH_DEGREE: usize = 19;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    /// Continuous P1 vanishing on the boundary; one value per interior vertex.
    P1H10,
    /// Continuous P1; one value per vertex.
    P1Full,
    /// Piecewise constants; one value per triangle.
    P0,
}

impl Space {
    pub fn dim(self, mesh: &Mesh) -> usize {
        match self {
            Space::P1H10 => mesh.num_interior_vertices(),
            Space::P1Full => mesh.num_vertices(),
            Space::P0 => mesh.num_triangles(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeFunction {
    pub space: Space,
    pub coefficients: Vec<f64>,
}

impl FeFunction {
    pub fn new(mesh: &Mesh, space: Space, coefficients: Vec<f64>) -> Result<Self> {
        let dim = space.dim(mesh);
        if coefficients.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "{space:?} on this mesh has dimension {dim}, got {} coefficients",
                coefficients.len()
            )));
        }
        Ok(FeFunction { space, coefficients })
    }

    pub fn zero(mesh: &Mesh, space: Space) -> Self {
        FeFunction {
            space,
            coefficients: vec![0.0; space.dim(mesh)],
        }
    }

    /// Nodal values at all vertices (P1 spaces only); boundary values are
    /// zero for `P1H10`.
    pub fn vertex_values(&self, mesh: &Mesh) -> Vec<f64> {
        match self.space {
            Space::P1H10 => extend_by_zero(mesh, &self.coefficients),
            Space::P1Full => self.coefficients.clone(),
            Space::P0 => panic!("a P0 function has no vertex values"),
        }
    }

    /// Value on triangle `t` at the given barycentric coordinates.
    pub fn eval(&self, mesh: &Mesh, t: usize, bary: [f64; 3]) -> f64 {
        match self.space {
            Space::P0 => self.coefficients[t],
            Space::P1Full => {
                let tri = mesh.triangles()[t];
                (0..3).map(|i| bary[i] * self.coefficients[tri[i]]).sum()
            }
            Space::P1H10 => {
                let tri = mesh.triangles()[t];
                (0..3)
                    .map(|i| bary[i] * mesh.dof_of_vertex(tri[i]).map_or(0.0, |d| self.coefficients[d]))
                    .sum()
            }
        }
    }
}

/// Interior-dof vector to all-vertex vector with zero boundary values.
pub fn extend_by_zero(mesh: &Mesh, interior: &[f64]) -> Vec<f64> {
    let mut full = vec![0.0; mesh.num_vertices()];
    for (d, &v) in mesh.interior_vertex_ids().iter().enumerate() {
        full[v] = interior[d];
    }
    full
}

pub fn restrict_to_interior(mesh: &Mesh, full: &[f64]) -> Vec<f64> {
    mesh.interior_vertex_ids().iter().map(|&v| full[v]).collect()
}

/// ∫_K ∇φ_i·∇φ_j
pub fn local_stiffness(geo: &ElementGeometry) -> [[f64; 3]; 3] {
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let gi = geo.grads[i];
            let gj = geo.grads[j];
            k[i][j] = geo.area * (gi[0] * gj[0] + gi[1] * gj[1]);
        }
    }
    k
}

/// ∫_K φ_i φ_j = |K|/12 (1 + δ_ij)
pub fn local_mass(geo: &ElementGeometry) -> [[f64; 3]; 3] {
    let mut m = [[geo.area / 12.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = geo.area / 6.0;
    }
    m
}

fn index_in(mesh: &Mesh, space: Space, t: usize, local: usize) -> Option<usize> {
    match space {
        Space::P1H10 => mesh.dof_of_vertex(mesh.triangles()[t][local]),
        Space::P1Full => Some(mesh.triangles()[t][local]),
        Space::P0 => Some(t),
    }
}

/// Stiffness matrix on interior vertices.
pub fn assemble_stiffness(mesh: &Mesh) -> SparseMatrix {
    assemble_stiffness_in(mesh, Space::P1H10)
}

/// Stiffness matrix on all vertices (singular; constants in the kernel).
pub fn assemble_stiffness_full(mesh: &Mesh) -> SparseMatrix {
    assemble_stiffness_in(mesh, Space::P1Full)
}

fn assemble_stiffness_in(mesh: &Mesh, space: Space) -> SparseMatrix {
    let mut entries = Vec::with_capacity(9 * mesh.num_triangles());
    for t in 0..mesh.num_triangles() {
        let k = local_stiffness(&mesh.geometry(t));
        for i in 0..3 {
            let Some(r) = index_in(mesh, space, t, i) else { continue };
            for j in 0..3 {
                if let Some(c) = index_in(mesh, space, t, j) {
                    entries.push((r, c, k[i][j]));
                }
            }
        }
    }
    let n = space.dim(mesh);
    SparseMatrix::from_triplets(n, n, &entries)
}

/// M_ij = ∫ χ_i φ_j with χ from `rows` and φ from `cols`.
pub fn assemble_mass(mesh: &Mesh, rows: Space, cols: Space) -> SparseMatrix {
    let mut entries = Vec::with_capacity(9 * mesh.num_triangles());
    for t in 0..mesh.num_triangles() {
        let geo = mesh.geometry(t);
        match (rows, cols) {
            (Space::P0, Space::P0) => entries.push((t, t, geo.area)),
            (Space::P0, _) | (_, Space::P0) => {
                let p1 = if rows == Space::P0 { cols } else { rows };
                for i in 0..3 {
                    if let Some(d) = index_in(mesh, p1, t, i) {
                        let (r, c) = if rows == Space::P0 { (t, d) } else { (d, t) };
                        entries.push((r, c, geo.area / 3.0));
                    }
                }
            }
            _ => {
                let m = local_mass(&geo);
                for i in 0..3 {
                    let Some(r) = index_in(mesh, rows, t, i) else { continue };
                    for j in 0..3 {
                        if let Some(c) = index_in(mesh, cols, t, j) {
                            entries.push((r, c, m[i][j]));
                        }
                    }
                }
            }
        }
    }
    SparseMatrix::from_triplets(rows.dim(mesh), cols.dim(mesh), &entries)
}

/// ∫ g φ_v for every vertex, with a rule of the given degree.
pub fn assemble_load_full<G: Fn(Point) -> f64>(mesh: &Mesh, g: G, degree: usize) -> Result<Vec<f64>> {
    let rule = quadrature::triangle_rule(degree)?;
    let mut b = vec![0.0; mesh.num_vertices()];
    for t in 0..mesh.num_triangles() {
        let geo = mesh.geometry(t);
        let tri = mesh.triangles()[t];
        let mut local = [0.0; 3];
        for (bary, w) in rule.barycentric() {
            let v = g(geo.point(bary));
            if !v.is_finite() {
                return Err(Error::NonFiniteSample { element: t });
            }
            for i in 0..3 {
                local[i] += w * v * bary[i];
            }
        }
        for i in 0..3 {
            b[tri[i]] += local[i] * geo.area;
        }
    }
    Ok(b)
}

/// ∫ g φ_v for every interior vertex.
pub fn assemble_load<G: Fn(Point) -> f64>(mesh: &Mesh, g: G, degree: usize) -> Result<Vec<f64>> {
    Ok(restrict_to_interior(mesh, &assemble_load_full(mesh, g, degree)?))
}

/// ∫ φ_v = Σ_{K∋v} |K|/3 for every vertex.
pub fn lumped_weights(mesh: &Mesh) -> Vec<f64> {
    let mut w = vec![0.0; mesh.num_vertices()];
    for t in 0..mesh.num_triangles() {
        let a = mesh.area(t) / 3.0;
        for &v in &mesh.triangles()[t] {
            w[v] += a;
        }
    }
    w
}

/// Mean of a P1 function over each triangle, from all-vertex values.
pub fn cell_average_values(mesh: &Mesh, vertex_values: &[f64]) -> Vec<f64> {
    mesh.triangles()
        .iter()
        .map(|tri| (vertex_values[tri[0]] + vertex_values[tri[1]] + vertex_values[tri[2]]) / 3.0)
        .collect()
}

pub fn cell_average(mesh: &Mesh, p: &FeFunction) -> FeFunction {
    FeFunction {
        space: Space::P0,
        coefficients: cell_average_values(mesh, &p.vertex_values(mesh)),
    }
}

/// θ_v(w) = ∫ w φ_v / ∫ φ_v for a finite element function w (exact).
pub fn quasi_interpolate(mesh: &Mesh, w: &FeFunction) -> FeFunction {
    let weights = lumped_weights(mesh);
    let num = match w.space {
        Space::P0 => assemble_mass(mesh, Space::P1Full, Space::P0).mul_vec(&w.coefficients),
        _ => assemble_mass(mesh, Space::P1Full, Space::P1Full).mul_vec(&w.vertex_values(mesh)),
    };
    FeFunction {
        space: Space::P1Full,
        coefficients: num.iter().zip(&weights).map(|(n, d)| n / d).collect(),
    }
}

/// θ_v(g) for a plain function, with a rule of the given degree.
pub fn quasi_interpolate_fn<G: Fn(Point) -> f64>(mesh: &Mesh, g: G, degree: usize) -> Result<FeFunction> {
    let weights = lumped_weights(mesh);
    let num = assemble_load_full(mesh, g, degree)?;
    Ok(FeFunction {
        space: Space::P1Full,
        coefficients: num.iter().zip(&weights).map(|(n, d)| n / d).collect(),
    })
}

/// Nodal interpolant of g on interior vertices.
pub fn interpolate<G: Fn(Point) -> f64>(mesh: &Mesh, g: G) -> Vec<f64> {
    mesh.interior_vertex_ids().iter().map(|&v| g(mesh.vertices()[v])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linsolve::solve_spd;
    use crate::mesh::Domain;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn square(levels: usize) -> Mesh {
        let mut m = Mesh::initial(Domain::UnitSquare).unwrap();
        for _ in 0..levels {
            m = m.refine_uniform().unwrap().mesh;
        }
        m
    }

    #[test]
    fn local_stiffness_on_unit_right_triangle() {
        let geo = ElementGeometry::new([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let k = local_stiffness(&geo);
        let expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(k[i][j], expected[i][j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn local_mass_matches_quadrature() {
        let geo = ElementGeometry::new([[0.2, 0.1], [1.3, 0.4], [0.5, 1.7]]);
        let m = local_mass(&geo);
        for i in 0..3 {
            for j in 0..3 {
                let q = quadrature::integrate(&geo, 2, |x| {
                    let b = barycentric(&geo, x);
                    b[i] * b[j]
                })
                .unwrap();
                assert_abs_diff_eq!(m[i][j], q, epsilon = 1e-14);
            }
        }
    }

    fn barycentric(geo: &ElementGeometry, x: Point) -> [f64; 3] {
        let a = geo.vertices[0];
        let l1 = geo.grads[1][0] * (x[0] - a[0]) + geo.grads[1][1] * (x[1] - a[1]);
        let l2 = geo.grads[2][0] * (x[0] - a[0]) + geo.grads[2][1] * (x[1] - a[1]);
        [1.0 - l1 - l2, l1, l2]
    }

    #[test]
    fn full_stiffness_rows_sum_to_zero() {
        let m = square(3);
        let a = assemble_stiffness_full(&m);
        for i in 0..a.nrows() {
            assert!(a.row(i).map(|(_, v)| v).sum::<f64>().abs() < 1e-12);
        }
        let ai = assemble_stiffness(&m);
        assert!(ai.is_symmetric(0.0));
    }

    #[test]
    fn mass_matrices_sum_to_area() {
        let m = Mesh::initial(Domain::LShape).unwrap().refine(&[0, 3, 7]).unwrap().mesh;
        for (r, c) in [
            (Space::P1Full, Space::P1Full),
            (Space::P0, Space::P1Full),
            (Space::P1Full, Space::P0),
            (Space::P0, Space::P0),
        ] {
            let mm = assemble_mass(&m, r, c);
            let total: f64 = mm.triplets().iter().map(|e| e.2).sum();
            assert_abs_diff_eq!(total, 3.0, epsilon = 1e-13);
        }
        let p0p1 = assemble_mass(&m, Space::P0, Space::P1Full);
        let a = m.area(0);
        for (_, v) in p0p1.row(0) {
            assert_abs_diff_eq!(v, a / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn lumped_weights_are_mass_row_sums() {
        let m = square(2);
        let w = lumped_weights(&m);
        let mm = assemble_mass(&m, Space::P1Full, Space::P1Full);
        for (v, wv) in w.iter().enumerate() {
            let s: f64 = mm.row(v).map(|(_, x)| x).sum();
            assert_abs_diff_eq!(s, *wv, epsilon = 1e-13);
        }
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        // corner (1,0) of the initial square touches one triangle of area 1/8
        let m0 = square(0);
        assert_eq!(m0.vertices()[2], [1.0, 0.0]);
        assert_abs_diff_eq!(lumped_weights(&m0)[2], 1.0 / 24.0, epsilon = 1e-15);
        assert_abs_diff_eq!(lumped_weights(&m0)[0], 1.0 / 12.0, epsilon = 1e-15);
    }

    #[test]
    fn load_examples() {
        let m = square(2);
        let zero = assemble_load(&m, |_| 0.0, 4).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let one = assemble_load_full(&m, |_| 1.0, 4).unwrap();
        for (a, b) in one.iter().zip(lumped_weights(&m)) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        let err = assemble_load(&m, |x| if x[0] > 0.9 { f64::NAN } else { 1.0 }, 4);
        assert!(matches!(err, Err(Error::NonFiniteSample { .. })));
    }

    #[test]
    fn load_of_hat_function_is_mass_column() {
        let m = square(2);
        let w = m.interior_vertex_ids()[3];
        let mut hat = vec![0.0; m.num_vertices()];
        hat[w] = 1.0;
        let f = FeFunction::new(&m, Space::P1Full, hat).unwrap();
        // integrate the hat elementwise
        let rule = quadrature::triangle_rule(4).unwrap();
        let mut b = vec![0.0; m.num_vertices()];
        for t in 0..m.num_triangles() {
            let geo = m.geometry(t);
            let tri = m.triangles()[t];
            for (bary, wq) in rule.barycentric() {
                let v = f.eval(&m, t, bary);
                for i in 0..3 {
                    b[tri[i]] += wq * geo.area * v * bary[i];
                }
            }
        }
        let mm = assemble_mass(&m, Space::P1Full, Space::P1Full);
        for v in 0..m.num_vertices() {
            assert_abs_diff_eq!(b[v], mm.get(v, w), epsilon = 1e-15);
        }
    }

    #[test]
    fn cell_average_examples() {
        let geo_mesh = Mesh::new(Domain::Custom, vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]).unwrap();
        let p = FeFunction::new(&geo_mesh, Space::P1Full, vec![0.0, 3.0, 6.0]).unwrap();
        assert_abs_diff_eq!(cell_average(&geo_mesh, &p).coefficients[0], 3.0, epsilon = 1e-15);
        let m = square(1);
        let c = FeFunction::new(&m, Space::P1Full, vec![2.5; m.num_vertices()]).unwrap();
        assert!(cell_average(&m, &c).coefficients.iter().all(|&v| (v - 2.5).abs() < 1e-15));
    }

    #[test]
    fn quasi_interpolant_examples() {
        let m = square(2);
        let c = FeFunction::new(&m, Space::P1Full, vec![-1.5; m.num_vertices()]).unwrap();
        for v in quasi_interpolate(&m, &c).coefficients {
            assert_abs_diff_eq!(v, -1.5, epsilon = 1e-14);
        }
        // vertex (0.5, 0.5) of the uniformly refined square has valence 8 and
        // equal areas; ∫φ²/∫φ = (S/6)/(S/3) = 1/2 holds for any equal-area patch
        let centre = m.vertices().iter().position(|x| x == &[0.5, 0.5]).unwrap();
        let mut hat = vec![0.0; m.num_vertices()];
        hat[centre] = 1.0;
        let q = quasi_interpolate(&m, &FeFunction::new(&m, Space::P1Full, hat).unwrap());
        assert_abs_diff_eq!(q.coefficients[centre], 0.5, epsilon = 1e-14);
        let qf = quasi_interpolate_fn(&m, |x| 3.0 * x[0] + 1.0, 4).unwrap();
        let lin = FeFunction::new(&m, Space::P1Full, m.vertices().iter().map(|x| 3.0 * x[0] + 1.0).collect()).unwrap();
        let ql = quasi_interpolate(&m, &lin);
        for (a, b) in qf.coefficients.iter().zip(&ql.coefficients) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-13);
        }
    }

    #[test]
    fn galerkin_residual_within_tolerance() {
        let m = square(4);
        let a = assemble_stiffness(&m);
        let b = assemble_load(&m, |x| x[0] * x[1] + 1.0, 4).unwrap();
        let z = solve_spd(&a, &b, 1e-12).unwrap();
        let r: Vec<f64> = a.mul_vec(&z).iter().zip(&b).map(|(u, v)| u - v).collect();
        assert!(crate::linsolve::norm(&r) <= 1e-12 * crate::linsolve::norm(&b));
    }

    proptest! {
        #[test]
        fn quasi_interpolant_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0usize..50) {
            let m = square(2);
            let n = m.num_vertices();
            let w1: Vec<f64> = (0..n).map(|i| ((i * 31 + seed) % 17) as f64 - 8.0).collect();
            let w2: Vec<f64> = (0..n).map(|i| ((i * 7 + seed) % 11) as f64).collect();
            let mix: Vec<f64> = w1.iter().zip(&w2).map(|(x, y)| a * x + b * y).collect();
            let f = |v: Vec<f64>| quasi_interpolate(&m, &FeFunction::new(&m, Space::P1Full, v).unwrap()).coefficients;
            let (q1, q2, qm) = (f(w1), f(w2), f(mix));
            for i in 0..n {
                prop_assert!((qm[i] - (a * q1[i] + b * q2[i])).abs() < 1e-11);
            }
        }

        #[test]
        fn cell_average_invariant_under_relabeling(v in prop::array::uniform3(-10.0f64..10.0), rot in 0usize..3) {
            let pts = [[0.0, 0.0], [1.0, 0.2], [0.3, 0.9]];
            let tri = [rot % 3, (rot + 1) % 3, (rot + 2) % 3];
            let m = Mesh::new(Domain::Custom, pts.to_vec(), vec![tri]).unwrap();
            let p = FeFunction::new(&m, Space::P1Full, v.to_vec()).unwrap();
            let avg = cell_average(&m, &p).coefficients[0];
            prop_assert!((avg - (v[0] + v[1] + v[2]) / 3.0).abs() < 1e-14);
        }
    }
}
