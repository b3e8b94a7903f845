//! Conforming triangulations of the unit square and the L-shaped domain.
//!
//! Refinement is Rivara's longest-edge bisection driven by the longest-edge
//! propagation path (LEPP): a marked triangle is bisected only after every
//! triangle along its LEPP has been split at a terminal edge, so the mesh is
//! conforming after every single bisection.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

const NO_TRIANGLE: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    /// (0,1)²
    UnitSquare,
    /// (−1,1)² ∖ [0,1)×(−1,0]
    LShape,
    /// A user-supplied triangulation; the boundary is whatever the mesh says.
    Custom,
}

impl Domain {
    pub fn area(self) -> Option<f64> {
        match self {
            Domain::UnitSquare => Some(1.0),
            Domain::LShape => Some(3.0),
            Domain::Custom => None,
        }
    }

    /// Whether `x` lies on the boundary of the domain (to `tol`).
    pub fn on_boundary(self, x: Point, tol: f64) -> bool {
        let near = |a: f64, b: f64| (a - b).abs() <= tol;
        match self {
            Domain::UnitSquare => {
                near(x[0], 0.0) || near(x[0], 1.0) || near(x[1], 0.0) || near(x[1], 1.0)
            }
            Domain::LShape => {
                near(x[0], -1.0)
                    || near(x[0], 1.0)
                    || near(x[1], -1.0)
                    || near(x[1], 1.0)
                    || (near(x[0], 0.0) && x[1] <= tol)
                    || (near(x[1], 0.0) && x[0] >= -tol)
            }
            Domain::Custom => true,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Domain::UnitSquare => "unit-square",
            Domain::LShape => "l-shape",
            Domain::Custom => "custom",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    /// Sorted vertex pair.
    pub vertices: [usize; 2],
    pub triangles: [usize; 2],
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.triangles[1] == NO_TRIANGLE
    }

    /// The incident triangles (one on the boundary, two otherwise).
    pub fn incident(&self) -> impl Iterator<Item = usize> + '_ {
        self.triangles.iter().copied().filter(|&t| t != NO_TRIANGLE)
    }
}

/// Affine geometry of one triangle.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    pub vertices: [Point; 3],
    pub area: f64,
    /// Gradients of the barycentric coordinates.
    pub grads: [[f64; 2]; 3],
    /// Longest edge length.
    pub diameter: f64,
}

impl ElementGeometry {
    pub fn new(vertices: [Point; 3]) -> Self {
        let [a, b, c] = vertices;
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let inv = 1.0 / det;
        let grads = [
            [(b[1] - c[1]) * inv, (c[0] - b[0]) * inv],
            [(c[1] - a[1]) * inv, (a[0] - c[0]) * inv],
            [(a[1] - b[1]) * inv, (b[0] - a[0]) * inv],
        ];
        let diameter = [dist(a, b), dist(b, c), dist(c, a)]
            .into_iter()
            .fold(0.0, f64::max);
        ElementGeometry {
            vertices,
            area: 0.5 * det,
            grads,
            diameter,
        }
    }

    pub fn point(&self, bary: [f64; 3]) -> Point {
        let [a, b, c] = self.vertices;
        [
            bary[0] * a[0] + bary[1] * b[0] + bary[2] * c[0],
            bary[0] * a[1] + bary[1] * b[1] + bary[2] * c[1],
        ]
    }

    pub fn centroid(&self) -> Point {
        self.point([1.0 / 3.0; 3])
    }

    /// Gradient of the linear function with the given vertex values.
    pub fn gradient(&self, values: [f64; 3]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for (v, grad) in values.iter().zip(&self.grads) {
            g[0] += v * grad[0];
            g[1] += v * grad[1];
        }
        g
    }
}

pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Debug, Clone)]
pub struct Mesh {
    domain: Domain,
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    edges: Vec<Edge>,
    /// `triangle_edges[t][i]` is the edge opposite local vertex `i`.
    triangle_edges: Vec<[usize; 3]>,
    boundary_vertex: Vec<bool>,
    interior_vertex_ids: Vec<usize>,
    dof_of_vertex: Vec<Option<usize>>,
    generation: usize,
}

/// Output of a refinement step: the new mesh plus, for every vertex created,
/// the endpoints of the edge it bisected (in creation order).
#[derive(Debug, Clone)]
pub struct Refinement {
    pub mesh: Mesh,
    pub parents: Vec<[usize; 2]>,
}

impl Refinement {
    /// Nodal interpolation of a vertex-indexed P1 function onto the refined
    /// mesh. Exact, since refinement only inserts edge midpoints.
    pub fn prolongate(&self, values: &[f64]) -> Vec<f64> {
        let mut out = values.to_vec();
        out.reserve(self.parents.len());
        for &[a, b] in &self.parents {
            let v = 0.5 * (out[a] + out[b]);
            out.push(v);
        }
        out
    }
}

impl Mesh {
    /// Builds the topology of a triangulation. Triangles must be
    /// counterclockwise with positive area, and no edge may be shared by more
    /// than two triangles.
    pub fn new(domain: Domain, vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        Self::with_generation(domain, vertices, triangles, 0)
    }

    fn with_generation(
        domain: Domain,
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        generation: usize,
    ) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::InvalidMesh("no triangles".into()));
        }
        let nv = vertices.len();
        let mut edge_index: HashMap<(usize, usize), usize> = HashMap::with_capacity(triangles.len() * 2);
        let mut edges: Vec<Edge> = Vec::with_capacity(triangles.len() * 2);
        let mut triangle_edges = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= nv) {
                return Err(Error::InvalidMesh(format!("triangle {t} references a missing vertex")));
            }
            let geo = ElementGeometry::new([vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]]);
            if !(geo.area > 0.0) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} has non-positive signed area {}",
                    geo.area
                )));
            }
            let mut local = [0; 3];
            for i in 0..3 {
                let key = sorted(tri[(i + 1) % 3], tri[(i + 2) % 3]);
                let id = *edge_index.entry(key).or_insert_with(|| {
                    edges.push(Edge {
                        vertices: [key.0, key.1],
                        triangles: [NO_TRIANGLE; 2],
                    });
                    edges.len() - 1
                });
                let e = &mut edges[id];
                if e.triangles[0] == NO_TRIANGLE {
                    e.triangles[0] = t;
                } else if e.triangles[1] == NO_TRIANGLE {
                    e.triangles[1] = t;
                } else {
                    return Err(Error::InvalidMesh(format!(
                        "edge ({}, {}) is shared by more than two triangles",
                        key.0, key.1
                    )));
                }
                local[i] = id;
            }
            triangle_edges.push(local);
        }

        let mut boundary_vertex = vec![false; nv];
        for e in edges.iter().filter(|e| e.is_boundary()) {
            boundary_vertex[e.vertices[0]] = true;
            boundary_vertex[e.vertices[1]] = true;
        }
        let mut used = vec![false; nv];
        for tri in &triangles {
            for &v in tri {
                used[v] = true;
            }
        }
        if let Some(v) = used.iter().position(|u| !u) {
            return Err(Error::InvalidMesh(format!("vertex {v} belongs to no triangle")));
        }
        let mut dof_of_vertex = vec![None; nv];
        let mut interior_vertex_ids = Vec::new();
        for v in 0..nv {
            if !boundary_vertex[v] {
                dof_of_vertex[v] = Some(interior_vertex_ids.len());
                interior_vertex_ids.push(v);
            }
        }
        Ok(Mesh {
            domain,
            vertices,
            triangles,
            edges,
            triangle_edges,
            boundary_vertex,
            interior_vertex_ids,
            dof_of_vertex,
            generation,
        })
    }

    /// The initial mesh of a domain: 0.5-sized square cells, each split along
    /// its lower-left to upper-right diagonal.
    pub fn initial(domain: Domain) -> Result<Self> {
        let (lo, cells) = match domain {
            Domain::UnitSquare => (0.0, 2usize),
            Domain::LShape => (-1.0, 4usize),
            Domain::Custom => {
                return Err(Error::InvalidParameter(
                    "a custom domain has no built-in initial mesh".into(),
                ))
            }
        };
        let h = 0.5;
        let inside_cell = |i: usize, j: usize| match domain {
            // cell (i, j) has its lower-left corner at (lo + i h, lo + j h)
            Domain::LShape => !(i >= 2 && j < 2),
            _ => true,
        };
        let mut id = vec![vec![None; cells + 1]; cells + 1];
        let mut vertices = Vec::new();
        for j in 0..=cells {
            for i in 0..=cells {
                let touches = (i.saturating_sub(1)..=i.min(cells - 1))
                    .any(|ci| (j.saturating_sub(1)..=j.min(cells - 1)).any(|cj| inside_cell(ci, cj)));
                if touches {
                    id[i][j] = Some(vertices.len());
                    vertices.push([lo + i as f64 * h, lo + j as f64 * h]);
                }
            }
        }
        let mut triangles = Vec::new();
        for j in 0..cells {
            for i in 0..cells {
                if !inside_cell(i, j) {
                    continue;
                }
                let v00 = id[i][j].unwrap();
                let v10 = id[i + 1][j].unwrap();
                let v01 = id[i][j + 1].unwrap();
                let v11 = id[i + 1][j + 1].unwrap();
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }
        Mesh::new(domain, vertices, triangles)
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn triangle_edges(&self, t: usize) -> [usize; 3] {
        self.triangle_edges[t]
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_vertex[v]
    }

    pub fn interior_vertex_ids(&self) -> &[usize] {
        &self.interior_vertex_ids
    }

    /// Dimension of the P1 space with homogeneous Dirichlet conditions.
    pub fn num_interior_vertices(&self) -> usize {
        self.interior_vertex_ids.len()
    }

    pub fn dof_of_vertex(&self, v: usize) -> Option<usize> {
        self.dof_of_vertex[v]
    }

    pub fn geometry(&self, t: usize) -> ElementGeometry {
        let [a, b, c] = self.triangles[t];
        ElementGeometry::new([self.vertices[a], self.vertices[b], self.vertices[c]])
    }

    pub fn area(&self, t: usize) -> f64 {
        self.geometry(t).area
    }

    pub fn diameter(&self, t: usize) -> f64 {
        self.geometry(t).diameter
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_triangles()).map(|t| self.area(t)).sum()
    }

    pub fn h_max(&self) -> f64 {
        (0..self.num_triangles()).map(|t| self.diameter(t)).fold(0.0, f64::max)
    }

    pub fn h_min(&self) -> f64 {
        (0..self.num_triangles())
            .map(|t| self.diameter(t))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let [a, b] = self.edges[e].vertices;
        dist(self.vertices[a], self.vertices[b])
    }

    /// Smallest interior angle over all triangles, in radians.
    pub fn min_angle(&self) -> f64 {
        self.triangles
            .iter()
            .map(|tri| {
                let p = [self.vertices[tri[0]], self.vertices[tri[1]], self.vertices[tri[2]]];
                (0..3)
                    .map(|i| {
                        let a = p[i];
                        let b = p[(i + 1) % 3];
                        let c = p[(i + 2) % 3];
                        let u = [b[0] - a[0], b[1] - a[1]];
                        let v = [c[0] - a[0], c[1] - a[1]];
                        let cross = u[0] * v[1] - u[1] * v[0];
                        let dot = u[0] * v[0] + u[1] * v[1];
                        cross.abs().atan2(dot)
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Checks the structural invariants: positive areas, every interior edge
    /// shared by exactly two triangles, no hanging nodes, boundary edges on
    /// the declared boundary.
    pub fn check_conformity(&self) -> Result<()> {
        for t in 0..self.num_triangles() {
            if !(self.area(t) > 0.0) {
                return Err(Error::InvalidMesh(format!("triangle {t} is degenerate")));
            }
        }
        for (i, e) in self.edges.iter().enumerate() {
            if e.is_boundary() {
                let [a, b] = e.vertices;
                let mid = [
                    0.5 * (self.vertices[a][0] + self.vertices[b][0]),
                    0.5 * (self.vertices[a][1] + self.vertices[b][1]),
                ];
                for x in [self.vertices[a], self.vertices[b], mid] {
                    if !self.domain.on_boundary(x, 1e-12) {
                        return Err(Error::InvalidMesh(format!(
                            "boundary edge {i} leaves the domain boundary at {x:?}"
                        )));
                    }
                }
            }
        }
        // Bisection only creates midpoints, so a hanging node would sit exactly
        // at the midpoint of some edge.
        let positions: std::collections::HashSet<(u64, u64)> = self
            .vertices
            .iter()
            .map(|x| (x[0].to_bits(), x[1].to_bits()))
            .collect();
        let mut on_edge = 0usize;
        for e in &self.edges {
            let [a, b] = e.vertices;
            let mid = [
                0.5 * (self.vertices[a][0] + self.vertices[b][0]),
                0.5 * (self.vertices[a][1] + self.vertices[b][1]),
            ];
            if positions.contains(&(mid[0].to_bits(), mid[1].to_bits())) {
                on_edge += 1;
            }
        }
        if on_edge > 0 {
            return Err(Error::InvalidMesh(format!("{on_edge} edges carry a hanging midpoint")));
        }
        Ok(())
    }

    /// Elements sharing an interior side with `k`, plus `k` itself.
    pub fn element_patch(&self, k: usize) -> Result<Vec<usize>> {
        if k >= self.num_triangles() {
            return Err(Error::InvalidElement {
                id: k,
                len: self.num_triangles(),
            });
        }
        let mut patch = vec![k];
        for &e in &self.triangle_edges[k] {
            let edge = &self.edges[e];
            if !edge.is_boundary() {
                patch.extend(edge.incident().filter(|&t| t != k));
            }
        }
        Ok(patch)
    }

    /// Bisects every marked triangle at least once, with LEPP closure.
    pub fn refine_bisection(&self, marked: &[usize]) -> Result<Mesh> {
        Ok(self.refine(marked)?.mesh)
    }

    pub fn refine(&self, marked: &[usize]) -> Result<Refinement> {
        let nt = self.num_triangles();
        if let Some(&bad) = marked.iter().find(|&&t| t >= nt) {
            return Err(Error::InvalidElement { id: bad, len: nt });
        }
        if marked.is_empty() {
            return Ok(Refinement {
                mesh: self.clone(),
                parents: Vec::new(),
            });
        }
        let mut work = Bisector::new(self);
        for &t in marked {
            work.refine_lepp(t);
        }
        let parents = work.parents;
        let triangles: Vec<[usize; 3]> = work
            .triangles
            .iter()
            .zip(&work.alive)
            .filter_map(|(t, &alive)| alive.then_some(*t))
            .collect();
        let mesh = Mesh::with_generation(self.domain, work.vertices, triangles, self.generation + 1)?;
        Ok(Refinement { mesh, parents })
    }

    /// Bisects every triangle once (one uniform sweep).
    pub fn refine_uniform(&self) -> Result<Refinement> {
        let all: Vec<usize> = (0..self.num_triangles()).collect();
        self.refine(&all)
    }

    /// Plain-text dump: header `V T E`, then `x y boundary_flag` per vertex,
    /// then `v0 v1 v2` per triangle.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {} {}", self.num_vertices(), self.num_triangles(), self.edges.len())?;
        for (v, x) in self.vertices.iter().enumerate() {
            writeln!(out, "{} {} {}", x[0], x[1], u8::from(self.boundary_vertex[v]))?;
        }
        for t in &self.triangles {
            writeln!(out, "{} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }
}

fn sorted(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Mutable working copy used during one refinement call.
struct Bisector {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    alive: Vec<bool>,
    adjacency: HashMap<(usize, usize), [usize; 2]>,
    midpoints: HashMap<(usize, usize), usize>,
    parents: Vec<[usize; 2]>,
}

impl Bisector {
    fn new(mesh: &Mesh) -> Self {
        let mut adjacency = HashMap::with_capacity(mesh.edges.len() * 2);
        for e in &mesh.edges {
            adjacency.insert((e.vertices[0], e.vertices[1]), e.triangles);
        }
        Bisector {
            vertices: mesh.vertices.clone(),
            triangles: mesh.triangles.clone(),
            alive: vec![true; mesh.num_triangles()],
            adjacency,
            midpoints: HashMap::new(),
            parents: Vec::new(),
        }
    }

    fn edge_len2(&self, key: (usize, usize)) -> f64 {
        let a = self.vertices[key.0];
        let b = self.vertices[key.1];
        let dx = b[0] - a[0];
        let dy = b[1] - a[1];
        dx * dx + dy * dy
    }

    /// Longest edge; ties go to the smallest sorted vertex pair.
    fn longest_edge(&self, t: usize) -> (usize, usize) {
        let tri = self.triangles[t];
        let mut best = sorted(tri[0], tri[1]);
        let mut best_len = self.edge_len2(best);
        for key in [sorted(tri[1], tri[2]), sorted(tri[2], tri[0])] {
            let len = self.edge_len2(key);
            if len > best_len || (len == best_len && key < best) {
                best = key;
                best_len = len;
            }
        }
        best
    }

    fn neighbor(&self, t: usize, key: (usize, usize)) -> Option<usize> {
        let [a, b] = self.adjacency[&key];
        let other = if a == t { b } else { a };
        (other != NO_TRIANGLE).then_some(other)
    }

    fn refine_lepp(&mut self, start: usize) {
        while self.alive[start] {
            let mut t = start;
            loop {
                let e = self.longest_edge(t);
                match self.neighbor(t, e) {
                    Some(n) if self.longest_edge(n) != e => t = n,
                    _ => {
                        self.bisect_edge(e);
                        break;
                    }
                }
            }
        }
    }

    fn detach(&mut self, key: (usize, usize), t: usize) {
        if let Some(slot) = self.adjacency.get_mut(&key) {
            if slot[0] == t {
                slot[0] = slot[1];
                slot[1] = NO_TRIANGLE;
            } else if slot[1] == t {
                slot[1] = NO_TRIANGLE;
            }
            if slot[0] == NO_TRIANGLE {
                self.adjacency.remove(&key);
            }
        }
    }

    fn attach(&mut self, key: (usize, usize), t: usize) {
        let slot = self.adjacency.entry(key).or_insert([NO_TRIANGLE; 2]);
        if slot[0] == NO_TRIANGLE {
            slot[0] = t;
        } else {
            debug_assert_eq!(slot[1], NO_TRIANGLE, "edge {key:?} over-subscribed");
            slot[1] = t;
        }
    }

    fn bisect_edge(&mut self, key: (usize, usize)) {
        let incident = self.adjacency[&key];
        let m = *self.midpoints.entry(key).or_insert_with(|| {
            let a = self.vertices[key.0];
            let b = self.vertices[key.1];
            self.vertices.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
            self.parents.push([key.0, key.1]);
            self.vertices.len() - 1
        });
        for t in incident.into_iter().filter(|&t| t != NO_TRIANGLE) {
            let tri = self.triangles[t];
            let apex = (0..3)
                .find(|&i| tri[i] != key.0 && tri[i] != key.1)
                .expect("edge not in triangle");
            let c = tri[apex];
            let v1 = tri[(apex + 1) % 3];
            let v2 = tri[(apex + 2) % 3];
            for (x, y) in [(c, v1), (v1, v2), (v2, c)] {
                self.detach(sorted(x, y), t);
            }
            self.alive[t] = false;
            let first = self.triangles.len();
            self.triangles.push([c, v1, m]);
            self.triangles.push([c, m, v2]);
            self.alive.push(true);
            self.alive.push(true);
            for (x, y) in [(c, v1), (v1, m), (m, c)] {
                self.attach(sorted(x, y), first);
            }
            for (x, y) in [(c, m), (m, v2), (v2, c)] {
                self.attach(sorted(x, y), first + 1);
            }
        }
    }
}
