//! Conforming triangulations of polygonal domains.
//!
//! Triangles are stored counterclockwise. Every edge keeps its vertex pair in
//! increasing order, the lower-indexed adjacent triangle `plus` (K₊), the
//! optional second triangle `minus` (K₋) and the unit normal pointing out of
//! K₊. Jumps across an edge are always taken as `trace(K₊) - trace(K₋)`; on
//! boundary edges the jump is the one-sided trace.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    /// Endpoints, sorted by vertex index.
    pub vertices: [usize; 2],
    /// Unit outer normal of the `plus` triangle.
    pub normal: Point,
    pub length: f64,
    pub midpoint: Point,
    pub plus: usize,
    pub minus: Option<usize>,
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.minus.is_none()
    }

    /// Point at parameter `s ∈ [0, 1]` measured from `vertices[0]`.
    pub fn point(&self, mesh: &Triangulation, s: f64) -> Point {
        let a = mesh.vertices[self.vertices[0]];
        let b = mesh.vertices[self.vertices[1]];
        [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
    }
}

#[derive(Debug, Clone)]
pub struct Triangulation {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    edges: Vec<Edge>,
    /// `triangle_edges[k][i]` is the edge opposite local vertex `i`.
    triangle_edges: Vec<[usize; 3]>,
    boundary_vertex: Vec<bool>,
    vertex_triangles: Vec<Vec<usize>>,
    areas: Vec<f64>,
    diameters: Vec<f64>,
    inradii: Vec<f64>,
    /// Constant gradients of the barycentric coordinates per triangle.
    grad_lambda: Vec<[Point; 3]>,
    parents: Option<Vec<usize>>,
}

fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl Triangulation {
    /// Builds and validates a triangulation from raw vertex and triangle lists.
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::InvalidMesh("no triangles".into()));
        }
        let nv = vertices.len();
        for (k, t) in triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= nv) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {k} references a vertex out of range"
                )));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::InvalidMesh(format!("triangle {k} is degenerate")));
            }
        }
        if vertices.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::InvalidMesh("non-finite vertex coordinate".into()));
        }

        let mut areas = Vec::with_capacity(triangles.len());
        let mut diameters = Vec::with_capacity(triangles.len());
        let mut inradii = Vec::with_capacity(triangles.len());
        let mut grad_lambda = Vec::with_capacity(triangles.len());
        for (k, t) in triangles.iter().enumerate() {
            let [a, b, c] = t.map(|v| vertices[v]);
            let area = signed_area(a, b, c);
            let scale = dist(a, b).max(dist(b, c)).max(dist(c, a));
            if !(area > 1e-14 * scale * scale) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {k} is not counterclockwise or has zero area"
                )));
            }
            let perimeter = dist(a, b) + dist(b, c) + dist(c, a);
            areas.push(area);
            diameters.push(scale);
            inradii.push(2.0 * area / perimeter);
            // ∇λ_i is the rotated opposite edge divided by twice the area.
            let g = |p: Point, q: Point| [(p[1] - q[1]) / (2.0 * area), (q[0] - p[0]) / (2.0 * area)];
            grad_lambda.push([g(b, c), g(c, a), g(a, b)]);
        }

        let mut edge_map: HashMap<[usize; 2], usize> = HashMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        let mut triangle_edges = vec![[0usize; 3]; triangles.len()];
        for (k, t) in triangles.iter().enumerate() {
            for i in 0..3 {
                let a = t[(i + 1) % 3];
                let b = t[(i + 2) % 3];
                let key = if a < b { [a, b] } else { [b, a] };
                match edge_map.get(&key) {
                    Some(&e) => {
                        let edge = &mut edges[e];
                        if edge.minus.is_some() {
                            return Err(Error::InvalidMesh(format!(
                                "edge {key:?} shared by more than two triangles"
                            )));
                        }
                        // The neighbour must traverse the edge in the opposite direction.
                        let plus = triangles[edge.plus];
                        let pi = (0..3).find(|&j| triangle_edges[edge.plus][j] == e).unwrap();
                        if plus[(pi + 1) % 3] != b || plus[(pi + 2) % 3] != a {
                            return Err(Error::InvalidMesh(format!(
                                "triangles {} and {k} overlap along edge {key:?}",
                                edge.plus
                            )));
                        }
                        edge.minus = Some(k);
                        triangle_edges[k][i] = e;
                    }
                    None => {
                        let pa = vertices[a];
                        let pb = vertices[b];
                        let length = dist(pa, pb);
                        // outer normal of k: (b - a) rotated clockwise for a CCW triangle
                        let normal = [(pb[1] - pa[1]) / length, -(pb[0] - pa[0]) / length];
                        let e = edges.len();
                        edges.push(Edge {
                            vertices: key,
                            normal,
                            length,
                            midpoint: [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])],
                            plus: k,
                            minus: None,
                        });
                        edge_map.insert(key, e);
                        triangle_edges[k][i] = e;
                    }
                }
            }
        }

        let mut boundary_vertex = vec![false; nv];
        for e in edges.iter().filter(|e| e.is_boundary()) {
            boundary_vertex[e.vertices[0]] = true;
            boundary_vertex[e.vertices[1]] = true;
        }
        let mut vertex_triangles = vec![Vec::new(); nv];
        for (k, t) in triangles.iter().enumerate() {
            for &v in t {
                vertex_triangles[v].push(k);
            }
        }
        if let Some(v) = vertex_triangles.iter().position(|ts| ts.is_empty()) {
            return Err(Error::InvalidMesh(format!("vertex {v} belongs to no triangle")));
        }

        // Hanging nodes show up as vertices in the relative interior of an
        // unmatched edge.
        for e in edges.iter().filter(|e| e.is_boundary()) {
            let a = vertices[e.vertices[0]];
            let b = vertices[e.vertices[1]];
            for (v, p) in vertices.iter().enumerate() {
                if !boundary_vertex[v] || e.vertices.contains(&v) {
                    continue;
                }
                let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
                let t = ((p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1]))
                    / (e.length * e.length);
                if cross.abs() <= 1e-12 * e.length * e.length && t > 1e-12 && t < 1.0 - 1e-12 {
                    return Err(Error::InvalidMesh(format!(
                        "hanging vertex {v} on edge {:?}",
                        e.vertices
                    )));
                }
            }
        }

        Ok(Triangulation {
            vertices,
            triangles,
            edges,
            triangle_edges,
            boundary_vertex,
            vertex_triangles,
            areas,
            diameters,
            inradii,
            grad_lambda,
            parents: None,
        })
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

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_interior_edges(&self) -> usize {
        self.edges.iter().filter(|e| !e.is_boundary()).count()
    }

    pub fn num_interior_vertices(&self) -> usize {
        self.boundary_vertex.iter().filter(|b| !**b).count()
    }

    pub fn triangle_edges(&self, k: usize) -> [usize; 3] {
        self.triangle_edges[k]
    }

    pub fn triangle_points(&self, k: usize) -> [Point; 3] {
        self.triangles[k].map(|v| self.vertices[v])
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_vertex[v]
    }

    /// Triangles sharing vertex `v`.
    pub fn vertex_patch(&self, v: usize) -> &[usize] {
        &self.vertex_triangles[v]
    }

    pub fn area(&self, k: usize) -> f64 {
        self.areas[k]
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    pub fn diameter(&self, k: usize) -> f64 {
        self.diameters[k]
    }

    pub fn h_max(&self) -> f64 {
        self.diameters.iter().cloned().fold(0.0, f64::max)
    }

    /// max over triangles of diameter / inradius.
    pub fn shape_regularity(&self) -> f64 {
        self.diameters
            .iter()
            .zip(&self.inradii)
            .map(|(h, r)| h / r)
            .fold(0.0, f64::max)
    }

    pub fn grad_lambda(&self, k: usize) -> &[Point; 3] {
        &self.grad_lambda[k]
    }

    pub fn centroid(&self, k: usize) -> Point {
        let [a, b, c] = self.triangle_points(k);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Barycentric coordinates of `x` with respect to triangle `k`.
    pub fn barycentric(&self, k: usize, x: Point) -> [f64; 3] {
        let a = self.vertices[self.triangles[k][0]];
        let g = &self.grad_lambda[k];
        let d = [x[0] - a[0], x[1] - a[1]];
        let l1 = g[1][0] * d[0] + g[1][1] * d[1];
        let l2 = g[2][0] * d[0] + g[2][1] * d[1];
        [1.0 - l1 - l2, l1, l2]
    }

    pub fn from_barycentric(&self, k: usize, l: [f64; 3]) -> Point {
        let [a, b, c] = self.triangle_points(k);
        [
            l[0] * a[0] + l[1] * b[0] + l[2] * c[0],
            l[0] * a[1] + l[1] * b[1] + l[2] * c[1],
        ]
    }

    pub fn contains(&self, k: usize, x: Point, tol: f64) -> bool {
        self.barycentric(k, x).iter().all(|&l| l >= -tol)
    }

    /// A triangle containing `x`, if any.
    pub fn locate(&self, x: Point) -> Option<usize> {
        (0..self.num_triangles()).find(|&k| self.contains(k, x, 1e-12))
    }

    /// `+1.0` when `k` is the `plus` triangle of edge `e`, `-1.0` otherwise.
    pub fn edge_sign(&self, k: usize, e: usize) -> f64 {
        if self.edges[e].plus == k {
            1.0
        } else {
            -1.0
        }
    }

    /// Parent triangle of each triangle when this mesh came from `uniform_refine`.
    pub fn parents(&self) -> Option<&[usize]> {
        self.parents.as_deref()
    }

    /// Stable digest of coordinates and connectivity (16 hex digits).
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.vertices {
            h.update(p[0].to_bits().to_le_bytes());
            h.update(p[1].to_bits().to_le_bytes());
        }
        for t in &self.triangles {
            for v in t {
                h.update((*v as u64).to_le_bytes());
            }
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{} {}", self.num_vertices(), self.num_triangles()).unwrap();
        for p in &self.vertices {
            writeln!(s, "{:?} {:?}", p[0], p[1]).unwrap();
        }
        for t in &self.triangles {
            writeln!(s, "{} {} {}", t[0], t[1], t[2]).unwrap();
        }
        s
    }

    /// Parses the plain text mesh format: a `<vertices> <triangles>` header,
    /// one `x y` line per vertex, then one `i j k` line per triangle. Blank
    /// lines and `#` comments are skipped.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let err = |line: usize, message: String| Error::MeshParse { line, message };

        let (hl, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
        let counts: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(hl, format!("bad header: {e}")))?;
        let [nv, nt] = counts[..] else {
            return Err(err(hl, "header must be `<vertices> <triangles>`".into()));
        };

        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| err(0, format!("expected {nv} vertex lines")))?;
            let xy: Vec<f64> = l
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| err(ln, format!("bad coordinate: {e}")))?;
            let [x, y] = xy[..] else {
                return Err(err(ln, "vertex line needs two coordinates".into()));
            };
            if !x.is_finite() || !y.is_finite() {
                return Err(err(ln, "non-finite coordinate".into()));
            }
            vertices.push([x, y]);
        }
        let mut triangles = Vec::with_capacity(nt);
        for k in 0..nt {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| err(0, format!("expected {nt} triangle lines")))?;
            let ids: Vec<usize> = l
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| err(ln, format!("bad vertex index: {e}")))?;
            let [a, b, c] = ids[..] else {
                return Err(err(ln, "triangle line needs three indices".into()));
            };
            if [a, b, c].iter().any(|&v| v >= nv) {
                return Err(err(ln, format!("triangle {k} references vertex out of range")));
            }
            let t = [a, b, c];
            let area = signed_area(vertices[a], vertices[b], vertices[c]);
            if !(area > 0.0) {
                return Err(err(ln, format!("triangle {k} is not counterclockwise")));
            }
            triangles.push(t);
        }
        if let Some((ln, _)) = lines.next() {
            return Err(err(ln, "trailing content".into()));
        }
        Triangulation::new(vertices, triangles)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Unit square split into `n × n` cells, each cut along its rising diagonal.
pub fn build_structured_square(n: usize) -> Result<Triangulation> {
    if n == 0 {
        return Err(Error::InvalidParameter("subdivision count must be positive".into()));
    }
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    Triangulation::new(vertices, triangles)
}

/// L-shaped domain (-1,1)² minus [0,1)×(-1,0], six triangles fanned from the
/// reentrant corner.
pub fn build_lshape() -> Result<Triangulation> {
    let vertices = vec![
        [0.0, 0.0],
        [1.0, 0.0],
        [1.0, 1.0],
        [0.0, 1.0],
        [-1.0, 1.0],
        [-1.0, 0.0],
        [-1.0, -1.0],
        [0.0, -1.0],
    ];
    let triangles = (1..7).map(|i| [0, i, i + 1]).collect();
    Triangulation::new(vertices, triangles)
}

/// Red refinement: every triangle is split into four congruent children
/// through its edge midpoints.
pub fn uniform_refine(mesh: &Triangulation) -> Triangulation {
    let nv = mesh.num_vertices();
    let mut vertices = mesh.vertices.clone();
    vertices.extend(mesh.edges.iter().map(|e| e.midpoint));
    let mut triangles = Vec::with_capacity(4 * mesh.num_triangles());
    let mut parents = Vec::with_capacity(4 * mesh.num_triangles());
    for (k, t) in mesh.triangles.iter().enumerate() {
        let te = mesh.triangle_edges[k];
        // midpoint opposite local vertex i
        let m = [nv + te[0], nv + te[1], nv + te[2]];
        triangles.push([t[0], m[2], m[1]]);
        triangles.push([m[2], t[1], m[0]]);
        triangles.push([m[1], m[0], t[2]]);
        triangles.push([m[0], m[1], m[2]]);
        parents.extend([k; 4]);
    }
    let mut fine = Triangulation::new(vertices, triangles)
        .expect("red refinement of a valid mesh is valid");
    fine.parents = Some(parents);
    fine
}

/// `mesh` refined `levels` times.
pub fn refine_times(mesh: &Triangulation, levels: usize) -> Triangulation {
    let mut m = mesh.clone();
    for _ in 0..levels {
        m = uniform_refine(&m);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn euler(m: &Triangulation) -> i64 {
        m.num_vertices() as i64 - m.num_edges() as i64 + m.num_triangles() as i64
    }

    #[test]
    fn square_counts() {
        let m = build_structured_square(1).unwrap();
        assert_eq!((m.num_vertices(), m.num_triangles(), m.num_edges()), (4, 2, 5));
        assert_eq!(m.num_interior_edges(), 1);

        let m = build_structured_square(2).unwrap();
        assert_eq!((m.num_vertices(), m.num_triangles(), m.num_edges()), (9, 8, 16));
        assert_eq!(m.num_interior_edges(), 8);
        assert!((m.h_max() - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(euler(&m), 1);
    }

    #[test]
    fn zero_subdivisions_rejected() {
        assert!(build_structured_square(0).is_err());
    }

    #[test]
    fn lshape() {
        let m = build_lshape().unwrap();
        assert_eq!((m.num_vertices(), m.num_triangles()), (8, 6));
        assert!((m.total_area() - 3.0).abs() < 1e-14);
        assert_eq!(euler(&m), 1);
        for e in m.edges() {
            // all vertices of the coarse fan sit on the boundary, but only the
            // outer polygon edges are boundary edges
            let on_outer = e.vertices[0] != 0;
            assert_eq!(e.is_boundary(), on_outer || e.vertices == [0, 1] || e.vertices == [0, 7]);
        }
        assert_eq!(m.edges().iter().filter(|e| e.is_boundary()).count(), 8);
    }

    #[test]
    fn refinement_halves_h_and_keeps_shape() {
        for base in [build_structured_square(1).unwrap(), build_lshape().unwrap()] {
            let fine = uniform_refine(&base);
            assert_eq!(fine.num_triangles(), 4 * base.num_triangles());
            assert!((base.h_max() - 2.0 * fine.h_max()).abs() < 1e-14);
            assert!((base.shape_regularity() - fine.shape_regularity()).abs() < 1e-12);
            assert!((base.total_area() - fine.total_area()).abs() < 1e-12 * base.total_area());
            assert_eq!(euler(&fine), 1);
            let parents = fine.parents().unwrap();
            for k in 0..fine.num_triangles() {
                let c = fine.centroid(k);
                assert!(base.contains(parents[k], c, 1e-12));
            }
        }
    }

    #[test]
    fn refined_square_matches_structured_vertex_set() {
        let fine = uniform_refine(&build_structured_square(1).unwrap());
        let direct = build_structured_square(2).unwrap();
        let key = |p: &Point| ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64);
        let mut a: Vec<_> = fine.vertices().iter().map(key).collect();
        let mut b: Vec<_> = direct.vertices().iter().map(key).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn normals_and_adjacency() {
        let m = refine_times(&build_lshape().unwrap(), 2);
        for (e, edge) in m.edges().iter().enumerate() {
            let [a, b] = edge.vertices.map(|v| m.vertices()[v]);
            assert!((edge.length - dist(a, b)).abs() < 1e-15);
            assert!(edge.vertices[0] < edge.vertices[1]);
            // outer normal of K₊ points away from its centroid
            let c = m.centroid(edge.plus);
            let d = [edge.midpoint[0] - c[0], edge.midpoint[1] - c[1]];
            assert!(d[0] * edge.normal[0] + d[1] * edge.normal[1] > 0.0);
            if let Some(minus) = edge.minus {
                assert!(edge.plus < minus);
                let c = m.centroid(minus);
                let d = [edge.midpoint[0] - c[0], edge.midpoint[1] - c[1]];
                assert!(d[0] * edge.normal[0] + d[1] * edge.normal[1] < 0.0);
                assert_eq!(m.edge_sign(minus, e), -1.0);
            }
        }
    }

    #[test]
    fn barycentric_roundtrip() {
        let m = build_structured_square(3).unwrap();
        for k in 0..m.num_triangles() {
            let l = [0.2, 0.3, 0.5];
            let x = m.from_barycentric(k, l);
            let back = m.barycentric(k, x);
            for i in 0..3 {
                assert!((back[i] - l[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn text_roundtrip_and_errors() {
        let m = build_lshape().unwrap();
        let back = Triangulation::from_text(&m.to_text()).unwrap();
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.triangles(), m.triangles());
        assert_eq!(back.hash(), m.hash());

        let bad = "3 1\n0 0\n1 0\n0 1\n0 2 1\n";
        match Triangulation::from_text(bad) {
            Err(Error::MeshParse { line: 5, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let bad = "3 1\n0 0\n1 zero\n0 1\n0 1 2\n";
        assert!(matches!(
            Triangulation::from_text(bad),
            Err(Error::MeshParse { line: 3, .. })
        ));
        let bad = "3 1\n0 0\n1 0\n0 1\n0 1 7\n";
        assert!(matches!(
            Triangulation::from_text(bad),
            Err(Error::MeshParse { line: 5, .. })
        ));
    }

    #[test]
    fn hanging_node_rejected() {
        // square split in two, one half split again at the diagonal midpoint
        let vertices = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]];
        let triangles = vec![[0, 1, 2], [0, 4, 3], [4, 2, 3]];
        assert!(matches!(
            Triangulation::new(vertices, triangles),
            Err(Error::InvalidMesh(_))
        ));
    }
}
