//! Discrete spaces of the four quadratic schemes.
//!
//! Every space is a subspace of the broken quadratics P₂(T). On each triangle
//! a function is represented by its six Lagrange nodal values (vertices
//! 0, 1, 2 followed by the midpoints of the edges opposite vertices 0, 1, 2);
//! a space contributes six local basis functions per triangle, each given by
//! its nodal values, and a local-to-global map. Homogeneous boundary
//! conditions of the Morley and C⁰IP spaces are imposed by dropping the
//! boundary degrees of freedom.

mod field;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::Matrix6;
use serde::{Deserialize, Serialize};

pub use field::{
    edge_points, edge_traces, integrate, jumps, quad_points, rule_for, Difference, Jet,
    PiecewiseFn, QuadPoint, Smooth, Zero,
};

use crate::error::{Error, Result};
use crate::mesh::{Point, Triangulation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Morley,
    Dg,
    C0ip,
    Wopsip,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Morley, Scheme::Dg, Scheme::C0ip, Scheme::Wopsip];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Morley => "morley",
            Scheme::Dg => "dg",
            Scheme::C0ip => "c0ip",
            Scheme::Wopsip => "wopsip",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "morley" => Ok(Scheme::Morley),
            "dg" => Ok(Scheme::Dg),
            "c0ip" | "ip" => Ok(Scheme::C0ip),
            "wopsip" => Ok(Scheme::Wopsip),
            _ => Err(Error::UnknownTag(s.into())),
        }
    }
}

/// Six quadratic Lagrange basis jets at barycentric point `l`.
pub fn p2_basis(gl: &[Point; 3], l: [f64; 3]) -> [Jet; 6] {
    let outer = |a: Point, b: Point| [a[0] * b[0], 0.5 * (a[0] * b[1] + a[1] * b[0]), a[1] * b[1]];
    let mut out = [Jet::ZERO; 6];
    for i in 0..3 {
        let g = gl[i];
        let o = outer(g, g);
        out[i] = Jet {
            v: l[i] * (2.0 * l[i] - 1.0),
            g: [(4.0 * l[i] - 1.0) * g[0], (4.0 * l[i] - 1.0) * g[1]],
            h: [4.0 * o[0], 4.0 * o[1], 4.0 * o[2]],
        };
        let (a, b) = ((i + 1) % 3, (i + 2) % 3);
        let o = outer(gl[a], gl[b]);
        out[3 + i] = Jet {
            v: 4.0 * l[a] * l[b],
            g: [
                4.0 * (l[a] * gl[b][0] + l[b] * gl[a][0]),
                4.0 * (l[a] * gl[b][1] + l[b] * gl[a][1]),
            ],
            h: [8.0 * o[0], 8.0 * o[1], 8.0 * o[2]],
        };
    }
    out
}

/// Barycentric coordinates of the six Lagrange nodes.
pub const P2_NODES: [[f64; 3]; 6] = [
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [0.0, 0.5, 0.5],
    [0.5, 0.0, 0.5],
    [0.5, 0.5, 0.0],
];

/// Combination `Σ c_a basis_a` of the Lagrange basis jets.
pub fn p2_combine(basis: &[Jet; 6], nodal: &[f64; 6]) -> Jet {
    let mut j = Jet::ZERO;
    for a in 0..6 {
        j.axpy(nodal[a], &basis[a]);
    }
    j
}

/// Mesh entity carrying a degree of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Entity {
    Vertex(usize),
    Edge(usize),
    Local { triangle: usize, node: usize },
}

#[derive(Debug)]
pub struct FeSpace {
    scheme: Scheme,
    mesh: Arc<Triangulation>,
    /// `None` marks a boundary dof removed by the homogeneous conditions.
    l2g: Vec<[Option<usize>; 6]>,
    dim: usize,
    dofs: Vec<Entity>,
    constrained: Vec<Entity>,
    vertex_dofs: Vec<Option<usize>>,
    edge_dofs: Vec<Option<usize>>,
    /// Morley only: nodal values of the six local basis functions.
    morley_basis: Vec<[[f64; 6]; 6]>,
}

/// Applies the six Morley functionals (vertex values, mean normal derivatives
/// along the global edge normals) to the Lagrange basis of triangle `k`.
fn morley_functionals(mesh: &Triangulation, k: usize) -> Matrix6<f64> {
    let gl = mesh.grad_lambda(k);
    let edges = mesh.triangle_edges(k);
    let mut d = Matrix6::zeros();
    for b in 0..6 {
        for i in 0..3 {
            d[(i, b)] = if b == i { 1.0 } else { 0.0 };
        }
    }
    for i in 0..3 {
        let n = mesh.edges()[edges[i]].normal;
        // ∇ of a quadratic is affine along the edge, so the mean is the midpoint value
        let basis = p2_basis(gl, P2_NODES[3 + i]);
        for b in 0..6 {
            d[(3 + i, b)] = basis[b].normal_derivative(n);
        }
    }
    d
}

impl FeSpace {
    pub fn new(mesh: Arc<Triangulation>, scheme: Scheme) -> Result<Self> {
        let nt = mesh.num_triangles();
        let mut l2g = vec![[None; 6]; nt];
        let mut dofs = Vec::new();
        let mut constrained = Vec::new();
        let mut morley_basis = Vec::new();
        let mut vdof = vec![None; mesh.num_vertices()];
        let mut edof = vec![None; mesh.num_edges()];
        match scheme {
            Scheme::Dg | Scheme::Wopsip => {
                for (k, map) in l2g.iter_mut().enumerate() {
                    for (a, slot) in map.iter_mut().enumerate() {
                        *slot = Some(6 * k + a);
                        dofs.push(Entity::Local { triangle: k, node: a });
                    }
                }
            }
            Scheme::Morley | Scheme::C0ip => {
                for v in 0..mesh.num_vertices() {
                    if mesh.is_boundary_vertex(v) {
                        constrained.push(Entity::Vertex(v));
                    } else {
                        vdof[v] = Some(dofs.len());
                        dofs.push(Entity::Vertex(v));
                    }
                }
                for (e, edge) in mesh.edges().iter().enumerate() {
                    if edge.is_boundary() {
                        constrained.push(Entity::Edge(e));
                    } else {
                        edof[e] = Some(dofs.len());
                        dofs.push(Entity::Edge(e));
                    }
                }
                for (k, map) in l2g.iter_mut().enumerate() {
                    let t = mesh.triangles()[k];
                    let te = mesh.triangle_edges(k);
                    for i in 0..3 {
                        map[i] = vdof[t[i]];
                        map[3 + i] = edof[te[i]];
                    }
                }
                if scheme == Scheme::Morley {
                    for k in 0..nt {
                        let inv = morley_functionals(&mesh, k)
                            .try_inverse()
                            .ok_or(Error::SingularLocalSystem(k))?;
                        let mut b = [[0.0; 6]; 6];
                        for (a, row) in b.iter_mut().enumerate() {
                            for (n, val) in row.iter_mut().enumerate() {
                                *val = inv[(n, a)];
                            }
                        }
                        morley_basis.push(b);
                    }
                }
            }
        }
        Ok(FeSpace {
            scheme,
            dim: dofs.len(),
            mesh,
            l2g,
            dofs,
            constrained,
            vertex_dofs: vdof,
            edge_dofs: edof,
            morley_basis,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn mesh(&self) -> &Arc<Triangulation> {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn local_dofs(&self, k: usize) -> &[Option<usize>; 6] {
        &self.l2g[k]
    }

    /// Entity carrying each global dof.
    pub fn dof_entities(&self) -> &[Entity] {
        &self.dofs
    }

    pub fn constrained(&self) -> &[Entity] {
        &self.constrained
    }

    /// Global dof attached to vertex `v` (Morley and C⁰IP, interior vertices).
    pub fn vertex_dof(&self, v: usize) -> Option<usize> {
        self.vertex_dofs.get(v).copied().flatten()
    }

    /// Global dof attached to edge `e` (Morley and C⁰IP, interior edges).
    pub fn edge_dof(&self, e: usize) -> Option<usize> {
        self.edge_dofs.get(e).copied().flatten()
    }

    /// Nodal values of local basis function `a` on triangle `k`.
    pub fn local_basis(&self, k: usize, a: usize) -> [f64; 6] {
        match self.scheme {
            Scheme::Morley => self.morley_basis[k][a],
            _ => {
                let mut e = [0.0; 6];
                e[a] = 1.0;
                e
            }
        }
    }

    /// Nodal values on triangle `k` of the function with coefficients `c`.
    pub fn local_nodal(&self, k: usize, c: &[f64]) -> [f64; 6] {
        let mut out = [0.0; 6];
        for (a, dof) in self.l2g[k].iter().enumerate() {
            if let Some(d) = dof {
                let coef = c[*d];
                if coef == 0.0 {
                    continue;
                }
                match self.scheme {
                    Scheme::Morley => {
                        for (o, b) in out.iter_mut().zip(&self.morley_basis[k][a]) {
                            *o += coef * b;
                        }
                    }
                    _ => out[a] += coef,
                }
            }
        }
        out
    }

    /// Coefficients of the Lagrange interpolant of `f` (dG/WOPSIP/C⁰IP; the
    /// boundary nodes of C⁰IP are dropped).
    pub fn interpolate_nodal(&self, f: impl Fn(Point) -> f64) -> Result<Vec<f64>> {
        if self.scheme == Scheme::Morley {
            return Err(Error::InvalidParameter(
                "Morley functions are interpolated through the Morley functionals".into(),
            ));
        }
        let mut c = vec![0.0; self.dim];
        for k in 0..self.mesh.num_triangles() {
            for (a, dof) in self.l2g[k].iter().enumerate() {
                if let Some(d) = dof {
                    c[*d] = f(self.mesh.from_barycentric(k, P2_NODES[a]));
                }
            }
        }
        Ok(c)
    }

    pub fn zero(self: &Arc<Self>) -> FeFunction {
        FeFunction::new(self.clone(), vec![0.0; self.dim]).expect("matching length")
    }
}

/// Build the space of `scheme` on `mesh`.
pub fn build_space(mesh: Arc<Triangulation>, scheme: Scheme) -> Result<Arc<FeSpace>> {
    Ok(Arc::new(FeSpace::new(mesh, scheme)?))
}

#[derive(Debug, Clone)]
pub struct FeFunction {
    space: Arc<FeSpace>,
    coeffs: Vec<f64>,
}

impl FeFunction {
    pub fn new(space: Arc<FeSpace>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                found: coeffs.len(),
            });
        }
        Ok(FeFunction { space, coeffs })
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    pub fn mesh(&self) -> &Triangulation {
        &self.space.mesh
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn nodal(&self, k: usize) -> [f64; 6] {
        self.space.local_nodal(k, &self.coeffs)
    }

    /// Exact evaluation on triangle `k`; `p` must lie in the closed triangle.
    pub fn evaluate(&self, k: usize, p: Point) -> Result<Jet> {
        let mesh = self.mesh();
        if k >= mesh.num_triangles() || !mesh.contains(k, p, 1e-10) {
            return Err(Error::PointOutside {
                triangle: k,
                x: p[0],
                y: p[1],
            });
        }
        Ok(self.jet(k, p))
    }

    /// (value jump, normal-derivative jump) at parameter `s` of edge `e`;
    /// boundary edges return the trace.
    pub fn trace_jump(&self, e: usize, s: f64) -> (f64, f64) {
        jumps(self.mesh(), self, e, s)
    }

    /// Plain text form: scheme tag, mesh digest, dimension, one coefficient
    /// per line.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "scheme {}\nmesh {}\ndim {}\n",
            self.space.scheme(),
            self.mesh().hash(),
            self.coeffs.len()
        );
        for c in &self.coeffs {
            s.push_str(&format!("{c:?}\n"));
        }
        s
    }

    pub fn from_text(space: Arc<FeSpace>, text: &str) -> Result<Self> {
        let bad = |m: String| Error::FunctionFile(m);
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(format!("missing `{key}`")))?;
            line.strip_prefix(key)
                .map(|v| v.trim().to_string())
                .ok_or_else(|| bad(format!("expected `{key}`, found `{line}`")))
        };
        let scheme: Scheme = field("scheme")?.parse()?;
        let hash = field("mesh")?;
        let dim: usize = field("dim")?.parse().map_err(|_| bad("bad dim".into()))?;
        if scheme != space.scheme() {
            return Err(bad(format!("scheme {scheme} does not match space {}", space.scheme())));
        }
        if hash != space.mesh().hash() {
            return Err(bad("mesh digest does not match".into()));
        }
        let coeffs: Vec<f64> = lines
            .map(|l| l.parse::<f64>().map_err(|e| bad(format!("bad coefficient `{l}`: {e}"))))
            .collect::<Result<_>>()?;
        if coeffs.len() != dim {
            return Err(bad(format!("expected {dim} coefficients, found {}", coeffs.len())));
        }
        FeFunction::new(space, coeffs)
    }
}

impl PiecewiseFn for FeFunction {
    fn jet(&self, k: usize, x: Point) -> Jet {
        let mesh = self.mesh();
        let l = mesh.barycentric(k, x);
        p2_combine(&p2_basis(mesh.grad_lambda(k), l), &self.nodal(k))
    }
}

/// Pair of functions on one space (the two von Kármán unknowns).
#[derive(Debug, Clone)]
pub struct VectorFeFunction {
    pub first: FeFunction,
    pub second: FeFunction,
}

impl VectorFeFunction {
    pub fn new(first: FeFunction, second: FeFunction) -> Result<Self> {
        if !Arc::ptr_eq(first.space(), second.space()) {
            return Err(Error::InvalidParameter(
                "vector components must share one space".into(),
            ));
        }
        Ok(VectorFeFunction { first, second })
    }

    /// Splits a stacked coefficient vector `[first; second]`.
    pub fn from_stacked(space: Arc<FeSpace>, x: &[f64]) -> Result<Self> {
        let n = space.dim();
        if x.len() != 2 * n {
            return Err(Error::DimensionMismatch {
                expected: 2 * n,
                found: x.len(),
            });
        }
        Ok(VectorFeFunction {
            first: FeFunction::new(space.clone(), x[..n].to_vec())?,
            second: FeFunction::new(space, x[n..].to_vec())?,
        })
    }

    pub fn stacked(&self) -> Vec<f64> {
        let mut v = self.first.coeffs().to_vec();
        v.extend_from_slice(self.second.coeffs());
        v
    }
}

/// Per-triangle integral mean of the Hessian, Π₀ D²_pw f.
pub fn project_pw_constant_hessian(mesh: &Triangulation, f: &dyn PiecewiseFn) -> Vec<[f64; 3]> {
    let (degree, split) = rule_for(&[f], 0);
    (0..mesh.num_triangles())
        .map(|k| {
            let mut m = [0.0; 3];
            for q in quad_points(mesh, k, degree, split) {
                let j = f.jet_in_sub(k, q.x, q.sub);
                for c in 0..3 {
                    m[c] += q.w * j.h[c];
                }
            }
            m.map(|v| v / mesh.area(k))
        })
        .collect()
}

/// ‖(1 − Π₀) D²_pw f‖_{L²(Ω)}.
pub fn hessian_oscillation(mesh: &Triangulation, f: &dyn PiecewiseFn) -> f64 {
    let means = project_pw_constant_hessian(mesh, f);
    let (degree, split) = rule_for(&[f, f], 0);
    integrate(mesh, degree, split, |k, q| {
        let j = f.jet_in_sub(k, q.x, q.sub);
        let d = [j.h[0] - means[k][0], j.h[1] - means[k][1], j.h[2] - means[k][2]];
        d[0] * d[0] + 2.0 * d[1] * d[1] + d[2] * d[2]
    })
    .max(0.0)
    .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_lshape, build_structured_square, refine_times, uniform_refine};

    fn square(n: usize) -> Arc<Triangulation> {
        Arc::new(build_structured_square(n).unwrap())
    }

    #[test]
    fn dimensions() {
        let m = square(2);
        assert_eq!(FeSpace::new(m.clone(), Scheme::Morley).unwrap().dim(), 9);
        assert_eq!(FeSpace::new(m.clone(), Scheme::Dg).unwrap().dim(), 48);
        assert_eq!(FeSpace::new(m.clone(), Scheme::C0ip).unwrap().dim(), 9);
        assert_eq!(FeSpace::new(m.clone(), Scheme::Wopsip).unwrap().dim(), 48);
        let l = Arc::new(refine_times(&build_lshape().unwrap(), 1));
        let s = FeSpace::new(l.clone(), Scheme::Morley).unwrap();
        assert_eq!(s.dim(), l.num_interior_vertices() + l.num_interior_edges());
        assert_eq!(s.constrained().len() + s.dim(), l.num_vertices() + l.num_edges());
    }

    #[test]
    fn quadratic_on_dg_has_constant_hessian() {
        let s = build_space(square(2), Scheme::Dg).unwrap();
        let f = FeFunction::new(s.clone(), s.interpolate_nodal(|p| p[0] * p[0]).unwrap()).unwrap();
        for k in 0..8 {
            let j = f.evaluate(k, s.mesh().centroid(k)).unwrap();
            assert!((j.h[0] - 2.0).abs() < 1e-12);
            assert!(j.h[1].abs() < 1e-12 && j.h[2].abs() < 1e-12);
        }
        let z = s.zero();
        assert_eq!(z.evaluate(3, s.mesh().centroid(3)).unwrap(), Jet::ZERO);
        assert!(matches!(z.evaluate(0, [0.0, 1.0]), Err(Error::PointOutside { .. })));
    }

    #[test]
    fn morley_duality() {
        let mesh = Arc::new(refine_times(&build_lshape().unwrap(), 1));
        let s = FeSpace::new(mesh.clone(), Scheme::Morley).unwrap();
        for k in 0..mesh.num_triangles() {
            let d = morley_functionals(&mesh, k);
            for a in 0..6 {
                let b = s.local_basis(k, a);
                for r in 0..6 {
                    let val: f64 = (0..6).map(|n| d[(r, n)] * b[n]).sum();
                    let expect = if r == a { 1.0 } else { 0.0 };
                    assert!((val - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn morley_edge_basis_mean_normal_derivative() {
        let mesh = square(2);
        let s = build_space(mesh.clone(), Scheme::Morley).unwrap();
        let e_dof = s
            .dof_entities()
            .iter()
            .position(|e| matches!(e, Entity::Edge(_)))
            .unwrap();
        let Entity::Edge(target) = s.dof_entities()[e_dof] else { unreachable!() };
        let mut c = vec![0.0; s.dim()];
        c[e_dof] = 1.0;
        let f = FeFunction::new(s.clone(), c).unwrap();
        for (e, edge) in mesh.edges().iter().enumerate() {
            for k in [Some(edge.plus), edge.minus].into_iter().flatten() {
                let mean: f64 = edge_points(4, 1.0)
                    .map(|(t, w)| w * f.jet(k, edge.point(&mesh, t)).normal_derivative(edge.normal))
                    .sum();
                let expect = if e == target { 1.0 } else { 0.0 };
                assert!((mean - expect).abs() < 1e-12, "edge {e} side {k}: {mean}");
            }
        }
    }

    #[test]
    fn c0ip_partition_of_unity() {
        let mesh = square(3);
        for k in 0..mesh.num_triangles() {
            for l in [[0.2, 0.3, 0.5], [1.0 / 3.0; 3], [0.9, 0.05, 0.05]] {
                let b = p2_basis(mesh.grad_lambda(k), l);
                let sum: f64 = b.iter().map(|j| j.v).sum();
                let gsum: f64 = b.iter().map(|j| j.g[0].abs() + j.g[1].abs()).sum();
                assert!((sum - 1.0).abs() < 1e-14);
                let g: [f64; 2] = [b.iter().map(|j| j.g[0]).sum(), b.iter().map(|j| j.g[1]).sum()];
                assert!(g[0].abs() < 1e-12 * gsum && g[1].abs() < 1e-12 * gsum);
            }
        }
    }

    #[test]
    fn jumps_of_conforming_and_patch_functions() {
        let mesh = square(2);
        let s = build_space(mesh.clone(), Scheme::Dg).unwrap();
        // globally C¹ (a polynomial) injected into dG coefficients
        let f = FeFunction::new(
            s.clone(),
            s.interpolate_nodal(|p| p[0] * p[1] + p[1] * p[1] - 3.0 * p[0]).unwrap(),
        )
        .unwrap();
        for (e, edge) in mesh.edges().iter().enumerate() {
            if edge.is_boundary() {
                continue;
            }
            for s in [0.0, 0.3, 1.0] {
                let (a, b) = f.trace_jump(e, s);
                assert!(a.abs() < 1e-13 && b.abs() < 1e-12);
            }
        }
        // indicator-like patch: 1 on K₊ of an interior edge, 0 elsewhere
        let e = mesh.edges().iter().position(|e| !e.is_boundary()).unwrap();
        let plus = mesh.edges()[e].plus;
        let mut c = vec![0.0; s.dim()];
        for a in 0..6 {
            c[6 * plus + a] = 1.0;
        }
        let f = FeFunction::new(s, c).unwrap();
        let (vj, nj) = f.trace_jump(e, 0.4);
        assert!((vj - 1.0).abs() < 1e-14 && nj.abs() < 1e-14);
    }

    #[test]
    fn morley_normal_derivative_means_continuous() {
        let mesh = square(3);
        let s = build_space(mesh.clone(), Scheme::Morley).unwrap();
        let c: Vec<f64> = (0..s.dim()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let f = FeFunction::new(s, c).unwrap();
        for (e, edge) in mesh.edges().iter().enumerate() {
            let mean: f64 = edge_points(3, 1.0).map(|(t, w)| w * jumps(&mesh, &f, e, t).1).sum();
            if !edge.is_boundary() {
                assert!(mean.abs() < 1e-11);
            } else {
                // zero boundary dofs: the mean normal derivative itself vanishes
                assert!(mean.abs() < 1e-11);
            }
        }
    }

    #[test]
    fn hessian_projection() {
        let mesh = square(2);
        let xx = Smooth::new(
            |p: Point| Jet {
                v: p[0] * p[0],
                g: [2.0 * p[0], 0.0],
                h: [2.0, 0.0, 0.0],
            },
            2,
        );
        for m in project_pw_constant_hessian(&mesh, &xx) {
            assert!((m[0] - 2.0).abs() < 1e-13 && m[1].abs() < 1e-14 && m[2].abs() < 1e-14);
        }
        assert!(hessian_oscillation(&mesh, &xx) < 1e-12);

        // x³ on the reference triangle: mean of 6x is 6 · 1/3
        let reference = Triangulation::new(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let cube = Smooth::new(
            |p: Point| Jet {
                v: p[0].powi(3),
                g: [3.0 * p[0] * p[0], 0.0],
                h: [6.0 * p[0], 0.0, 0.0],
            },
            3,
        );
        let m = project_pw_constant_hessian(&reference, &cube);
        assert!((m[0][0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn hessian_oscillation_rate_one() {
        use std::f64::consts::PI;
        let f = Smooth::new(
            |p: Point| {
                let (sx, cx, sy, cy) = ((PI * p[0]).sin(), (PI * p[0]).cos(), (PI * p[1]).sin(), (PI * p[1]).cos());
                Jet {
                    v: sx * sy,
                    g: [PI * cx * sy, PI * sx * cy],
                    h: [-PI * PI * sx * sy, PI * PI * cx * cy, -PI * PI * sx * sy],
                }
            },
            8,
        );
        let mut mesh = build_structured_square(4).unwrap();
        let mut prev = hessian_oscillation(&mesh, &f);
        for _ in 0..3 {
            mesh = uniform_refine(&mesh);
            let cur = hessian_oscillation(&mesh, &f);
            let rate = (prev / cur).log2();
            assert!((rate - 1.0).abs() < 0.05, "rate {rate}");
            prev = cur;
        }
    }

    #[test]
    fn function_file_roundtrip() {
        let s = build_space(square(2), Scheme::Morley).unwrap();
        let c: Vec<f64> = (0..s.dim()).map(|i| 0.1 * i as f64 - 1.0 / 3.0).collect();
        let f = FeFunction::new(s.clone(), c).unwrap();
        let back = FeFunction::from_text(s.clone(), &f.to_text()).unwrap();
        assert_eq!(back.coeffs(), f.coeffs());
        let other = build_space(square(3), Scheme::Morley).unwrap();
        assert!(FeFunction::from_text(other, &f.to_text()).is_err());
        let dg = build_space(square(2), Scheme::Dg).unwrap();
        assert!(FeFunction::from_text(dg, &f.to_text()).is_err());
    }
}
