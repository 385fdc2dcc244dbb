//! Morley interpolation, the C¹ companion, the transfer into S²₀ and the
//! smoothers built from them.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, SMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fespace::{
    edge_points, p2_basis, p2_combine, quad_points, FeFunction, FeSpace, Jet, PiecewiseFn, Scheme,
    P2_NODES,
};
use crate::mesh::{Point, Triangulation};
use crate::sparse::{SparseMatrix, TripletBuilder};

/// Local vector length of a companion function on one triangle: 12 HCT dofs
/// followed by the 6 nodal coefficients of the bubble factor.
pub const C1_WIDTH: usize = 18;

const HCT_DOFS: usize = 12;

fn outer_sym(a: Point, b: Point) -> [f64; 3] {
    [a[0] * b[0], 0.5 * (a[0] * b[1] + a[1] * b[0]), a[1] * b[1]]
}

fn jet_product(a: &Jet, b: &Jet) -> Jet {
    let o = outer_sym(a.g, b.g);
    Jet {
        v: a.v * b.v,
        g: [a.v * b.g[0] + b.v * a.g[0], a.v * b.g[1] + b.v * a.g[1]],
        h: [
            a.v * b.h[0] + b.v * a.h[0] + 2.0 * o[0],
            a.v * b.h[1] + b.v * a.h[1] + 2.0 * o[1],
            a.v * b.h[2] + b.v * a.h[2] + 2.0 * o[2],
        ],
    }
}

/// Jets of the ten cubic monomials in ξ = (x − c)/h, differentiated in x.
fn cubic_monomials(xi: Point, h: f64) -> [Jet; 10] {
    let (x, y) = (xi[0], xi[1]);
    let (a, b) = (1.0 / h, 1.0 / (h * h));
    let m = |v: f64, gx: f64, gy: f64, hxx: f64, hxy: f64, hyy: f64| Jet {
        v,
        g: [a * gx, a * gy],
        h: [b * hxx, b * hxy, b * hyy],
    };
    [
        m(1.0, 0.0, 0.0, 0.0, 0.0, 0.0),
        m(x, 1.0, 0.0, 0.0, 0.0, 0.0),
        m(y, 0.0, 1.0, 0.0, 0.0, 0.0),
        m(x * x, 2.0 * x, 0.0, 2.0, 0.0, 0.0),
        m(x * y, y, x, 0.0, 1.0, 0.0),
        m(y * y, 0.0, 2.0 * y, 0.0, 0.0, 2.0),
        m(x * x * x, 3.0 * x * x, 0.0, 6.0 * x, 0.0, 0.0),
        m(x * x * y, 2.0 * x * y, x * x, 2.0 * y, 2.0 * x, 0.0),
        m(x * y * y, y * y, 2.0 * x * y, 0.0, 2.0 * y, 2.0 * x),
        m(y * y * y, 0.0, 3.0 * y * y, 0.0, 0.0, 6.0 * y),
    ]
}

/// Clough–Tocher subtriangle (centroid, P_{i+1}, P_{i+2}) containing the
/// point with barycentric coordinates `l`.
pub fn subtriangle(l: [f64; 3]) -> usize {
    let mut s = 0;
    for i in 1..3 {
        if l[i] < l[s] {
            s = i;
        }
    }
    s
}

/// Per-triangle data of the HCT element and the bubble correction.
#[derive(Debug, Clone)]
struct LocalCompanion {
    centroid: Point,
    h: f64,
    /// 30 × 12, row 10·s + m: coefficient of monomial m on subtriangle s.
    hct: SMatrix<f64, 30, 12>,
    /// Bubble nodal coefficients = from_nodal · (Morley nodal values) − from_hct · (HCT dofs).
    from_nodal: SMatrix<f64, 6, 6>,
    from_hct: SMatrix<f64, 6, 12>,
}

fn local_hct(mesh: &Triangulation, k: usize) -> Result<(Point, f64, SMatrix<f64, 30, 12>)> {
    let p = mesh.triangle_points(k);
    let c = mesh.centroid(k);
    let h = mesh.diameter(k);
    let xi = |x: Point| [(x[0] - c[0]) / h, (x[1] - c[1]) / h];
    let mono = |x: Point| cubic_monomials(xi(x), 1.0);
    let mut a = DMatrix::<f64>::zeros(21 + HCT_DOFS, 30);
    let mut row = 0;
    for j in 0..3 {
        let (sa, sb) = ((j + 1) % 3, (j + 2) % 3);
        let d = [p[j][0] - c[0], p[j][1] - c[1]];
        let n = [-d[1], d[0]];
        let at = |t: f64| [c[0] + t * d[0], c[1] + t * d[1]];
        for t in [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0] {
            let m = mono(at(t));
            for (i, mj) in m.iter().enumerate() {
                a[(row, 10 * sa + i)] = mj.v;
                a[(row, 10 * sb + i)] = -mj.v;
            }
            row += 1;
        }
        for t in [0.0, 0.5, 1.0] {
            let m = mono(at(t));
            for (i, mj) in m.iter().enumerate() {
                a[(row, 10 * sa + i)] = mj.normal_derivative(n);
                a[(row, 10 * sb + i)] = -mj.normal_derivative(n);
            }
            row += 1;
        }
    }
    for j in 0..3 {
        let s = (j + 1) % 3;
        let m = mono(p[j]);
        for (i, mj) in m.iter().enumerate() {
            a[(21 + j, 10 * s + i)] = mj.v;
            a[(24 + 2 * j, 10 * s + i)] = mj.g[0];
            a[(25 + 2 * j, 10 * s + i)] = mj.g[1];
        }
    }
    let edges = mesh.triangle_edges(k);
    for j in 0..3 {
        let nu = mesh.edges()[edges[j]].normal;
        let (p1, p2) = (p[(j + 1) % 3], p[(j + 2) % 3]);
        for (s, w) in edge_points(3, 1.0) {
            let x = [p1[0] + s * (p2[0] - p1[0]), p1[1] + s * (p2[1] - p1[1])];
            for (i, mj) in mono(x).iter().enumerate() {
                a[(30 + j, 10 * j + i)] += w * mj.normal_derivative(nu);
            }
        }
    }
    let qr = a.qr();
    let r = qr.r();
    let q = qr.q();
    let mut rhs = DMatrix::<f64>::zeros(21 + HCT_DOFS, HCT_DOFS);
    for d in 0..HCT_DOFS {
        rhs[(21 + d, d)] = 1.0;
    }
    let qtb = q.transpose() * rhs;
    let sol = r
        .solve_upper_triangular(&qtb)
        .ok_or(Error::SingularLocalSystem(k))?;
    if !sol.iter().all(|v| v.is_finite()) {
        return Err(Error::SingularLocalSystem(k));
    }
    Ok((c, h, SMatrix::<f64, 30, 12>::from_fn(|i, j| sol[(i, j)])))
}

impl LocalCompanion {
    fn hct_jets(&self, x: Point, sub: usize) -> [Jet; HCT_DOFS] {
        let xi = [(x[0] - self.centroid[0]) / self.h, (x[1] - self.centroid[1]) / self.h];
        let m = cubic_monomials(xi, self.h);
        let mut out = [Jet::ZERO; HCT_DOFS];
        for (d, o) in out.iter_mut().enumerate() {
            for (i, mi) in m.iter().enumerate() {
                o.axpy(self.hct[(10 * sub + i, d)], mi);
            }
        }
        out
    }
}

fn bubble_sq(gl: &[Point; 3], l: [f64; 3]) -> Jet {
    let b = l[0] * l[1] * l[2];
    let g = [
        l[1] * l[2] * gl[0][0] + l[0] * l[2] * gl[1][0] + l[0] * l[1] * gl[2][0],
        l[1] * l[2] * gl[0][1] + l[0] * l[2] * gl[1][1] + l[0] * l[1] * gl[2][1],
    ];
    let mut h = [0.0; 3];
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        let o = outer_sym(gl[j], gl[k]);
        for c in 0..3 {
            h[c] += 2.0 * l[i] * o[c];
        }
    }
    let bj = Jet { v: b, g, h };
    jet_product(&bj, &bj)
}

/// Companion operator data for one mesh: the local HCT and bubble maps and
/// the matrix sending Morley coefficients to per-triangle local vectors.
#[derive(Debug)]
pub struct CompanionData {
    morley: Arc<FeSpace>,
    local: Vec<LocalCompanion>,
    matrix: SparseMatrix,
}

impl CompanionData {
    pub fn new(morley: Arc<FeSpace>) -> Result<Self> {
        if morley.scheme() != Scheme::Morley {
            return Err(Error::InvalidParameter("companion needs a Morley space".into()));
        }
        let mesh = morley.mesh().clone();
        let nt = mesh.num_triangles();
        let mut local = Vec::with_capacity(nt);
        for k in 0..nt {
            let (centroid, h, hct) = local_hct(&mesh, k)?;
            let mut lc = LocalCompanion {
                centroid,
                h,
                hct,
                from_nodal: SMatrix::zeros(),
                from_hct: SMatrix::zeros(),
            };
            let gl = mesh.grad_lambda(k);
            let mut gram = SMatrix::<f64, 6, 6>::zeros();
            let mut mass = SMatrix::<f64, 6, 6>::zeros();
            for q in quad_points(&mesh, k, 14, false) {
                let l = p2_basis(gl, q.lambda);
                let b = bubble_sq(gl, q.lambda).v;
                for i in 0..6 {
                    for j in 0..6 {
                        gram[(i, j)] += q.w * b * l[i].v * l[j].v;
                        mass[(i, j)] += q.w * l[i].v * l[j].v;
                    }
                }
            }
            let mut w = SMatrix::<f64, 6, 12>::zeros();
            for q in quad_points(&mesh, k, 5, true) {
                let l = p2_basis(gl, q.lambda);
                let s = lc.hct_jets(q.x, q.sub);
                for i in 0..6 {
                    for d in 0..HCT_DOFS {
                        w[(i, d)] += q.w * l[i].v * s[d].v;
                    }
                }
            }
            let chol = gram.cholesky().ok_or(Error::SingularLocalSystem(k))?;
            lc.from_nodal = chol.solve(&mass);
            lc.from_hct = chol.solve(&w);
            local.push(lc);
        }

        // Morley coefficients → local HCT dofs
        let mut hct_rows: Vec<[Vec<(usize, f64)>; HCT_DOFS]> = Vec::with_capacity(nt);
        for k in 0..nt {
            let t = mesh.triangles()[k];
            let h = local[k].h;
            let mut rows: [Vec<(usize, f64)>; HCT_DOFS] = Default::default();
            for j in 0..3 {
                if let Some(d) = morley.vertex_dof(t[j]) {
                    rows[j].push((d, 1.0));
                    let patch = mesh.vertex_patch(t[j]);
                    let scale = h / patch.len() as f64;
                    for &kk in patch {
                        let jj = mesh.triangles()[kk].iter().position(|&v| v == t[j]).unwrap();
                        let basis = p2_basis(mesh.grad_lambda(kk), P2_NODES[jj]);
                        for (a, dof) in morley.local_dofs(kk).iter().enumerate() {
                            if let Some(dof) = dof {
                                let g = p2_combine(&basis, &morley.local_basis(kk, a)).g;
                                rows[3 + 2 * j].push((*dof, scale * g[0]));
                                rows[4 + 2 * j].push((*dof, scale * g[1]));
                            }
                        }
                    }
                }
            }
            let te = mesh.triangle_edges(k);
            for j in 0..3 {
                if let Some(d) = morley.edge_dof(te[j]) {
                    rows[9 + j].push((d, h));
                }
            }
            hct_rows.push(rows);
        }

        let mut b = TripletBuilder::new(C1_WIDTH * nt, morley.dim());
        for k in 0..nt {
            for (d, row) in hct_rows[k].iter().enumerate() {
                for &(c, v) in row {
                    b.push(C1_WIDTH * k + d, c, v);
                }
            }
            let lc = &local[k];
            for j in 0..6 {
                let r = C1_WIDTH * k + HCT_DOFS + j;
                for (a, dof) in morley.local_dofs(k).iter().enumerate() {
                    if let Some(dof) = dof {
                        let nb = morley.local_basis(k, a);
                        let v: f64 = (0..6).map(|n| lc.from_nodal[(j, n)] * nb[n]).sum();
                        b.push(r, *dof, v);
                    }
                }
                for (d, row) in hct_rows[k].iter().enumerate() {
                    for &(c, v) in row {
                        b.push(r, c, -lc.from_hct[(j, d)] * v);
                    }
                }
            }
        }
        Ok(CompanionData {
            morley,
            local,
            matrix: b.build(),
        })
    }

    pub fn morley_space(&self) -> &Arc<FeSpace> {
        &self.morley
    }

    pub fn mesh(&self) -> &Arc<Triangulation> {
        self.morley.mesh()
    }

    /// Morley coefficients → stacked per-triangle local vectors (width 18).
    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    /// Jets of the 18 local shape functions of triangle `k` at `x` in
    /// subtriangle `sub`.
    pub fn local_jets(&self, k: usize, x: Point, sub: usize) -> [Jet; C1_WIDTH] {
        let mesh = self.mesh();
        let lc = &self.local[k];
        let mut out = [Jet::ZERO; C1_WIDTH];
        out[..HCT_DOFS].copy_from_slice(&lc.hct_jets(x, sub));
        let gl = mesh.grad_lambda(k);
        let l = mesh.barycentric(k, x);
        let bsq = bubble_sq(gl, l);
        for (j, p) in p2_basis(gl, l).iter().enumerate() {
            out[HCT_DOFS + j] = jet_product(&bsq, p);
        }
        out
    }
}

/// Output of the companion operator: globally C¹, vanishing with its gradient
/// on the boundary.
#[derive(Debug, Clone)]
pub struct C1Function {
    data: Arc<CompanionData>,
    local: Vec<f64>,
}

impl C1Function {
    /// Wraps stacked local vectors (18 per triangle).
    pub fn from_local(data: Arc<CompanionData>, local: Vec<f64>) -> Result<Self> {
        let n = C1_WIDTH * data.mesh().num_triangles();
        if local.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: local.len(),
            });
        }
        Ok(C1Function { data, local })
    }

    /// HCT dofs of triangle `k`: values, scaled gradients and scaled
    /// edge-mean normal derivatives.
    pub fn hct_dofs(&self, k: usize) -> &[f64] {
        &self.local[C1_WIDTH * k..C1_WIDTH * k + HCT_DOFS]
    }

    /// Nodal values of the P₂ factor q_K of the bubble b_K² q_K.
    pub fn bubble(&self, k: usize) -> &[f64] {
        &self.local[C1_WIDTH * k + HCT_DOFS..C1_WIDTH * (k + 1)]
    }

    pub fn local(&self) -> &[f64] {
        &self.local
    }

    pub fn data(&self) -> &Arc<CompanionData> {
        &self.data
    }
}

impl PiecewiseFn for C1Function {
    fn jet(&self, k: usize, x: Point) -> Jet {
        let sub = subtriangle(self.data.mesh().barycentric(k, x));
        self.jet_in_sub(k, x, sub)
    }
    fn jet_in_sub(&self, k: usize, x: Point, sub: usize) -> Jet {
        let jets = self.data.local_jets(k, x, sub);
        let c = &self.local[C1_WIDTH * k..C1_WIDTH * (k + 1)];
        let mut j = Jet::ZERO;
        for (a, b) in c.iter().zip(&jets) {
            j.axpy(*a, b);
        }
        j
    }
    fn needs_split(&self) -> bool {
        true
    }
    fn degree(&self) -> usize {
        8
    }
}

/// Companion J v_M of a Morley function.
pub fn companion(data: &Arc<CompanionData>, v: &FeFunction) -> Result<C1Function> {
    if !Arc::ptr_eq(v.space(), &data.morley) {
        return Err(Error::InvalidParameter(
            "companion input must live on the companion's Morley space".into(),
        ));
    }
    C1Function::from_local(data.clone(), data.matrix.matvec(v.coeffs()))
}

/// Morley interpolation of any piecewise smooth function: averaged vertex
/// values and averaged edge-mean normal derivatives at interior entities,
/// zero at boundary ones.
pub fn morley_interpolate(f: &dyn PiecewiseFn, morley: &Arc<FeSpace>) -> Result<FeFunction> {
    if morley.scheme() != Scheme::Morley {
        return Err(Error::InvalidParameter("target must be a Morley space".into()));
    }
    let mesh = morley.mesh();
    let mut c = vec![0.0; morley.dim()];
    for v in 0..mesh.num_vertices() {
        if let Some(d) = morley.vertex_dof(v) {
            let patch = mesh.vertex_patch(v);
            let x = mesh.vertices()[v];
            c[d] = patch.iter().map(|&k| f.jet(k, x).v).sum::<f64>() / patch.len() as f64;
        }
    }
    for (e, edge) in mesh.edges().iter().enumerate() {
        if let (Some(d), Some(minus)) = (morley.edge_dof(e), edge.minus) {
            let mut mean = 0.0;
            for (s, w) in edge_points(10, 1.0) {
                let x = edge.point(mesh, s);
                mean += 0.5
                    * w
                    * (f.jet(edge.plus, x).normal_derivative(edge.normal)
                        + f.jet(minus, x).normal_derivative(edge.normal));
            }
            c[d] = mean;
        }
    }
    FeFunction::new(morley.clone(), c)
}

/// Matrix of I_M from `space` into the Morley space on the same mesh.
pub fn morley_interpolation_matrix(space: &FeSpace, morley: &FeSpace) -> Result<SparseMatrix> {
    if morley.scheme() != Scheme::Morley || !Arc::ptr_eq(space.mesh(), morley.mesh()) {
        return Err(Error::InvalidParameter(
            "Morley interpolation needs a Morley space on the same mesh".into(),
        ));
    }
    let mesh = space.mesh();
    let mut b = TripletBuilder::new(morley.dim(), space.dim());
    for k in 0..mesh.num_triangles() {
        let t = mesh.triangles()[k];
        let te = mesh.triangle_edges(k);
        let gl = mesh.grad_lambda(k);
        let mids: Vec<[Jet; 6]> = (0..3).map(|i| p2_basis(gl, P2_NODES[3 + i])).collect();
        for (a, dof) in space.local_dofs(k).iter().enumerate() {
            let Some(dof) = *dof else { continue };
            let nb = space.local_basis(k, a);
            for i in 0..3 {
                if let Some(m) = morley.vertex_dof(t[i]) {
                    b.push(m, dof, nb[i] / mesh.vertex_patch(t[i]).len() as f64);
                }
                if let Some(m) = morley.edge_dof(te[i]) {
                    let n = mesh.edges()[te[i]].normal;
                    b.push(m, dof, 0.5 * p2_combine(&mids[i], &nb).normal_derivative(n));
                }
            }
        }
    }
    Ok(b.build())
}

/// Transfer of a Morley function into S²₀: vertex values kept, interior
/// edge midpoints get the two-sided average, boundary nodes vanish.
pub fn transfer_ic(v: &FeFunction, c0ip: &Arc<FeSpace>) -> Result<FeFunction> {
    if v.space().scheme() != Scheme::Morley || c0ip.scheme() != Scheme::C0ip {
        return Err(Error::InvalidParameter(
            "transfer maps Morley functions into the C0IP space".into(),
        ));
    }
    if v.mesh().hash() != c0ip.mesh().hash() {
        return Err(Error::InvalidParameter("meshes differ".into()));
    }
    let mesh = c0ip.mesh();
    let mut c = vec![0.0; c0ip.dim()];
    for vtx in 0..mesh.num_vertices() {
        if let Some(d) = c0ip.vertex_dof(vtx) {
            let k = mesh.vertex_patch(vtx)[0];
            c[d] = v.jet(k, mesh.vertices()[vtx]).v;
        }
    }
    for (e, edge) in mesh.edges().iter().enumerate() {
        if let (Some(d), Some(minus)) = (c0ip.edge_dof(e), edge.minus) {
            c[d] = 0.5 * (v.jet(edge.plus, edge.midpoint).v + v.jet(minus, edge.midpoint).v);
        }
    }
    FeFunction::new(c0ip.clone(), c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SmootherTag {
    #[serde(rename = "id")]
    Id,
    #[serde(rename = "IM")]
    Im,
    #[serde(rename = "JIM")]
    Jim,
}

impl SmootherTag {
    pub const ALL: [SmootherTag; 3] = [SmootherTag::Id, SmootherTag::Im, SmootherTag::Jim];
}

impl fmt::Display for SmootherTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SmootherTag::Id => "id",
            SmootherTag::Im => "IM",
            SmootherTag::Jim => "JIM",
        })
    }
}

impl FromStr for SmootherTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "id" => Ok(SmootherTag::Id),
            "im" => Ok(SmootherTag::Im),
            "jim" => Ok(SmootherTag::Jim),
            _ => Err(Error::UnknownTag(s.into())),
        }
    }
}

/// Result of a smoother: a broken quadratic or a companion function.
#[derive(Debug, Clone)]
pub enum Smoothed {
    P2(FeFunction),
    C1(C1Function),
}

impl PiecewiseFn for Smoothed {
    fn jet(&self, k: usize, x: Point) -> Jet {
        match self {
            Smoothed::P2(f) => f.jet(k, x),
            Smoothed::C1(f) => f.jet(k, x),
        }
    }
    fn jet_in_sub(&self, k: usize, x: Point, sub: usize) -> Jet {
        match self {
            Smoothed::P2(f) => f.jet(k, x),
            Smoothed::C1(f) => f.jet_in_sub(k, x, sub),
        }
    }
    fn needs_split(&self) -> bool {
        matches!(self, Smoothed::C1(_))
    }
    fn degree(&self) -> usize {
        match self {
            Smoothed::P2(_) => 2,
            Smoothed::C1(f) => f.degree(),
        }
    }
}

/// All three smoothers on one space, as linear maps into per-triangle local
/// vectors: width 6 (Lagrange nodal values) for id and IM, width 18 for JIM.
#[derive(Debug)]
pub struct SmootherSet {
    space: Arc<FeSpace>,
    morley: Arc<FeSpace>,
    companion: Arc<CompanionData>,
    interpolation: SparseMatrix,
    morley_nodal: SparseMatrix,
    local: [SparseMatrix; 3],
}

fn nodal_matrix(space: &FeSpace) -> SparseMatrix {
    let nt = space.mesh().num_triangles();
    let mut b = TripletBuilder::new(6 * nt, space.dim());
    for k in 0..nt {
        for (a, dof) in space.local_dofs(k).iter().enumerate() {
            if let Some(dof) = dof {
                for (n, v) in space.local_basis(k, a).iter().enumerate() {
                    b.push(6 * k + n, *dof, *v);
                }
            }
        }
    }
    b.build()
}

impl SmootherSet {
    pub fn new(space: Arc<FeSpace>) -> Result<Self> {
        let morley = if space.scheme() == Scheme::Morley {
            space.clone()
        } else {
            Arc::new(FeSpace::new(space.mesh().clone(), Scheme::Morley)?)
        };
        Self::with_morley(space, morley)
    }

    /// Reuses an existing Morley space (and so its companion data) on the
    /// same mesh.
    pub fn with_morley(space: Arc<FeSpace>, morley: Arc<FeSpace>) -> Result<Self> {
        let companion = Arc::new(CompanionData::new(morley.clone())?);
        Self::with_companion(space, companion)
    }

    pub fn with_companion(space: Arc<FeSpace>, companion: Arc<CompanionData>) -> Result<Self> {
        let morley = companion.morley_space().clone();
        let interpolation = morley_interpolation_matrix(&space, &morley)?;
        let id = nodal_matrix(&space);
        let morley_nodal = nodal_matrix(&morley);
        let im = morley_nodal.matmul(&interpolation)?;
        let jim = companion.matrix().matmul(&interpolation)?;
        Ok(SmootherSet {
            space,
            morley,
            companion,
            interpolation,
            morley_nodal,
            local: [id, im, jim],
        })
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    pub fn morley(&self) -> &Arc<FeSpace> {
        &self.morley
    }

    pub fn companion(&self) -> &Arc<CompanionData> {
        &self.companion
    }

    /// I_M as a matrix from the space into the Morley space.
    pub fn interpolation(&self) -> &SparseMatrix {
        &self.interpolation
    }

    pub fn width(tag: SmootherTag) -> usize {
        match tag {
            SmootherTag::Jim => C1_WIDTH,
            _ => 6,
        }
    }

    /// Space coefficients → stacked local vectors of the smoothed function.
    pub fn local_matrix(&self, tag: SmootherTag) -> &SparseMatrix {
        &self.local[tag as usize]
    }

    /// `local_matrix(tag)` as `Q · P` with P = I_M, or `(Q, None)` when no
    /// interpolation is involved.
    pub fn factored(&self, tag: SmootherTag) -> (&SparseMatrix, Option<&SparseMatrix>) {
        let morley_space = self.space.scheme() == Scheme::Morley;
        match tag {
            SmootherTag::Id => (&self.local[0], None),
            _ if morley_space => (&self.local[tag as usize], None),
            SmootherTag::Im => (&self.morley_nodal, Some(&self.interpolation)),
            SmootherTag::Jim => (self.companion.matrix(), Some(&self.interpolation)),
        }
    }

    /// Jets of the local shape functions of `tag` on triangle `k`.
    pub fn local_jets(&self, tag: SmootherTag, k: usize, x: Point, lambda: [f64; 3], sub: usize) -> Vec<Jet> {
        match tag {
            SmootherTag::Jim => self.companion.local_jets(k, x, sub).to_vec(),
            _ => p2_basis(self.space.mesh().grad_lambda(k), lambda).to_vec(),
        }
    }

    pub fn apply(&self, tag: SmootherTag, v: &FeFunction) -> Result<Smoothed> {
        if !Arc::ptr_eq(v.space(), &self.space) {
            return Err(Error::InvalidParameter("function lives on another space".into()));
        }
        Ok(match tag {
            SmootherTag::Id => Smoothed::P2(v.clone()),
            SmootherTag::Im => Smoothed::P2(FeFunction::new(
                self.morley.clone(),
                self.interpolation.matvec(v.coeffs()),
            )?),
            SmootherTag::Jim => Smoothed::C1(C1Function::from_local(
                self.companion.clone(),
                self.local[2].matvec(v.coeffs()),
            )?),
        })
    }
}

/// One-off smoother application; builds the Morley space and companion data
/// on the fly.
pub fn apply_smoother(tag: SmootherTag, v: &FeFunction) -> Result<Smoothed> {
    if tag == SmootherTag::Id {
        return Ok(Smoothed::P2(v.clone()));
    }
    SmootherSet::new(v.space().clone())?.apply(tag, v)
}
