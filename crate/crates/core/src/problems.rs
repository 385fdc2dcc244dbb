//! Biharmonic, stream-function Navier–Stokes and von Kármán problems:
//! sources, trilinear forms, residual and Jacobian assembly.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fespace::{quad_points, rule_for, FeSpace, Jet, PiecewiseFn, Scheme, Smooth};
use crate::forms::{scheme_form, scheme_gram, SchemeParams};
use crate::mesh::{Point, Triangulation};
use crate::solver::NewtonControls;
use crate::sparse::{SparseMatrix, TripletBuilder};
use crate::transfer::{subtriangle, C1Function, SmootherSet, SmootherTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Biharmonic,
    NavierStokes,
    VonKarman,
}

impl ProblemKind {
    /// Number of scalar unknown fields.
    pub fn components(self) -> usize {
        match self {
            ProblemKind::VonKarman => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProblemKind::Biharmonic => "biharmonic",
            ProblemKind::NavierStokes => "navier_stokes",
            ProblemKind::VonKarman => "von_karman",
        })
    }
}

impl FromStr for ProblemKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "biharmonic" => Ok(ProblemKind::Biharmonic),
            "navier_stokes" | "ns" => Ok(ProblemKind::NavierStokes),
            "von_karman" | "vk" => Ok(ProblemKind::VonKarman),
            _ => Err(Error::UnknownTag(s.into())),
        }
    }
}

/// [η, χ] = η_xx χ_yy + η_yy χ_xx − 2 η_xy χ_xy
pub fn vk_bracket(a: &Jet, b: &Jet) -> f64 {
    a.h[0] * b.h[2] + a.h[2] * b.h[0] - 2.0 * a.h[1] * b.h[1]
}

/// Δφ (χ_y ψ_x − χ_x ψ_y)
fn ns_density(phi: &Jet, chi: &Jet, psi: &Jet) -> f64 {
    phi.laplacian() * (chi.g[1] * psi.g[0] - chi.g[0] * psi.g[1])
}

/// Γ_pw(φ, χ, ψ) = Σ_K ∫_K Δφ (χ_y ψ_x − χ_x ψ_y).
pub fn ns_trilinear(mesh: &Triangulation, phi: &dyn PiecewiseFn, chi: &dyn PiecewiseFn, psi: &dyn PiecewiseFn) -> f64 {
    let (degree, split) = rule_for(&[phi, chi, psi], 0);
    let mut total = 0.0;
    for k in 0..mesh.num_triangles() {
        for q in quad_points(mesh, k, degree, split) {
            let (a, b, c) = (
                phi.jet_in_sub(k, q.x, q.sub),
                chi.jet_in_sub(k, q.x, q.sub),
                psi.jet_in_sub(k, q.x, q.sub),
            );
            total += q.w * ns_density(&a, &b, &c);
        }
    }
    total
}

/// γ_pw(η, χ, φ) = −½ Σ_K ∫_K [η, χ] φ.
pub fn vk_gamma(mesh: &Triangulation, eta: &dyn PiecewiseFn, chi: &dyn PiecewiseFn, phi: &dyn PiecewiseFn) -> f64 {
    let (degree, split) = rule_for(&[eta, chi, phi], 0);
    let mut total = 0.0;
    for k in 0..mesh.num_triangles() {
        for q in quad_points(mesh, k, degree, split) {
            let (a, b, c) = (
                eta.jet_in_sub(k, q.x, q.sub),
                chi.jet_in_sub(k, q.x, q.sub),
                phi.jet_in_sub(k, q.x, q.sub),
            );
            total += q.w * vk_bracket(&a, &b) * c.v;
        }
    }
    -0.5 * total
}

pub type VectorArg<'a> = (&'a dyn PiecewiseFn, &'a dyn PiecewiseFn);

/// Γ_pw(Ξ, Θ, Φ) = γ(ξ₁, θ₂, φ₁) + γ(ξ₂, θ₁, φ₁) − γ(ξ₁, θ₁, φ₂).
pub fn vk_vector_gamma(mesh: &Triangulation, xi: VectorArg, theta: VectorArg, phi: VectorArg) -> f64 {
    vk_gamma(mesh, xi.0, theta.1, phi.0) + vk_gamma(mesh, xi.1, theta.0, phi.0)
        - vk_gamma(mesh, xi.0, theta.0, phi.1)
}

/// One-dimensional profiles with derivatives through order four.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Profile {
    /// sin²(πt)
    SinSq,
    /// t²(1 − t)²
    Quartic,
    /// t²(1 − t²)²
    Sextic,
}

impl Profile {
    pub fn derivatives(self, t: f64) -> [f64; 5] {
        match self {
            Profile::SinSq => {
                let (s, c) = (2.0 * PI * t).sin_cos();
                [
                    0.5 * (1.0 - c),
                    PI * s,
                    2.0 * PI * PI * c,
                    -4.0 * PI.powi(3) * s,
                    -8.0 * PI.powi(4) * c,
                ]
            }
            Profile::Quartic => [
                t * t * (1.0 - t) * (1.0 - t),
                2.0 * t - 6.0 * t * t + 4.0 * t.powi(3),
                2.0 - 12.0 * t + 12.0 * t * t,
                -12.0 + 24.0 * t,
                24.0,
            ],
            Profile::Sextic => [
                t * t * (1.0 - t * t).powi(2),
                2.0 * t - 8.0 * t.powi(3) + 6.0 * t.powi(5),
                2.0 - 24.0 * t * t + 30.0 * t.powi(4),
                -48.0 * t + 120.0 * t.powi(3),
                -48.0 + 360.0 * t * t,
            ],
        }
    }
}

/// a · X(x) Y(y)
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Separable {
    pub scale: f64,
    pub x: Profile,
    pub y: Profile,
}

impl Separable {
    /// ∂ₓⁱ ∂ᵧʲ for i + j ≤ 4.
    pub fn d(&self, p: Point, i: usize, j: usize) -> f64 {
        self.scale * self.x.derivatives(p[0])[i] * self.y.derivatives(p[1])[j]
    }

    pub fn jet(&self, p: Point) -> Jet {
        let (x, y) = (self.x.derivatives(p[0]), self.y.derivatives(p[1]));
        let a = self.scale;
        Jet {
            v: a * x[0] * y[0],
            g: [a * x[1] * y[0], a * x[0] * y[1]],
            h: [a * x[2] * y[0], a * x[1] * y[1], a * x[0] * y[2]],
        }
    }

    /// ∇Δu
    pub fn grad_laplacian(&self, p: Point) -> [f64; 2] {
        [
            self.d(p, 3, 0) + self.d(p, 1, 2),
            self.d(p, 2, 1) + self.d(p, 0, 3),
        ]
    }

    pub fn bilaplacian(&self, p: Point) -> f64 {
        self.d(p, 4, 0) + 2.0 * self.d(p, 2, 2) + self.d(p, 0, 4)
    }

    pub fn as_fn(self) -> Smooth<impl Fn(Point) -> Jet + Clone> {
        Smooth::new(move |p| self.jet(p), 12)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Square,
    Lshape,
}

impl FromStr for Domain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "square" => Ok(Domain::Square),
            "lshape" | "l-shape" | "l_shape" => Ok(Domain::Lshape),
            _ => Err(Error::UnknownTag(s.into())),
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Square => "square",
            Domain::Lshape => "lshape",
        })
    }
}

/// Closed-form solution (u, and v for von Kármán) in H²₀ of its domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManufacturedSolution {
    pub name: &'static str,
    pub domain: Domain,
    pub u: Separable,
    pub v: Separable,
}

impl ManufacturedSolution {
    pub const CATALOG: [&'static str; 4] = ["sin2", "poly", "lshape", "zero"];

    pub fn by_name(name: &str) -> Result<Self> {
        let (name, domain, u) = match name {
            "sin2" => ("sin2", Domain::Square, Separable {
                scale: 1.0,
                x: Profile::SinSq,
                y: Profile::SinSq,
            }),
            "poly" => ("poly", Domain::Square, Separable {
                scale: 256.0,
                x: Profile::Quartic,
                y: Profile::Quartic,
            }),
            "lshape" => ("lshape", Domain::Lshape, Separable {
                scale: 10.0,
                x: Profile::Sextic,
                y: Profile::Sextic,
            }),
            "zero" => ("zero", Domain::Square, Separable {
                scale: 0.0,
                x: Profile::SinSq,
                y: Profile::SinSq,
            }),
            other => return Err(Error::UnknownTag(other.into())),
        };
        let v = Separable {
            scale: 0.5 * u.scale,
            ..u
        };
        Ok(ManufacturedSolution { name, domain, u, v })
    }

    /// Source densities of the strong form for `kind`.
    pub fn sources(&self, kind: ProblemKind) -> Vec<SourceFunctional> {
        let (u, v) = (self.u, self.v);
        match kind {
            ProblemKind::Biharmonic => vec![SourceFunctional::density(move |p| u.bilaplacian(p))],
            ProblemKind::NavierStokes => vec![SourceFunctional::density(move |p| {
                let j = u.jet(p);
                let gl = u.grad_laplacian(p);
                u.bilaplacian(p) + j.g[0] * gl[1] - j.g[1] * gl[0]
            })],
            ProblemKind::VonKarman => vec![
                SourceFunctional::density(move |p| u.bilaplacian(p) - vk_bracket(&u.jet(p), &v.jet(p))),
                SourceFunctional::density(move |p| {
                    v.bilaplacian(p) + 0.5 * vk_bracket(&u.jet(p), &u.jet(p))
                }),
            ],
        }
    }
}

type DensityFn = dyn Fn(Point) -> f64 + Send + Sync;

/// A bounded linear functional on C¹ functions with zero boundary trace.
#[derive(Clone)]
pub enum SourceFunctional {
    Zero,
    Density(Arc<DensityFn>),
    PointLoad { at: Point, magnitude: f64 },
}

impl fmt::Debug for SourceFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceFunctional::Zero => f.write_str("Zero"),
            SourceFunctional::Density(_) => f.write_str("Density(..)"),
            SourceFunctional::PointLoad { at, magnitude } => f
                .debug_struct("PointLoad")
                .field("at", at)
                .field("magnitude", magnitude)
                .finish(),
        }
    }
}

impl SourceFunctional {
    pub fn density(f: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Self {
        SourceFunctional::Density(Arc::new(f))
    }

    fn check(&self, mesh: &Triangulation) -> Result<()> {
        if let SourceFunctional::PointLoad { at, .. } = self {
            let inside = mesh.locate(*at).is_some();
            let on_boundary = mesh.edges().iter().any(|e| {
                if !e.is_boundary() {
                    return false;
                }
                let [a, b] = e.vertices.map(|v| mesh.vertices()[v]);
                let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
                let t = ((at[0] - a[0]) * dx + (at[1] - a[1]) * dy) / (dx * dx + dy * dy);
                let (px, py) = (a[0] + t.clamp(0.0, 1.0) * dx, a[1] + t.clamp(0.0, 1.0) * dy);
                ((at[0] - px).powi(2) + (at[1] - py).powi(2)).sqrt() < 1e-12
            });
            if !inside || on_boundary {
                return Err(Error::PointOutsideDomain { x: at[0], y: at[1] });
            }
        }
        Ok(())
    }

    /// Per-triangle load against the 18 local companion shape functions.
    fn local_load(&self, smoothers: &SmootherSet) -> Result<Vec<f64>> {
        let data = smoothers.companion();
        let mesh = data.mesh();
        let w = SmootherSet::width(SmootherTag::Jim);
        let mut out = vec![0.0; w * mesh.num_triangles()];
        match self {
            SourceFunctional::Zero => {}
            SourceFunctional::Density(f) => {
                for k in 0..mesh.num_triangles() {
                    for q in quad_points(mesh, k, 14, true) {
                        let fx = q.w * f(q.x);
                        for (s, j) in data.local_jets(k, q.x, q.sub).iter().enumerate() {
                            out[w * k + s] += fx * j.v;
                        }
                    }
                }
            }
            SourceFunctional::PointLoad { at, magnitude } => {
                self.check(mesh)?;
                let k = mesh.locate(*at).expect("checked");
                let sub = subtriangle(mesh.barycentric(k, *at));
                for (s, j) in data.local_jets(k, *at, sub).iter().enumerate() {
                    out[w * k + s] = magnitude * j.v;
                }
            }
        }
        Ok(out)
    }
}

/// F(w) for a companion output `w`.
pub fn apply_source(source: &SourceFunctional, w: &C1Function) -> Result<f64> {
    let mesh = w.data().mesh();
    match source {
        SourceFunctional::Zero => Ok(0.0),
        SourceFunctional::Density(f) => {
            let mut total = 0.0;
            for k in 0..mesh.num_triangles() {
                for q in quad_points(mesh, k, 14, true) {
                    total += q.w * f(q.x) * w.jet_in_sub(k, q.x, q.sub).v;
                }
            }
            Ok(total)
        }
        SourceFunctional::PointLoad { at, magnitude } => {
            source.check(mesh)?;
            let k = mesh.locate(*at).expect("checked");
            Ok(magnitude * w.jet(k, *at).v)
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub scheme: Scheme,
    pub params: SchemeParams,
    pub r: SmootherTag,
    pub s: SmootherTag,
    /// One source per component.
    pub sources: Vec<SourceFunctional>,
    pub newton: NewtonControls,
}

impl ProblemSpec {
    pub fn new(kind: ProblemKind, scheme: Scheme, sources: Vec<SourceFunctional>) -> Self {
        ProblemSpec {
            kind,
            scheme,
            params: SchemeParams::default(),
            r: SmootherTag::Jim,
            s: SmootherTag::Jim,
            sources,
            newton: NewtonControls::default(),
        }
    }

    pub fn with_smoothers(mut self, r: SmootherTag, s: SmootherTag) -> Self {
        self.r = r;
        self.s = s;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.newton.validate()?;
        if self.sources.len() != self.kind.components() {
            return Err(Error::InvalidParameter(format!(
                "{} needs {} source(s), got {}",
                self.kind,
                self.kind.components(),
                self.sources.len()
            )));
        }
        Ok(())
    }
}

/// A problem assembled on one mesh: scheme matrix, loads and smoothers.
#[derive(Debug)]
pub struct Discretization {
    spec: ProblemSpec,
    space: Arc<FeSpace>,
    smoothers: SmootherSet,
    a_h: SparseMatrix,
    gram: SparseMatrix,
    load: Vec<f64>,
    ls_t: SparseMatrix,
}

impl Discretization {
    pub fn new(spec: ProblemSpec, mesh: Arc<Triangulation>) -> Result<Self> {
        let space = Arc::new(FeSpace::new(mesh, spec.scheme)?);
        let smoothers = SmootherSet::new(space.clone())?;
        Self::with_smoothers(spec, smoothers)
    }

    pub fn with_smoothers(spec: ProblemSpec, smoothers: SmootherSet) -> Result<Self> {
        spec.validate()?;
        let space = smoothers.space().clone();
        if space.scheme() != spec.scheme {
            return Err(Error::InvalidParameter("space does not match the scheme".into()));
        }
        let a_h = scheme_form(&space, &spec.params)?;
        let gram = scheme_gram(&space, &spec.params)?;
        let ljim_t = smoothers.local_matrix(SmootherTag::Jim).transpose();
        let mut load = Vec::with_capacity(space.dim() * spec.kind.components());
        for src in &spec.sources {
            load.extend(ljim_t.matvec(&src.local_load(&smoothers)?));
        }
        let ls_t = smoothers.local_matrix(spec.s).transpose();
        Ok(Discretization {
            spec,
            space,
            smoothers,
            a_h,
            gram,
            load,
            ls_t,
        })
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    pub fn smoothers(&self) -> &SmootherSet {
        &self.smoothers
    }

    pub fn mesh(&self) -> &Arc<Triangulation> {
        self.space.mesh()
    }

    /// Total number of unknowns (both components for von Kármán).
    pub fn dim(&self) -> usize {
        self.space.dim() * self.spec.kind.components()
    }

    /// a_h on one component.
    pub fn scheme_matrix(&self) -> &SparseMatrix {
        &self.a_h
    }

    /// F(JI_M φ_i), stacked over components.
    pub fn load(&self) -> &[f64] {
        &self.load
    }

    fn block_diag(&self, m: &SparseMatrix) -> SparseMatrix {
        let c = self.spec.kind.components();
        if c == 1 {
            return m.clone();
        }
        let n = self.space.dim();
        let mut b = TripletBuilder::new(c * n, c * n);
        for blk in 0..c {
            for (i, j, v) in m.triplets() {
                b.push(blk * n + i, blk * n + j, v);
            }
        }
        b.build()
    }

    /// Linear part a_h, block diagonal over components.
    pub fn linear_matrix(&self) -> SparseMatrix {
        self.block_diag(&self.a_h)
    }

    /// Gram matrix of the scheme norm, block diagonal over components.
    pub fn gram(&self) -> SparseMatrix {
        self.block_diag(&self.gram)
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    fn quadrature(&self) -> (usize, bool) {
        if self.spec.r == SmootherTag::Jim || self.spec.s == SmootherTag::Jim {
            (14, true)
        } else {
            (4, false)
        }
    }

    /// Nonlinear local residuals and, optionally, local Jacobian blocks
    /// `[(block_row, block_col, matrix over local vectors)]`.
    fn nonlinear_local(&self, x: &[f64], with_jacobian: bool) -> (Vec<Vec<f64>>, Vec<(usize, usize, SparseMatrix)>) {
        let n = self.space.dim();
        let mesh = self.mesh();
        let nt = mesh.num_triangles();
        let (r, s) = (self.spec.r, self.spec.s);
        let (wr, ws) = (SmootherSet::width(r), SmootherSet::width(s));
        let lr = self.smoothers.local_matrix(r);
        let comps: Vec<Vec<f64>> = (0..self.spec.kind.components())
            .map(|c| lr.matvec(&x[c * n..(c + 1) * n]))
            .collect();
        let (degree, split) = self.quadrature();
        let mut res = vec![vec![0.0; ws * nt]; comps.len()];
        let nblocks = match self.spec.kind {
            ProblemKind::VonKarman => 3,
            _ => 1,
        };
        let mut blocks: Vec<TripletBuilder> = (0..nblocks).map(|_| TripletBuilder::new(ws * nt, wr * nt)).collect();
        let mut d = vec![vec![0.0; ws * wr]; nblocks];
        for k in 0..nt {
            d.iter_mut().for_each(|m| m.fill(0.0));
            for q in quad_points(mesh, k, degree, split) {
                let jr = self.smoothers.local_jets(r, k, q.x, q.lambda, q.sub);
                let js = if r == s {
                    jr.clone()
                } else {
                    self.smoothers.local_jets(s, k, q.x, q.lambda, q.sub)
                };
                let eval = |c: &[f64]| {
                    let mut j = Jet::ZERO;
                    for (a, b) in c[wr * k..wr * (k + 1)].iter().zip(&jr) {
                        j.axpy(*a, b);
                    }
                    j
                };
                match self.spec.kind {
                    ProblemKind::Biharmonic => {}
                    ProblemKind::NavierStokes => {
                        let u = eval(&comps[0]);
                        let lap = u.laplacian();
                        for (si, phi) in js.iter().enumerate() {
                            let cross = u.g[1] * phi.g[0] - u.g[0] * phi.g[1];
                            res[0][ws * k + si] += q.w * lap * cross;
                            if with_jacobian {
                                for (ri, psi) in jr.iter().enumerate() {
                                    d[0][si * wr + ri] += q.w
                                        * (psi.laplacian() * cross
                                            + lap * (psi.g[1] * phi.g[0] - psi.g[0] * phi.g[1]));
                                }
                            }
                        }
                    }
                    ProblemKind::VonKarman => {
                        let (u, v) = (eval(&comps[0]), eval(&comps[1]));
                        let uv = vk_bracket(&u, &v);
                        let uu = vk_bracket(&u, &u);
                        for (si, phi) in js.iter().enumerate() {
                            res[0][ws * k + si] -= q.w * uv * phi.v;
                            res[1][ws * k + si] += q.w * 0.5 * uu * phi.v;
                            if with_jacobian {
                                for (ri, psi) in jr.iter().enumerate() {
                                    let wp = q.w * phi.v;
                                    d[0][si * wr + ri] -= wp * vk_bracket(psi, &v);
                                    d[1][si * wr + ri] -= wp * vk_bracket(&u, psi);
                                    d[2][si * wr + ri] += wp * vk_bracket(&u, psi);
                                }
                            }
                        }
                    }
                }
            }
            if with_jacobian {
                for (t, m) in blocks.iter_mut().zip(&d) {
                    for si in 0..ws {
                        for ri in 0..wr {
                            t.push(ws * k + si, wr * k + ri, m[si * wr + ri]);
                        }
                    }
                }
            }
        }
        let positions: Vec<(usize, usize)> = match self.spec.kind {
            ProblemKind::VonKarman => vec![(0, 0), (0, 1), (1, 0)],
            _ => vec![(0, 0)],
        };
        let out = if with_jacobian {
            positions
                .into_iter()
                .zip(blocks)
                .map(|((a, b), t)| (a, b, t.build()))
                .collect()
        } else {
            Vec::new()
        };
        (res, out)
    }

    /// N_h(x) tested with every basis function.
    pub fn residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        let n = self.space.dim();
        let mut offset: Vec<f64> = self.load.iter().map(|f| -f).collect();
        if self.spec.kind != ProblemKind::Biharmonic {
            let (res, _) = self.nonlinear_local(x, false);
            for (c, r) in res.iter().enumerate() {
                for (o, v) in offset[c * n..(c + 1) * n].iter_mut().zip(self.ls_t.matvec(r)) {
                    *o += v;
                }
            }
        }
        let mut out = Vec::with_capacity(x.len());
        for c in 0..self.spec.kind.components() {
            out.extend(self.a_h.matvec_add_accurate(&x[c * n..(c + 1) * n], &offset[c * n..(c + 1) * n]));
        }
        Ok(out)
    }

    /// DN_h(x); entry (i, j) is the derivative of residual i in direction φ_j.
    pub fn jacobian(&self, x: &[f64]) -> Result<SparseMatrix> {
        self.check_len(x)?;
        let lin = self.linear_matrix();
        if self.spec.kind == ProblemKind::Biharmonic {
            return Ok(lin);
        }
        let n = self.space.dim();
        let lr = self.smoothers.local_matrix(self.spec.r);
        let (_, blocks) = self.nonlinear_local(x, true);
        let dim = self.dim();
        let mut b = TripletBuilder::new(dim, dim);
        for (i, j, v) in lin.triplets() {
            b.push(i, j, v);
        }
        for (br, bc, d) in blocks {
            let m = self.ls_t.matmul(&d.matmul(lr)?)?;
            for (i, j, v) in m.triplets() {
                b.push(br * n + i, bc * n + j, v);
            }
        }
        Ok(b.build())
    }

    /// Solves DN_h(x) δ = r without forming L_Sᵀ D L_R: the smoother
    /// factors enter a bordered system with auxiliary Morley unknowns
    /// w = I_M δ and t = Qᵀ D Q w.
    pub fn newton_step(&self, x: &[f64], r: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        if r.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: r.len(),
            });
        }
        if self.spec.kind == ProblemKind::Biharmonic {
            return crate::solver::sparse_solve(&self.linear_matrix(), r);
        }
        let (qr, pr) = self.smoothers.factored(self.spec.r);
        let (qs, ps) = self.smoothers.factored(self.spec.s);
        if pr.is_none() && ps.is_none() {
            return crate::solver::sparse_solve(&self.jacobian(x)?, r);
        }
        let n = self.space.dim();
        let comps = self.spec.kind.components();
        let (_, blocks) = self.nonlinear_local(x, true);
        let qs_t = qs.transpose();
        let nw = pr.map_or(0, |p| p.nrows());
        let nt_ = ps.map_or(0, |p| p.nrows());
        let (w0, t0) = (comps * n, comps * n + comps * nw);
        let dim = t0 + comps * nt_;
        // column of the R-side unknown of component c, and row of the S-side sum
        let rcol = |c: usize| if pr.is_some() { w0 + c * nw } else { c * n };
        let srow = |b: usize| if ps.is_some() { t0 + b * nt_ } else { b * n };
        let mut t = TripletBuilder::new(dim, dim);
        for c in 0..comps {
            for (i, j, v) in self.a_h.triplets() {
                t.push(c * n + i, c * n + j, v);
            }
            if let Some(p) = pr {
                for (i, j, v) in p.triplets() {
                    t.push(w0 + c * nw + i, c * n + j, v);
                }
                for i in 0..nw {
                    t.push(w0 + c * nw + i, w0 + c * nw + i, -1.0);
                }
            }
            if let Some(p) = ps {
                for (i, j, v) in p.triplets() {
                    t.push(c * n + j, t0 + c * nt_ + i, v);
                }
                for i in 0..nt_ {
                    t.push(t0 + c * nt_ + i, t0 + c * nt_ + i, -1.0);
                }
            }
        }
        for (b, c, d) in blocks {
            let k = qs_t.matmul(&d.matmul(qr)?)?;
            for (i, j, v) in k.triplets() {
                t.push(srow(b) + i, rcol(c) + j, v);
            }
        }
        let mut rhs = r.to_vec();
        rhs.resize(dim, 0.0);
        let mut out = crate::solver::sparse_solve(&t.build(), &rhs)?;
        out.truncate(comps * n);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::{build_space, FeFunction};
    use crate::mesh::build_structured_square;
    use crate::transfer::{companion, CompanionData};

    fn random(n: usize, seed: u64) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn poly(f: impl Fn(Point) -> Jet + 'static) -> Smooth<impl Fn(Point) -> Jet> {
        Smooth::new(f, 2)
    }

    #[test]
    fn closed_form_trilinear_values() {
        let mesh = build_structured_square(2).unwrap();
        let phi = poly(|p| Jet { v: p[0] * p[0] + p[1] * p[1], g: [2.0 * p[0], 2.0 * p[1]], h: [2.0, 0.0, 2.0] });
        let chi = poly(|p| Jet { v: p[0], g: [1.0, 0.0], h: [0.0; 3] });
        let psi = poly(|p| Jet { v: p[1], g: [0.0, 1.0], h: [0.0; 3] });
        assert!((ns_trilinear(&mesh, &phi, &chi, &psi) + 4.0).abs() < 1e-13);
        assert!(ns_trilinear(&mesh, &chi, &phi, &psi).abs() < 1e-14);

        let xx = poly(|p| Jet { v: p[0] * p[0], g: [2.0 * p[0], 0.0], h: [2.0, 0.0, 0.0] });
        let yy = poly(|p| Jet { v: p[1] * p[1], g: [0.0, 2.0 * p[1]], h: [0.0, 0.0, 2.0] });
        let one = Smooth::new(|_| Jet { v: 1.0, ..Jet::ZERO }, 0);
        assert_eq!(vk_bracket(&xx.jet(0, [0.3, 0.2]), &yy.jet(0, [0.3, 0.2])), 4.0);
        assert!((vk_gamma(&mesh, &xx, &yy, &one) + 2.0).abs() < 1e-13);
        let zero = crate::fespace::Zero;
        assert!(vk_vector_gamma(&mesh, (&xx, &xx), (&xx, &xx), (&zero, &one)).abs() < 1e-14);
    }

    #[test]
    fn profile_derivatives_match_finite_differences() {
        for p in [Profile::SinSq, Profile::Quartic, Profile::Sextic] {
            for t in [0.1, 0.37, 0.8] {
                let d = p.derivatives(t);
                let e = 1e-5;
                for i in 0..4 {
                    let fd = (p.derivatives(t + e)[i] - p.derivatives(t - e)[i]) / (2.0 * e);
                    assert!((fd - d[i + 1]).abs() < 1e-6 * (1.0 + d[i + 1].abs()), "{p:?} order {i}");
                }
            }
        }
    }

    #[test]
    fn catalog_vanishes_on_boundary() {
        for name in ManufacturedSolution::CATALOG {
            let m = ManufacturedSolution::by_name(name).unwrap();
            let mesh = match m.domain {
                Domain::Square => build_structured_square(4).unwrap(),
                Domain::Lshape => crate::mesh::refine_times(&crate::mesh::build_lshape().unwrap(), 2),
            };
            for e in mesh.edges().iter().filter(|e| e.is_boundary()) {
                for s in [0.0, 0.3, 0.5] {
                    let j = m.u.jet(e.point(&mesh, s));
                    assert!(j.v.abs() < 1e-14 && j.g[0].abs() < 1e-13 && j.g[1].abs() < 1e-13, "{name}");
                }
            }
        }
        assert!(ManufacturedSolution::by_name("nope").is_err());
    }

    #[test]
    fn point_load_and_density_sources() {
        let mesh = Arc::new(build_structured_square(2).unwrap());
        let m = build_space(mesh.clone(), Scheme::Morley).unwrap();
        let data = Arc::new(CompanionData::new(m.clone()).unwrap());
        let zero = companion(&data, &m.zero()).unwrap();
        let one = SourceFunctional::density(|_| 1.0);
        assert_eq!(apply_source(&one, &zero).unwrap(), 0.0);
        let v = FeFunction::new(m.clone(), random(m.dim(), 1)).unwrap();
        let w = companion(&data, &v).unwrap();
        let pl = SourceFunctional::PointLoad { at: [0.0, 0.5], magnitude: 1.0 };
        assert!(matches!(apply_source(&pl, &w), Err(Error::PointOutsideDomain { .. })));
        let pl = SourceFunctional::PointLoad { at: [2.0, 0.5], magnitude: 1.0 };
        assert!(apply_source(&pl, &w).is_err());
        let pl = SourceFunctional::PointLoad { at: [0.3, 0.6], magnitude: 2.0 };
        let k = mesh.locate([0.3, 0.6]).unwrap();
        assert!((apply_source(&pl, &w).unwrap() - 2.0 * w.jet(k, [0.3, 0.6]).v).abs() < 1e-14);
    }

    fn spec(kind: ProblemKind, scheme: Scheme, r: SmootherTag, s: SmootherTag) -> ProblemSpec {
        let sources = (0..kind.components()).map(|i| {
            SourceFunctional::density(move |p| 1.0 + i as f64 * p[0])
        });
        ProblemSpec::new(kind, scheme, sources.collect()).with_smoothers(r, s)
    }

    #[test]
    fn biharmonic_residual_is_affine() {
        let mesh = Arc::new(build_structured_square(2).unwrap());
        let d = Discretization::new(spec(ProblemKind::Biharmonic, Scheme::Dg, SmootherTag::Jim, SmootherTag::Jim), mesh).unwrap();
        let x = random(d.dim(), 3);
        let r = d.residual(&x).unwrap();
        let ax = d.scheme_matrix().matvec(&x);
        for i in 0..d.dim() {
            assert!((r[i] - (ax[i] - d.load()[i])).abs() < 1e-12);
        }
        assert_eq!(d.jacobian(&x).unwrap(), d.linear_matrix());
    }

    #[test]
    fn jacobian_at_zero_is_scheme_form() {
        let mesh = Arc::new(build_structured_square(2).unwrap());
        for kind in [ProblemKind::NavierStokes, ProblemKind::VonKarman] {
            let d = Discretization::new(spec(kind, Scheme::C0ip, SmootherTag::Im, SmootherTag::Jim), mesh.clone()).unwrap();
            let j = d.jacobian(&vec![0.0; d.dim()]).unwrap();
            let diff = j.add(1.0, &d.linear_matrix(), -1.0).unwrap();
            assert!(diff.max_abs() < 1e-12 * j.max_abs());
            let r = d.residual(&vec![0.0; d.dim()]).unwrap();
            for (a, b) in r.iter().zip(d.load()) {
                assert!((a + b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn residual_matches_trilinear_form() {
        let mesh = Arc::new(build_structured_square(2).unwrap());
        let d = Discretization::new(
            spec(ProblemKind::NavierStokes, Scheme::Dg, SmootherTag::Im, SmootherTag::Jim),
            mesh.clone(),
        )
        .unwrap();
        let x = random(d.dim(), 4);
        let u = FeFunction::new(d.space().clone(), x.clone()).unwrap();
        let ru = d.smoothers().apply(SmootherTag::Im, &u).unwrap();
        let r = d.residual(&x).unwrap();
        let ax = d.scheme_matrix().matvec(&x);
        for i in [0, 7, 30] {
            let mut e = vec![0.0; d.dim()];
            e[i] = 1.0;
            let phi = FeFunction::new(d.space().clone(), e).unwrap();
            let sphi = d.smoothers().apply(SmootherTag::Jim, &phi).unwrap();
            let g = ns_trilinear(&mesh, &ru, &ru, &sphi);
            let expect = ax[i] + g - d.load()[i];
            assert!((r[i] - expect).abs() < 1e-10 * (1.0 + expect.abs()), "{i}: {} vs {expect}", r[i]);
        }
    }

    #[test]
    fn jacobian_finite_differences() {
        let mesh = Arc::new(build_structured_square(2).unwrap());
        for kind in [ProblemKind::NavierStokes, ProblemKind::VonKarman] {
            for (r, s) in [(SmootherTag::Id, SmootherTag::Jim), (SmootherTag::Jim, SmootherTag::Im)] {
                let d = Discretization::new(spec(kind, Scheme::Wopsip, r, s), mesh.clone()).unwrap();
                let x = random(d.dim(), 11);
                let dir = random(d.dim(), 12);
                let jd = d.jacobian(&x).unwrap().matvec(&dir);
                let r0 = d.residual(&x).unwrap();
                let mut errs = Vec::new();
                for eps in [1e-4, 1e-5] {
                    let xp: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + eps * b).collect();
                    let rp = d.residual(&xp).unwrap();
                    let e: f64 = rp
                        .iter()
                        .zip(&r0)
                        .zip(&jd)
                        .map(|((a, b), c)| ((a - b) / eps - c).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    errs.push(e);
                }
                let ratio = errs[0] / errs[1];
                assert!((5.0..20.0).contains(&ratio), "{kind} {r}/{s}: {errs:?}");
            }
        }
    }
}
