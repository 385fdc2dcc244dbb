//! Bilinear forms of the four schemes and the discrete norms.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fespace::{
    edge_points, jumps, p2_basis, quad_points, rule_for, FeSpace, PiecewiseFn, Scheme,
};
use crate::mesh::Triangulation;
use crate::sparse::{SparseMatrix, TripletBuilder};

const EDGE_DEGREE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeParams {
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma_ip: f64,
    pub theta: f64,
}

impl Default for SchemeParams {
    fn default() -> Self {
        SchemeParams {
            sigma1: 20.0,
            sigma2: 20.0,
            sigma_ip: 20.0,
            theta: 1.0,
        }
    }
}

impl SchemeParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma1", self.sigma1), ("sigma2", self.sigma2), ("sigma_ip", self.sigma_ip)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(-1.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidParameter(format!("theta must lie in [-1, 1], got {}", self.theta)));
        }
        Ok(())
    }
}

/// Local P₂ nodal index → (global dof, coefficient) pairs of triangle `k`.
fn expansion(space: &FeSpace, k: usize) -> [Vec<(usize, f64)>; 6] {
    let mut out: [Vec<(usize, f64)>; 6] = Default::default();
    for (a, dof) in space.local_dofs(k).iter().enumerate() {
        if let Some(dof) = dof {
            for (n, v) in space.local_basis(k, a).iter().enumerate() {
                if *v != 0.0 {
                    out[n].push((*dof, *v));
                }
            }
        }
    }
    out
}

/// Scatters a dense matrix over local nodal indices of the listed triangles.
fn scatter(space: &FeSpace, tris: &[usize], local: &[f64], b: &mut TripletBuilder) {
    let n = 6 * tris.len();
    let exp: Vec<Vec<(usize, f64)>> = tris.iter().flat_map(|&k| expansion(space, k)).collect();
    for i in 0..n {
        for j in 0..n {
            let v = local[i * n + j];
            if v == 0.0 {
                continue;
            }
            for &(di, ci) in &exp[i] {
                for &(dj, cj) in &exp[j] {
                    b.push(di, dj, ci * v * cj);
                }
            }
        }
    }
}

/// Per-edge traces of the local nodal basis functions, jump-signed.
struct EdgeBasis {
    tris: Vec<usize>,
    /// For each local function (6 per adjacent triangle): value jump,
    /// normal-derivative jump, gradient jump, ⟨D²φ ν⟩.
    jv: Vec<f64>,
    jn: Vec<f64>,
    jg: Vec<[f64; 2]>,
    avg: Vec<[f64; 2]>,
}

fn edge_basis(mesh: &Triangulation, e: usize, s: f64) -> EdgeBasis {
    let edge = &mesh.edges()[e];
    let x = edge.point(mesh, s);
    let mut tris = vec![edge.plus];
    tris.extend(edge.minus);
    let weight = if edge.minus.is_some() { 0.5 } else { 1.0 };
    let mut eb = EdgeBasis {
        tris: tris.clone(),
        jv: vec![],
        jn: vec![],
        jg: vec![],
        avg: vec![],
    };
    for (side, &k) in tris.iter().enumerate() {
        let sign = if side == 0 { 1.0 } else { -1.0 };
        let jets = p2_basis(mesh.grad_lambda(k), mesh.barycentric(k, x));
        for j in &jets {
            eb.jv.push(sign * j.v);
            eb.jn.push(sign * j.normal_derivative(edge.normal));
            eb.jg.push([sign * j.g[0], sign * j.g[1]]);
            let hn = j.hessian_times(edge.normal);
            eb.avg.push([weight * hn[0], weight * hn[1]]);
        }
    }
    eb
}

/// ∫ D²_pw v : D²_pw w.
pub fn assemble_apw(space: &FeSpace) -> SparseMatrix {
    let mesh = space.mesh();
    let mut b = TripletBuilder::new(space.dim(), space.dim());
    for k in 0..mesh.num_triangles() {
        let jets = p2_basis(mesh.grad_lambda(k), [1.0 / 3.0; 3]);
        let area = mesh.area(k);
        let mut local = [0.0; 36];
        for i in 0..6 {
            for j in 0..6 {
                local[6 * i + j] = area * jets[i].hessian_dot(&jets[j]);
            }
        }
        scatter(space, &[k], &local, &mut b);
    }
    b.build()
}

/// Matrix of 𝒥(φ_a, φ_b) = Σ_E ∫_E ⟨D²φ_a ν_E⟩ · [∇φ_b] ds, row a.
fn assemble_j(space: &FeSpace) -> SparseMatrix {
    let mesh = space.mesh();
    let mut b = TripletBuilder::new(space.dim(), space.dim());
    for (e, edge) in mesh.edges().iter().enumerate() {
        let n = if edge.minus.is_some() { 12 } else { 6 };
        let mut local = vec![0.0; n * n];
        let mut tris = Vec::new();
        for (s, w) in edge_points(EDGE_DEGREE, edge.length) {
            let eb = edge_basis(mesh, e, s);
            for i in 0..n {
                for j in 0..n {
                    local[i * n + j] += w * (eb.avg[i][0] * eb.jg[j][0] + eb.avg[i][1] * eb.jg[j][1]);
                }
            }
            tris = eb.tris;
        }
        scatter(space, &tris, &local, &mut b);
    }
    b.build()
}

/// b_h(v, w) = −θ 𝒥(v, w) − 𝒥(w, v); entry (i, j) = b_h(φ_j, φ_i). Zero for
/// Morley and WOPSIP.
pub fn assemble_consistency(space: &FeSpace, theta: f64) -> SparseMatrix {
    match space.scheme() {
        Scheme::Morley | Scheme::Wopsip => SparseMatrix::zeros(space.dim(), space.dim()),
        Scheme::Dg | Scheme::C0ip => {
            let j = assemble_j(space);
            j.transpose().add(-theta, &j, -1.0).expect("square")
        }
    }
}

fn assemble_penalty_kind(space: &FeSpace, kind: Scheme, params: &SchemeParams) -> SparseMatrix {
    let mesh = space.mesh();
    let mut b = TripletBuilder::new(space.dim(), space.dim());
    if kind == Scheme::Morley {
        return b.build();
    }
    for (e, edge) in mesh.edges().iter().enumerate() {
        let n = if edge.minus.is_some() { 12 } else { 6 };
        let h = edge.length;
        let mut local = vec![0.0; n * n];
        let mut add = |u: &[f64], v: &[f64], c: f64| {
            for i in 0..n {
                for j in 0..n {
                    local[i * n + j] += c * u[i] * v[j];
                }
            }
        };
        let tris = edge_basis(mesh, e, 0.5).tris;
        match kind {
            Scheme::Dg | Scheme::C0ip => {
                for (s, w) in edge_points(EDGE_DEGREE, h) {
                    let eb = edge_basis(mesh, e, s);
                    if kind == Scheme::Dg {
                        add(&eb.jv, &eb.jv, params.sigma1 / h.powi(3) * w);
                        add(&eb.jn, &eb.jn, params.sigma2 / h * w);
                    } else {
                        add(&eb.jn, &eb.jn, params.sigma_ip / h * w);
                    }
                }
            }
            Scheme::Wopsip => {
                for s in [0.0, 1.0] {
                    let eb = edge_basis(mesh, e, s);
                    add(&eb.jv, &eb.jv, h.powi(-4));
                }
                let mut mean = vec![0.0; n];
                for (s, w) in edge_points(EDGE_DEGREE, 1.0) {
                    let eb = edge_basis(mesh, e, s);
                    for i in 0..n {
                        mean[i] += w * eb.jn[i];
                    }
                }
                add(&mean, &mean, h.powi(-2));
            }
            Scheme::Morley => unreachable!(),
        }
        scatter(space, &tris, &local, &mut b);
    }
    b.build()
}

/// The scheme's penalty form: c_dG, c_IP, c_P, or zero for Morley.
pub fn assemble_penalty(space: &FeSpace, params: &SchemeParams) -> Result<SparseMatrix> {
    params.validate()?;
    Ok(assemble_penalty_kind(space, space.scheme(), params))
}

/// a_h = a_pw + b_h + c_h.
pub fn scheme_form(space: &FeSpace, params: &SchemeParams) -> Result<SparseMatrix> {
    let apw = assemble_apw(space);
    let c = assemble_penalty(space, params)?;
    let b = assemble_consistency(space, params.theta);
    apw.add(1.0, &c, 1.0)?.add(1.0, &b, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormTag {
    /// |||·|||_pw
    Pw,
    /// ‖·‖_h with the jump seminorm j_h
    H,
    Dg,
    Ip,
    P,
}

impl NormTag {
    /// Norm of the scheme's own analysis.
    pub fn for_scheme(s: Scheme) -> NormTag {
        match s {
            Scheme::Morley => NormTag::Pw,
            Scheme::Dg => NormTag::Dg,
            Scheme::C0ip => NormTag::Ip,
            Scheme::Wopsip => NormTag::P,
        }
    }
}

impl fmt::Display for NormTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormTag::Pw => "pw",
            NormTag::H => "h",
            NormTag::Dg => "dg",
            NormTag::Ip => "ip",
            NormTag::P => "p",
        })
    }
}

impl FromStr for NormTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pw" | "energy_pw" => Ok(NormTag::Pw),
            "h" => Ok(NormTag::H),
            "dg" => Ok(NormTag::Dg),
            "ip" => Ok(NormTag::Ip),
            "p" | "wopsip" => Ok(NormTag::P),
            _ => Err(Error::UnknownTag(s.into())),
        }
    }
}

/// Gram matrix of the squared norm `tag` restricted to the space.
pub fn norm_gram(space: &FeSpace, tag: NormTag, params: &SchemeParams) -> Result<SparseMatrix> {
    params.validate()?;
    let apw = assemble_apw(space);
    let extra = match tag {
        NormTag::Pw => return Ok(apw),
        NormTag::Dg => assemble_penalty_kind(space, Scheme::Dg, params),
        NormTag::Ip => assemble_penalty_kind(space, Scheme::C0ip, params),
        NormTag::P => assemble_penalty_kind(space, Scheme::Wopsip, params),
        NormTag::H => {
            // j_h² is c_P with h_E⁻² on vertex terms and no weight on edge means
            let mesh = space.mesh();
            let mut b = TripletBuilder::new(space.dim(), space.dim());
            for (e, edge) in mesh.edges().iter().enumerate() {
                let n = if edge.minus.is_some() { 12 } else { 6 };
                let h = edge.length;
                let mut local = vec![0.0; n * n];
                let mut tris = Vec::new();
                for s in [0.0, 1.0] {
                    let eb = edge_basis(mesh, e, s);
                    for i in 0..n {
                        for j in 0..n {
                            local[i * n + j] += h.powi(-2) * eb.jv[i] * eb.jv[j];
                        }
                    }
                    tris = eb.tris;
                }
                let mut mean = vec![0.0; n];
                for (s, w) in edge_points(EDGE_DEGREE, 1.0) {
                    let eb = edge_basis(mesh, e, s);
                    for i in 0..n {
                        mean[i] += w * eb.jn[i];
                    }
                }
                for i in 0..n {
                    for j in 0..n {
                        local[i * n + j] += mean[i] * mean[j];
                    }
                }
                scatter(space, &tris, &local, &mut b);
            }
            b.build()
        }
    };
    apw.add(1.0, &extra, 1.0)
}

/// Gram matrix of the scheme norm: a_pw + c_h.
pub fn scheme_gram(space: &FeSpace, params: &SchemeParams) -> Result<SparseMatrix> {
    norm_gram(space, NormTag::for_scheme(space.scheme()), params)
}

/// |||f|||²_pw
pub fn energy_sq(mesh: &Triangulation, f: &dyn PiecewiseFn) -> f64 {
    let (degree, split) = rule_for(&[f, f], 0);
    let mut total = 0.0;
    for k in 0..mesh.num_triangles() {
        for q in quad_points(mesh, k, degree, split) {
            let j = f.jet_in_sub(k, q.x, q.sub);
            total += q.w * j.hessian_dot(&j);
        }
    }
    total
}

/// Squared jump parts of the norms for an arbitrary piecewise function.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct JumpTerms {
    pub jh: f64,
    pub dg: f64,
    pub ip: f64,
    pub p: f64,
}

pub fn jump_terms(mesh: &Triangulation, f: &dyn PiecewiseFn, params: &SchemeParams) -> JumpTerms {
    let mut t = JumpTerms::default();
    let deg = (2 * f.degree()).clamp(EDGE_DEGREE, crate::quadrature::MAX_EDGE_DEGREE);
    for (e, edge) in mesh.edges().iter().enumerate() {
        let h = edge.length;
        let (mut vv, mut nn, mut mean) = (0.0, 0.0, 0.0);
        for (s, w) in edge_points(deg, h) {
            let (a, b) = jumps(mesh, f, e, s);
            vv += w * a * a;
            nn += w * b * b;
            mean += w * b / h;
        }
        let vert: f64 = [0.0, 1.0].iter().map(|&s| jumps(mesh, f, e, s).0.powi(2)).sum();
        t.jh += vert / (h * h) + mean * mean;
        t.p += vert / h.powi(4) + mean * mean / (h * h);
        t.dg += params.sigma1 / h.powi(3) * vv + params.sigma2 / h * nn;
        t.ip += params.sigma_ip / h * nn;
    }
    t
}

/// Norm `tag` of any piecewise smooth function.
pub fn norm(mesh: &Triangulation, f: &dyn PiecewiseFn, tag: NormTag, params: &SchemeParams) -> f64 {
    let e = energy_sq(mesh, f);
    let extra = if tag == NormTag::Pw {
        0.0
    } else {
        let j = jump_terms(mesh, f, params);
        match tag {
            NormTag::H => j.jh,
            NormTag::Dg => j.dg,
            NormTag::Ip => j.ip,
            NormTag::P => j.p,
            NormTag::Pw => 0.0,
        }
    };
    (e + extra).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::{build_space, FeFunction};
    use crate::mesh::{build_lshape, build_structured_square, refine_times};
    use std::sync::Arc;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn params_validation() {
        assert!(SchemeParams::default().validate().is_ok());
        let bad = SchemeParams {
            sigma1: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SchemeParams {
            theta: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn apw_of_quadratic_and_affine() {
        let mesh = Arc::new(build_structured_square(2).unwrap());
        let s = build_space(mesh.clone(), Scheme::Dg).unwrap();
        let a = assemble_apw(&s);
        let q = s.interpolate_nodal(|p| p[0] * p[0]).unwrap();
        assert!((a.bilinear(&q, &q) - 4.0).abs() < 1e-12);
        let l = s.interpolate_nodal(|p| 3.0 * p[0] - p[1] + 2.0).unwrap();
        assert!(a.bilinear(&l, &l).abs() < 1e-12);
        let v = FeFunction::new(s.clone(), random(s.dim(), 1)).unwrap();
        let e = energy_sq(&mesh, &v);
        assert!((a.bilinear(v.coeffs(), v.coeffs()) - e).abs() < 1e-13 * e.max(1.0));
    }

    #[test]
    fn consistency_symmetry() {
        let mesh = Arc::new(refine_times(&build_lshape().unwrap(), 1));
        let s = build_space(mesh.clone(), Scheme::Dg).unwrap();
        let b = assemble_consistency(&s, 1.0);
        assert!(b.asymmetry() <= 1e-12);
        assert!(assemble_consistency(&s, 0.0).asymmetry() > 1e-6);
        let m = build_space(mesh, Scheme::Morley).unwrap();
        assert_eq!(assemble_consistency(&m, 1.0).nnz(), 0);
    }

    #[test]
    fn hand_penalty_case() {
        // two triangles sharing the diagonal of the unit square
        let mesh = Arc::new(build_structured_square(1).unwrap());
        let s = build_space(mesh.clone(), Scheme::Dg).unwrap();
        let e = mesh.edges().iter().position(|e| !e.is_boundary()).unwrap();
        let plus = mesh.edges()[e].plus;
        let mut c = vec![0.0; 12];
        c[6 * plus..6 * plus + 6].fill(1.0);
        // drop the boundary edges' contribution by comparing with the
        // plus triangle alone
        let params = SchemeParams::default();
        let p = assemble_penalty(&s, &params).unwrap();
        let total = p.bilinear(&c, &c);
        let h = mesh.edges()[e].length;
        let boundary: f64 = mesh
            .edges()
            .iter()
            .filter(|ed| ed.is_boundary() && ed.plus == plus)
            .map(|ed| params.sigma1 / ed.length.powi(3) * ed.length)
            .sum();
        assert!((total - boundary - params.sigma1 / (h * h)).abs() < 1e-10);
    }

    #[test]
    fn penalties_vanish_on_conforming_input() {
        let mesh = Arc::new(build_structured_square(3).unwrap());
        let m = build_space(mesh.clone(), Scheme::Morley).unwrap();
        let data = Arc::new(crate::transfer::CompanionData::new(m.clone()).unwrap());
        let v = FeFunction::new(m.clone(), random(m.dim(), 5)).unwrap();
        let j = crate::transfer::companion(&data, &v).unwrap();
        let t = jump_terms(&mesh, &j, &SchemeParams::default());
        assert!(t.jh < 1e-20 && t.dg < 1e-16 && t.ip < 1e-16 && t.p < 1e-16, "{t:?}");
        let pw = norm(&mesh, &j, NormTag::Pw, &SchemeParams::default());
        for tag in [NormTag::H, NormTag::Dg, NormTag::Ip] {
            let n = norm(&mesh, &j, tag, &SchemeParams::default());
            assert!((n - pw).abs() < 1e-10 * pw);
        }
    }

    #[test]
    fn matrix_and_function_norms_agree() {
        let mesh = Arc::new(refine_times(&build_lshape().unwrap(), 1));
        let params = SchemeParams {
            sigma1: 7.0,
            sigma2: 3.0,
            sigma_ip: 11.0,
            theta: 1.0,
        };
        for scheme in Scheme::ALL {
            let s = build_space(mesh.clone(), scheme).unwrap();
            let v = FeFunction::new(s.clone(), random(s.dim(), 7)).unwrap();
            for tag in [NormTag::Pw, NormTag::H, NormTag::Dg, NormTag::Ip, NormTag::P] {
                let g = norm_gram(&s, tag, &params).unwrap();
                let a = g.bilinear(v.coeffs(), v.coeffs());
                let b = norm(&mesh, &v, tag, &params).powi(2);
                assert!((a - b).abs() < 1e-12 * b, "{scheme} {tag}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn morley_jump_terms() {
        let mesh = Arc::new(build_structured_square(3).unwrap());
        let s = build_space(mesh.clone(), Scheme::Morley).unwrap();
        let v = FeFunction::new(s.clone(), random(s.dim(), 2)).unwrap();
        let t = jump_terms(&mesh, &v, &SchemeParams::default());
        assert!(t.jh < 1e-20 && t.p < 1e-20);
        let pw = norm(&mesh, &v, NormTag::Pw, &SchemeParams::default());
        let h = norm(&mesh, &v, NormTag::H, &SchemeParams::default());
        assert!((pw - h).abs() < 1e-12 * pw);
        assert_eq!(assemble_penalty(&s, &SchemeParams::default()).unwrap().nnz(), 0);
    }
}
