//! Piecewise-smooth scalar fields and the quadrature loops over them.

use crate::mesh::{Point, Triangulation};
use crate::quadrature::{edge_rule, triangle_rule, MAX_EDGE_DEGREE};

/// Value, gradient and Hessian `[xx, xy, yy]` at a point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub g: [f64; 2],
    pub h: [f64; 3],
}

impl Jet {
    pub const ZERO: Jet = Jet {
        v: 0.0,
        g: [0.0; 2],
        h: [0.0; 3],
    };

    pub fn laplacian(&self) -> f64 {
        self.h[0] + self.h[2]
    }

    pub fn scaled(&self, a: f64) -> Jet {
        Jet {
            v: a * self.v,
            g: [a * self.g[0], a * self.g[1]],
            h: [a * self.h[0], a * self.h[1], a * self.h[2]],
        }
    }

    pub fn axpy(&mut self, a: f64, other: &Jet) {
        self.v += a * other.v;
        self.g[0] += a * other.g[0];
        self.g[1] += a * other.g[1];
        self.h[0] += a * other.h[0];
        self.h[1] += a * other.h[1];
        self.h[2] += a * other.h[2];
    }

    pub fn minus(&self, other: &Jet) -> Jet {
        let mut j = *self;
        j.axpy(-1.0, other);
        j
    }

    pub fn normal_derivative(&self, n: Point) -> f64 {
        self.g[0] * n[0] + self.g[1] * n[1]
    }

    /// D²f : D²f with the off-diagonal counted twice.
    pub fn hessian_dot(&self, other: &Jet) -> f64 {
        self.h[0] * other.h[0] + 2.0 * self.h[1] * other.h[1] + self.h[2] * other.h[2]
    }

    /// (D²f) n
    pub fn hessian_times(&self, n: Point) -> Point {
        [
            self.h[0] * n[0] + self.h[1] * n[1],
            self.h[1] * n[0] + self.h[2] * n[1],
        ]
    }
}

/// A function that is smooth on every triangle of a fixed mesh.
pub trait PiecewiseFn {
    /// Jet of the restriction to triangle `k` at a point of the closed triangle.
    fn jet(&self, k: usize, x: Point) -> Jet;

    /// Same as [`PiecewiseFn::jet`] when the caller already knows which
    /// Clough–Tocher subtriangle contains `x`.
    fn jet_in_sub(&self, k: usize, x: Point, _sub: usize) -> Jet {
        self.jet(k, x)
    }

    /// Whether integrals must be split along the Clough–Tocher subtriangles.
    fn needs_split(&self) -> bool {
        false
    }

    /// Polynomial degree per (sub)triangle, used to pick quadrature.
    fn degree(&self) -> usize {
        2
    }
}

impl<T: PiecewiseFn + ?Sized> PiecewiseFn for &T {
    fn jet(&self, k: usize, x: Point) -> Jet {
        (**self).jet(k, x)
    }
    fn jet_in_sub(&self, k: usize, x: Point, sub: usize) -> Jet {
        (**self).jet_in_sub(k, x, sub)
    }
    fn needs_split(&self) -> bool {
        (**self).needs_split()
    }
    fn degree(&self) -> usize {
        (**self).degree()
    }
}

/// Globally smooth function given by a closure returning its jet.
pub struct Smooth<F> {
    f: F,
    degree: usize,
}

impl<F: Fn(Point) -> Jet> Smooth<F> {
    /// `degree` is the polynomial degree assumed when choosing quadrature.
    pub fn new(f: F, degree: usize) -> Self {
        Smooth { f, degree }
    }
}

impl<F: Fn(Point) -> Jet> PiecewiseFn for Smooth<F> {
    fn jet(&self, _k: usize, x: Point) -> Jet {
        (self.f)(x)
    }
    fn degree(&self) -> usize {
        self.degree
    }
}

/// `a - b`
pub struct Difference<A, B>(pub A, pub B);

impl<A: PiecewiseFn, B: PiecewiseFn> PiecewiseFn for Difference<A, B> {
    fn jet(&self, k: usize, x: Point) -> Jet {
        self.0.jet(k, x).minus(&self.1.jet(k, x))
    }
    fn jet_in_sub(&self, k: usize, x: Point, sub: usize) -> Jet {
        self.0.jet_in_sub(k, x, sub).minus(&self.1.jet_in_sub(k, x, sub))
    }
    fn needs_split(&self) -> bool {
        self.0.needs_split() || self.1.needs_split()
    }
    fn degree(&self) -> usize {
        self.0.degree().max(self.1.degree())
    }
}

/// The zero function.
pub struct Zero;

impl PiecewiseFn for Zero {
    fn jet(&self, _k: usize, _x: Point) -> Jet {
        Jet::ZERO
    }
    fn degree(&self) -> usize {
        0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    pub x: Point,
    /// Physical weight (includes the Jacobian).
    pub w: f64,
    /// Clough–Tocher subtriangle (opposite local vertex `sub`); 0 when unsplit.
    pub sub: usize,
    /// Barycentric coordinates with respect to the parent triangle.
    pub lambda: [f64; 3],
}

/// Quadrature points on triangle `k`. With `split`, the rule is applied on
/// each of the three subtriangles (centroid, P_{i+1}, P_{i+2}).
pub fn quad_points(mesh: &Triangulation, k: usize, degree: usize, split: bool) -> Vec<QuadPoint> {
    let rule = triangle_rule(degree.clamp(1, crate::quadrature::MAX_TRIANGLE_DEGREE))
        .expect("degree clamped to the supported range");
    let area = mesh.area(k);
    if !split {
        return rule
            .points
            .iter()
            .zip(&rule.weights)
            .map(|(l, w)| QuadPoint {
                x: mesh.from_barycentric(k, *l),
                w: 2.0 * area * w,
                sub: 0,
                lambda: *l,
            })
            .collect();
    }
    let third = 1.0 / 3.0;
    let mut out = Vec::with_capacity(3 * rule.len());
    for sub in 0..3 {
        let (i1, i2) = ((sub + 1) % 3, (sub + 2) % 3);
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let mut lambda = [third * l[0]; 3];
            lambda[i1] += l[1];
            lambda[i2] += l[2];
            out.push(QuadPoint {
                x: mesh.from_barycentric(k, lambda),
                w: 2.0 * area / 3.0 * w,
                sub,
                lambda,
            });
        }
    }
    out
}

/// Quadrature degree and splitting for integrating a product of fields.
pub fn rule_for(fields: &[&dyn PiecewiseFn], extra: usize) -> (usize, bool) {
    let split = fields.iter().any(|f| f.needs_split());
    let degree: usize = fields.iter().map(|f| f.degree()).sum::<usize>() + extra;
    (degree.clamp(1, crate::quadrature::MAX_TRIANGLE_DEGREE), split)
}

/// Σ_K ∫_K integrand, the integrand receiving the triangle and the point.
pub fn integrate(
    mesh: &Triangulation,
    degree: usize,
    split: bool,
    mut integrand: impl FnMut(usize, &QuadPoint) -> f64,
) -> f64 {
    let mut total = 0.0;
    for k in 0..mesh.num_triangles() {
        for q in quad_points(mesh, k, degree, split) {
            total += q.w * integrand(k, &q);
        }
    }
    total
}

/// Edge quadrature: (parameter, physical weight) pairs for edge length `len`.
pub fn edge_points(degree: usize, len: f64) -> impl Iterator<Item = (f64, f64)> {
    let rule = edge_rule(degree.clamp(1, MAX_EDGE_DEGREE)).expect("clamped");
    rule.points.iter().zip(&rule.weights).map(move |(s, w)| (*s, w * len))
}

/// Traces of `f` on both sides of edge `e` at parameter `s`; `None` for the
/// missing side of a boundary edge.
pub fn edge_traces(
    mesh: &Triangulation,
    f: &dyn PiecewiseFn,
    e: usize,
    s: f64,
) -> (Jet, Option<Jet>) {
    let edge = &mesh.edges()[e];
    let x = edge.point(mesh, s);
    (f.jet(edge.plus, x), edge.minus.map(|m| f.jet(m, x)))
}

/// (value jump, normal-derivative jump) at parameter `s` of edge `e`.
pub fn jumps(mesh: &Triangulation, f: &dyn PiecewiseFn, e: usize, s: f64) -> (f64, f64) {
    let n = mesh.edges()[e].normal;
    let (p, m) = edge_traces(mesh, f, e, s);
    let m = m.unwrap_or(Jet::ZERO);
    (p.v - m.v, p.normal_derivative(n) - m.normal_derivative(n))
}
