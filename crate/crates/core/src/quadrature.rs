//! Quadrature on the reference triangle {x, y ≥ 0, x + y ≤ 1} and the unit
//! interval.
//!
//! Triangle rules beyond degree 2 are collapsed (Duffy) Gauss–Legendre
//! products; they have positive weights and strictly interior points.

use std::sync::OnceLock;

use crate::error::{Error, Result};

pub const MAX_TRIANGLE_DEGREE: usize = 14;
pub const MAX_EDGE_DEGREE: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleRule {
    /// Barycentric coordinates (λ₀, λ₁, λ₂) of the points.
    pub points: Vec<[f64; 3]>,
    /// Weights summing to 1/2, the reference area.
    pub weights: Vec<f64>,
    pub degree: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRule {
    /// Parameters in [0, 1].
    pub points: Vec<f64>,
    /// Weights summing to 1.
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl TriangleRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Reference coordinates (x, y) = (λ₁, λ₂).
    pub fn xy(&self, i: usize) -> [f64; 2] {
        [self.points[i][1], self.points[i][2]]
    }
}

/// Gauss–Legendre nodes and weights on [0, 1] with `n` points.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { z } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * p - pm1) / (z * z - 1.0);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        // map [-1, 1] → [0, 1]
        x[i] = 0.5 * (1.0 - z);
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[i] = 0.5 * wi;
        w[n - 1 - i] = 0.5 * wi;
    }
    (x, w)
}

fn build_triangle_rule(degree: usize) -> TriangleRule {
    match degree {
        1 => TriangleRule {
            points: vec![[1.0 / 3.0; 3]],
            weights: vec![0.5],
            degree,
        },
        2 => {
            let (a, b) = (2.0 / 3.0, 1.0 / 6.0);
            TriangleRule {
                points: vec![[a, b, b], [b, a, b], [b, b, a]],
                weights: vec![1.0 / 6.0; 3],
                degree,
            }
        }
        _ => {
            // x = u, y = (1 - u) v, dx dy = (1 - u) du dv
            let (u, wu) = gauss_legendre((degree + 2).div_ceil(2));
            let (v, wv) = gauss_legendre((degree + 1).div_ceil(2));
            let mut points = Vec::with_capacity(u.len() * v.len());
            let mut weights = Vec::with_capacity(u.len() * v.len());
            for (ui, wui) in u.iter().zip(&wu) {
                for (vj, wvj) in v.iter().zip(&wv) {
                    let x = *ui;
                    let y = (1.0 - ui) * vj;
                    points.push([1.0 - x - y, x, y]);
                    weights.push(wui * wvj * (1.0 - ui));
                }
            }
            TriangleRule {
                points,
                weights,
                degree,
            }
        }
    }
}

fn triangle_table() -> &'static [TriangleRule] {
    static TABLE: OnceLock<Vec<TriangleRule>> = OnceLock::new();
    TABLE.get_or_init(|| (1..=MAX_TRIANGLE_DEGREE).map(build_triangle_rule).collect())
}

fn edge_table() -> &'static [EdgeRule] {
    static TABLE: OnceLock<Vec<EdgeRule>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (1..=MAX_EDGE_DEGREE)
            .map(|degree| {
                let (points, weights) = gauss_legendre(degree / 2 + 1);
                EdgeRule {
                    points,
                    weights,
                    degree,
                }
            })
            .collect()
    })
}

/// Rule on the reference triangle exact for total degree ≤ `degree`.
pub fn triangle_rule(degree: usize) -> Result<&'static TriangleRule> {
    if degree == 0 || degree > MAX_TRIANGLE_DEGREE {
        return Err(Error::QuadratureDegree {
            degree,
            max: MAX_TRIANGLE_DEGREE,
        });
    }
    Ok(&triangle_table()[degree - 1])
}

/// Gauss rule on [0, 1] exact for degree ≤ `degree`.
pub fn edge_rule(degree: usize) -> Result<&'static EdgeRule> {
    if degree == 0 || degree > MAX_EDGE_DEGREE {
        return Err(Error::QuadratureDegree {
            degree,
            max: MAX_EDGE_DEGREE,
        });
    }
    Ok(&edge_table()[degree - 1])
}
