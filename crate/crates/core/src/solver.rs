//! Direct sparse solves, the Newton iteration and the discrete inf-sup
//! diagnostic.

use std::fmt::Write as _;

use faer::prelude::*;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::Side;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::Discretization;
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonControls {
    /// Stop once the correction is at most this large in the scheme norm.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonControls {
    fn default() -> Self {
        NewtonControls {
            tol: 1e-10,
            max_iter: 30,
        }
    }
}

impl NewtonControls {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidParameter(
                "Newton tolerance and iteration cap must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn to_faer(a: &SparseMatrix) -> Result<SparseColMat<usize, f64>> {
    let t: Vec<Triplet<usize, usize, f64>> = a.triplets().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
    SparseColMat::try_new_from_triplets(a.nrows(), a.ncols(), &t)
        .map_err(|e| Error::InvalidParameter(format!("sparse conversion: {e:?}")))
}

/// LU factorization of a square sparse matrix.
pub struct Factorization {
    lu: Lu<usize, f64>,
    n: usize,
}

impl std::fmt::Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factorization").field("n", &self.n).finish()
    }
}

impl Factorization {
    pub fn new(a: &SparseMatrix) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                found: a.ncols(),
            });
        }
        let lu = to_faer(a)?.sp_lu().map_err(|e| match e {
            faer::sparse::linalg::LuError::SymbolicSingular { index } => Error::SingularMatrix { pivot: Some(index) },
            faer::sparse::linalg::LuError::Generic(_) => Error::SingularMatrix { pivot: None },
        })?;
        Ok(Factorization { lu, n: a.nrows() })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: b.len(),
            });
        }
        let rhs = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        let x = self.lu.solve(&rhs);
        let out: Vec<f64> = (0..self.n).map(|i| x[(i, 0)]).collect();
        // a zero pivot surfaces as non-finite entries rather than an error
        if let Some(p) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::SingularMatrix { pivot: Some(p) });
        }
        Ok(out)
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves A x = b by sparse LU with one step of iterative refinement when
/// the residual exceeds 1e-10 (‖A‖∞‖x‖∞ + ‖b‖∞).
pub fn sparse_solve(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let f = Factorization::new(a)?;
    let mut x = f.solve(b)?;
    let res: Vec<f64> = a.matvec(&x).iter().zip(b).map(|(ax, bi)| bi - ax).collect();
    if inf_norm(&res) > 1e-10 * (a.norm_inf() * inf_norm(&x) + inf_norm(b)) {
        let dx = f.solve(&res)?;
        x.iter_mut().zip(dx).for_each(|(xi, d)| *xi += d);
    }
    Ok(x)
}

/// Whether a sparse Cholesky factorization of `a` succeeds.
pub fn cholesky_succeeds(a: &SparseMatrix) -> bool {
    to_faer(a).is_ok_and(|m| m.sp_cholesky(Side::Lower).is_ok())
}

/// A square nonlinear system with a norm on its unknowns.
pub trait NonlinearSystem {
    fn dim(&self) -> usize;
    fn residual(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn jacobian(&self, x: &[f64]) -> Result<SparseMatrix>;
    /// Gram matrix of the norm in which corrections are measured.
    fn norm_gram(&self) -> SparseMatrix;
    /// Solves DN(x) δ = r.
    fn newton_step(&self, x: &[f64], r: &[f64]) -> Result<Vec<f64>> {
        sparse_solve(&self.jacobian(x)?, r)
    }
}

impl NonlinearSystem for Discretization {
    fn dim(&self) -> usize {
        Discretization::dim(self)
    }
    fn residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        Discretization::residual(self, x)
    }
    fn jacobian(&self, x: &[f64]) -> Result<SparseMatrix> {
        Discretization::jacobian(self, x)
    }
    fn norm_gram(&self) -> SparseMatrix {
        self.gram()
    }
    fn newton_step(&self, x: &[f64], r: &[f64]) -> Result<Vec<f64>> {
        Discretization::newton_step(self, x, r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonReport {
    /// Steps whose correction exceeded the tolerance.
    pub iterations: usize,
    /// Dual norm of the residual before each step.
    pub residual_norms: Vec<f64>,
    /// Norm of each correction.
    pub corrections: Vec<f64>,
    /// e_{k+1} / e_k² for consecutive corrections above the round-off floor.
    pub ratios: Vec<f64>,
    pub converged: bool,
    pub solution: Vec<f64>,
}

impl NewtonReport {
    /// One line per step: `iteration residual correction ratio`.
    pub fn log(&self) -> String {
        let mut s = String::from("# iteration residual correction ratio\n");
        for (k, (r, c)) in self.residual_norms.iter().zip(&self.corrections).enumerate() {
            let ratio = if k > 0 && self.corrections[k - 1] > 0.0 {
                c / self.corrections[k - 1].powi(2)
            } else {
                f64::NAN
            };
            let _ = writeln!(s, "{} {r:e} {c:e} {ratio:e}", k + 1);
        }
        s
    }
}

fn gram_norm(g: &SparseMatrix, x: &[f64]) -> f64 {
    g.bilinear(x, x).max(0.0).sqrt()
}

/// Undamped Newton iteration x ← x − DN(x)⁻¹ N(x).
pub fn newton_solve(sys: &impl NonlinearSystem, initial: &[f64], controls: &NewtonControls) -> Result<NewtonReport> {
    controls.validate()?;
    if initial.len() != sys.dim() {
        return Err(Error::DimensionMismatch {
            expected: sys.dim(),
            found: initial.len(),
        });
    }
    let g = sys.norm_gram();
    let gf = Factorization::new(&g).map_err(|_| Error::GramNotPositiveDefinite)?;
    let mut x = initial.to_vec();
    let mut report = NewtonReport {
        iterations: 0,
        residual_norms: vec![],
        corrections: vec![],
        ratios: vec![],
        converged: false,
        solution: vec![],
    };
    let mut growth = 0;
    for _ in 0..controls.max_iter {
        let r = sys.residual(&x)?;
        let gr = gf.solve(&r)?;
        let rn = r.iter().zip(&gr).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt();
        let dx = sys.newton_step(&x, &r)?;
        let cn = gram_norm(&g, &dx);
        x.iter_mut().zip(&dx).for_each(|(xi, d)| *xi -= d);
        report.residual_norms.push(rn);
        report.corrections.push(cn);
        let k = report.corrections.len();
        if !cn.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NewtonDivergence {
                iterations: k,
                correction: cn,
            });
        }
        if k >= 2 {
            let prev = report.corrections[k - 2];
            let floor = 1e-12 * gram_norm(&g, &x).max(1e-300);
            if cn > floor && prev > floor {
                report.ratios.push(cn / (prev * prev));
            }
            growth = if cn > prev { growth + 1 } else { 0 };
            if growth >= 3 {
                return Err(Error::NewtonDivergence {
                    iterations: k,
                    correction: cn,
                });
            }
        }
        if cn <= controls.tol {
            report.converged = true;
            report.iterations = k - 1;
            report.solution = x;
            return Ok(report);
        }
    }
    Err(Error::IterationCap(controls.max_iter))
}

/// Default initial iterate: the solution of the linear problem a_h u₀ = F(JI_M •).
pub fn initial_guess(d: &Discretization) -> Result<Vec<f64>> {
    sparse_solve(&d.linear_matrix(), d.load())
}

/// Newton from the default initial iterate.
pub fn solve(d: &Discretization) -> Result<NewtonReport> {
    newton_solve(d, &initial_guess(d)?, &d.spec().newton)
}

pub const DENSE_CAP: usize = 4000;

/// Smallest singular value of L⁻¹ K L⁻ᵀ where M = L Lᵀ.
pub fn infsup_from_matrices(k: &SparseMatrix, m: &SparseMatrix) -> Result<f64> {
    let n = k.nrows();
    if n > DENSE_CAP {
        return Err(Error::DenseCap { dim: n, cap: DENSE_CAP });
    }
    if k.ncols() != n || m.nrows() != n || m.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: m.nrows(),
        });
    }
    let dense = |a: &SparseMatrix| {
        let mut d = DMatrix::<f64>::zeros(n, n);
        for (i, j, v) in a.triplets() {
            d[(i, j)] = v;
        }
        d
    };
    let l = dense(m).cholesky().ok_or(Error::GramNotPositiveDefinite)?.l();
    let lk = l
        .solve_lower_triangular(&dense(k))
        .ok_or(Error::GramNotPositiveDefinite)?;
    let b = l
        .solve_lower_triangular(&lk.transpose())
        .ok_or(Error::GramNotPositiveDefinite)?
        .transpose();
    let sv = b.singular_values();
    Ok(sv.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Discrete inf-sup surrogate of the linearized operator at `x`, measured in
/// the scheme norm.
pub fn infsup_estimate(d: &Discretization, x: &[f64]) -> Result<f64> {
    infsup_from_matrices(&d.jacobian(x)?, &d.gram())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::TripletBuilder;

    #[test]
    fn small_systems() {
        let i = SparseMatrix::identity(3);
        assert_eq!(sparse_solve(&i, &[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        let a = SparseMatrix::from_dense(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let x = sparse_solve(&a, &[3.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn singular_reports_pivot() {
        let a = SparseMatrix::from_dense(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
        assert!(matches!(sparse_solve(&a, &[1.0, 1.0]), Err(Error::SingularMatrix { pivot: Some(_) })));
        let a = SparseMatrix::from_dense(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(matches!(sparse_solve(&a, &[1.0, 1.0]), Err(Error::SingularMatrix { .. })));
    }

    #[test]
    fn random_spd() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(50);
        let n = 50;
        let b: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut t = TripletBuilder::new(n, n);
        for i in 0..n {
            for j in 0..n {
                let v: f64 = (0..n).map(|k| b[i][k] * b[j][k]).sum::<f64>() + if i == j { 1.0 } else { 0.0 };
                t.push(i, j, v);
            }
        }
        let a = t.build();
        let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = sparse_solve(&a, &rhs).unwrap();
        let r: Vec<f64> = a.matvec(&x).iter().zip(&rhs).map(|(p, q)| p - q).collect();
        let rel = r.iter().map(|v| v * v).sum::<f64>().sqrt() / rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(rel <= 1e-12, "{rel}");
        let again = sparse_solve(&a, &rhs).unwrap();
        assert_eq!(x, again);
        assert!(cholesky_succeeds(&a));
    }

    #[test]
    fn infsup_homogeneity() {
        let m = SparseMatrix::from_dense(&[vec![4.0, 1.0, 0.0], vec![1.0, 3.0, 0.5], vec![0.0, 0.5, 2.0]]);
        assert!((infsup_from_matrices(&m, &m).unwrap() - 1.0).abs() < 1e-12);
        let k2 = m.scaled(2.0);
        assert!((infsup_from_matrices(&k2, &m).unwrap() - 2.0).abs() < 1e-12);
        let neg = SparseMatrix::from_dense(&[vec![-1.0, 0.0], vec![0.0, 1.0]]);
        assert!(matches!(
            infsup_from_matrices(&SparseMatrix::identity(2), &neg),
            Err(Error::GramNotPositiveDefinite)
        ));
    }
}
