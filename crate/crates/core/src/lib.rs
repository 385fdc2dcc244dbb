//! Lowest-order nonconforming discretizations of fourth-order problems:
//! Morley, dG, C⁰ interior penalty and WOPSIP schemes with smoother-modified
//! nonlinearities for the biharmonic, stream-function Navier–Stokes and
//! von Kármán equations.

pub mod error;
pub mod fespace;
pub mod forms;
pub mod harness;
pub mod mesh;
pub mod problems;
pub mod quadrature;
pub mod solver;
pub mod sparse;
pub mod transfer;

pub use error::{Error, Result};
pub use fespace::{build_space, FeFunction, FeSpace, Jet, PiecewiseFn, Scheme, VectorFeFunction};
pub use mesh::{build_lshape, build_structured_square, uniform_refine, Point, Triangulation};
pub use forms::{NormTag, SchemeParams};
pub use harness::{compare_schemes, run_study, CompareResult, ErrorNorm, StudyConfig, StudyResult};
pub use problems::{Discretization, Domain, ManufacturedSolution, ProblemKind, ProblemSpec, SourceFunctional};
pub use solver::{newton_solve, solve, NewtonControls, NewtonReport};
pub use transfer::{SmootherSet, SmootherTag};
