//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use nonconf_core::harness::level_mesh;
use nonconf_core::problems::ManufacturedSolution;
use nonconf_core::solver::initial_guess;
use nonconf_core::{Discretization, Domain, ProblemKind, ProblemSpec, Scheme, SmootherTag, Triangulation};

pub fn square(level: usize) -> Arc<Triangulation> {
    level_mesh(Domain::Square, level).expect("square mesh")
}

/// Manufactured problem on the square with R = S = `tag`.
pub fn discretization(kind: ProblemKind, scheme: Scheme, tag: SmootherTag, level: usize) -> Discretization {
    let m = ManufacturedSolution::by_name("sin2").expect("catalog entry");
    let spec = ProblemSpec::new(kind, scheme, m.sources(kind)).with_smoothers(tag, tag);
    Discretization::new(spec, square(level)).expect("discretization")
}

/// Discretization together with the default first Newton iterate.
pub fn with_iterate(kind: ProblemKind, scheme: Scheme, tag: SmootherTag, level: usize) -> (Discretization, Vec<f64>) {
    let d = discretization(kind, scheme, tag, level);
    let x = initial_guess(&d).expect("linear solve");
    (d, x)
}
