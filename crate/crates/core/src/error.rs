use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("mesh file, line {line}: {message}")]
    MeshParse { line: usize, message: String },

    #[error("quadrature degree {degree} not supported (1..={max})")]
    QuadratureDegree { degree: usize, max: usize },

    #[error("point ({x}, {y}) lies outside triangle {triangle}")]
    PointOutside { triangle: usize, x: f64, y: f64 },

    #[error("point ({x}, {y}) lies outside the domain")]
    PointOutsideDomain { x: f64, y: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("singular matrix{}", pivot.map(|p| format!(" at pivot {p}")).unwrap_or_default())]
    SingularMatrix { pivot: Option<usize> },

    #[error("singular local system on triangle {0}")]
    SingularLocalSystem(usize),

    #[error("Newton iteration diverged after {iterations} steps (correction {correction:e})")]
    NewtonDivergence { iterations: usize, correction: f64 },

    #[error("Newton iteration did not converge within {0} steps")]
    IterationCap(usize),

    #[error("dense eigensolve limited to {cap} unknowns, got {dim}")]
    DenseCap { dim: usize, cap: usize },

    #[error("Gram matrix of the scheme norm is not positive definite")]
    GramNotPositiveDefinite,

    #[error("unknown tag `{0}`")]
    UnknownTag(String),

    #[error("function file: {0}")]
    FunctionFile(String),

    #[error("config: {0}")]
    Config(String),

    #[error("level {level}: {source}")]
    AtLevel {
        level: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable class used by the command line front end.
    pub fn class(&self) -> &'static str {
        match self {
            Error::InvalidMesh(_) | Error::MeshParse { .. } => "mesh",
            Error::QuadratureDegree { .. } => "quadrature",
            Error::PointOutside { .. } | Error::PointOutsideDomain { .. } => "geometry",
            Error::InvalidParameter(_) | Error::UnknownTag(_) | Error::Config(_) => "config",
            Error::DimensionMismatch { .. } => "dimension",
            Error::SingularMatrix { .. }
            | Error::SingularLocalSystem(_)
            | Error::GramNotPositiveDefinite => "singular",
            Error::NewtonDivergence { .. } | Error::IterationCap(_) => "newton",
            Error::DenseCap { .. } => "capacity",
            Error::FunctionFile(_) => "format",
            Error::AtLevel { source, .. } => source.class(),
            Error::Io(_) => "io",
        }
    }

    pub fn at_level(self, level: usize) -> Error {
        Error::AtLevel {
            level,
            source: Box::new(self),
        }
    }
}
