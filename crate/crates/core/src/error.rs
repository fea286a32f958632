use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid size {0} is below the minimum of 8 nodes per axis")]
    GridTooSmall(usize),

    #[error("field has {got} values, grid expects {expected}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("right-hand side has non-zero mean {mean:e} (tolerance {tol:e})")]
    NonZeroMean { mean: f64, tol: f64 },

    #[error("class is not Kähler: total mass {volume} <= 0")]
    NonKahler { volume: f64 },

    #[error("curvature density integrates to {got}, expected multiplicity {expected}")]
    BadMass { expected: f64, got: f64 },

    #[error("twisted class has non-positive mass {volume} at lambda = {lambda}")]
    SeshadriViolation { lambda: f64, volume: f64 },

    #[error("class volume {volume} <= 0: the envelope constraint set is empty")]
    InfeasibleClass { volume: f64 },

    #[error("{solver} did not converge after {iters} iterations (last residual {residual:e})")]
    NoConvergence {
        solver: &'static str,
        iters: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("inputs are neither sub- nor supersolutions: {0}")]
    NotClassifiable(String),

    #[error("reference form density must be strictly positive (min {min})")]
    BadReference { min: f64 },

    #[error("contact mask is trivial; there is no free boundary")]
    EmptyBoundary,

    #[error("region {{u_theta <= -delta}} is empty for delta = {delta}")]
    EmptyRegion { delta: f64 },

    #[error("exhaustion check needs V = m, got V = {volume}, m = {multiplicity}")]
    WrongRegime { volume: f64, multiplicity: f64 },

    #[error("psi family is not concave in mu: second difference {worst:e} at lambda index {index}")]
    ConcavityViolation { index: usize, worst: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid value for `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("while solving at {param} = {value}: {source}")]
    AtParameter {
        param: &'static str,
        value: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at(param: &'static str, value: f64) -> impl FnOnce(Error) -> Error {
        move |source| Error::AtParameter {
            param,
            value,
            source: Box::new(source),
        }
    }

    /// Strips `AtParameter` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtParameter { source, .. } => source.root(),
            e => e,
        }
    }
}
