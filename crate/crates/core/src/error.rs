use thiserror::Error;

/// Every failure mode surfaced by the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("period {period} must exceed 2*pi")]
    PeriodTooSmall { period: f64 },
    #[error("critical point at y = {position} has |b''| = {curvature}, below the floor {floor}")]
    DegenerateCritical { position: f64, curvature: f64, floor: f64 },
    #[error("profile has {found} critical points on the period, expected 2")]
    WrongCriticalCount { found: usize },
    #[error("localization radius {delta} exceeds the admissible bound {bound}")]
    DeltaTooLarge { delta: f64, bound: f64 },
    #[error("wavenumber k = 0 is not supported")]
    ZeroMode,
    #[error("near-singular system (reciprocal condition {rcond:e}){}", context_suffix(.context))]
    NearSingular { rcond: f64, context: String },
    #[error("shift alpha = {alpha} is below the admissible floor {floor}")]
    AlphaOutOfRange { alpha: f64, floor: f64 },
    #[error("quadrature did not converge: {0}")]
    QuadratureFailure(String),
    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),
    #[error("finite-difference stencil needs {needed} nodes around index {index}, have {available}")]
    StencilOutOfRange { index: usize, needed: usize, available: usize },
    #[error("adaptive step size fell to {dt:e} at t = {t}")]
    StepRejection { t: f64, dt: f64 },
    #[error("resolvent solve failed at lambda = {lambda}: {reason}")]
    NodeFailure { lambda: f64, reason: String },
    #[error("estimated truncation tail {tail:e} exceeds {limit:e} of the synthesized norm")]
    TailTooLarge { tail: f64, limit: f64 },
    #[error("fit window [{start}, {end}] holds {points} samples, need at least {needed}")]
    WindowTooShort { start: f64, end: f64, points: usize, needed: usize },
    #[error("no plateau: late-time medians differ by {spread:.1}% for nu = {nu}")]
    NoPlateaus { nu: f64, spread: f64 },
    #[error("invalid config at `{field}`{}: {message}", line_suffix(.line))]
    ConfigInvalid { field: String, line: Option<usize>, message: String },
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("linear algebra backend: {0}")]
    Backend(String),
    #[error("io: {0}")]
    Io(String),
}

fn context_suffix(context: &str) -> String {
    if context.is_empty() {
        String::new()
    } else {
        format!(" at {context}")
    }
}

fn line_suffix(line: &Option<usize>) -> String {
    match line {
        Some(l) => format!(" (line {l})"),
        None => String::new(),
    }
}

impl Error {
    pub fn near_singular(rcond: f64) -> Self {
        Error::NearSingular { rcond, context: String::new() }
    }

    /// Attach a location (for example the offending spectral parameter) to a
    /// near-singularity report; other variants pass through unchanged.
    pub fn with_context(self, what: impl Into<String>) -> Self {
        match self {
            Error::NearSingular { rcond, .. } => Error::NearSingular { rcond, context: what.into() },
            other => other,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Backend(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
