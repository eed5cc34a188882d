use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A scalar parameter lies outside its admissible range.
    #[error("parameter `{name}` = {value} out of domain: {reason}")]
    ParameterDomain {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(&'static str),

    /// The feasible set of regulation bids is empty.
    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("initial state-of-charge {soc0} differs from target {target}")]
    TargetMismatch { soc0: f64, target: f64 },

    #[error("elastic cost is not convex: g(0) = {g0} < -cb0/(2 cbd) = {limit}")]
    ConvexityViolated { g0: f64, limit: f64 },

    #[error("price mode mismatch: expected {expected} prices")]
    PriceMode { expected: &'static str },

    #[error("misaligned series: {0}")]
    Misaligned(String),

    #[error("singular fit: {0}")]
    SingularFit(&'static str),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(name: &'static str, value: f64, reason: &'static str) -> Self {
        Error::ParameterDomain {
            name,
            value,
            reason,
        }
    }

    /// True for errors that signal an empty feasible set rather than bad input.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::Infeasible(_))
    }
}
