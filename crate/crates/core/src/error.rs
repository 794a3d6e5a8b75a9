use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),

    #[error("invalid benchmark parameter: {0}")]
    BenchmarkParam(String),

    #[error("invalid domain: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("matrix is not Hurwitz: eigenvalue {0} has nonnegative real part")]
    NotHurwitz(Complex64),

    #[error("matrix is not diagonal")]
    NotDiagonal,

    #[error("eigenvalues {0} and {1} coincide, gain matrix S is singular")]
    RepeatedEigenvalues(Complex64, Complex64),

    #[error("zero eigenvalue is not allowed")]
    ZeroEigenvalue,

    #[error("invalid design: {0}")]
    Design(String),

    #[error("horizon must be positive, got {0}")]
    Horizon(f64),

    #[error("integration failed at t = {time}: {reason}")]
    Integration { time: f64, state: Vec<f64>, reason: String },

    #[error("flow left the admissible region at t = {time}")]
    FlowExit { time: f64 },

    #[error("tabulation failed at node {node}: {source}")]
    Node {
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("table fingerprint mismatch: table {table:016x}, expected {expected:016x}")]
    Fingerprint { table: u64, expected: u64 },

    #[error("table format: {0}")]
    TableFormat(String),

    #[error("no gain candidate satisfies the small-gain bound; required k > {k_required}")]
    NoCertifiedGain { k_required: f64 },

    #[error("gain k = {k} is not certified (2Nλ_max(P) = {small_gain}); pass the override flag to simulate anyway")]
    Uncertified { k: f64, small_gain: f64 },

    #[error("rate unidentifiable: transform error {0:e} below resolution")]
    RateUnidentifiable(f64),

    #[error("rescaling function violated gamma >= 1: gamma({y:?}) = {gamma}")]
    RescaleViolation { y: Vec<f64>, gamma: f64 },

    #[error("acceptance: {0}")]
    Acceptance(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Certification failures, reported with their own exit status.
    pub fn is_certification(&self) -> bool {
        matches!(self, Error::NoCertifiedGain { .. } | Error::Uncertified { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
