use thiserror::Error;

/// Errors produced by the shaping, metric, channel and receiver routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("zero-power signal")]
    ZeroPower,
    #[error("infeasible energy bound: no sequence of length {len} has energy <= {e_max}")]
    InfeasibleEnergyBound { len: usize, e_max: u64 },
    #[error("index out of range: must be below 2^{bits}")]
    IndexOutOfRange { bits: u64 },
    #[error("sequence energy {energy} exceeds bound {e_max}")]
    EnergyBoundViolated { energy: u64, e_max: u64 },
    #[error("unused codeword: rank is at least 2^{bits}")]
    UnusedCodeword { bits: u64 },
    #[error("amplitude {0} is not in the alphabet")]
    NotInAlphabet(i64),
    #[error("not a constellation point: {0}")]
    NotAConstellationPoint(f64),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("block too short: {len} symbols, need at least {needed}")]
    BlockTooShort { len: usize, needed: usize },
    #[error("zero-mean windowed energies")]
    ZeroMeanEnergy,
    #[error("aliasing: band edge {edge_hz:.3e} Hz exceeds Nyquist {nyquist_hz:.3e} Hz")]
    Aliasing { edge_hz: f64, nyquist_hz: f64 },
    #[error("degenerate block: correlation matrix is singular")]
    DegenerateBlock,
    #[error("non-positive noise variance")]
    NonPositiveVariance,
    #[error("candidate {candidate}: {source}")]
    Candidate {
        candidate: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
