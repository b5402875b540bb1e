use std::fmt;

/// Error type shared by every module in the crate.
#[derive(Debug)]
pub enum Error {
    /// A prefix was longer than the model's hard length cap.
    PrefixTooLong {
        len: usize,
        max_len: usize,
    },
    /// A token id is outside the alphabet.
    InvalidToken {
        token: u32,
        alphabet_size: u32,
    },
    /// A tabular model was queried at a prefix its table does not cover.
    PrefixNotCovered(String),
    /// A probability vector failed validation (negative entry or bad sum).
    InvalidCategorical(String),
    /// Temperature must be strictly positive.
    InvalidTemperature(f64),
    /// Full enumeration would exceed the configured state budget.
    EnumerationTooLarge {
        states: u128,
        budget: u64,
    },
    /// The proposal assigns zero probability to a target-positive string.
    SupportViolation(String),
    /// Every particle weight is zero; the population carries no information.
    DegeneratePopulation,
    /// Variance estimation needs at least two replications.
    NeedReplications(usize),
    /// The tempered-target sampler only supports single-token drafts.
    PowerSmcDraftLen(usize),
    /// A parameter failed a precondition; the message names the field.
    InvalidParameter(String),
    /// The page pool has no free pages left.
    OutOfPages,
    /// A particle handle is unknown or already released.
    UnknownHandle(usize),
    /// A text format (model, corpus, workload, profile) failed to parse.
    Parse(String),
    Io(std::io::Error),
    /// An internal invariant was violated; indicates a bug, not bad input.
    Internal(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::PrefixTooLong { len, max_len } => {
                write!(f, "prefix too long: length {len} exceeds max_len {max_len}")
            }
            Error::InvalidToken {
                token,
                alphabet_size,
            } => {
                write!(
                    f,
                    "token id {token} outside alphabet of size {alphabet_size}"
                )
            }
            Error::PrefixNotCovered(prefix) => {
                write!(f, "prefix not covered by model table: \"{prefix}\"")
            }
            Error::InvalidCategorical(msg) => write!(f, "invalid categorical: {msg}"),
            Error::InvalidTemperature(t) => {
                write!(f, "temperature must be positive, got {t}")
            }
            Error::EnumerationTooLarge { states, budget } => {
                write!(
                    f,
                    "enumeration too large: {states} states exceed budget {budget}"
                )
            }
            Error::SupportViolation(s) => {
                write!(
                    f,
                    "proposal not absolutely continuous: zero probability at \"{s}\""
                )
            }
            Error::DegeneratePopulation => write!(f, "degenerate population: all weights zero"),
            Error::NeedReplications(r) => {
                write!(f, "variance needs replications: got {r}, need at least 2")
            }
            Error::PowerSmcDraftLen(k) => {
                write!(f, "PowerSMC requires K=1, got K={k}")
            }
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::OutOfPages => write!(f, "out of pages"),
            Error::UnknownHandle(h) => write!(f, "unknown handle: {h}"),
            Error::Parse(msg) => write!(f, "parse error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Internal(msg) => write!(f, "internal invariant violation: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
