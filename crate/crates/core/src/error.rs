use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bitstring of length {len} exceeds the limit of {max} bits")]
    BitLength { len: usize, max: usize },

    #[error("word needs {needed} bits but only {limit} are available")]
    WordTooLong { needed: usize, limit: usize },

    #[error("invalid codebook: {0}")]
    InvalidCodebook(String),

    #[error("empty corpus: no symbol has a positive count")]
    EmptyCorpus,

    #[error("index {index} out of range for domain of size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("aggregate report has no contributing devices")]
    EmptyAggregate,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("privacy budget too tight: the smallest setting already spends epsilon = {floor}, above the target {target}")]
    BudgetTooTight { floor: f64, target: f64 },

    #[error("prefix list of {count} entries does not fit the dimension limit {limit}")]
    PrefixListTooLarge { count: usize, limit: u64 },

    #[error("no alpha in (0, 1] satisfies exp(-C_alpha * theta) = delta for theta = {theta}, delta = {delta}")]
    InfeasibleTheta { theta: f64, delta: f64 },

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{path}:{line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },

    #[error("dataset {0} contains no users")]
    NoUsers(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn in_round(self, round: usize) -> Self {
        Error::Round {
            round,
            source: Box::new(self),
        }
    }
}
