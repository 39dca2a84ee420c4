use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which party a setting list or measurement belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Alice,
    Bob,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::Alice => f.write_str("alice"),
            Side::Bob => f.write_str("bob"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{name} = {value} is outside [0, 1]")]
    InvalidProbability { name: &'static str, value: f64 },

    #[error("matrix is not Hermitian (max |M - M†| = {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("trace is {trace}, expected 1")]
    TraceNotOne { trace: f64 },

    #[error("state is not positive semidefinite (minimum eigenvalue {min_eigenvalue:e})")]
    NotPositive { min_eigenvalue: f64 },

    #[error("coincidence record has zero total counts")]
    ZeroCoincidences,

    #[error("{side} setting index {index} is not declared (only {declared} settings)")]
    UnknownSettingIndex {
        side: Side,
        index: usize,
        declared: usize,
    },

    #[error("missing coincidence record for {}(i={i}, j={j})", trial.map(|t| format!("trial {t}, ")).unwrap_or_default())]
    MissingCell {
        trial: Option<usize>,
        i: usize,
        j: usize,
    },

    #[error("expected a {expected} matrix, got {rows}x{cols}")]
    Shape {
        expected: &'static str,
        rows: usize,
        cols: usize,
    },

    #[error(
        "corner {corner} is singular or ill-conditioned (condition estimate {condition:e}, cap {cap:e}); \
         add a setting whose Bloch vector is linearly independent of the others on each side"
    )]
    IllConditioned {
        corner: char,
        condition: f64,
        cap: f64,
    },

    #[error(
        "zero standard deviation for element ({row}, {col}) of the partial determinant; \
         trials are identical or noiseless, so the ratio is undefined"
    )]
    DegenerateStatistics { row: usize, col: usize },

    #[error("at least {required} trials are required, got {found}")]
    TooFewTrials { found: usize, required: usize },

    #[error("trial {trial}: {source}")]
    InTrial {
        trial: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{side} setting Bloch vectors span only {rank} dimensions; tomography needs 3")]
    RankDeficient { side: Side, rank: usize },

    #[error("invalid eavesdropper policy: {0}")]
    EvePolicy(String),

    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("{path}:{line}: {message}")]
    CountsFile {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
