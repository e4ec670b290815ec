use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes shared across the crate. Numerical routines return these
/// instead of panicking so drivers can report which stage went bad.
#[derive(Debug, Error)]
pub enum Error {
    /// Math op left its domain (log of a non-positive value, division by
    /// zero, non-positive stretch, query outside an interpolation grid...).
    /// `at` identifies the offending tape node or mesh entity when known.
    #[error("domain error in {op}{}: {detail}", fmt_at(.at))]
    Domain {
        op: &'static str,
        at: Option<usize>,
        detail: String,
    },

    /// Caller broke an API precondition (shape mismatch, bad config value).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A linear system factorization failed. `cond` carries a diagonal
    /// condition estimate from the factor when one is available.
    #[error("singular system in {what}{}", fmt_cond(.cond))]
    Singular {
        what: &'static str,
        cond: Option<f64>,
    },

    /// Newton iteration failed even after load-step halving hit its floor.
    #[error("no convergence: residual {residual:.3e} at load {load:.6} after {iterations} iterations")]
    NoConvergence {
        residual: f64,
        load: f64,
        iterations: usize,
    },

    /// Variance estimation had no usable rows (all sensitivities below cutoff).
    #[error("no usable sensitivity rows for variance estimation")]
    NoInformation,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Parse failure in a checkpoint or config file; line is 1-based.
    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },
}

fn fmt_at(at: &Option<usize>) -> String {
    match at {
        Some(i) => format!(" (node {i})"),
        None => String::new(),
    }
}

fn fmt_cond(cond: &Option<f64>) -> String {
    match cond {
        Some(c) => format!(" (condition estimate {c:.3e})"),
        None => String::new(),
    }
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            op,
            at: None,
            detail: detail.into(),
        }
    }

    pub fn domain_at(op: &'static str, at: usize, detail: impl Into<String>) -> Self {
        Error::Domain {
            op,
            at: Some(at),
            detail: detail.into(),
        }
    }

    pub fn singular(what: &'static str) -> Self {
        Error::Singular { what, cond: None }
    }

    pub fn singular_with(what: &'static str, cond: f64) -> Self {
        Error::Singular {
            what,
            cond: Some(cond),
        }
    }
}
