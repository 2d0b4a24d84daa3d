use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(&'static str),

    #[error("state matrix is not Schur stable (spectral radius {0:.6})")]
    Unstable(f64),

    #[error("no grid point admits a certificate; try a smaller disturbance bound or larger unsafe thresholds g_i ({})", summarize_statuses(.statuses))]
    Infeasible { statuses: Vec<(f64, String)> },

    #[error("linear program failed: {0}")]
    Lp(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn summarize_statuses(statuses: &[(f64, String)]) -> String {
    let mut counts: Vec<(String, usize)> = Vec::new();
    for (_, s) in statuses {
        match counts.iter_mut().find(|(k, _)| k == s) {
            Some((_, c)) => *c += 1,
            None => counts.push((s.clone(), 1)),
        }
    }
    counts
        .iter()
        .map(|(s, c)| format!("{c}x {s}"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    pub(crate) fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
