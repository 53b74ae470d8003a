use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("Newton solve did not converge at step {step} (residual {residual:.3e})")]
    NewtonDivergence { step: usize, residual: f64 },

    #[error("KKT Jacobian is singular at step {step}")]
    SingularKkt { step: usize },

    #[error("quadratic program is infeasible: {0}")]
    Infeasible(String),

    #[error("demonstration tracking stalled with RMS tip error {rms_error:.4} m")]
    NoProgress {
        rms_error: f64,
        best: Box<crate::curvekit::CommandSpline>,
    },

    #[error("timing window [{start}, {end}] contains no samples")]
    EmptyWindow { start: f64, end: f64 },

    #[error("hand speed never drops to {threshold:.4} m/s before the peak (best candidate t = {best_candidate:.4} s)")]
    NoSlowPoint { threshold: f64, best_candidate: f64 },

    #[error("marker {marker} missing for {run} consecutive samples starting at t = {start:.4} s")]
    GapTooLarge { marker: usize, run: usize, start: f64 },

    #[error("measurement ends at t = {end:.4} s, before the critical time {t_c:.4} s")]
    TruncatedBeforeCritical { end: f64, t_c: f64 },

    #[error("unknown rope preset {0}")]
    UnknownPreset(u32),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
