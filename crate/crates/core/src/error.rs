use alloc::string::String;

/// Errors produced by the simulation, analysis and experiment layers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A domain type invariant does not hold. `invariant` names it.
    #[error("validation failed: {invariant}")]
    Validation { invariant: String },
    /// Absorption cannot reproduce the requested reverberation time.
    #[error("calibration failed: {0}")]
    Calibration(String),
    /// Inconsistent or unsupported configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// Input outside the domain of an operation (e.g. source outside room).
    #[error("domain error: {0}")]
    Domain(String),
    /// Zero-length propagation path.
    #[error("degenerate distance: {0}")]
    DegenerateDistance(String),
    /// Delay network design is impossible for the given inputs.
    #[error("design error: {0}")]
    Design(String),
    /// Feedback loop gain at or above unity.
    #[error("unstable delay network: {0}")]
    Stability(String),
    /// HRIR directions leave a gap larger than allowed.
    #[error("coverage error: {0}")]
    Coverage(String),
    /// Unsupported channel count, sample rate or data layout.
    #[error("format error: {0}")]
    Format(String),
    /// Energy decay does not reach the level required for a fit.
    #[error("insufficient decay range: reached {floor_db:.1} dB, need {required_db:.1} dB")]
    Range { floor_db: f64, required_db: f64 },
    /// Analysis input is unusable (silent channel, empty signal).
    #[error("analysis error: {0}")]
    Analysis(String),
    /// Impulse responses cannot be compared.
    #[error("comparison error: {0}")]
    Comparison(String),
    /// Loudness normalization of a silent stimulus.
    #[error("normalization error: {0}")]
    Normalization(String),
    /// Session cannot be built from the supplied conditions and stimuli.
    #[error("session build error: {0}")]
    Build(String),
    /// Response submitted out of order or twice.
    #[error("sequencing error: {0}")]
    Sequencing(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid<T>(invariant: impl Into<String>) -> Result<T> {
    Err(Error::Validation {
        invariant: invariant.into(),
    })
}
