use thiserror::Error;

/// Errors raised by the tomography library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} order {order} exceeds the supported maximum {max}")]
    OrderTooLarge {
        what: &'static str,
        order: usize,
        max: usize,
    },

    #[error("Fock truncation would need {needed}+ levels (hard cap {cap}); parameters too extreme")]
    TruncationOverflow { needed: usize, cap: usize },

    #[error("invalid state spec `{input}`: field `{field}` at position {position}: {reason}")]
    StateParse {
        input: String,
        field: String,
        position: usize,
        reason: String,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(
        "grid [{x_min}, {x_max}] too narrow for slice at theta={theta}: {detail}; widen the grid or raise n_points"
    )]
    GridTooNarrow {
        theta: f64,
        x_min: f64,
        x_max: f64,
        detail: String,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("KL support violation at x={x}: reference pdf {f:e} where the other pdf vanishes")]
    SupportViolation { x: f64, f: f64 },

    #[error("KL support violation at theta={theta}: {source}")]
    SliceSupportViolation {
        theta: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("moment <a^+{k} a^{l}> expected real, imaginary part {imag:e}")]
    NonRealMoment { k: usize, l: usize, imag: f64 },

    #[error("|alpha| = {0:e} too small for a gain ratio")]
    VanishingAmplitude(f64),

    #[error("fit needs {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("degenerate fit design: {0}")]
    DegenerateDesign(String),

    #[error("malformed tomogram CSV: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
