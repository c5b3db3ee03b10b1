use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("dimension mismatch: {left_h}x{left_w} vs {right_h}x{right_w}")]
    DimMismatch {
        left_h: usize,
        left_w: usize,
        right_h: usize,
        right_w: usize,
    },

    #[error("{height}x{width} is not divisible by {factor}")]
    NotDivisible {
        height: usize,
        width: usize,
        factor: usize,
    },

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("mask coverage unattainable after {tries} tries (last achieved {achieved:.5})")]
    Coverage { achieved: f64, tries: usize },

    #[error("could not place strokes outside the exclusion zone after {tries} tries")]
    Placement { tries: usize },

    #[error("non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("non-finite loss term `{term}` at step {step}: {breakdown}")]
    NonFinite {
        term: &'static str,
        step: usize,
        breakdown: String,
    },

    #[error("non-finite loss term `{0}`")]
    NonFiniteTerm(&'static str),

    #[error("parameter `{name}`: {detail}")]
    Param { name: String, detail: String },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
