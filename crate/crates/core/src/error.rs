use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("time step {t} outside [1, {steps}]")]
    TimeStep { t: usize, steps: usize },

    #[error("band alignment failed: {0}")]
    BandAlignment(String),

    #[error("scene generation failed: {0}")]
    Scene(String),

    #[error("matrix is not positive definite (pivot {pivot} = {value})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("class '{0}' has no pixels in the mask")]
    EmptyClass(&'static str),
}

impl Error {
    /// True for failures of the arithmetic itself rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::NotPositiveDefinite { .. } | Error::Diverged { .. }
        )
    }
}
