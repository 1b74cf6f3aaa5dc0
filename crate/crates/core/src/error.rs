use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index out of bounds: {0}")]
    Bounds(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("refusing to allocate {requested} entries (cap {cap}): {what}")]
    CapExceeded {
        what: String,
        requested: u128,
        cap: u128,
    },

    #[error("non-finite input to {0}")]
    NonFinite(&'static str),

    #[error("singular pencil: {0}")]
    SingularPencil(String),

    #[error("singular system (pivot ratio {pivot_ratio:.3e}): {what}")]
    Singular { what: String, pivot_ratio: f64 },

    #[error("cannot shift block core {direction:+} from mode {mode} of {modes}")]
    Boundary {
        mode: usize,
        modes: usize,
        direction: i8,
    },

    #[error("lapack: {0}")]
    Lapack(#[from] ndarray_linalg::error::LinalgError),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed tensor-train file: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
