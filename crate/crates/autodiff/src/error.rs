use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{0}")]
    Contract(String),

    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),

    #[error("parameter `{0}` is frozen")]
    Frozen(String),

    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
