use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Symmetry(f64),

    #[error("eigensolver did not converge after {0} sweeps")]
    Convergence(usize),

    #[error("function is not deterministic: baseline evaluations {0} and {1} differ")]
    Determinism(f64, f64),

    #[error("exponent overflow guard: |QK^T| entry {0:.3} exceeds {1}")]
    Overflow(f64, f64),

    #[error("empty input")]
    EmptyInput,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("checkpoint mismatch at tensor `{name}`: {detail}")]
    Load { name: String, detail: String },

    #[error("training diverged at iter {iter} (lr {lr:e}): loss is {loss}")]
    Diverged { iter: usize, lr: f64, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
