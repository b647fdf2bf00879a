use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("index ({i}, {j}, {k}) out of range for grid {nx}x{ny}x{nt}")]
    IndexOutOfRange {
        i: usize,
        j: usize,
        k: usize,
        nx: usize,
        ny: usize,
        nt: usize,
    },
    #[error("stencil not available at node ({i}, {j}, {k}): {reason}")]
    StencilUnavailable {
        i: usize,
        j: usize,
        k: usize,
        reason: &'static str,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("expression error: {0}")]
    Expression(String),
    #[error("CFL ratio {ratio:.4} violates the bound {bound}")]
    CflViolation { ratio: f64, bound: f64 },
    #[error("non-finite value produced at time layer {layer}")]
    Instability { layer: usize },
    #[error("Carleman weight exponent {exponent:.1} overflows at x = ({x:.4}, {y:.4}), t = {t:.4}")]
    WeightOverflow { exponent: f64, x: f64, y: f64, t: f64 },
    #[error("grids are not aligned: {0}")]
    Misaligned(String),
    #[error("singular normal matrix")]
    Singular,
    #[error("least-squares solver did not converge: relative residual {relative_residual:.3e} after {iterations} iterations")]
    NotConverged {
        iterations: usize,
        relative_residual: f64,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
