use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh request: {0}")]
    Mesh(String),
    #[error("carving failed on cell {cell}: {reason}")]
    Carve { cell: usize, reason: String },
    #[error("degenerate cell {0}")]
    DegenerateCell(usize),
    #[error("tetrahedralization failed on cell {0}")]
    Tetrahedralize(usize),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("linear solver failure: {0}")]
    Solver(String),
    #[error("conjugate gradient: {0}")]
    Cg(String),
    #[error("Picard iteration did not converge in {0} iterations")]
    Picard(usize),
    #[error("point ({0}, {1}, {2}) is not inside the soil domain")]
    Outside(f64, f64, f64),
    #[error("network: {0}")]
    Network(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
