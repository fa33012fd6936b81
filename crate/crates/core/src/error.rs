use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("quality index {got} outside supported range 1..={max}")]
    QualityOutOfRange { got: usize, max: usize },
    #[error("no adapter installed for quality index {0}")]
    MissingAdapter(usize),
    #[error("branch count {got} outside supported range 1..={max}")]
    BranchesOutOfRange { got: usize, max: usize },
    #[error("budget infeasible: {budget} FLOPs is below the first branch cost of {required} FLOPs")]
    BudgetInfeasible { budget: f64, required: f64 },
    #[error("symbol {symbol} outside coder support of {alphabet} symbols")]
    SymbolOutOfRange { symbol: usize, alphabet: usize },
    #[error("bitstream: {0}")]
    Bitstream(String),
    #[error("bundle: {0}")]
    Bundle(String),
    #[error("manifest hash mismatch for {0}")]
    HashMismatch(String),
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("stage order: {0}")]
    StageOrder(String),
    #[error("training diverged in stage `{stage}` at iteration {iteration} (loss {loss})")]
    Divergence {
        stage: String,
        iteration: usize,
        loss: f64,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
