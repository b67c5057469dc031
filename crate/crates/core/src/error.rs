use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty window: lo {lo:?} exceeds hi {hi:?}")]
    EmptyWindow { lo: Vec<i64>, hi: Vec<i64> },
    #[error("metric axiom violated: {0}")]
    MetricAxiom(String),
    #[error("unknown point `{0}`")]
    UnknownPoint(String),
    #[error("operators live on different spaces")]
    SpaceMismatch,
    #[error("vector length {got} does not match space size {expected}")]
    IndexMismatch { expected: usize, got: usize },
    #[error("expression error at column {column}: {message}")]
    Expression { column: usize, message: String },
    #[error("evaluation of `{expr}` failed at point {point:?}: {message}")]
    Evaluation {
        expr: String,
        point: Vec<i64>,
        message: String,
    },
    #[error("operation requires a grid window space")]
    NotAGrid,
    #[error("window too small: axis {axis} spans {have} steps, at least {need} required")]
    WindowTooSmall { axis: usize, have: i64, need: i64 },
    #[error("index set mismatch: {0}")]
    IndexSetMismatch(String),
    #[error("missing hypothesis certificate: {0}")]
    MissingCertificate(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no symbolic coefficient source available")]
    NoSymbolicSource,
    #[error("operator is not translation invariant (deviation {deviation:e})")]
    NotConstantCoefficient { deviation: f64 },
    #[error("symbol analysis inconclusive: grid minimum {grid_min:e} does not exceed slack {slack:e}; refine grid")]
    Inconclusive { grid_min: f64, slack: f64 },
    #[error("matrix is singular")]
    Singular,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("linear program failed: {0}")]
    LinearProgram(String),
    #[error("no invertible patches; operator nowhere locally invertible at scale {max_buffer}")]
    NoInvertiblePatches { max_buffer: i64 },
    #[error("commutator term too large: ||T0|| = {norm} > 1/2; window must span at least {min_window} points per axis")]
    ParametrixTooCoarse { norm: f64, min_window: i64 },
    #[error("parametrix refused: {0}")]
    Refused(String),
    #[error("io: {0}")]
    Io(String),
    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
