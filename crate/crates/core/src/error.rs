use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown functional group `{name}`; valid names: {valid}")]
    UnknownGroup { name: String, valid: String },

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("column {col} out of range for image width {width}")]
    ColumnOutOfRange { col: usize, width: usize },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),

    #[error("no trace found: no column contains ink darker than the threshold")]
    NoTraceFound,

    #[error("trace too sparse: need at least 2 points, got {0}")]
    TooSparse(usize),

    #[error("trace spans {lo}..{hi} cm^-1 but the window needs {window_end}..{window_start}")]
    WindowNotCovered {
        lo: f64,
        hi: f64,
        window_start: f64,
        window_end: f64,
    },

    #[error("spectrum is already normalized")]
    AlreadyNormalized,

    #[error("spectrum is not normalized")]
    NotNormalized,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("batch too small for batch normalization in training mode: {0} values per channel")]
    InsufficientBatch(usize),

    #[error("backward called before a training-mode forward pass")]
    BackwardBeforeForward,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("missing band template for `{0}`")]
    MissingTemplate(&'static str),

    #[error("train and test datasets share the tag `{0}`")]
    TagCollision(String),

    #[error("k = {k} out of range 1..={n_classes}")]
    KOutOfRange { k: usize, n_classes: usize },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("repeat {repeat}, fold {fold}: {source}")]
    Fold {
        repeat: usize,
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
