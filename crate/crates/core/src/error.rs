use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("row {row} has zero norm")]
    ZeroNorm { row: usize },

    #[error("row {row} has norm {norm}, expected unit norm")]
    NotUnitNorm { row: usize, norm: f64 },

    #[error("anchor {row} (speaker {speaker}) has no positive samples")]
    EmptyPositives { row: usize, speaker: usize },

    #[error("anchor {row} (speaker {speaker}) has no negative samples")]
    EmptyNegatives { row: usize, speaker: usize },

    #[error("speaker {speaker} has no class vector")]
    MissingClassVector { speaker: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("activation cache does not belong to the current encoder parameters")]
    StaleCache,

    #[error("vanished gradients: both task gradients are zero")]
    VanishedGradients,

    #[error(
        "insufficient pairs: requested {requested_target} target / {requested_nontarget} nontarget, \
         at most {max_target} / {max_nontarget} available"
    )]
    InsufficientPairs {
        requested_target: usize,
        requested_nontarget: usize,
        max_target: usize,
        max_nontarget: usize,
    },

    #[error("scores need both target and nontarget trials ({targets} targets, {nontargets} nontargets)")]
    SingleClass { targets: usize, nontargets: usize },

    #[error("unknown utterance id {0}")]
    UnknownId(usize),

    #[error("non-finite {what} at epoch {epoch} step {step}: {detail}")]
    NonFinite {
        what: String,
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}
