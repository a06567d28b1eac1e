//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("target spec syntax error at line {line}: {message}")]
    SpecSyntax { line: usize, message: String },

    #[error("target spec references unknown {kind} `{name}`")]
    DanglingReference { kind: &'static str, name: String },

    #[error("target spec declares no polygons")]
    EmptyTarget,

    #[error("polygon {index} is invalid: {reason}")]
    InvalidPolygon { index: usize, reason: String },

    #[error("composition expression error: {0}")]
    Composition(String),

    #[error("point behind the camera (depth {depth} <= 0)")]
    InvisiblePoint { depth: f64 },

    #[error("polygon {index} has a vertex behind the camera at this pose")]
    InvisiblePolygon { index: usize },

    #[error("target not fully visible at this pose")]
    NotVisible,

    #[error("image dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: u32,
        left_h: u32,
        right_w: u32,
        right_h: u32,
    },

    #[error("encoder input size {got} does not match expected {expected}")]
    EncoderInput { expected: usize, got: usize },

    #[error("pose box is degenerate: {0}")]
    DegenerateBox(String),

    #[error("grid step violates the Lipschitz condition: max weighted step {got} >= 1/L_D = {limit}; use steps below {required:?}")]
    StepTooCoarse {
        got: f64,
        limit: f64,
        required: Vec<f64>,
    },

    #[error("empty grid for the given box and step")]
    EmptyGrid,

    #[error("reach set exceeds the in-memory budget of {budget} unique images; use a streaming archive")]
    ReachBudget { budget: usize },

    #[error("clutter constraint unsatisfiable after {attempts} attempts")]
    ClutterConstraint { attempts: usize },

    #[error("unknown selection strategy `{0}`")]
    UnknownStrategy(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("image format error: {0}")]
    ImageFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
