use thiserror::Error;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("invalid box ({x1}, {y1}, {x2}, {y2}): {reason}")]
    InvalidBox {
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        reason: &'static str,
    },

    #[error("{file}:{line}: malformed line: {reason}")]
    MalformedLine {
        file: String,
        line: usize,
        reason: String,
    },

    #[error("{file}:{line}: class id {class_id} out of range 0..=42")]
    ClassOutOfRange {
        file: String,
        line: usize,
        class_id: i64,
    },

    #[error("{file}:{line}: degenerate box ({reason})")]
    DegenerateBox {
        file: String,
        line: usize,
        reason: String,
    },

    #[error("detection score {score} outside [0, 1]")]
    ScoreOutOfRange { score: f64 },

    #[error("ground-truth set is empty; nothing to evaluate")]
    EmptyGroundTruth,

    #[error("superclass map: {reason}")]
    SuperclassMap { reason: String },

    #[error("ppm: {reason}")]
    Ppm { reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DetectError>;
