use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the grasp detection pipeline.
#[derive(Debug, Error)]
pub enum GraspError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at iteration {iteration}; diagnostic checkpoint written to {path:?}")]
    NonFiniteLoss { iteration: usize, path: Option<PathBuf> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, GraspError>;
