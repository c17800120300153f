//! On-disk formats: session directories, annotations, ground truth,
//! pipeline configuration and evaluation reports.

mod annotations;
mod config;
mod report;
mod session;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use annotations::{
    load_annotations, load_ground_truth, save_annotations, save_ground_truth, AnnotationFile, FrameRecord, GroundTruthFile,
    HandRecord, ANNOTATION_FORMAT_VERSION,
};
pub use config::PipelineConfig;
pub use report::{format_ablation, format_report};
pub use session::{load_session, read_mask_pgm, read_ply, save_session, write_mask_pgm, write_ply, SESSION_FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum IoError {
    /// A required file or directory is missing.
    #[error("layout error: {0}")]
    Layout(String),
    /// A file exists but its content breaks a documented invariant.
    #[error("validation error in {file}: {field}: {message}")]
    Validation { file: PathBuf, field: String, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl IoError {
    pub(crate) fn validation(file: &Path, field: impl Into<String>, message: impl Into<String>) -> Self {
        IoError::Validation { file: file.to_path_buf(), field: field.into(), message: message.into() }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io { path: path.to_path_buf(), source }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            IoError::Layout(format!("missing {}", path.display()))
        } else {
            IoError::io(path, e)
        }
    })
}

pub(crate) fn read_text(path: &Path) -> Result<String, IoError> {
    let bytes = read_file(path)?;
    String::from_utf8(bytes).map_err(|_| IoError::validation(path, "encoding", "not valid UTF-8"))
}

pub(crate) fn write_file(path: &Path, contents: &[u8]) -> Result<(), IoError> {
    std::fs::write(path, contents).map_err(|e| IoError::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<(), IoError> {
    std::fs::create_dir_all(path).map_err(|e| IoError::io(path, e))
}
