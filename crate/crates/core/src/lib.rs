//! Certified reduced-basis solver for the steady two-dimensional
//! Smagorinsky model.

pub mod assembly;
pub mod certification;
pub mod config;
pub mod eigen;
pub mod eim;
pub mod error;
pub mod fem;
pub mod mesh;
pub mod pipeline;
pub mod quadrature;
pub mod rb_offline;
pub mod rb_online;
pub mod rbf;
pub mod sparse;
pub mod system;
pub mod truth;

pub use error::{Error, Result};

/// Reads a pipeline artifact, reporting a missing file with a hint.
pub(crate) fn read_artifact(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact {
            path: path.to_path_buf(),
            hint: "run the `offline` command for this output directory first".into(),
        },
        _ => Error::Io(e),
    })
}
