//! Scenario files, run pipeline and output artifacts for the `kshape` binary.

// `!(x > 0.0)` is used on purpose to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod pipeline;
pub mod scenario;

use std::path::{Path, PathBuf};

pub use scenario::{Mode, Scenario};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] kshape_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
