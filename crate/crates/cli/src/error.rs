use std::path::PathBuf;

use thiserror::Error;

use crate::config::Violation;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read config {path}: {source}")]
    ConfigRead { path: PathBuf, source: std::io::Error },

    #[error("malformed config: {0}")]
    ConfigParse(#[from] serde_json::Error),

    #[error("config failed validation:\n{}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("stage '{stage}': {source}")]
    Stage {
        stage: String,
        #[source]
        source: sheetsew_core::Error,
    },

    #[error("writing {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },

    #[error("acceptance checks failed: {}", .0.join("; "))]
    CheckFailed(Vec<String>),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| format!("  {x}")).collect::<Vec<_>>().join("\n")
}

impl CliError {
    /// 0 ok, 1 validation, 2 numerical failure, 3 failed `--check`.
    pub fn exit_code(&self) -> i32 {
        use sheetsew_core::Error as E;
        match self {
            Self::ConfigRead { .. } | Self::ConfigParse(_) | Self::Validation(_) => 1,
            Self::Stage { source, .. } => match source {
                E::DimensionMismatch { .. }
                | E::InvalidIndexSet(_)
                | E::InvalidRect(_)
                | E::OutsideBox(_)
                | E::InvalidPartition(_)
                | E::Domain(_)
                | E::InvalidParameter(_)
                | E::Precondition(_)
                | E::GridTooLarge { .. } => 1,
                _ => 2,
            },
            Self::Output { .. } => 2,
            Self::CheckFailed(_) => 3,
        }
    }
}
