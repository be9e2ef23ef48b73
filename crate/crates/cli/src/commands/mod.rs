//! One module per subcommand. Each computes its rows (in parallel where the grid
//! allows), assembles them in order and writes a single report.

use std::path::PathBuf;

use bdstein::bdp::Truncation;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{Sink, Status};

pub mod bounds;
pub mod distance;
pub mod factors;
pub mod mixture;
pub mod simulate;
pub mod verify;

/// Everything a command needs besides its own config section.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub seed: u64,
    pub sink: Sink,
}

impl Context {
    pub fn truncation(&self) -> Truncation {
        Truncation::with_margin(self.cfg.truncation, self.cfg.margin)
    }
}

/// Summary of a finished command.
pub struct Outcome {
    pub status: Status,
    pub rows: usize,
    pub path: PathBuf,
}

/// Turns a hypothesis-type engine error into a row note and passes others through.
fn hypothesis_note(e: bdstein::Error) -> Result<String, CliError> {
    let e = CliError::from(e);
    if e.exit_code() == 3 {
        Ok(e.to_string())
    } else {
        Err(e)
    }
}

/// Compact JSON rendering of a config value, used as a row label.
fn label<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("config values serialize to JSON")
}
