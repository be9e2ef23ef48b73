//! Report envelopes, output directory resolution and atomic file writes.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::Format;
use crate::error::CliError;

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "BDSTEIN_OUT_DIR";

/// Outcome of one report row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Violation,
    HypothesisFailed,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Violation => "violation",
            Status::HypothesisFailed => "hypothesis_failed",
        }
    }

    pub fn from_holds(holds: bool) -> Self {
        if holds {
            Status::Pass
        } else {
            Status::Violation
        }
    }

    /// Worst status of a set; hypothesis failures dominate violations.
    pub fn worst(statuses: impl IntoIterator<Item = Status>) -> Status {
        statuses.into_iter().max().unwrap_or(Status::Pass)
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Violation => 1,
            Status::HypothesisFailed => 3,
        }
    }
}

/// Top-level JSON document written by every command.
#[derive(Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub command: &'a str,
    pub seed: u64,
    pub status: Status,
    pub rows: T,
}

/// Where and how a command writes its report.
#[derive(Clone, Debug)]
pub struct Sink {
    pub dir: PathBuf,
    pub format: Format,
}

impl Sink {
    /// Directory precedence: `--out`, then the environment override, then the config, then `out`.
    pub fn resolve(
        cli_dir: Option<&Path>,
        env_dir: Option<PathBuf>,
        config_dir: Option<&Path>,
        format: Format,
    ) -> Self {
        let dir = cli_dir
            .map(Path::to_path_buf)
            .or(env_dir)
            .or_else(|| config_dir.map(Path::to_path_buf))
            .unwrap_or_else(|| PathBuf::from("out"));
        Sink { dir, format }
    }

    /// Writes `<stem>.<ext>` in the configured format.
    pub fn write<T: Serialize>(
        &self,
        stem: &str,
        envelope: &Envelope<'_, T>,
        csv: impl FnOnce() -> String,
    ) -> Result<PathBuf, CliError> {
        let text = match self.format {
            Format::Json => {
                let mut s = serde_json::to_string_pretty(envelope).expect("reports serialize to JSON");
                s.push('\n');
                s
            }
            Format::Csv => csv(),
        };
        let path = self.dir.join(format!("{stem}.{}", self.format.extension()));
        atomic_write(&path, text.as_bytes())?;
        Ok(path)
    }
}

/// Writes through a temporary file in the target directory, then renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io_err = |source| CliError::Io { path: path.display().to_string(), source };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(io_err)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

/// Formats a float for CSV output; non-finite values keep their names.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.12e}")
    } else {
        x.to_string()
    }
}

/// One CSV record without the line terminator.
pub fn csv_line<S: AsRef<[u8]>>(fields: &[S]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(fields).expect("in-memory CSV write");
    let mut bytes = w.into_inner().expect("in-memory CSV flush");
    bytes.pop();
    String::from_utf8(bytes).expect("CSV fields are UTF-8")
}

/// Header line plus one record per row.
pub fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut s = csv_line(header);
    s.push('\n');
    for r in rows {
        s.push_str(&csv_line(&r));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_precedence() {
        let pick = |cli: Option<&str>, env: Option<&str>, cfg: Option<&str>| {
            Sink::resolve(cli.map(Path::new), env.map(PathBuf::from), cfg.map(Path::new), Format::Json).dir
        };
        assert_eq!(pick(Some("a"), Some("b"), Some("c")), PathBuf::from("a"));
        assert_eq!(pick(None, Some("b"), Some("c")), PathBuf::from("b"));
        assert_eq!(pick(None, None, Some("c")), PathBuf::from("c"));
        assert_eq!(pick(None, None, None), PathBuf::from("out"));
    }

    #[test]
    fn hypothesis_failures_dominate() {
        assert_eq!(
            Status::worst([Status::Violation, Status::HypothesisFailed, Status::Pass]),
            Status::HypothesisFailed
        );
        assert_eq!(Status::worst([]), Status::Pass);
        assert_eq!(Status::worst([Status::Pass, Status::Violation]).exit_code(), 1);
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("r.txt");
        atomic_write(&path, b"one").unwrap();
        atomic_write(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }
}
