//! Append-only CSV record of every run.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const HEADER: &str = "timestamp,benchmark,operation,seed,estimate,stderr,runtime_s,config_hash";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub timestamp: String,
    pub benchmark: String,
    pub operation: String,
    pub seed: u64,
    pub estimate: f64,
    pub stderr: f64,
    pub runtime_s: f64,
    pub config_hash: String,
}

pub struct ResultsLedger {
    path: PathBuf,
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    CliError::config(path.display().to_string(), e.to_string())
}

impl ResultsLedger {
    /// `ledger.csv` inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        ResultsLedger {
            path: dir.join("ledger.csv"),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, row: &LedgerRow) -> Result<()> {
        if let Some(dir) = self.path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        let fresh = !self.path.exists();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| CliError::io(&self.path, e))?;
        let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
        w.serialize(row).map_err(|e| csv_error(&self.path, e))?;
        w.flush().map_err(|e| CliError::io(&self.path, e))
    }

    pub fn rows(&self) -> Result<Vec<LedgerRow>> {
        if !self.path.exists() {
            return Ok(vec![]);
        }
        let mut r = csv::Reader::from_path(&self.path).map_err(|e| csv_error(&self.path, e))?;
        r.deserialize().map(|row| row.map_err(|e| csv_error(&self.path, e))).collect()
    }
}
