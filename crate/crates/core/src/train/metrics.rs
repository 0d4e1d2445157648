use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::StepMetrics;
use crate::{Error, Result};

pub const METRICS_HEADER: &str = "step,eps_loss,dur_loss,mel_loss,lr,wallclock";

/// Append-only metrics CSV.
pub struct MetricsLog {
    path: PathBuf,
    file: File,
}

impl MetricsLog {
    /// Starts a fresh log, truncating any existing file.
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = File::create(path)?;
        writeln!(file, "{METRICS_HEADER}")?;
        Ok(MetricsLog {
            path: path.to_path_buf(),
            file,
        })
    }

    /// Reopens a log for a run resumed at `step`: rows at or past `step`
    /// (written after the checkpoint) are dropped so the trace continues
    /// without duplicates.
    pub fn resume(path: &Path, step: u64) -> Result<Self> {
        if !path.exists() {
            return Self::create(path);
        }
        let reader = BufReader::new(File::open(path)?);
        let mut kept = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if i == 0 {
                if line != METRICS_HEADER {
                    return Err(Error::Format(format!("{}: unexpected header {line:?}", path.display())));
                }
                continue;
            }
            let row_step: u64 = line
                .split(',')
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Format(format!("{}: bad row {line:?}", path.display())))?;
            if row_step < step {
                kept.push(line);
            }
        }
        let mut log = Self::create(path)?;
        for line in kept {
            writeln!(log.file, "{line}")?;
        }
        Ok(log)
    }

    pub fn append(&mut self, m: &StepMetrics) -> Result<()> {
        writeln!(
            self.file,
            "{},{},{},{},{},{:.3}",
            m.step, m.eps_loss, m.dur_loss, m.mel_loss, m.lr, m.wallclock
        )?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.file.flush()?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Parsed rows `(step, eps_loss, dur_loss, mel_loss, lr, wallclock)`.
pub fn read_metrics(path: &Path) -> Result<Vec<[f64; 6]>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .skip(1)
        .map(|line| {
            let v: Vec<f64> = line
                .split(',')
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("metrics row {line:?}: {e}")))?;
            v.try_into()
                .map_err(|_| Error::Format(format!("metrics row {line:?}: expected 6 columns")))
        })
        .collect()
}
