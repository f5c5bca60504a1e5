//! Per-step record sinks.
//!
//! Column order is fixed: step, V, r_*, lambda_*, cov_*, distortion, min_grad_cos, mu.
//! Floats are written as `{:.16e}` (17 significant digits), which reloads bit-exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use covbench_core::train::StepRecord;

use crate::config::OutputFormat;
use crate::error::HarnessError;

pub fn columns(num_objectives: usize) -> Vec<String> {
    let mut cols = vec!["step".to_string(), "V".to_string()];
    for prefix in ["r", "lambda", "cov"] {
        cols.extend((0..num_objectives).map(|m| format!("{prefix}_{m}")));
    }
    cols.extend(["distortion", "min_grad_cos", "mu"].map(String::from));
    cols
}

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn row(rec: &StepRecord, num_objectives: usize) -> Result<Vec<String>, HarnessError> {
    let lens = [rec.rewards.len(), rec.weights.len(), rec.covariances.len()];
    if lens.iter().any(|l| *l != num_objectives) {
        return Err(HarnessError::Config(format!(
            "record for step {} has {lens:?} entries, expected {num_objectives}",
            rec.step
        )));
    }
    let mut out = Vec::with_capacity(3 * num_objectives + 5);
    out.push(rec.step.to_string());
    out.push(format_float(rec.value));
    for v in rec.rewards.iter().chain(&rec.weights).chain(&rec.covariances) {
        out.push(format_float(*v));
    }
    for v in [rec.distortion, rec.min_grad_cos, rec.mu] {
        out.push(format_float(v));
    }
    Ok(out)
}

enum Inner {
    Csv(Box<csv::Writer<File>>),
    Jsonl(BufWriter<File>),
}

/// Single writer for one output file.
pub struct RecordSink {
    inner: Inner,
    columns: Vec<String>,
    num_objectives: usize,
    flush_every: usize,
    pending: usize,
    path: PathBuf,
}

impl RecordSink {
    /// Creates the file and writes the header (CSV only).
    pub fn create(path: &Path, format: OutputFormat, num_objectives: usize, flush_every: usize) -> Result<Self, HarnessError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = File::create(path)?;
        let columns = columns(num_objectives);
        let inner = match format {
            OutputFormat::Csv => {
                let mut w = csv::Writer::from_writer(file);
                w.write_record(&columns)?;
                w.flush()?;
                Inner::Csv(Box::new(w))
            }
            OutputFormat::Jsonl => Inner::Jsonl(BufWriter::new(file)),
        };
        Ok(Self {
            inner,
            columns,
            num_objectives,
            flush_every: flush_every.max(1),
            pending: 0,
            path: path.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write(&mut self, rec: &StepRecord) -> Result<(), HarnessError> {
        let fields = row(rec, self.num_objectives)?;
        match &mut self.inner {
            Inner::Csv(w) => w.write_record(&fields)?,
            Inner::Jsonl(w) => {
                // Keys are fixed strings and values are plain numbers, so no escaping is needed.
                let body: Vec<String> = self
                    .columns
                    .iter()
                    .zip(&fields)
                    .map(|(k, v)| format!("\"{k}\":{v}"))
                    .collect();
                writeln!(w, "{{{}}}", body.join(","))?;
            }
        }
        self.pending += 1;
        if self.pending >= self.flush_every {
            self.flush()?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), HarnessError> {
        match &mut self.inner {
            Inner::Csv(w) => w.flush()?,
            Inner::Jsonl(w) => w.flush()?,
        }
        self.pending = 0;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), HarnessError> {
        self.flush()
    }
}
