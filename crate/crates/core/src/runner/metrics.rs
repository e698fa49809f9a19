//! Metrics rows and their comma-separated on-disk form. One row per logging
//! interval; evaluation columns are empty except at evaluation steps, and
//! the mixer columns are empty for decompositions without a mixer.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::Real;

pub const METRICS_HEADER: &str = "step,td_loss,q_mean,q_abs_mean,actor_loss,grad_norm_total,jacobian_opnorm,loop_gain_svn,eval_return_mean,eval_return_std,normalized_score,flags";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub td_loss: Real,
    pub q_mean: Real,
    pub q_abs_mean: Real,
    pub actor_loss: Real,
    pub grad_norm_total: Real,
    pub jacobian_opnorm: Option<Real>,
    pub loop_gain_svn: Option<Real>,
    pub eval_return_mean: Option<Real>,
    pub eval_return_std: Option<Real>,
    pub normalized_score: Option<Real>,
    /// Semicolon-joined divergence flag names; empty when healthy.
    pub flags: String,
}

fn push_opt(line: &mut String, v: Option<Real>) {
    match v {
        Some(x) => write!(line, ",{x}").unwrap(),
        None => line.push(','),
    }
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        debug_assert!(!self.flags.contains(','));
        let mut line = format!(
            "{},{},{},{},{},{}",
            self.step, self.td_loss, self.q_mean, self.q_abs_mean, self.actor_loss, self.grad_norm_total
        );
        push_opt(&mut line, self.jacobian_opnorm);
        push_opt(&mut line, self.loop_gain_svn);
        push_opt(&mut line, self.eval_return_mean);
        push_opt(&mut line, self.eval_return_std);
        push_opt(&mut line, self.normalized_score);
        line.push(',');
        line.push_str(&self.flags);
        line
    }

    pub fn from_csv_line(line: &str, lineno: usize) -> Result<MetricsRow> {
        let fields: Vec<&str> = line.split(',').collect();
        let want = METRICS_HEADER.split(',').count();
        if fields.len() != want {
            return Err(Error::config(format!(
                "metrics line {lineno}: expected {want} fields, found {}",
                fields.len()
            )));
        }
        let req = |i: usize| -> Result<Real> {
            fields[i].parse().map_err(|_| {
                Error::config(format!("metrics line {lineno}: bad number '{}'", fields[i]))
            })
        };
        let opt = |i: usize| -> Result<Option<Real>> {
            if fields[i].is_empty() {
                Ok(None)
            } else {
                req(i).map(Some)
            }
        };
        Ok(MetricsRow {
            step: fields[0].parse().map_err(|_| {
                Error::config(format!("metrics line {lineno}: bad step '{}'", fields[0]))
            })?,
            td_loss: req(1)?,
            q_mean: req(2)?,
            q_abs_mean: req(3)?,
            actor_loss: req(4)?,
            grad_norm_total: req(5)?,
            jacobian_opnorm: opt(6)?,
            loop_gain_svn: opt(7)?,
            eval_return_mean: opt(8)?,
            eval_return_std: opt(9)?,
            normalized_score: opt(10)?,
            flags: fields[11].to_string(),
        })
    }
}

/// Buffered line-by-line metrics file writer.
pub struct MetricsWriter {
    out: BufWriter<File>,
    path: String,
    rows: u64,
}

impl MetricsWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<MetricsWriter> {
        let path = path.as_ref();
        let file =
            File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = MetricsWriter {
            out: BufWriter::new(file),
            path: path.display().to_string(),
            rows: 0,
        };
        w.write_line(METRICS_HEADER)?;
        Ok(w)
    }

    fn write_line(&mut self, line: &str) -> Result<()> {
        writeln!(self.out, "{line}").map_err(|e| Error::io(self.path.clone(), e))
    }

    pub fn write_row(&mut self, row: &MetricsRow) -> Result<()> {
        self.rows += 1;
        let line = row.to_csv_line();
        self.write_line(&line)
    }

    pub fn rows_written(&self) -> u64 {
        self.rows
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(self.path.clone(), e))
    }
}

/// Read a metrics file back, validating the header names exactly.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::config(format!("{}: empty metrics file", path.display())))?;
    if header != METRICS_HEADER {
        let have: Vec<&str> = header.split(',').collect();
        let missing: Vec<&str> =
            METRICS_HEADER.split(',').filter(|c| !have.contains(c)).collect();
        return Err(Error::config(format!(
            "{}: metrics header mismatch, missing columns [{}]",
            path.display(),
            missing.join(", ")
        )));
    }
    lines.map(|(i, line)| MetricsRow::from_csv_line(line, i + 1)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_row() -> MetricsRow {
        MetricsRow {
            step: 300,
            td_loss: 0.125,
            q_mean: -1.5,
            q_abs_mean: 1.75,
            actor_loss: 0.5,
            grad_norm_total: 12.25,
            jacobian_opnorm: Some(1.375),
            loop_gain_svn: Some(0.6),
            eval_return_mean: None,
            eval_return_std: None,
            normalized_score: None,
            flags: String::new(),
        }
    }

    #[test]
    fn header_names_every_field_in_order() {
        assert_eq!(
            METRICS_HEADER.split(',').collect::<Vec<_>>(),
            vec![
                "step",
                "td_loss",
                "q_mean",
                "q_abs_mean",
                "actor_loss",
                "grad_norm_total",
                "jacobian_opnorm",
                "loop_gain_svn",
                "eval_return_mean",
                "eval_return_std",
                "normalized_score",
                "flags"
            ]
        );
    }

    #[test]
    fn roundtrip_with_empty_columns() {
        let row = sample_row();
        let parsed = MetricsRow::from_csv_line(&row.to_csv_line(), 2).unwrap();
        assert_eq!(parsed, row);

        let mut with_eval = sample_row();
        with_eval.eval_return_mean = Some(7.0);
        with_eval.eval_return_std = Some(0.0);
        with_eval.flags = "grad_blowup".into();
        let parsed = MetricsRow::from_csv_line(&with_eval.to_csv_line(), 3).unwrap();
        assert_eq!(parsed, with_eval);
    }

    #[test]
    fn file_roundtrip_and_header_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let mut w = MetricsWriter::create(&path).unwrap();
        w.write_row(&sample_row()).unwrap();
        w.finish().unwrap();
        let rows = read_metrics(&path).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0], sample_row());

        std::fs::write(&path, "step,td_loss\n1,2\n").unwrap();
        let err = read_metrics(&path).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("q_mean"), "error should name missing columns: {msg}");
    }

    #[test]
    fn float_formatting_is_shortest_roundtrip() {
        let mut row = sample_row();
        row.td_loss = 0.1; // not exactly representable; Display prints "0.1"
        let line = row.to_csv_line();
        assert!(line.contains(",0.1,"));
        let parsed = MetricsRow::from_csv_line(&line, 2).unwrap();
        assert_eq!(parsed.td_loss, 0.1);
    }
}
