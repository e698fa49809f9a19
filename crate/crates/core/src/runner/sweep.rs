//! Cartesian hyperparameter sweeps: every axis combination × every seed runs
//! as an independent job in its own directory, failures are recorded without
//! stopping siblings, and the results land in two tidy CSV tables.

use std::collections::BTreeMap;
use std::fs;
use std::panic::AssertUnwindSafe;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::policyext::ExtractMethod;
use crate::valuedecomp::Decomp;
use crate::valuelearn::ValueMethod;
use crate::Real;

use super::config::RunConfig;
use super::train::{train, RunStatus, RunSummary};

/// Per-run rows, one per (decomp, value_learning, extraction, alpha, seed).
pub const SWEEP_SUMMARY_FILE: &str = "summary.csv";
/// Per-cell aggregation: seeds averaged, then the best alpha per cell.
pub const SWEEP_BEST_FILE: &str = "best_over_alpha.csv";

// ---------------------------------------------------------------------------
// Grid specification
// ---------------------------------------------------------------------------

/// A sweep grid: a complete base config plus axis overrides. Every axis left
/// out sweeps over the single value in `base`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: RunConfig,
    #[serde(default)]
    pub axes: SweepAxes,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    pub decomp: Option<Vec<Decomp>>,
    pub value_learning: Option<Vec<ValueMethod>>,
    pub extraction: Option<Vec<ExtractMethod>>,
    pub alpha: Option<Vec<Real>>,
    pub seeds: Option<Vec<u64>>,
}

impl SweepSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        // same contract as RunConfig::load: bad grid paths are config errors
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read grid {}: {e}", path.display())))?;
        let spec: SweepSpec = toml::from_str(&text)
            .map_err(|e| Error::config(format!("sweep spec {}: {e}", path.display())))?;
        Ok(spec)
    }

    /// The full Cartesian product as (run name, concrete config) pairs, in
    /// deterministic axis order.
    pub fn expand(&self) -> Result<Vec<(String, RunConfig)>> {
        let decomps = self.axes.decomp.clone().unwrap_or_else(|| vec![self.base.decomp]);
        let methods = self
            .axes
            .value_learning
            .clone()
            .unwrap_or_else(|| vec![self.base.value_learning]);
        let extractions =
            self.axes.extraction.clone().unwrap_or_else(|| vec![self.base.extraction]);
        let alphas = self.axes.alpha.clone().unwrap_or_else(|| vec![self.base.alpha]);
        let seeds = self.axes.seeds.clone().unwrap_or_else(|| vec![self.base.seed]);

        let mut combos = Vec::new();
        for &decomp in &decomps {
            for &value_learning in &methods {
                for &extraction in &extractions {
                    for &alpha in &alphas {
                        for &seed in &seeds {
                            let mut config = self.base.clone();
                            config.decomp = decomp;
                            config.value_learning = value_learning;
                            config.extraction = extraction;
                            config.alpha = alpha;
                            config.seed = seed;
                            let name = format!(
                                "{decomp}_{value_learning}_{extraction}_a{alpha}_s{seed}"
                            );
                            combos.push((name, config));
                        }
                    }
                }
            }
        }
        let mut names: Vec<&str> = combos.iter().map(|(n, _)| n.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("sweep axes contain duplicate values"));
        }
        Ok(combos)
    }
}

// ---------------------------------------------------------------------------
// Result rows
// ---------------------------------------------------------------------------

pub const SWEEP_SUMMARY_HEADER: &str = "run,decomp,value_learning,extraction,alpha,seed,\
                                        status,final_return,best_return,final_normalized,\
                                        best_normalized,note";

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub run: String,
    pub decomp: Decomp,
    pub value_learning: ValueMethod,
    pub extraction: ExtractMethod,
    pub alpha: Real,
    pub seed: u64,
    /// `completed`, `halted`, or `failed`.
    pub status: String,
    pub final_return: Option<Real>,
    pub best_return: Option<Real>,
    pub final_normalized: Option<Real>,
    pub best_normalized: Option<Real>,
    /// Halt reason or error text; empty for clean runs.
    pub note: String,
}

impl SweepRow {
    fn from_summary(run: &str, config: &RunConfig, summary: &RunSummary) -> Self {
        SweepRow {
            run: run.to_string(),
            decomp: config.decomp,
            value_learning: config.value_learning,
            extraction: config.extraction,
            alpha: config.alpha,
            seed: config.seed,
            status: match summary.status {
                RunStatus::Completed => "completed".into(),
                RunStatus::Halted => "halted".into(),
            },
            final_return: summary.final_eval.as_ref().map(|e| e.return_mean),
            best_return: summary.best_eval.as_ref().map(|e| e.return_mean),
            final_normalized: summary.final_eval.as_ref().and_then(|e| e.normalized_score),
            best_normalized: summary.best_eval.as_ref().and_then(|e| e.normalized_score),
            note: summary.halt_reason.clone().unwrap_or_default(),
        }
    }

    fn failed(run: &str, config: &RunConfig, note: String) -> Self {
        SweepRow {
            run: run.to_string(),
            decomp: config.decomp,
            value_learning: config.value_learning,
            extraction: config.extraction,
            alpha: config.alpha,
            seed: config.seed,
            status: "failed".into(),
            final_return: None,
            best_return: None,
            final_normalized: None,
            best_normalized: None,
            note,
        }
    }

    fn to_csv_line(&self) -> String {
        let mut line = format!(
            "{},{},{},{},{},{},{}",
            self.run,
            self.decomp,
            self.value_learning,
            self.extraction,
            self.alpha,
            self.seed,
            self.status
        );
        for cell in
            [self.final_return, self.best_return, self.final_normalized, self.best_normalized]
        {
            line.push(',');
            if let Some(v) = cell {
                line.push_str(&v.to_string());
            }
        }
        line.push(',');
        // keep the CSV parseable: the note must not introduce columns/rows
        line.push_str(&self.note.replace([',', '\n'], ";"));
        line
    }
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

/// Run the whole grid with `workers` parallel jobs, each in
/// `<out_dir>/<run name>/`. Individual failures (errors or panics) become
/// `failed` rows; the sweep always produces the full table.
pub fn sweep(spec: &SweepSpec, workers: usize, out_dir: impl AsRef<Path>) -> Result<Vec<SweepRow>> {
    if workers == 0 {
        return Err(Error::config("sweep needs at least one worker"));
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let combos = spec.expand()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("worker pool: {e}")))?;
    let mut rows: Vec<SweepRow> = pool.install(|| {
        use rayon::prelude::*;
        combos.par_iter().map(|(name, config)| run_one(name, config, out_dir)).collect()
    });
    rows.sort_by(|a, b| a.run.cmp(&b.run));

    write_summary_csv(&rows, out_dir.join(SWEEP_SUMMARY_FILE))?;
    write_best_over_alpha(&rows, out_dir.join(SWEEP_BEST_FILE))?;
    Ok(rows)
}

fn run_one(name: &str, config: &RunConfig, out_dir: &Path) -> SweepRow {
    let run_dir = out_dir.join(name);
    match std::panic::catch_unwind(AssertUnwindSafe(|| train(config, &run_dir))) {
        Ok(Ok(summary)) => SweepRow::from_summary(name, config, &summary),
        Ok(Err(e)) => SweepRow::failed(name, config, e.to_string()),
        Err(_) => SweepRow::failed(name, config, "panicked".into()),
    }
}

fn write_summary_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from(SWEEP_SUMMARY_HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(&row.to_csv_line());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Parse a sweep summary table back into rows. Rejections name the column
/// or line at fault.
pub fn read_sweep_summary(path: impl AsRef<Path>) -> Result<Vec<SweepRow>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != SWEEP_SUMMARY_HEADER {
        let expected: Vec<&str> = SWEEP_SUMMARY_HEADER.split(',').collect();
        let got: Vec<&str> = header.split(',').collect();
        let missing: Vec<&str> =
            expected.iter().filter(|c| !got.contains(c)).copied().collect();
        return Err(Error::config(format!(
            "sweep summary {} has a bad header (missing columns: {})",
            path.display(),
            if missing.is_empty() { "none, order differs".to_string() } else { missing.join(", ") }
        )));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 {
            return Err(Error::config(format!(
                "sweep summary line {lineno}: expected 12 fields, got {}",
                fields.len()
            )));
        }
        let parse_opt = |s: &str, col: &str| -> Result<Option<Real>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<Real>().map(Some).map_err(|_| {
                    Error::config(format!("sweep summary line {lineno}: bad {col} '{s}'"))
                })
            }
        };
        rows.push(SweepRow {
            run: fields[0].to_string(),
            decomp: fields[1]
                .parse()
                .map_err(|_| Error::config(format!("line {lineno}: bad decomp '{}'", fields[1])))?,
            value_learning: fields[2].parse().map_err(|_| {
                Error::config(format!("line {lineno}: bad value_learning '{}'", fields[2]))
            })?,
            extraction: fields[3].parse().map_err(|_| {
                Error::config(format!("line {lineno}: bad extraction '{}'", fields[3]))
            })?,
            alpha: fields[4]
                .parse()
                .map_err(|_| Error::config(format!("line {lineno}: bad alpha '{}'", fields[4])))?,
            seed: fields[5]
                .parse()
                .map_err(|_| Error::config(format!("line {lineno}: bad seed '{}'", fields[5])))?,
            status: fields[6].to_string(),
            final_return: parse_opt(fields[7], "final_return")?,
            best_return: parse_opt(fields[8], "best_return")?,
            final_normalized: parse_opt(fields[9], "final_normalized")?,
            best_normalized: parse_opt(fields[10], "best_normalized")?,
            note: fields[11].to_string(),
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Best-over-alpha aggregation
// ---------------------------------------------------------------------------

pub const SWEEP_BEST_HEADER: &str =
    "decomp,value_learning,extraction,alpha,mean_best_return,mean_best_normalized,seeds";

/// One cell of the aggregated table: the alpha whose seed-averaged best
/// return is highest for a (decomp, value_learning, extraction) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub decomp: Decomp,
    pub value_learning: ValueMethod,
    pub extraction: ExtractMethod,
    pub alpha: Real,
    pub mean_best_return: Real,
    pub mean_best_normalized: Option<Real>,
    pub seeds: usize,
}

/// Seed-average completed runs per (cell, alpha), then keep the best alpha
/// per cell. Cells with no completed run are dropped.
pub fn best_over_alpha(rows: &[SweepRow]) -> Vec<AggregateRow> {
    type CellKey = (String, String, String);
    let mut cells: BTreeMap<CellKey, Vec<&SweepRow>> = BTreeMap::new();
    for row in rows {
        if row.status == "completed" && row.best_return.is_some() {
            let key = (
                row.decomp.to_string(),
                row.value_learning.to_string(),
                row.extraction.to_string(),
            );
            cells.entry(key).or_default().push(row);
        }
    }

    let mut out = Vec::new();
    for rows in cells.values() {
        // group by alpha, preserving first-seen order for determinism
        let mut alphas: Vec<Real> = Vec::new();
        for row in rows {
            if !alphas.contains(&row.alpha) {
                alphas.push(row.alpha);
            }
        }
        let mut best: Option<AggregateRow> = None;
        for &alpha in &alphas {
            let members: Vec<&&SweepRow> =
                rows.iter().filter(|r| r.alpha == alpha).collect();
            let n = members.len() as Real;
            let mean_return =
                members.iter().map(|r| r.best_return.unwrap()).sum::<Real>() / n;
            let norms: Vec<Real> =
                members.iter().filter_map(|r| r.best_normalized).collect();
            let mean_norm = if norms.len() == members.len() {
                Some(norms.iter().sum::<Real>() / n)
            } else {
                None
            };
            let candidate = AggregateRow {
                decomp: members[0].decomp,
                value_learning: members[0].value_learning,
                extraction: members[0].extraction,
                alpha,
                mean_best_return: mean_return,
                mean_best_normalized: mean_norm,
                seeds: members.len(),
            };
            let better = match &best {
                None => true,
                Some(b) => candidate.mean_best_return > b.mean_best_return,
            };
            if better {
                best = Some(candidate);
            }
        }
        out.extend(best);
    }
    out
}

fn write_best_over_alpha(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from(SWEEP_BEST_HEADER);
    text.push('\n');
    for agg in best_over_alpha(rows) {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            agg.decomp,
            agg.value_learning,
            agg.extraction,
            agg.alpha,
            agg.mean_best_return,
            agg.mean_best_normalized.map(|v| v.to_string()).unwrap_or_default(),
            agg.seeds
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}
