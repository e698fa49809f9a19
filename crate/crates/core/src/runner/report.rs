//! Report generation over completed directories: standalone SVG plots plus a
//! plain-text summary. Works on single runs (metrics file) and on sweeps
//! (summary table), read-only in both cases.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::Real;

use super::metrics::{read_metrics, MetricsRow};
use super::svg::{grouped_bars, line_plot, Series, VLine};
use super::sweep::{best_over_alpha, read_sweep_summary, AggregateRow, SWEEP_SUMMARY_FILE};
use super::train::{RunStatus, RunSummary, METRICS_FILE, SUMMARY_FILE};

pub const REPORT_TEXT_FILE: &str = "report.txt";

/// Canonical panel set for a single run: (file name, title, y label).
const RUN_PANELS: [(&str, &str, &str); 4] = [
    ("td_loss.svg", "Critic TD loss", "td_loss"),
    ("q_abs_mean.svg", "Mean |Q| (unnormalized)", "q_abs_mean"),
    ("grad_norm_total.svg", "Total gradient norm", "grad_norm_total"),
    ("eval_return.svg", "Evaluation return (deterministic policy)", "eval_return_mean"),
];

/// Render a report for `dir`. A directory holding a metrics file is treated
/// as a single run; one holding a sweep summary table as a sweep. Returns
/// the list of files written.
pub fn report(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    if dir.join(METRICS_FILE).exists() {
        report_run(dir)
    } else if dir.join(SWEEP_SUMMARY_FILE).exists() {
        report_sweep(dir)
    } else {
        Err(Error::config(format!(
            "{} holds neither {METRICS_FILE} (single run) nor {SWEEP_SUMMARY_FILE} (sweep)",
            dir.display()
        )))
    }
}

// ---------------------------------------------------------------------------
// Single-run report
// ---------------------------------------------------------------------------

fn panel_points(rows: &[MetricsRow], y_label: &str) -> Vec<(Real, Real)> {
    rows.iter()
        .filter_map(|r| {
            let y = match y_label {
                "td_loss" => Some(r.td_loss),
                "q_abs_mean" => Some(r.q_abs_mean),
                "grad_norm_total" => Some(r.grad_norm_total),
                "eval_return_mean" => r.eval_return_mean,
                other => unreachable!("unknown panel field {other}"),
            };
            y.map(|y| (r.step as Real, y))
        })
        .collect()
}

fn report_run(dir: &Path) -> Result<Vec<PathBuf>> {
    let rows = read_metrics(dir.join(METRICS_FILE))?;
    // The summary is optional (a hard-killed run may lack one); halt
    // annotations come from it when present.
    let summary = RunSummary::load(dir.join(SUMMARY_FILE)).ok();
    let vline = summary.as_ref().and_then(|s| {
        s.halt_step.map(|step| VLine { x: step as Real, label: format!("halted at step {step}") })
    });

    let mut written = Vec::new();
    for (file, title, y_label) in RUN_PANELS {
        let series =
            [Series { label: y_label.to_string(), points: panel_points(&rows, y_label) }];
        let svg = line_plot(title, "step", y_label, &series, vline.as_ref());
        let path = dir.join(file);
        fs::write(&path, svg).map_err(|e| Error::io(path.display().to_string(), e))?;
        written.push(path);
    }

    let mut text = String::new();
    match &summary {
        Some(s) => {
            let status = match s.status {
                RunStatus::Completed => "completed".to_string(),
                RunStatus::Halted => format!(
                    "halted at step {} ({})",
                    s.halt_step.unwrap_or_default(),
                    s.halt_reason.as_deref().unwrap_or("unknown reason")
                ),
            };
            let _ = writeln!(text, "status: {status}");
            let _ = writeln!(text, "steps done: {}", s.steps_done);
            let _ = writeln!(text, "seed: {}", s.seed);
            for (tag, eval) in [("final", &s.final_eval), ("best", &s.best_eval)] {
                if let Some(e) = eval {
                    let score = e
                        .normalized_score
                        .map(|v| format!(", normalized {v:.4}"))
                        .unwrap_or_default();
                    let _ = writeln!(
                        text,
                        "{tag} eval (step {}): return {:.4} +- {:.4}{score}",
                        e.step, e.return_mean, e.return_std
                    );
                }
            }
        }
        None => {
            let _ = writeln!(text, "status: unknown (no summary file)");
        }
    }
    if let Some(last) = rows.last() {
        let _ = writeln!(
            text,
            "last logged step {}: td_loss {:.6}, q_abs_mean {:.4}, grad_norm_total {:.4}",
            last.step, last.td_loss, last.q_abs_mean, last.grad_norm_total
        );
    }
    let flagged: Vec<&MetricsRow> = rows.iter().filter(|r| !r.flags.is_empty()).collect();
    match flagged.last() {
        Some(r) => {
            let _ = writeln!(text, "divergence flags: {} (first at step {})", r.flags, flagged[0].step);
        }
        None => {
            let _ = writeln!(text, "divergence flags: none");
        }
    }

    let path = dir.join(REPORT_TEXT_FILE);
    fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
    written.push(path);
    Ok(written)
}

// ---------------------------------------------------------------------------
// Sweep report
// ---------------------------------------------------------------------------

/// Fixed display orders so charts are comparable across sweeps.
const DECOMP_ORDER: [&str; 4] = ["dec", "vdn", "mix", "cen"];
const EXTRACTION_ORDER: [&str; 2] = ["brac", "awr"];
const METHOD_ORDER: [&str; 3] = ["td", "sarsa", "iql"];

fn report_sweep(dir: &Path) -> Result<Vec<PathBuf>> {
    let rows = read_sweep_summary(dir.join(SWEEP_SUMMARY_FILE))?;
    let aggs = best_over_alpha(&rows);
    let mut written = Vec::new();

    for method in METHOD_ORDER {
        let cells: Vec<&AggregateRow> =
            aggs.iter().filter(|a| a.value_learning.to_string() == method).collect();
        if cells.is_empty() {
            continue;
        }
        let groups: Vec<String> = DECOMP_ORDER
            .iter()
            .filter(|d| cells.iter().any(|c| c.decomp.to_string() == **d))
            .map(|d| d.to_string())
            .collect();
        // normalized scores when every cell has one, raw returns otherwise
        let normalized = cells.iter().all(|c| c.mean_best_normalized.is_some());
        let y_label = if normalized { "best normalized return" } else { "best return" };
        let series: Vec<(String, Vec<Option<Real>>)> = EXTRACTION_ORDER
            .iter()
            .map(|ext| {
                let vals = groups
                    .iter()
                    .map(|d| {
                        cells
                            .iter()
                            .find(|c| {
                                c.decomp.to_string() == *d && c.extraction.to_string() == *ext
                            })
                            .map(|c| {
                                if normalized {
                                    c.mean_best_normalized.unwrap()
                                } else {
                                    c.mean_best_return
                                }
                            })
                    })
                    .collect();
                (ext.to_string(), vals)
            })
            .filter(|(_, vals): &(String, Vec<Option<Real>>)| vals.iter().any(Option::is_some))
            .collect();

        let svg = grouped_bars(
            &format!("Best-over-alpha by cell ({method})"),
            y_label,
            &groups,
            &series,
        );
        let path = dir.join(format!("bars_{method}.svg"));
        fs::write(&path, svg).map_err(|e| Error::io(path.display().to_string(), e))?;
        written.push(path);
    }

    let mut text = String::new();
    let (mut completed, mut halted, mut failed) = (0usize, 0usize, 0usize);
    for row in &rows {
        match row.status.as_str() {
            "completed" => completed += 1,
            "halted" => halted += 1,
            _ => failed += 1,
        }
    }
    let _ = writeln!(
        text,
        "runs: {} total, {completed} completed, {halted} halted, {failed} failed",
        rows.len()
    );
    let _ = writeln!(text, "\nbest-over-alpha per cell:");
    for a in &aggs {
        let norm = a
            .mean_best_normalized
            .map(|v| format!(", normalized {v:.4}"))
            .unwrap_or_default();
        let _ = writeln!(
            text,
            "  {} + {} + {}: alpha {} -> mean best return {:.4}{norm} ({} seeds)",
            a.decomp, a.value_learning, a.extraction, a.alpha, a.mean_best_return, a.seeds
        );
    }
    let problems: Vec<&super::sweep::SweepRow> =
        rows.iter().filter(|r| r.status != "completed").collect();
    if !problems.is_empty() {
        let _ = writeln!(text, "\nnon-completed runs:");
        for r in problems {
            let _ = writeln!(text, "  {} [{}] {}", r.run, r.status, r.note);
        }
    }
    let path = dir.join(REPORT_TEXT_FILE);
    fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
    written.push(path);
    Ok(written)
}
