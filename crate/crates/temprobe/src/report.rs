//! Run artifacts: machine-readable report, per-item rows, human summary.
//!
//! Everything written here is a pure function of a [`SuiteOutcome`], which
//! itself contains no wall-clock data. Rerunning a suite against the same
//! answers therefore reproduces every artifact byte for byte, and that
//! property is what makes cached reruns diffable.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::suite::{Row, SuiteOutcome, SuiteReport, TestReport, YearDelta};

/// Expected direction of the headline number, shown next to the test name.
/// A two-way arrow marks diffs that are informative in either direction.
fn direction(test: &str) -> &'static str {
    match test {
        "relativization" | "positioning" | "reversal" | "event_dating" | "event_ordering" => "↔",
        "removal" => "↓",
        "fact_checking" => "↑",
        _ => "",
    }
}

fn fmt_pct(v: f64) -> String {
    format!("{v:.1}")
}

fn fmt_diff(d: Option<f64>) -> String {
    match d {
        Some(v) => format!("{v:+.1}"),
        None => "n/a".to_owned(),
    }
}

fn label(test: &str) -> String {
    let arrow = direction(test);
    if arrow.is_empty() {
        test.to_owned()
    } else {
        format!("{test} ({arrow})")
    }
}

/// Serializes the report as pretty JSON with a trailing newline.
pub fn write_report_json(path: &Path, report: &SuiteReport) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(report).expect("report serializes");
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Renders the human summary as markdown.
pub fn render_summary_md(report: &SuiteReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Temporal robustness summary");
    let _ = writeln!(out);
    let _ = writeln!(out, "Model: `{}`", report.model_name);
    let _ = writeln!(out, "Reference year: {}. Seed: {}.", report.now_year, report.seed);
    let _ = writeln!(
        out,
        "Corpus: {} questions, {} facts, {} events, {} claims.",
        report.corpus.qa, report.corpus.quads, report.corpus.events, report.corpus.claims
    );
    for (test, summary) in &report.tests {
        let _ = writeln!(out);
        let _ = writeln!(out, "## {}", label(test));
        let _ = writeln!(out);
        match summary {
            TestReport::Paraphrase(s) => {
                let _ = writeln!(out, "| Items | Base % | Transformed % | Both % | Diff % |");
                let _ = writeln!(out, "|---|---|---|---|---|");
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} |",
                    s.items,
                    fmt_pct(s.base_pct),
                    fmt_pct(s.transformed_pct),
                    fmt_pct(s.intersection_pct),
                    fmt_diff(s.diff_pct)
                );
                if s.skipped > 0 {
                    let _ = writeln!(out);
                    let _ = writeln!(out, "{} items were not transformable.", s.skipped);
                }
            }
            TestReport::Positioning(s) => {
                let _ = writeln!(out, "| Items | Base % | Fronted % | Diff % |");
                let _ = writeln!(out, "|---|---|---|---|");
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} |",
                    s.items,
                    fmt_pct(s.base_pct),
                    fmt_pct(s.fronted_pct),
                    fmt_diff(s.diff_pct)
                );
                if s.skipped > 0 {
                    let _ = writeln!(out);
                    let _ = writeln!(out, "{} items were not transformable.", s.skipped);
                }
            }
            TestReport::Shift(s) => {
                let _ = writeln!(out, "| Offset | Score % |");
                let _ = writeln!(out, "|---|---|");
                for p in &s.scores {
                    let _ = writeln!(out, "| {} | {} |", p.k, fmt_pct(p.score_pct));
                }
                let _ = writeln!(out);
                let _ = writeln!(
                    out,
                    "Diff smallest to largest offset: {} ({} items).",
                    fmt_diff(s.diff_pct),
                    s.items
                );
            }
            TestReport::Reversal(s) => {
                let _ = writeln!(out, "| Items | Forward % | Inverse % | Both % | Diff % |");
                let _ = writeln!(out, "|---|---|---|---|---|");
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} |",
                    s.items,
                    fmt_pct(s.forward_pct),
                    fmt_pct(s.inverse_pct),
                    fmt_pct(s.both_pct),
                    fmt_diff(s.diff_pct)
                );
            }
            TestReport::Fact(s) => {
                let _ = writeln!(
                    out,
                    "Accuracy {}% over {} claims, abstained on {}%.",
                    fmt_pct(s.accuracy_pct),
                    s.items,
                    fmt_pct(s.abstain_pct)
                );
                let _ = writeln!(out);
                let _ = writeln!(out, "| Gold \\ Predicted | Count |");
                let _ = writeln!(out, "|---|---|");
                for (gold, preds) in &s.confusion {
                    for (pred, n) in preds {
                        let _ = writeln!(out, "| {gold} → {pred} | {n} |");
                    }
                }
            }
            TestReport::Dating(s) => {
                let _ = writeln!(out, "| Granularity | Items | Score % |");
                let _ = writeln!(out, "|---|---|---|");
                for (g, score) in &s.scores_pct {
                    let items = s.items.get(g).copied().unwrap_or(0);
                    let _ = writeln!(out, "| {g} | {items} | {} |", fmt_pct(*score));
                }
                let _ = writeln!(out);
                let _ = writeln!(
                    out,
                    "Diff year to day: {}.",
                    fmt_diff(s.diff_pct_year_to_day)
                );
            }
            TestReport::Ordering(s) => {
                let _ = writeln!(out, "| Year gap | Pairs | Score % |");
                let _ = writeln!(out, "|---|---|---|");
                for p in &s.per_distance {
                    let score = match p.score_pct {
                        Some(v) => fmt_pct(v),
                        None => "n/a".to_owned(),
                    };
                    let _ = writeln!(out, "| {} | {} | {score} |", p.distance, p.pairs);
                }
                let _ = writeln!(out);
                let _ = writeln!(
                    out,
                    "Diff near to far: {}. Diff far to near: {}.",
                    fmt_diff(s.diff_pct_near_to_far),
                    fmt_diff(s.diff_pct_far_to_near)
                );
            }
        }
    }
    out
}

pub fn write_summary_md(path: &Path, report: &SuiteReport) -> Result<()> {
    fs::write(path, render_summary_md(report)).map_err(|e| Error::io(path, e))
}

/// Writes one CSV per test under `dir`, headers from the row fields.
pub fn write_rows_csv(dir: &Path, rows: &BTreeMap<String, Vec<Row>>) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (test, rows) in rows {
        let path = dir.join(format!("{test}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        for row in rows {
            w.serialize(row).map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Year error export for offline analysis of how far off dated answers are.
pub fn write_year_deltas_csv(path: &Path, deltas: &[YearDelta]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for d in deltas {
        w.serialize(d).map_err(|e| csv_err(path, e))?;
    }
    // serde headers only appear with at least one record.
    if deltas.is_empty() {
        w.write_record(["granularity", "gold_year", "year_delta"])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{}: {other:?}", path.display())),
    }
}

/// Writes the full artifact set into `out_dir` and returns what was written.
///
/// Layout: report.json, summary.md, dating_year_deltas.csv and one
/// rows/<test>.csv per executed test.
pub fn write_run_artifacts(out_dir: &Path, outcome: &SuiteOutcome) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let report_path = out_dir.join("report.json");
    write_report_json(&report_path, &outcome.report)?;
    written.push(report_path);
    let summary_path = out_dir.join("summary.md");
    write_summary_md(&summary_path, &outcome.report)?;
    written.push(summary_path);
    let deltas_path = out_dir.join("dating_year_deltas.csv");
    write_year_deltas_csv(&deltas_path, &outcome.year_deltas)?;
    written.push(deltas_path);
    written.extend(write_rows_csv(&out_dir.join("rows"), &outcome.rows)?);
    Ok(written)
}
