//! CSV, JSON and markdown renderings of a report.

use std::path::Path;

use serde_json::json;

use super::{MeanSe, MetricRow, Report};

pub const COLUMNS: [&str; 11] = [
    "item_id",
    "recall",
    "precision",
    "f1",
    "jaccard",
    "exact",
    "semantic_jaccard",
    "tokens",
    "tool_calls",
    "seconds",
    "failed",
];

pub const SEMANTIC_NOTE: &str =
    "semantic_jaccard is a stand-in measure: Jaccard overlap of the concept ids in the generated and reference expressions.";

const AGGREGATE_LABEL: &str = "mean ± se";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown format `{other}`, expected csv, json or markdown")),
        }
    }
}

fn cells(r: &MetricRow) -> [String; 11] {
    [
        r.item_id.clone(),
        format!("{:.6}", r.recall),
        format!("{:.6}", r.precision),
        format!("{:.6}", r.f1),
        format!("{:.6}", r.jaccard),
        r.exact_match.to_string(),
        format!("{:.6}", r.semantic_jaccard),
        r.tokens.to_string(),
        r.tool_calls.to_string(),
        format!("{:.3}", r.seconds),
        r.failed.to_string(),
    ]
}

fn pm(m: MeanSe) -> String {
    format!("{:.4} ± {:.4}", m.mean, m.se)
}

fn aggregate_cells(report: &Report) -> [String; 11] {
    let a = &report.aggregate;
    [
        AGGREGATE_LABEL.to_string(),
        pm(a.recall),
        pm(a.precision),
        pm(a.f1),
        pm(a.jaccard),
        pm(a.exact),
        pm(a.semantic_jaccard),
        pm(a.tokens),
        pm(a.tool_calls),
        pm(a.seconds),
        pm(a.failed),
    ]
}

fn to_csv(report: &Report) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COLUMNS).expect("in-memory write");
    for r in &report.rows {
        w.write_record(cells(r)).expect("in-memory write");
    }
    w.write_record(aggregate_cells(report)).expect("in-memory write");
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

fn to_markdown(report: &Report) -> String {
    let line = |cs: &[String]| format!("| {} |\n", cs.join(" | "));
    let mut out = format!(
        "# Benchmark report\n\nmode: {}, delegation: {}, kb: {}, items: {}\n\n",
        report.mode.as_str(),
        on_off(report.delegation),
        on_off(report.kb_enabled),
        report.rows.len()
    );
    out.push_str(&line(&COLUMNS.map(String::from)));
    out.push_str(&line(&COLUMNS.map(|_| "---".to_string())));
    for r in &report.rows {
        out.push_str(&line(&cells(r)));
    }
    out.push_str(&line(&aggregate_cells(report)));
    out.push('\n');
    out.push_str(SEMANTIC_NOTE);
    out.push('\n');
    out
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

fn to_json(report: &Report) -> String {
    let mut s = serde_json::to_string_pretty(&json!({
        "mode": report.mode,
        "delegation": report.delegation,
        "kb_enabled": report.kb_enabled,
        "columns": COLUMNS,
        "rows": report.rows,
        "aggregate": report.aggregate,
        "note": SEMANTIC_NOTE,
    }))
    .expect("report serialises");
    s.push('\n');
    s
}

pub fn export_report(report: &Report, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => to_csv(report),
        ReportFormat::Json => to_json(report),
        ReportFormat::Markdown => to_markdown(report),
    }
}

pub fn write_report(report: &Report, format: ReportFormat, path: impl AsRef<Path>) -> std::io::Result<()> {
    std::fs::write(path, export_report(report, format))
}
