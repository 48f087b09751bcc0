use std::str::FromStr;

use crate::metrics::{MetricReport, Rate};
use crate::EvalError;

/// Placeholder for a statistic with no completed runs behind it.
pub const UNDEFINED: &str = "—";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    TextTable,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" | "text_table" | "table" => Ok(ReportFormat::TextTable),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(EvalError::UnknownFormat(other.to_string())),
        }
    }
}

enum Cell {
    Rate(Rate),
    /// A relative error shown as a percentage.
    Percent(Option<f64>),
    Plain(Option<f64>),
}

impl Cell {
    fn text(&self) -> String {
        match self {
            Cell::Rate(r) => format!("{}%", trim(r.rate * 100.0)),
            Cell::Percent(Some(v)) => format!("{}%", trim(v * 100.0)),
            Cell::Plain(Some(v)) => format!("{v:.4}"),
            Cell::Percent(None) | Cell::Plain(None) => UNDEFINED.into(),
        }
    }

    fn raw(&self) -> String {
        match self {
            Cell::Rate(r) => r.rate.to_string(),
            Cell::Percent(Some(v)) | Cell::Plain(Some(v)) => v.to_string(),
            Cell::Percent(None) | Cell::Plain(None) => UNDEFINED.into(),
        }
    }
}

fn trim(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn rows(r: &MetricReport) -> Vec<(String, Cell)> {
    let mut out: Vec<(String, Cell)> = vec![
        ("Compilation Success".into(), Cell::Rate(r.compilation_success)),
        ("Perfect Replication".into(), Cell::Rate(r.perfect_replication)),
        ("Partial Replication".into(), Cell::Rate(r.partial_replication)),
        ("Correct Direction".into(), Cell::Rate(r.correct_direction)),
        ("Coefficient Median Error".into(), Cell::Percent(r.coefficient_median_error)),
        ("Coefficient Error < 1%".into(), Cell::Rate(r.coefficient_error_below_1pct)),
        ("Coefficient Error < 10%".into(), Cell::Rate(r.coefficient_error_below_10pct)),
        ("Standard Error Median Error".into(), Cell::Percent(r.standard_error_median_error)),
        ("Standard Error Error < 1%".into(), Cell::Rate(r.standard_error_error_below_1pct)),
        ("Standard Error Error < 10%".into(), Cell::Rate(r.standard_error_error_below_10pct)),
        ("P-value Average abs Error".into(), Cell::Plain(r.p_value_mean_abs_error)),
        ("P-value Median abs Error".into(), Cell::Plain(r.p_value_median_abs_error)),
        ("P-value abs Error < 1%".into(), Cell::Rate(r.p_value_abs_error_below_1pct)),
        ("P-value abs Error < 10%".into(), Cell::Rate(r.p_value_abs_error_below_10pct)),
        ("Significant Level Correctness".into(), Cell::Rate(r.significance_level_correct)),
        ("Significant Level Error == 1".into(), Cell::Rate(r.significance_level_error_1)),
        ("Significant Level Error == 2".into(), Cell::Rate(r.significance_level_error_2)),
        ("Significant Level Error == 3".into(), Cell::Rate(r.significance_level_error_3)),
    ];
    for (m, rate) in &r.partial_by_method {
        out.push((format!("Partial Replication [method={m}]"), Cell::Rate(*rate)));
    }
    for (t, rate) in &r.partial_by_tag {
        out.push((format!("Partial Replication [tag={t}]"), Cell::Rate(*rate)));
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Renders the report with rows in the replication table's order.
pub fn render_report(report: &MetricReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes") + "\n",
        ReportFormat::Csv => {
            let mut out = String::from("metric,value\n");
            for (label, cell) in rows(report) {
                out.push_str(&format!("{},{}\n", csv_field(&label), csv_field(&cell.raw())));
            }
            out
        }
        ReportFormat::TextTable => {
            let rows = rows(report);
            let width = rows.iter().map(|(l, _)| l.chars().count()).max().unwrap_or(0).max(6);
            let mut out = format!("{:<width$}  Value\n{}\n", "Metric", "-".repeat(width + 9));
            for (label, cell) in rows {
                out.push_str(&format!("{label:<width$}  {}\n", cell.text()));
            }
            out.push_str(&format!(
                "\n{} tasks: {} perfect, {} partial only, {} neither, {} failed\n",
                report.task_count, report.perfect, report.partial_only, report.neither, report.failed
            ));
            out
        }
    }
}
