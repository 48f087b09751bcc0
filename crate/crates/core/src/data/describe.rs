use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{ColumnData, ColumnKind, DataTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericSummary {
    pub mean: f64,
    pub sd: Option<f64>,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub name: String,
    pub kind: ColumnKind,
    pub count: usize,
    pub missing: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub numeric: Option<NumericSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<BTreeMap<String, usize>>,
}

/// Per-column summary, in column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSummary {
    pub table: String,
    pub rows: usize,
    pub columns: Vec<ColumnSummary>,
}

pub fn describe(table: &DataTable) -> TableSummary {
    let columns = table
        .columns()
        .iter()
        .map(|c| {
            let missing = c.missing_count();
            let count = c.len() - missing;
            let (numeric, levels) = match &c.data {
                ColumnData::Categorical(v) | ColumnData::Text(v) => {
                    let mut levels = BTreeMap::new();
                    for s in v.iter().flatten() {
                        *levels.entry(s.clone()).or_insert(0) += 1;
                    }
                    (None, Some(levels))
                }
                _ => {
                    let vals: Vec<f64> =
                        c.to_f64().unwrap_or_default().into_iter().flatten().collect();
                    (numeric_summary(&vals), None)
                }
            };
            ColumnSummary { name: c.name.clone(), kind: c.kind(), count, missing, numeric, levels }
        })
        .collect();
    TableSummary { table: table.name().to_string(), rows: table.row_count(), columns }
}

fn numeric_summary(vals: &[f64]) -> Option<NumericSummary> {
    if vals.is_empty() {
        return None;
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let sd = (vals.len() > 1)
        .then(|| (vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some(NumericSummary { mean, sd, min, max })
}

impl TableSummary {
    /// JSON object keyed by column name, in column order.
    pub fn to_json(&self) -> Value {
        let mut obj = Map::new();
        for c in &self.columns {
            let mut v = serde_json::to_value(c).expect("summary serializes");
            if let Value::Object(m) = &mut v {
                m.remove("name");
            }
            obj.insert(c.name.clone(), v);
        }
        Value::Object(obj)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} ({} rows)\n", self.table, self.rows);
        let _ = writeln!(
            out,
            "{:<20} {:<12} {:>8} {:>8} {:>12} {:>12} {:>12} {:>12}",
            "column", "kind", "count", "missing", "mean", "sd", "min", "max"
        );
        for c in &self.columns {
            let _ = write!(out, "{:<20} {:<12} {:>8} {:>8}", c.name, c.kind, c.count, c.missing);
            if let Some(s) = &c.numeric {
                let sd = s.sd.map_or("-".to_string(), |v| format!("{v:.4}"));
                let _ = write!(out, " {:>12.4} {:>12} {:>12.4} {:>12.4}", s.mean, sd, s.min, s.max);
            } else if let Some(levels) = &c.levels {
                let shown: Vec<String> =
                    levels.iter().take(8).map(|(k, v)| format!("{k}:{v}")).collect();
                let more = if levels.len() > 8 { ", ..." } else { "" };
                let _ = write!(out, " levels {{{}{more}}}", shown.join(", "));
            }
            out.push('\n');
        }
        out
    }
}
