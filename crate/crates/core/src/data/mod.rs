//! In-memory tabular data: typed columns with per-cell missing values.

mod csv_io;
mod describe;
mod transform;

pub use csv_io::{load_csv, read_csv, write_csv, CsvOptions};
pub use describe::{describe, ColumnSummary, NumericSummary, TableSummary};
pub use transform::{derive_column, median_split, one_hot_encode, Transform, HIGH_GROUP_COLUMN};

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{EconError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Real,
    Integer,
    Categorical,
    Text,
    Boolean,
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ColumnKind::Real => "real",
            ColumnKind::Integer => "integer",
            ColumnKind::Categorical => "categorical",
            ColumnKind::Text => "text",
            ColumnKind::Boolean => "boolean",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Real(Vec<Option<f64>>),
    Integer(Vec<Option<i64>>),
    Categorical(Vec<Option<String>>),
    Text(Vec<Option<String>>),
    Boolean(Vec<Option<bool>>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Real(v) => v.len(),
            ColumnData::Integer(v) => v.len(),
            ColumnData::Categorical(v) | ColumnData::Text(v) => v.len(),
            ColumnData::Boolean(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> ColumnKind {
        match self {
            ColumnData::Real(_) => ColumnKind::Real,
            ColumnData::Integer(_) => ColumnKind::Integer,
            ColumnData::Categorical(_) => ColumnKind::Categorical,
            ColumnData::Text(_) => ColumnKind::Text,
            ColumnData::Boolean(_) => ColumnKind::Boolean,
        }
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            ColumnData::Real(v) => v[row].is_none(),
            ColumnData::Integer(v) => v[row].is_none(),
            ColumnData::Categorical(v) | ColumnData::Text(v) => v[row].is_none(),
            ColumnData::Boolean(v) => v[row].is_none(),
        }
    }

    fn select(&self, rows: &[usize]) -> ColumnData {
        fn pick<T: Clone>(v: &[T], rows: &[usize]) -> Vec<T> {
            rows.iter().map(|&r| v[r].clone()).collect()
        }
        match self {
            ColumnData::Real(v) => ColumnData::Real(pick(v, rows)),
            ColumnData::Integer(v) => ColumnData::Integer(pick(v, rows)),
            ColumnData::Categorical(v) => ColumnData::Categorical(pick(v, rows)),
            ColumnData::Text(v) => ColumnData::Text(pick(v, rows)),
            ColumnData::Boolean(v) => ColumnData::Boolean(pick(v, rows)),
        }
    }
}

/// A single cell value, used for lookups and equality tests against user input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CellValue {
    Bool(bool),
    Number(f64),
    Text(String),
}

impl CellValue {
    /// Loose equality: numbers compare numerically, text compares against the
    /// textual rendering of the other side.
    pub fn matches(&self, other: &CellValue) -> bool {
        match (self, other) {
            (CellValue::Number(a), CellValue::Number(b)) => a == b,
            (CellValue::Bool(a), CellValue::Bool(b)) => a == b,
            (a, b) => a.to_string() == b.to_string(),
        }
    }
}

impl fmt::Display for CellValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellValue::Bool(b) => write!(f, "{b}"),
            CellValue::Number(x) => f.write_str(&format_number(*x)),
            CellValue::Text(s) => f.write_str(s),
        }
    }
}

/// Shortest textual form of a number; integer-valued numbers print without a fraction.
pub fn format_number(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

impl Column {
    pub fn new(name: impl Into<String>, data: ColumnData) -> Self {
        Self { name: name.into(), data }
    }

    pub fn real(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self::new(name, ColumnData::Real(values.into_iter().map(Some).collect()))
    }

    pub fn real_opt(name: impl Into<String>, values: Vec<Option<f64>>) -> Self {
        Self::new(name, ColumnData::Real(values))
    }

    pub fn text<S: Into<String>>(name: impl Into<String>, values: Vec<S>) -> Self {
        Self::new(name, ColumnData::Text(values.into_iter().map(|s| Some(s.into())).collect()))
    }

    pub fn categorical<S: Into<String>>(name: impl Into<String>, values: Vec<S>) -> Self {
        Self::new(
            name,
            ColumnData::Categorical(values.into_iter().map(|s| Some(s.into())).collect()),
        )
    }

    pub fn kind(&self) -> ColumnKind {
        self.data.kind()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn missing_count(&self) -> usize {
        (0..self.len()).filter(|&r| self.data.is_missing(r)).count()
    }

    pub fn is_numeric(&self) -> bool {
        matches!(
            self.data,
            ColumnData::Real(_) | ColumnData::Integer(_) | ColumnData::Boolean(_)
        )
    }

    /// Numeric view of the column (booleans map to 0/1).
    pub fn to_f64(&self) -> Result<Vec<Option<f64>>> {
        match &self.data {
            ColumnData::Real(v) => Ok(v.clone()),
            ColumnData::Integer(v) => Ok(v.iter().map(|x| x.map(|i| i as f64)).collect()),
            ColumnData::Boolean(v) => {
                Ok(v.iter().map(|x| x.map(|b| if b { 1.0 } else { 0.0 })).collect())
            }
            _ => Err(EconError::NonNumericColumn(self.name.clone())),
        }
    }

    pub fn cell(&self, row: usize) -> Option<CellValue> {
        match &self.data {
            ColumnData::Real(v) => v[row].map(CellValue::Number),
            ColumnData::Integer(v) => v[row].map(|i| CellValue::Number(i as f64)),
            ColumnData::Categorical(v) | ColumnData::Text(v) => {
                v[row].clone().map(CellValue::Text)
            }
            ColumnData::Boolean(v) => v[row].map(CellValue::Bool),
        }
    }

    /// Textual key per cell, used for grouping and level detection.
    pub fn keys(&self) -> Vec<Option<String>> {
        (0..self.len()).map(|r| self.cell(r).map(|c| c.to_string())).collect()
    }
}

/// Named, typed columns of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    name: String,
    columns: Vec<Column>,
    row_count: usize,
}

impl DataTable {
    pub fn new(name: impl Into<String>, columns: Vec<Column>) -> Result<Self> {
        let row_count = columns.first().map_or(0, Column::len);
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(EconError::DuplicateColumn(c.name.clone()));
            }
            if c.len() != row_count {
                return Err(EconError::LengthMismatch {
                    column: c.name.clone(),
                    expected: row_count,
                    got: c.len(),
                });
            }
        }
        Ok(Self { name: name.into(), columns, row_count })
    }

    pub fn empty(name: impl Into<String>) -> Self {
        Self { name: name.into(), columns: Vec::new(), row_count: 0 }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.iter().any(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| EconError::UnknownColumn(name.to_string()))
    }

    pub fn position(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| EconError::UnknownColumn(name.to_string()))
    }

    pub fn numeric(&self, name: &str) -> Result<Vec<Option<f64>>> {
        self.column(name)?.to_f64()
    }

    /// Returns a new table with `column` appended.
    pub fn with_column(&self, column: Column) -> Result<Self> {
        if self.has_column(&column.name) {
            return Err(EconError::NameCollision(column.name));
        }
        let mut columns = self.columns.clone();
        columns.push(column);
        if self.columns.is_empty() {
            return DataTable::new(self.name.clone(), columns);
        }
        if columns.last().map(Column::len) != Some(self.row_count) {
            let c = columns.pop().unwrap();
            return Err(EconError::LengthMismatch {
                column: c.name.clone(),
                expected: self.row_count,
                got: c.len(),
            });
        }
        Ok(Self { name: self.name.clone(), columns, row_count: self.row_count })
    }

    /// Replaces (or appends) a column with the same name.
    pub fn replace_column(&self, column: Column) -> Result<Self> {
        let mut columns = self.columns.clone();
        match columns.iter().position(|c| c.name == column.name) {
            Some(i) => columns[i] = column,
            None => columns.push(column),
        }
        DataTable::new(self.name.clone(), columns)
    }

    /// Keeps the rows whose mask entry is true.
    pub fn filter_rows(&self, mask: &[bool]) -> Result<Self> {
        if mask.len() != self.row_count {
            return Err(EconError::InvalidArgument(format!(
                "row mask has {} entries, table has {} rows",
                mask.len(),
                self.row_count
            )));
        }
        let rows: Vec<usize> = (0..self.row_count).filter(|&r| mask[r]).collect();
        Ok(self.select_rows(&rows))
    }

    /// Builds a table from the given row indices (repeats allowed).
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let columns = self
            .columns
            .iter()
            .map(|c| Column::new(c.name.clone(), c.data.select(rows)))
            .collect();
        Self { name: self.name.clone(), columns, row_count: rows.len() }
    }

    /// Rows where every listed column is present.
    pub fn complete_rows(&self, names: &[&str]) -> Result<Vec<usize>> {
        let cols: Vec<&Column> = names.iter().map(|n| self.column(n)).collect::<Result<_>>()?;
        Ok((0..self.row_count)
            .filter(|&r| cols.iter().all(|c| !c.data.is_missing(r)))
            .collect())
    }

    /// One-line schema description per column, handed to the language model.
    pub fn schema_text(&self) -> String {
        let cols: Vec<String> =
            self.columns.iter().map(|c| format!("{} ({})", c.name, c.kind())).collect();
        format!("{} [{} rows]: {}", self.name, self.row_count, cols.join(", "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unequal_columns() {
        let err = DataTable::new(
            "t",
            vec![Column::real("a", vec![1.0, 2.0]), Column::real("b", vec![1.0])],
        )
        .unwrap_err();
        assert!(matches!(err, EconError::LengthMismatch { .. }));
    }

    #[test]
    fn rejects_duplicate_names() {
        let err = DataTable::new(
            "t",
            vec![Column::real("a", vec![1.0]), Column::real("a", vec![2.0])],
        )
        .unwrap_err();
        assert_eq!(err, EconError::DuplicateColumn("a".into()));
    }

    #[test]
    fn missing_cells_are_counted() {
        let c = Column::real_opt("a", vec![Some(1.0), None, Some(3.0)]);
        assert_eq!(c.missing_count(), 1);
    }

    #[test]
    fn cell_matching_is_loose_across_kinds() {
        assert!(CellValue::Number(1982.0).matches(&CellValue::Text("1982".into())));
        assert!(!CellValue::Number(1982.0).matches(&CellValue::Number(1983.0)));
    }
}
