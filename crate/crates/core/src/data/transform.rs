use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{format_number, CellValue, Column, ColumnData, DataTable};
use crate::error::{EconError, Result};

const MAX_LEVELS: usize = 1000;

/// Name of the flag column appended by [`median_split`].
pub const HIGH_GROUP_COLUMN: &str = "high_group";

#[derive(Debug, Clone, PartialEq)]
enum Level {
    Num(f64),
    Str(String),
}

impl Level {
    fn label(&self) -> String {
        match self {
            Level::Num(x) => format_number(*x),
            Level::Str(s) => s.clone(),
        }
    }
}

fn cell_levels(col: &Column) -> Result<Vec<Option<Level>>> {
    match &col.data {
        ColumnData::Categorical(v) | ColumnData::Text(v) => {
            Ok(v.iter().map(|s| s.clone().map(Level::Str)).collect())
        }
        ColumnData::Boolean(v) => {
            Ok(v.iter().map(|b| b.map(|b| Level::Num(b as u8 as f64))).collect())
        }
        ColumnData::Integer(v) => Ok(v.iter().map(|x| x.map(|x| Level::Num(x as f64))).collect()),
        ColumnData::Real(v) => {
            if v.iter().flatten().any(|x| x.fract() != 0.0) {
                return Err(EconError::NonCategoricalColumn(col.name.clone()));
            }
            Ok(v.iter().map(|x| x.map(Level::Num)).collect())
        }
    }
}

fn sorted_levels(cells: &[Option<Level>]) -> Vec<Level> {
    let mut levels: Vec<Level> = Vec::new();
    for l in cells.iter().flatten() {
        if !levels.contains(l) {
            levels.push(l.clone());
        }
    }
    levels.sort_by(|a, b| match (a, b) {
        (Level::Num(x), Level::Num(y)) => x.partial_cmp(y).unwrap_or(Ordering::Equal),
        (Level::Str(x), Level::Str(y)) => x.cmp(y),
        (Level::Num(_), Level::Str(_)) => Ordering::Less,
        (Level::Str(_), Level::Num(_)) => Ordering::Greater,
    });
    levels
}

/// Replaces each named column by `<col>__<level>` indicator columns.
///
/// Numeric levels are ordered numerically and text levels lexicographically;
/// with `drop_first` the first level is the omitted reference category.
pub fn one_hot_encode(table: &DataTable, columns: &[String], drop_first: bool) -> Result<DataTable> {
    let mut encoded: HashMap<&str, Vec<Column>> = HashMap::new();
    for name in columns {
        let col = table.column(name)?;
        let cells = cell_levels(col)?;
        let levels = sorted_levels(&cells);
        if levels.len() > MAX_LEVELS {
            return Err(EconError::TooManyLevels {
                column: name.clone(),
                levels: levels.len(),
                limit: MAX_LEVELS,
            });
        }
        let skip = usize::from(drop_first);
        let indicators = levels
            .iter()
            .skip(skip)
            .map(|level| {
                let values = cells
                    .iter()
                    .map(|c| c.as_ref().map(|c| if c == level { 1.0 } else { 0.0 }))
                    .collect();
                Column::real_opt(format!("{name}__{}", level.label()), values)
            })
            .collect();
        encoded.insert(name.as_str(), indicators);
    }

    let mut out = Vec::new();
    for col in table.columns() {
        match encoded.remove(col.name.as_str()) {
            Some(indicators) => out.extend(indicators),
            None => out.push(col.clone()),
        }
    }
    let mut seen = BTreeSet::new();
    for c in &out {
        if !seen.insert(c.name.clone()) {
            return Err(EconError::NameCollision(c.name.clone()));
        }
    }
    DataTable::new(table.name().to_string(), out)
}

/// Column transforms available to [`derive_column`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Log,
    Square,
    Product,
    Difference,
    IndicatorGe(f64),
}

impl Transform {
    fn arity(&self) -> usize {
        match self {
            Transform::Product | Transform::Difference => 2,
            _ => 1,
        }
    }

    fn label(&self) -> &'static str {
        match self {
            Transform::Log => "log",
            Transform::Square => "square",
            Transform::Product => "product",
            Transform::Difference => "difference",
            Transform::IndicatorGe(_) => "indicator_ge",
        }
    }

    /// Parses the transform name used in tool arguments.
    pub fn from_name(name: &str, threshold: Option<f64>) -> Result<Self> {
        match name {
            "log" => Ok(Transform::Log),
            "square" => Ok(Transform::Square),
            "product" => Ok(Transform::Product),
            "difference" => Ok(Transform::Difference),
            "indicator_ge" => threshold.map(Transform::IndicatorGe).ok_or_else(|| {
                EconError::InvalidArgument("indicator_ge needs a threshold".into())
            }),
            other => Err(EconError::InvalidArgument(format!("unknown transform '{other}'"))),
        }
    }
}

/// Appends a column computed from `sources`. Returns the new table and any
/// notes raised along the way (e.g. cells set missing by a domain violation).
pub fn derive_column(
    table: &DataTable,
    new_name: &str,
    transform: Transform,
    sources: &[String],
) -> Result<(DataTable, Vec<String>)> {
    if sources.len() != transform.arity() {
        return Err(EconError::ArityMismatch {
            transform: transform.label().into(),
            expected: transform.arity(),
            got: sources.len(),
        });
    }
    let inputs: Vec<Vec<Option<f64>>> =
        sources.iter().map(|s| table.numeric(s)).collect::<Result<_>>()?;
    if table.has_column(new_name) {
        return Err(EconError::NameCollision(new_name.to_string()));
    }
    let mut notes = Vec::new();
    let values: Vec<Option<f64>> = match transform {
        Transform::Log => {
            let mut bad = 0;
            let v = inputs[0]
                .iter()
                .map(|x| {
                    x.and_then(|x| {
                        if x > 0.0 {
                            Some(x.ln())
                        } else {
                            bad += 1;
                            None
                        }
                    })
                })
                .collect();
            if bad > 0 {
                notes.push(format!(
                    "log({}): {bad} nonpositive value(s) set to missing",
                    sources[0]
                ));
            }
            v
        }
        Transform::Square => inputs[0].iter().map(|x| x.map(|x| x * x)).collect(),
        Transform::Product => inputs[0]
            .iter()
            .zip(&inputs[1])
            .map(|(a, b)| Some(a.as_ref()? * b.as_ref()?))
            .collect(),
        Transform::Difference => inputs[0]
            .iter()
            .zip(&inputs[1])
            .map(|(a, b)| Some(a.as_ref()? - b.as_ref()?))
            .collect(),
        Transform::IndicatorGe(t) => {
            inputs[0].iter().map(|x| x.map(|x| if x >= t { 1.0 } else { 0.0 })).collect()
        }
    };
    Ok((table.with_column(Column::real_opt(new_name, values))?, notes))
}

pub(crate) fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Appends the boolean column [`HIGH_GROUP_COLUMN`]: true iff the reference value is
/// strictly above the median (ties fall in the low group).
///
/// With `key_column`/`key_value` the median is taken over the matching rows only,
/// and each entity's flag comes from its own reference row, so the flag is constant
/// within an entity.
pub fn median_split(
    table: &DataTable,
    value_column: &str,
    entity_column: Option<&str>,
    key_column: Option<&str>,
    key_value: Option<&CellValue>,
) -> Result<(DataTable, String)> {
    let values = table.numeric(value_column)?;
    if table.has_column(HIGH_GROUP_COLUMN) {
        return Err(EconError::NameCollision(HIGH_GROUP_COLUMN.into()));
    }
    let flags: Vec<Option<bool>> = match (key_column, key_value) {
        (Some(key), Some(kv)) => {
            let entity = entity_column.ok_or_else(|| {
                EconError::InvalidArgument(
                    "a reference subset (key column) requires an entity column".into(),
                )
            })?;
            let keys = table.column(key)?;
            let entities = table.column(entity)?.keys();
            let mut reference: HashMap<String, f64> = HashMap::new();
            let mut order = Vec::new();
            for r in 0..table.row_count() {
                let hit = keys.cell(r).is_some_and(|c| c.matches(kv));
                if let (true, Some(e), Some(v)) = (hit, &entities[r], values[r]) {
                    if !reference.contains_key(e) {
                        reference.insert(e.clone(), v);
                        order.push(v);
                    }
                }
            }
            if order.is_empty() {
                return Err(EconError::EmptyReferenceSubset {
                    column: key.to_string(),
                    value: kv.to_string(),
                });
            }
            order.sort_by(|a, b| a.total_cmp(b));
            let m = median(&order);
            entities
                .iter()
                .map(|e| e.as_ref().and_then(|e| reference.get(e)).map(|v| *v > m))
                .collect()
        }
        (None, None) => {
            let mut present: Vec<f64> = values.iter().flatten().copied().collect();
            if present.is_empty() {
                return Err(EconError::EmptyReferenceSubset {
                    column: value_column.to_string(),
                    value: "<any>".into(),
                });
            }
            present.sort_by(|a, b| a.total_cmp(b));
            let m = median(&present);
            values.iter().map(|v| v.map(|v| v > m)).collect()
        }
        _ => {
            return Err(EconError::InvalidArgument(
                "key column and key value must be given together".into(),
            ))
        }
    };
    let out = table.with_column(Column::new(HIGH_GROUP_COLUMN, ColumnData::Boolean(flags)))?;
    Ok((out, HIGH_GROUP_COLUMN.to_string()))
}
