use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{Column, ColumnData, ColumnKind, DataTable};
use crate::error::{EconError, Result};

/// Parsing options for [`load_csv`].
#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub header_row: bool,
    pub na_tokens: Vec<String>,
    /// Forces the kind of the named columns instead of inferring it.
    pub kinds: HashMap<String, ColumnKind>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            header_row: true,
            na_tokens: vec![String::new(), "NA".into(), ".".into()],
            kinds: HashMap::new(),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<DataTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => EconError::FileNotFound(path.display().to_string()),
        _ => EconError::Io(format!("{}: {e}", path.display())),
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".into());
    read_csv(file, &name, options)
}

pub fn read_csv<R: Read>(reader: R, name: &str, options: &CsvOptions) -> Result<DataTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(false)
        .flexible(false)
        .from_reader(reader);

    let mut records = rdr.records();
    let first = match records.next() {
        None => return Err(EconError::EmptyFile),
        Some(r) => r.map_err(csv_error)?,
    };
    let width = first.len();
    let (names, mut raw): (Vec<String>, Vec<Vec<String>>) = if options.header_row {
        let names = first.iter().map(|s| s.trim().to_string()).collect();
        (names, vec![Vec::new(); width])
    } else {
        let names = (1..=width).map(|i| format!("col{i}")).collect();
        (names, first.iter().map(|s| vec![s.to_string()]).collect())
    };
    for rec in records {
        let rec = rec.map_err(csv_error)?;
        for (col, cell) in raw.iter_mut().zip(rec.iter()) {
            col.push(cell.to_string());
        }
    }
    if names.len() == 1 && names[0].is_empty() && raw[0].is_empty() {
        return Err(EconError::EmptyFile);
    }

    let columns = names
        .into_iter()
        .zip(raw)
        .map(|(name, cells)| {
            let kind = options.kinds.get(&name).copied();
            let data = build_column(&cells, kind, &options.na_tokens);
            Column::new(name, data)
        })
        .collect();
    DataTable::new(name, columns)
}

fn csv_error(e: csv::Error) -> EconError {
    let line = e.position().map_or(0, |p| p.line());
    match e.kind() {
        csv::ErrorKind::Io(io) => EconError::Io(io.to_string()),
        _ => EconError::MalformedRow { line, message: e.to_string() },
    }
}

fn parse_number(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|x| x.is_finite())
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

fn build_column(cells: &[String], forced: Option<ColumnKind>, na: &[String]) -> ColumnData {
    let is_na = |s: &str| na.iter().any(|t| t == s.trim());
    let present = || cells.iter().filter(|s| !is_na(s));
    let kind = forced.unwrap_or_else(|| {
        if present().all(|s| parse_number(s).is_some()) {
            ColumnKind::Real
        } else if present().all(|s| parse_bool(s).is_some()) {
            ColumnKind::Boolean
        } else {
            ColumnKind::Text
        }
    });
    fn opt<'a>(s: &'a str, na: &[String]) -> Option<&'a str> {
        if na.iter().any(|t| t == s.trim()) {
            None
        } else {
            Some(s)
        }
    }
    match kind {
        ColumnKind::Real => {
            ColumnData::Real(cells.iter().map(|s| opt(s, na).and_then(parse_number)).collect())
        }
        ColumnKind::Integer => ColumnData::Integer(
            cells
                .iter()
                .map(|s| {
                    opt(s, na).and_then(|v| {
                        v.trim().parse::<i64>().ok().or_else(|| {
                            parse_number(v).filter(|x| x.fract() == 0.0).map(|x| x as i64)
                        })
                    })
                })
                .collect(),
        ),
        ColumnKind::Boolean => ColumnData::Boolean(
            cells
                .iter()
                .map(|s| {
                    opt(s, na).and_then(|v| {
                        parse_bool(v).or_else(|| match v.trim() {
                            "1" => Some(true),
                            "0" => Some(false),
                            _ => None,
                        })
                    })
                })
                .collect(),
        ),
        ColumnKind::Categorical => {
            ColumnData::Categorical(cells.iter().map(|s| opt(s, na).map(str::to_string)).collect())
        }
        ColumnKind::Text => {
            ColumnData::Text(cells.iter().map(|s| opt(s, na).map(str::to_string)).collect())
        }
    }
}

/// Writes `table` as comma-separated text with a header row; missing cells are empty.
pub fn write_csv<W: Write>(table: &DataTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| EconError::Io(e.to_string());
    w.write_record(table.columns().iter().map(|c| c.name.as_str())).map_err(io)?;
    for r in 0..table.row_count() {
        let row: Vec<String> = table
            .columns()
            .iter()
            .map(|c| match &c.data {
                ColumnData::Real(v) => v[r].map(|x| format!("{x}")).unwrap_or_default(),
                ColumnData::Integer(v) => v[r].map(|x| x.to_string()).unwrap_or_default(),
                ColumnData::Boolean(v) => v[r].map(|x| x.to_string()).unwrap_or_default(),
                ColumnData::Categorical(v) | ColumnData::Text(v) => {
                    v[r].clone().unwrap_or_default()
                }
            })
            .collect();
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| EconError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<DataTable> {
        read_csv(text.as_bytes(), "t", &CsvOptions::default())
    }

    #[test]
    fn infers_real_and_text() {
        let t = parse("a,b\n1,x\n2,y\n3,z").unwrap();
        assert_eq!(t.row_count(), 3);
        assert_eq!(
            t.column("a").unwrap().data,
            ColumnData::Real(vec![Some(1.0), Some(2.0), Some(3.0)])
        );
        assert_eq!(t.column("b").unwrap().kind(), ColumnKind::Text);
    }

    #[test]
    fn na_token_becomes_missing() {
        let t = parse("a\n1\nNA\n3").unwrap();
        let a = t.column("a").unwrap();
        assert_eq!(a.kind(), ColumnKind::Real);
        assert_eq!(a.missing_count(), 1);
    }

    #[test]
    fn forced_numeric_kind_drops_unparseable_cells() {
        let mut opts = CsvOptions::default();
        opts.kinds.insert("a".into(), ColumnKind::Real);
        let t = read_csv("a\n1\nbad\n3".as_bytes(), "t", &opts).unwrap();
        assert_eq!(
            t.column("a").unwrap().data,
            ColumnData::Real(vec![Some(1.0), None, Some(3.0)])
        );
    }

    #[test]
    fn ragged_row_reports_line() {
        match parse("a,b\n1,2\n3\n").unwrap_err() {
            EconError::MalformedRow { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        assert_eq!(parse("").unwrap_err(), EconError::EmptyFile);
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = load_csv("/definitely/not/here.csv", &CsvOptions::default()).unwrap_err();
        assert_eq!(err, EconError::FileNotFound("/definitely/not/here.csv".into()));
    }

    #[test]
    fn semicolon_delimiter_and_no_header() {
        let opts = CsvOptions { delimiter: b';', header_row: false, ..Default::default() };
        let t = read_csv("1;true\n2;false".as_bytes(), "t", &opts).unwrap();
        assert_eq!(t.column_names(), vec!["col1", "col2"]);
        assert_eq!(t.column("col2").unwrap().kind(), ColumnKind::Boolean);
    }
}
