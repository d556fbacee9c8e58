//! CSV ingestion, group maps and numeric table output.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::GroupSpec;
use crate::error::{Result, SsglError};

/// A numeric CSV with an optional response column split off.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub x: DMatrix<f64>,
    pub y: Option<DVector<f64>>,
    pub response: Option<String>,
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> SsglError {
    SsglError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Read a headed numeric CSV. Line numbers in errors count the header as line 1.
pub fn read_csv(path: &Path, response: Option<&str>) -> Result<Table> {
    let file = File::open(path)?;
    read_csv_from(file, path, response)
}

pub fn read_csv_from<R: std::io::Read>(reader: R, path: &Path, response: Option<&str>) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(parse_err(path, 1, "missing header row"));
    }
    let y_col = match response {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| parse_err(path, 1, format!("response column `{name}` not found")))?,
        ),
        None => None,
    };
    let mut values: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(rows as u64 + 2);
        if rec.len() != headers.len() {
            return Err(parse_err(path, line, format!("expected {} fields, found {}", headers.len(), rec.len())));
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(path, line, format!("column `{}`: cannot parse `{field}` as a number", headers[j])))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("column `{}`: non-finite value `{field}`", headers[j])));
            }
            if Some(j) == y_col {
                ys.push(v);
            } else {
                values.push(v);
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(parse_err(path, 2, "no data rows"));
    }
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != y_col)
        .map(|(_, h)| h.clone())
        .collect();
    let x = DMatrix::from_row_slice(rows, names.len(), &values);
    Ok(Table {
        names,
        x,
        y: y_col.map(|_| DVector::from_vec(ys)),
        response: response.map(str::to_string),
    })
}

/// Column name to group id, as read from JSON: either `{"col": "group"}` or
/// `{"groups": [{"id": "g", "columns": ["a", "b"]}], "unpenalized": ["g"]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroupMapFile {
    Listed {
        groups: Vec<ListedGroup>,
        #[serde(default)]
        unpenalized: Vec<String>,
    },
    Flat(BTreeMap<String, String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListedGroup {
    pub id: String,
    pub columns: Vec<String>,
}

/// Column order and group specs for a design built from a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupLayout {
    /// Index into the table's columns for each design column.
    pub columns: Vec<usize>,
    pub groups: Vec<GroupSpec>,
}

impl GroupLayout {
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x.select_columns(&self.columns)
    }

    pub fn names(&self, names: &[String]) -> Vec<String> {
        self.columns.iter().map(|&j| names[j].clone()).collect()
    }
}

pub fn read_group_map(path: &Path) -> Result<GroupMapFile> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Groups in order of first appearance; columns of a group are made contiguous.
pub fn layout_from_map(names: &[String], map: &GroupMapFile, unpenalized: &[String]) -> Result<GroupLayout> {
    let index = |c: &str| -> Result<usize> {
        names
            .iter()
            .position(|n| n == c)
            .ok_or_else(|| SsglError::InvalidConfig(format!("group map names unknown column `{c}`")))
    };
    let (listed, mut unpen): (Vec<(String, Vec<usize>)>, Vec<String>) = match map {
        GroupMapFile::Listed { groups, unpenalized } => (
            groups
                .iter()
                .map(|g| Ok((g.id.clone(), g.columns.iter().map(|c| index(c)).collect::<Result<Vec<_>>>()?)))
                .collect::<Result<_>>()?,
            unpenalized.clone(),
        ),
        GroupMapFile::Flat(m) => {
            let mut order: Vec<(String, Vec<usize>)> = Vec::new();
            for (j, name) in names.iter().enumerate() {
                let Some(g) = m.get(name) else { continue };
                match order.iter_mut().find(|(id, _)| id == g) {
                    Some((_, cols)) => cols.push(j),
                    None => order.push((g.clone(), vec![j])),
                }
            }
            for c in m.keys() {
                index(c)?;
            }
            (order, vec![])
        }
    };
    unpen.extend(unpenalized.iter().cloned());
    let mut seen = vec![false; names.len()];
    let mut columns = Vec::new();
    let mut groups = Vec::new();
    for (id, cols) in &listed {
        if cols.is_empty() {
            return Err(SsglError::InvalidConfig(format!("group `{id}` has no columns")));
        }
        for &c in cols {
            if std::mem::replace(&mut seen[c], true) {
                return Err(SsglError::InvalidConfig(format!("column `{}` appears in two groups", names[c])));
            }
            columns.push(c);
        }
        groups.push(if unpen.contains(id) {
            GroupSpec::unpenalized(id.clone(), cols.len())
        } else {
            GroupSpec::new(id.clone(), cols.len())
        });
    }
    for u in &unpen {
        if !groups.iter().any(|g| &g.id == u) {
            return Err(SsglError::InvalidConfig(format!("unpenalized group `{u}` is not defined")));
        }
    }
    if columns.is_empty() {
        return Err(SsglError::InvalidConfig("group map selects no columns".into()));
    }
    Ok(GroupLayout { columns, groups })
}

/// Consecutive blocks of `size` columns; group ids are the first column's name.
pub fn auto_layout(names: &[String], size: usize, unpenalized: &[String]) -> Result<GroupLayout> {
    if size == 0 || !names.len().is_multiple_of(size) {
        return Err(SsglError::InvalidConfig(format!(
            "{} columns cannot be split into groups of {size}",
            names.len()
        )));
    }
    let groups: Vec<GroupSpec> = names
        .chunks(size)
        .map(|c| {
            if unpenalized.contains(&c[0]) {
                GroupSpec::unpenalized(c[0].clone(), size)
            } else {
                GroupSpec::new(c[0].clone(), size)
            }
        })
        .collect();
    for u in unpenalized {
        if !groups.iter().any(|g| &g.id == u) {
            return Err(SsglError::InvalidConfig(format!("unpenalized group `{u}` is not defined")));
        }
    }
    Ok(GroupLayout {
        columns: (0..names.len()).collect(),
        groups,
    })
}

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// A CSV table with string and numeric cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Num(f64),
    Int(i64),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl CsvTable {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        CsvTable {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| SsglError::Io(std::io::Error::other(e));
        wtr.write_record(&self.header).map_err(io)?;
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|c| match c {
                    Cell::Text(s) => s.clone(),
                    Cell::Num(v) => fmt_f64(*v),
                    Cell::Int(i) => i.to_string(),
                })
                .collect();
            wtr.write_record(&cells).map_err(io)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.write_to(File::create(path)?)
    }
}

/// Write a numeric matrix with a header row.
pub fn write_matrix(path: &Path, names: &[String], x: &DMatrix<f64>) -> Result<()> {
    let mut t = CsvTable::new(names.iter().cloned());
    for i in 0..x.nrows() {
        t.push(x.row(i).iter().map(|&v| Cell::Num(v)).collect());
    }
    t.write(path)
}
