//! CSV ingestion and artifact writers.
//!
//! Every file carries a header row that is checked before any record is
//! parsed. Unit and period indices are 0-based and must be contiguous.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::estimator::UnitContribution;
use crate::exposure::ExposurePanel;
use crate::graph::{InterferenceMatrix, Network};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot open {path}: {source}")]
    Open {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: header {found:?} does not match expected {expected:?}")]
    Schema {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}, record {record}: {message}")]
    Value {
        path: PathBuf,
        record: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Inconsistent { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("writing {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl IoError {
    /// Whether the failure is a missing or unreadable file rather than bad
    /// content.
    pub fn is_missing(&self) -> bool {
        matches!(self, IoError::Open { .. })
    }
}

/// Balanced outcome panel, `y[unit][period]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub y: Vec<Vec<f64>>,
}

impl Panel {
    pub fn unit_count(&self) -> usize {
        self.y.len()
    }

    pub fn periods(&self) -> usize {
        self.y.first().map_or(0, Vec::len)
    }
}

struct Table {
    path: PathBuf,
    header: Vec<String>,
    records: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path) -> Result<Self, IoError> {
        let file = File::open(path).map_err(|source| IoError::Open {
            path: path.to_path_buf(),
            source,
        })?;
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(file);
        let csv_err = |source| IoError::Csv {
            path: path.to_path_buf(),
            source,
        };
        let header = reader
            .headers()
            .map_err(csv_err)?
            .iter()
            .map(str::to_string)
            .collect();
        let records = reader
            .records()
            .collect::<Result<Vec<_>, _>>()
            .map_err(csv_err)?;
        Ok(Self {
            path: path.to_path_buf(),
            header,
            records,
        })
    }

    fn expect(&self, expected: &[&str]) -> Result<(), IoError> {
        if self.header != expected {
            return Err(self.schema(expected.join(",")));
        }
        Ok(())
    }

    fn schema(&self, expected: String) -> IoError {
        IoError::Schema {
            path: self.path.clone(),
            expected,
            found: self.header.join(","),
        }
    }

    fn value<T: std::str::FromStr>(&self, record: usize, col: usize) -> Result<T, IoError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.records[record].get(col).unwrap_or("");
        raw.parse().map_err(|e: T::Err| IoError::Value {
            path: self.path.clone(),
            record: record + 1,
            message: format!("column '{}' value '{raw}': {e}", self.header[col]),
        })
    }

    fn inconsistent(&self, message: String) -> IoError {
        IoError::Inconsistent {
            path: self.path.clone(),
            message,
        }
    }
}

/// Collects `(unit, period) -> value` cells into a dense grid and checks
/// that every cell appears exactly once.
fn dense_grid<T: Copy>(
    table: &Table,
    cells: BTreeMap<(usize, usize), T>,
    what: &str,
) -> Result<Vec<Vec<T>>, IoError> {
    let units = cells.keys().map(|k| k.0).max().map_or(0, |m| m + 1);
    let periods = cells.keys().map(|k| k.1).max().map_or(0, |m| m + 1);
    if units * periods != cells.len() {
        return Err(table.inconsistent(format!(
            "{what} is unbalanced: {} cells for {units} units and {periods} periods",
            cells.len()
        )));
    }
    let mut grid = vec![Vec::with_capacity(periods); units];
    for ((u, _), v) in cells {
        grid[u].push(v);
    }
    Ok(grid)
}

fn insert_unique<T>(
    table: &Table,
    cells: &mut BTreeMap<(usize, usize), T>,
    key: (usize, usize),
    value: T,
) -> Result<(), IoError> {
    if cells.insert(key, value).is_some() {
        return Err(table.inconsistent(format!("duplicate entry for ({}, {})", key.0, key.1)));
    }
    Ok(())
}

/// Reads `unit,time,y`.
pub fn read_panel(path: &Path) -> Result<Panel, IoError> {
    let t = Table::read(path)?;
    t.expect(&["unit", "time", "y"])?;
    let mut cells = BTreeMap::new();
    for r in 0..t.records.len() {
        let key = (t.value(r, 0)?, t.value(r, 1)?);
        let y: f64 = t.value(r, 2)?;
        insert_unique(&t, &mut cells, key, y)?;
    }
    if cells.is_empty() {
        return Err(t.inconsistent("panel has no records".into()));
    }
    Ok(Panel {
        y: dense_grid(&t, cells, "panel")?,
    })
}

/// Reads `unit,x1..xk`; returns one covariate row per unit, ordered by unit.
pub fn read_covariates(path: &Path) -> Result<Vec<Vec<f64>>, IoError> {
    let t = Table::read(path)?;
    if t.header.first().map(String::as_str) != Some("unit") {
        return Err(t.schema("unit,x1,...,xk".into()));
    }
    let k = t.header.len() - 1;
    let mut rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in 0..t.records.len() {
        let unit: usize = t.value(r, 0)?;
        let x = (1..=k)
            .map(|c| t.value(r, c))
            .collect::<Result<Vec<f64>, _>>()?;
        if rows.insert(unit, x).is_some() {
            return Err(t.inconsistent(format!("duplicate covariates for unit {unit}")));
        }
    }
    if let Some((&last, _)) = rows.iter().next_back() {
        if last + 1 != rows.len() {
            return Err(t.inconsistent("unit indices are not contiguous from 0".into()));
        }
    }
    Ok(rows.into_values().collect())
}

/// Reads `unit_j,time,z` into `z[period][intervention unit]`.
pub fn read_treatments(path: &Path) -> Result<Vec<Vec<bool>>, IoError> {
    let t = Table::read(path)?;
    t.expect(&["unit_j", "time", "z"])?;
    let mut cells = BTreeMap::new();
    for r in 0..t.records.len() {
        let (j, time): (usize, usize) = (t.value(r, 0)?, t.value(r, 1)?);
        let z: u8 = t.value(r, 2)?;
        if z > 1 {
            return Err(IoError::Value {
                path: t.path.clone(),
                record: r + 1,
                message: format!("treatment must be 0 or 1, got {z}"),
            });
        }
        insert_unique(&t, &mut cells, (time, j), z == 1)?;
    }
    if cells.is_empty() {
        return Err(t.inconsistent("no treatment records".into()));
    }
    dense_grid(&t, cells, "treatment history")
}

/// Reads `row,col,weight[,time]`. Without a time column one matrix is
/// returned; with it, one per period `0..=max time`. `shape` fixes the
/// dimensions, otherwise they are taken from the largest indices.
pub fn read_interference_panel(
    path: &Path,
    shape: Option<(usize, usize)>,
) -> Result<Vec<InterferenceMatrix>, IoError> {
    let t = Table::read(path)?;
    let timed = match t.header.len() {
        3 => false,
        4 => true,
        _ => return Err(t.schema("row,col,weight[,time]".into())),
    };
    let expected: &[&str] = if timed {
        &["row", "col", "weight", "time"]
    } else {
        &["row", "col", "weight"]
    };
    t.expect(expected)?;
    let mut by_period: BTreeMap<usize, Vec<(usize, usize, f64)>> = BTreeMap::new();
    let (mut max_r, mut max_c) = (0, 0);
    for r in 0..t.records.len() {
        let row: usize = t.value(r, 0)?;
        let col: usize = t.value(r, 1)?;
        let w: f64 = t.value(r, 2)?;
        let period = if timed { t.value(r, 3)? } else { 0 };
        max_r = max_r.max(row + 1);
        max_c = max_c.max(col + 1);
        by_period.entry(period).or_default().push((row, col, w));
    }
    let (rows, cols) = shape.unwrap_or((max_r, max_c));
    let periods = by_period.keys().next_back().map_or(1, |p| p + 1);
    (0..periods)
        .map(|p| {
            let triplets = by_period.get(&p).map_or(&[][..], Vec::as_slice);
            InterferenceMatrix::from_triplets(rows, cols, triplets)
                .map_err(|e| t.inconsistent(e.to_string()))
        })
        .collect()
}

/// Single-period interference matrix. Files with a time column are
/// rejected here.
pub fn read_interference(path: &Path) -> Result<InterferenceMatrix, IoError> {
    let mut panel = read_interference_panel(path, None)?;
    if panel.len() != 1 {
        return Err(IoError::Inconsistent {
            path: path.to_path_buf(),
            message: format!("expected one period, found {}", panel.len()),
        });
    }
    Ok(panel.remove(0))
}

/// Reads an undirected edge list `i,k` over `node_count` outcome units.
pub fn read_network(path: &Path, node_count: usize) -> Result<Network, IoError> {
    let t = Table::read(path)?;
    t.expect(&["i", "k"])?;
    let edges = (0..t.records.len())
        .map(|r| Ok((t.value(r, 0)?, t.value(r, 1)?)))
        .collect::<Result<Vec<(usize, usize)>, IoError>>()?;
    Network::new(node_count, &edges).map_err(|e| t.inconsistent(e.to_string()))
}

struct Sink {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl Sink {
    fn create(path: &Path, header: &[&str]) -> Result<Self, IoError> {
        let file = File::create(path).map_err(|source| IoError::Write {
            path: path.to_path_buf(),
            source,
        })?;
        let mut sink = Self {
            path: path.to_path_buf(),
            writer: csv::Writer::from_writer(file),
        };
        sink.row(header.iter().map(|s| s.to_string()))?;
        Ok(sink)
    }

    fn row(&mut self, fields: impl IntoIterator<Item = String>) -> Result<(), IoError> {
        let fields: Vec<String> = fields.into_iter().collect();
        self.writer
            .write_record(&fields)
            .map_err(|source| IoError::Csv {
                path: self.path.clone(),
                source,
            })
    }

    fn finish(mut self) -> Result<(), IoError> {
        self.writer.flush().map_err(|source| IoError::Write {
            path: self.path,
            source,
        })
    }
}

pub fn write_panel(path: &Path, panel: &Panel) -> Result<(), IoError> {
    let mut s = Sink::create(path, &["unit", "time", "y"])?;
    for (i, ys) in panel.y.iter().enumerate() {
        for (t, y) in ys.iter().enumerate() {
            s.row([i.to_string(), t.to_string(), y.to_string()])?;
        }
    }
    s.finish()
}

pub fn write_covariates(path: &Path, x: &[Vec<f64>]) -> Result<(), IoError> {
    let k = x.first().map_or(0, Vec::len);
    let names: Vec<String> = std::iter::once("unit".to_string())
        .chain((1..=k).map(|c| format!("x{c}")))
        .collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut s = Sink::create(path, &refs)?;
    for (i, row) in x.iter().enumerate() {
        s.row(std::iter::once(i.to_string()).chain(row.iter().map(f64::to_string)))?;
    }
    s.finish()
}

pub fn write_treatments(path: &Path, z: &[Vec<bool>]) -> Result<(), IoError> {
    let mut s = Sink::create(path, &["unit_j", "time", "z"])?;
    let m = z.first().map_or(0, Vec::len);
    for j in 0..m {
        for (t, zt) in z.iter().enumerate() {
            s.row([j.to_string(), t.to_string(), (zt[j] as u8).to_string()])?;
        }
    }
    s.finish()
}

pub fn write_interference(path: &Path, w: &InterferenceMatrix) -> Result<(), IoError> {
    let mut s = Sink::create(path, &["row", "col", "weight"])?;
    for (r, c, v) in w.triplets() {
        s.row([r.to_string(), c.to_string(), v.to_string()])?;
    }
    s.finish()
}

pub fn write_network(path: &Path, network: &Network) -> Result<(), IoError> {
    let mut s = Sink::create(path, &["i", "k"])?;
    for (a, b) in network.edges() {
        s.row([a.to_string(), b.to_string()])?;
    }
    s.finish()
}

/// Writes `unit,time,g` for every unit with a defined history.
pub fn write_exposures(path: &Path, panel: &ExposurePanel) -> Result<(), IoError> {
    let mut s = Sink::create(path, &["unit", "time", "g"])?;
    for i in 0..panel.unit_count() {
        if let Some(h) = panel.history(i) {
            for (t, g) in h.iter().enumerate() {
                s.row([i.to_string(), t.to_string(), g.to_string()])?;
            }
        }
    }
    s.finish()
}

pub const INFLUENCE_HEADER: [&str; 8] = [
    "unit",
    "exposed",
    "reference",
    "delta_y",
    "h1",
    "h0",
    "tau_i",
    "phi",
];

pub fn write_influence(path: &Path, contributions: &[UnitContribution]) -> Result<(), IoError> {
    let mut s = Sink::create(path, &INFLUENCE_HEADER)?;
    for c in contributions {
        s.row([
            c.unit.to_string(),
            (c.exposed as u8).to_string(),
            (c.reference as u8).to_string(),
            c.delta_y.to_string(),
            c.h1.to_string(),
            c.h0.to_string(),
            c.tau_i.to_string(),
            c.phi.to_string(),
        ])?;
    }
    s.finish()
}

pub fn read_influence(path: &Path) -> Result<Vec<UnitContribution>, IoError> {
    let t = Table::read(path)?;
    t.expect(&INFLUENCE_HEADER)?;
    (0..t.records.len())
        .map(|r| {
            Ok(UnitContribution {
                unit: t.value(r, 0)?,
                exposed: t.value::<u8>(r, 1)? == 1,
                reference: t.value::<u8>(r, 2)? == 1,
                delta_y: t.value(r, 3)?,
                h1: t.value(r, 4)?,
                h0: t.value(r, 5)?,
                tau_i: t.value(r, 6)?,
                phi: t.value(r, 7)?,
            })
        })
        .collect()
}

/// A CSV file as a header plus raw string rows, for merging reports.
pub fn read_raw(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), IoError> {
    let t = Table::read(path)?;
    let rows = t
        .records
        .iter()
        .map(|r| r.iter().map(str::to_string).collect())
        .collect();
    Ok((t.header, rows))
}

pub fn write_raw(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), IoError> {
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut s = Sink::create(path, &refs)?;
    for r in rows {
        s.row(r.iter().cloned())?;
    }
    s.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        File::create(&p)
            .unwrap()
            .write_all(body.as_bytes())
            .unwrap();
        p
    }

    #[test]
    fn panel_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let panel = Panel {
            y: vec![vec![0.1, 2.0], vec![-3.5, 1e-17]],
        };
        let p = dir.path().join("panel.csv");
        write_panel(&p, &panel).unwrap();
        assert_eq!(read_panel(&p).unwrap(), panel);
    }

    #[test]
    fn unbalanced_panel_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = file(&dir, "p.csv", "unit,time,y\n0,0,1\n0,1,2\n1,0,3\n");
        assert!(matches!(read_panel(&p), Err(IoError::Inconsistent { .. })));
        let p = file(&dir, "d.csv", "unit,time,y\n0,0,1\n0,0,2\n");
        assert!(matches!(read_panel(&p), Err(IoError::Inconsistent { .. })));
    }

    #[test]
    fn header_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = file(&dir, "p.csv", "unit,period,y\n0,0,1\n");
        assert!(matches!(read_panel(&p), Err(IoError::Schema { .. })));
        let p = file(&dir, "w.csv", "row,col\n0,0\n");
        assert!(matches!(read_interference(&p), Err(IoError::Schema { .. })));
    }

    #[test]
    fn missing_file() {
        let e = read_panel(Path::new("/nonexistent/panel.csv")).unwrap_err();
        assert!(e.is_missing());
    }

    #[test]
    fn bad_value_reports_record() {
        let dir = tempfile::tempdir().unwrap();
        let p = file(&dir, "z.csv", "unit_j,time,z\n0,0,0\n0,1,x\n");
        match read_treatments(&p) {
            Err(IoError::Value { record, .. }) => assert_eq!(record, 2),
            other => panic!("{other:?}"),
        }
        let p = file(&dir, "z2.csv", "unit_j,time,z\n0,0,2\n");
        assert!(matches!(read_treatments(&p), Err(IoError::Value { .. })));
    }

    #[test]
    fn treatments_indexed_by_period() {
        let dir = tempfile::tempdir().unwrap();
        let z = vec![vec![false, false, true], vec![true, true, false]];
        let p = dir.path().join("z.csv");
        write_treatments(&p, &z).unwrap();
        assert_eq!(read_treatments(&p).unwrap(), z);
    }

    #[test]
    fn interference_round_trip_and_periods() {
        let dir = tempfile::tempdir().unwrap();
        let w = InterferenceMatrix::from_triplets(2, 3, &[(0, 0, 0.5), (0, 2, 0.25), (1, 1, 1.0)])
            .unwrap();
        let p = dir.path().join("w.csv");
        write_interference(&p, &w).unwrap();
        assert_eq!(read_interference(&p).unwrap(), w);

        let p = file(
            &dir,
            "wt.csv",
            "row,col,weight,time\n0,0,1,0\n0,1,1,1\n1,1,0.5,1\n",
        );
        let panel = read_interference_panel(&p, Some((2, 2))).unwrap();
        assert_eq!(panel.len(), 2);
        assert!(panel[0].row(1).is_empty());
        assert_eq!(panel[1].row(0), &[(1, 1.0)]);
        assert!(read_interference(&p).is_err());
    }

    #[test]
    fn covariates_and_network() {
        let dir = tempfile::tempdir().unwrap();
        let x = vec![vec![1.0, 2.0], vec![3.0, 4.5]];
        let p = dir.path().join("x.csv");
        write_covariates(&p, &x).unwrap();
        assert_eq!(read_covariates(&p).unwrap(), x);
        let p = file(&dir, "gap.csv", "unit,x1\n0,1\n2,3\n");
        assert!(read_covariates(&p).is_err());

        let net = Network::ring(5);
        let p = dir.path().join("net.csv");
        write_network(&p, &net).unwrap();
        assert_eq!(read_network(&p, 5).unwrap(), net);
        let p = file(&dir, "loop.csv", "i,k\n1,1\n");
        assert!(read_network(&p, 3).is_err());
    }

    #[test]
    fn influence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = vec![UnitContribution {
            unit: 3,
            exposed: true,
            reference: false,
            delta_y: 1.25,
            h1: 2.0,
            h0: 0.0,
            tau_i: 0.1 + 0.2,
            phi: -1.0 / 3.0,
        }];
        let p = dir.path().join("inf.csv");
        write_influence(&p, &c).unwrap();
        assert_eq!(read_influence(&p).unwrap(), c);
    }
}
