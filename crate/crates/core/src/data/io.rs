//! CSV persistence for datasets.
//!
//! Header `s1_1,…,s1_d1,a1,s2_1,…,aK,y`, one trajectory per row. Lines
//! starting with `#` are comments (used for provenance headers). Row numbers
//! in errors count data rows from 1.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{column_names, Dataset, Trajectory};
use crate::error::{Error, Result};

fn reader_builder() -> csv::ReaderBuilder {
    let mut b = csv::ReaderBuilder::new();
    b.comment(Some(b'#')).trim(csv::Trim::All);
    b
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Infers per-stage state dimensions from a header row.
pub fn sniff_layout(header: &[&str]) -> Result<Vec<usize>> {
    let mut dims: Vec<usize> = Vec::new();
    for name in header {
        if let Some(rest) = name.strip_prefix('s') {
            let (k, j) = rest
                .split_once('_')
                .and_then(|(k, j)| Some((k.parse::<usize>().ok()?, j.parse::<usize>().ok()?)))
                .ok_or_else(|| Error::Spec(format!("unrecognised column `{name}`")))?;
            if k == 0 || j == 0 {
                return Err(Error::Spec(format!("column `{name}`: indices are 1-based")));
            }
            if dims.len() < k {
                dims.resize(k, 0);
            }
            dims[k - 1] = dims[k - 1].max(j);
        }
    }
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::Spec("header lacks state columns for some stage".into()));
    }
    Ok(dims)
}

/// Reads a dataset laid out as `state_dims` from any reader.
pub fn read_dataset<R: Read>(reader: R, state_dims: &[usize]) -> Result<Dataset> {
    let mut rdr = reader_builder().from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let expected = column_names(state_dims);
    let mut index = Vec::with_capacity(expected.len());
    for name in &expected {
        let pos = header.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            row: 0,
            column: name.clone(),
            message: "missing column".into(),
        })?;
        index.push(pos);
    }

    let mut trajectories = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(csv_err)?;
        let mut cells = index.iter().zip(&expected).map(|(&i, name)| {
            let raw = record.get(i).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row,
                column: name.clone(),
                message: format!("`{raw}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: name.clone(),
                    message: "value is not finite".into(),
                });
            }
            Ok((name, v))
        });
        let mut states = Vec::with_capacity(state_dims.len());
        let mut actions = Vec::with_capacity(state_dims.len());
        for &d in state_dims {
            let s = (&mut cells)
                .take(d)
                .map(|c| c.map(|(_, v)| v))
                .collect::<Result<Vec<_>>>()?;
            states.push(s);
            let (name, v) = cells.next().expect("layout covers every column")?;
            if v != 0.0 && v != 1.0 {
                return Err(Error::Parse {
                    row,
                    column: name.clone(),
                    message: format!("action {v} is not 0 or 1"),
                });
            }
            actions.push(v as u8);
        }
        let (_, outcome) = cells.next().expect("layout covers y")?;
        trajectories.push(Trajectory {
            states,
            actions,
            outcome,
        });
    }
    Dataset::new(state_dims.to_vec(), trajectories)
}

/// Reads a dataset file. `state_dims` of `None` infers the layout from the
/// header.
pub fn read_dataset_csv(path: &Path, state_dims: Option<&[usize]>) -> Result<Dataset> {
    let dims = match state_dims {
        Some(d) => d.to_vec(),
        None => {
            let mut rdr = reader_builder().from_path(path).map_err(csv_err)?;
            let header = rdr.headers().map_err(csv_err)?;
            sniff_layout(&header.iter().collect::<Vec<_>>())?
        }
    };
    read_dataset(File::open(path)?, &dims)
}

/// Writes `dataset`, preceded by `comment` lines (each prefixed with `# `).
/// Values use the shortest representation that round-trips exactly.
pub fn write_dataset<W: Write>(mut out: W, dataset: &Dataset, comment: &[String]) -> Result<()> {
    for line in comment {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(dataset.column_names()).map_err(csv_err)?;
    let mut row: Vec<String> = Vec::new();
    for t in dataset.trajectories() {
        row.clear();
        for (s, a) in t.states.iter().zip(&t.actions) {
            row.extend(s.iter().map(|v| v.to_string()));
            row.push(a.to_string());
        }
        row.push(t.outcome.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset_csv(path: &Path, dataset: &Dataset, comment: &[String]) -> Result<()> {
    write_dataset(File::create(path)?, dataset, comment)
}
