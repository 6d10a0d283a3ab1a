//! Reading and writing count matrices and result tables.
//!
//! Count matrices are read from CSV (header row of gene names, first column
//! of cell ids) or from Matrix Market coordinate files. A Matrix Market file
//! `X.mtx` may be accompanied by `X.cells.txt` and `X.genes.txt`, one
//! identifier per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::CountMatrix;

/// A count matrix with its row (cell) and column (gene) identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCounts {
    pub x: CountMatrix,
    pub cell_ids: Vec<String>,
    pub gene_ids: Vec<String>,
}

impl LabeledCounts {
    /// Wraps `x` with identifiers `cell1..`, `gene1..`.
    pub fn with_default_ids(x: CountMatrix) -> Self {
        let cell_ids = default_ids("cell", x.n_rows());
        let gene_ids = default_ids("gene", x.n_cols());
        LabeledCounts {
            x,
            cell_ids,
            gene_ids,
        }
    }
}

pub fn default_ids(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}{i}")).collect()
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn is_matrix_market(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("mtx"))
}

/// Reads a count matrix, choosing the format from the extension (`.mtx`
/// for Matrix Market, anything else CSV).
pub fn read_counts(path: &Path) -> Result<LabeledCounts> {
    if is_matrix_market(path) {
        read_matrix_market(path)
    } else {
        read_counts_csv(path)
    }
}

/// Writes a count matrix in the format implied by the extension.
pub fn write_counts(path: &Path, counts: &LabeledCounts) -> Result<()> {
    if is_matrix_market(path) {
        write_matrix_market(path, counts)
    } else {
        write_counts_csv(path, counts)
    }
}

pub fn read_counts_csv(path: &Path) -> Result<LabeledCounts> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(open(path)?);
    let header = reader.headers()?.clone();
    if header.len() < 2 {
        return Err(parse_err(
            path,
            1,
            "header needs an id column and at least one gene",
        ));
    }
    let gene_ids: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let mut cell_ids = Vec::new();
    let mut triplets = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let line = row + 2;
        if record.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        cell_ids.push(record[0].to_owned());
        for (j, field) in record.iter().skip(1).enumerate() {
            let value: u64 = field.trim().parse().map_err(|_| {
                parse_err(
                    path,
                    line,
                    format!("'{field}' is not a non-negative integer"),
                )
            })?;
            if value > 0 {
                triplets.push((row, j, value));
            }
        }
    }
    if cell_ids.is_empty() {
        return Err(parse_err(path, 2, "no data rows"));
    }
    let x = CountMatrix::from_triplets(cell_ids.len(), gene_ids.len(), &triplets)?;
    Ok(LabeledCounts {
        x,
        cell_ids,
        gene_ids,
    })
}

pub fn write_counts_csv(path: &Path, counts: &LabeledCounts) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["cell".to_owned()];
    header.extend(counts.gene_ids.iter().cloned());
    w.write_record(&header)?;
    let dense = counts.x.to_dense();
    let m = counts.x.n_cols();
    for (i, id) in counts.cell_ids.iter().enumerate() {
        let mut record = vec![id.clone()];
        record.extend(dense[i * m..(i + 1) * m].iter().map(u64::to_string));
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `<dir>/<stem>.<suffix>.txt` next to a Matrix Market file.
pub fn sidecar_path(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}.txt"))
}

fn read_ids(path: &Path, expected: usize, prefix: &str) -> Result<Vec<String>> {
    if !path.exists() {
        return Ok(default_ids(prefix, expected));
    }
    let ids: Vec<String> = BufReader::new(open(path)?)
        .lines()
        .map(|l| {
            l.map(|s| s.trim_end().to_owned())
                .map_err(|e| Error::io(path, e))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|s| !s.is_empty())
        .collect();
    if ids.len() != expected {
        return Err(parse_err(
            path,
            ids.len(),
            format!("expected {expected} identifiers, found {}", ids.len()),
        ));
    }
    Ok(ids)
}

fn write_ids(path: &Path, ids: &[String]) -> Result<()> {
    let mut w = create(path)?;
    for id in ids {
        writeln!(w, "{id}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a `coordinate integer general` Matrix Market file and its optional
/// `.cells.txt` / `.genes.txt` sidecars.
pub fn read_matrix_market(path: &Path) -> Result<LabeledCounts> {
    let reader = BufReader::new(open(path)?);
    let mut lines = reader.lines().enumerate();
    let (_, banner) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let banner = banner.map_err(|e| Error::io(path, e))?.to_ascii_lowercase();
    let fields: Vec<&str> = banner.split_whitespace().collect();
    if fields.len() < 5
        || fields[0] != "%%matrixmarket"
        || fields[1] != "matrix"
        || fields[2] != "coordinate"
    {
        return Err(parse_err(
            path,
            1,
            "expected a '%%MatrixMarket matrix coordinate' banner",
        ));
    }
    if fields[3] != "integer" || fields[4] != "general" {
        return Err(parse_err(
            path,
            1,
            "only 'integer general' matrices are supported",
        ));
    }

    let mut size: Option<(usize, usize, usize)> = None;
    let mut triplets = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        let parts: Vec<&str> = trimmed.split_whitespace().collect();
        let nums = |k: usize| -> Result<Vec<u64>> {
            if parts.len() != k {
                return Err(parse_err(path, line_no, format!("expected {k} fields")));
            }
            parts
                .iter()
                .map(|p| {
                    p.parse::<u64>().map_err(|_| {
                        parse_err(
                            path,
                            line_no,
                            format!("'{p}' is not a non-negative integer"),
                        )
                    })
                })
                .collect()
        };
        match size {
            None => {
                let v = nums(3)?;
                size = Some((v[0] as usize, v[1] as usize, v[2] as usize));
            }
            Some((rows, cols, _)) => {
                let v = nums(3)?;
                let (i, j) = (v[0] as usize, v[1] as usize);
                if i == 0 || j == 0 || i > rows || j > cols {
                    return Err(parse_err(
                        path,
                        line_no,
                        format!("index ({i}, {j}) outside {rows}x{cols}"),
                    ));
                }
                if v[2] > 0 {
                    triplets.push((i - 1, j - 1, v[2]));
                }
            }
        }
    }
    let (rows, cols, _) = size.ok_or_else(|| parse_err(path, 2, "missing size line"))?;
    let x = CountMatrix::from_triplets(rows, cols, &triplets)?;
    let cell_ids = read_ids(&sidecar_path(path, "cells"), rows, "cell")?;
    let gene_ids = read_ids(&sidecar_path(path, "genes"), cols, "gene")?;
    Ok(LabeledCounts {
        x,
        cell_ids,
        gene_ids,
    })
}

/// Writes the nonzero entries in row-major order plus both sidecars.
pub fn write_matrix_market(path: &Path, counts: &LabeledCounts) -> Result<()> {
    let x = &counts.x;
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "%%MatrixMarket matrix coordinate integer general").map_err(io)?;
    writeln!(w, "{} {} {}", x.n_rows(), x.n_cols(), x.nnz()).map_err(io)?;
    for (i, j, v) in x.iter_nonzero() {
        writeln!(w, "{} {} {}", i + 1, j + 1, v).map_err(io)?;
    }
    w.flush().map_err(io)?;
    write_ids(&sidecar_path(path, "cells"), &counts.cell_ids)?;
    write_ids(&sidecar_path(path, "genes"), &counts.gene_ids)
}

/// Writes a real matrix with row identifiers in the first column.
pub fn write_matrix_csv(
    path: &Path,
    id_header: &str,
    ids: &[String],
    columns: &[String],
    values: &DMatrix<f64>,
) -> Result<()> {
    if ids.len() != values.nrows() || columns.len() != values.ncols() {
        return Err(Error::shape(
            format!("{}x{} values", ids.len(), columns.len()),
            format!("{}x{}", values.nrows(), values.ncols()),
        ));
    }
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec![id_header.to_owned()];
    header.extend(columns.iter().cloned());
    w.write_record(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let mut record = vec![id.clone()];
        record.extend(values.row(i).iter().map(f64::to_string));
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a table written by [`write_matrix_csv`]: `(ids, column names,
/// values)`.
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, Vec<String>, DMatrix<f64>)> {
    let mut reader = csv::Reader::from_reader(open(path)?);
    let columns: Vec<String> = reader
        .headers()?
        .iter()
        .skip(1)
        .map(str::to_owned)
        .collect();
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let line = row + 2;
        if record.len() != columns.len() + 1 {
            return Err(parse_err(path, line, "ragged row"));
        }
        ids.push(record[0].to_owned());
        for field in record.iter().skip(1) {
            data.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(path, line, format!("'{field}' is not a number")))?,
            );
        }
    }
    let values = DMatrix::from_row_slice(ids.len(), columns.len(), &data);
    Ok((ids, columns, values))
}

/// Writes `id,label` rows.
pub fn write_labels(path: &Path, id_header: &str, ids: &[String], labels: &[usize]) -> Result<()> {
    if ids.len() != labels.len() {
        return Err(Error::shape(format!("{} labels", ids.len()), labels.len()));
    }
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record([id_header, "label"])?;
    for (id, label) in ids.iter().zip(labels) {
        w.write_record([id.as_str(), &label.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `id,label` rows.
pub fn read_labels(path: &Path) -> Result<(Vec<String>, Vec<usize>)> {
    let mut reader = csv::Reader::from_reader(open(path)?);
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != 2 {
            return Err(parse_err(path, row + 2, "expected 'id,label'"));
        }
        ids.push(record[0].to_owned());
        labels.push(
            record[1]
                .trim()
                .parse()
                .map_err(|_| parse_err(path, row + 2, "label is not an integer"))?,
        );
    }
    Ok((ids, labels))
}
