//! File formats: data CSV (header of names, one sample per row), square
//! matrix CSV without header, edge lists, and checksummed dataset manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scm_gen::{Dataset, GraphSpec, NoiseSpec};
use crate::weights::{Adjacency, WeightMatrix};

pub const DATA_FILE: &str = "data.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes through a temporary sibling so readers never see partial files.
pub fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn parse_real(path: &Path, line: u64, field: &str) -> Result<f64> {
    let x: f64 = field
        .trim()
        .parse()
        .map_err(|_| parse_error(path, line, format!("not a number: {field:?}")))?;
    if !x.is_finite() {
        return Err(parse_error(
            path,
            line,
            format!("non-finite value {field:?}"),
        ));
    }
    Ok(x)
}

fn csv_reader(bytes: &[u8], has_headers: bool) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(has_headers)
        .flexible(true)
        .from_reader(bytes)
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map_or(0, |p| p.line());
    parse_error(path, line, err.to_string())
}

/// Reads a data CSV: a header row of unique variable names followed by one
/// row of reals per sample.
pub fn read_data_csv(path: &Path) -> Result<Dataset> {
    let bytes = read_file(path)?;
    let mut reader = csv_reader(&bytes, true);
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        return Err(parse_error(path, 1, "missing header row"));
    }
    let n = names.len();
    let mut values = Vec::new();
    let mut m = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record_line(&record);
        if record.len() != n {
            return Err(parse_error(
                path,
                line,
                format!("expected {n} fields, found {}", record.len()),
            ));
        }
        for field in record.iter() {
            values.push(parse_real(path, line, field)?);
        }
        m += 1;
    }
    if m == 0 {
        return Err(parse_error(path, 1, "no data rows"));
    }
    let samples = Array2::from_shape_vec((m, n), values).expect("row lengths checked");
    Dataset::new(samples, names, None).map_err(|e| parse_error(path, 1, e.to_string()))
}

pub fn data_csv_string(data: &Dataset) -> String {
    let mut out = data.variable_names().join(",");
    out.push('\n');
    for row in data.samples().rows() {
        push_row(&mut out, row.iter());
    }
    out
}

pub fn write_data_csv(path: &Path, data: &Dataset) -> Result<()> {
    write_file(path, data_csv_string(data).as_bytes())
}

fn push_row<'a>(out: &mut String, row: impl Iterator<Item = &'a f64>) {
    let fields: Vec<String> = row.map(|x| x.to_string()).collect();
    out.push_str(&fields.join(","));
    out.push('\n');
}

/// Reads an `n x n` matrix of reals, one row per line, no header.
pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let bytes = read_file(path)?;
    let mut reader = csv_reader(&bytes, false);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record_line(&record);
        let row = record
            .iter()
            .map(|f| parse_real(path, line, f))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_error(
                    path,
                    line,
                    format!("expected {} fields, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 || rows[0].len() != n {
        return Err(parse_error(
            path,
            n as u64,
            format!(
                "matrix must be square, got {n} rows of {}",
                rows.first().map_or(0, Vec::len)
            ),
        ));
    }
    Ok(Array2::from_shape_vec((n, n), rows.concat()).expect("square"))
}

pub fn matrix_csv_string(w: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in w.rows() {
        push_row(&mut out, row.iter());
    }
    out
}

pub fn write_matrix_csv(path: &Path, w: &Array2<f64>) -> Result<()> {
    write_file(path, matrix_csv_string(w).as_bytes())
}

/// Reads a graph from a matrix CSV; every nonzero off-diagonal entry is an
/// edge.
pub fn read_adjacency_csv(path: &Path) -> Result<Adjacency> {
    let w = read_matrix_csv(path)?;
    Adjacency::new(w.mapv(|x| x != 0.0))
}

pub fn read_weights_csv(path: &Path) -> Result<WeightMatrix> {
    WeightMatrix::new(read_matrix_csv(path)?).map_err(|e| parse_error(path, 0, e.to_string()))
}

/// Edge list `source,target,weight` in row-major order.
pub fn edges_csv_string(binary: &Adjacency, weights: &WeightMatrix, names: &[String]) -> String {
    let mut out = String::from("source,target,weight\n");
    for (i, j) in binary.edges() {
        out.push_str(&format!(
            "{},{},{}\n",
            names[i],
            names[j],
            weights.as_array()[[i, j]]
        ));
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Provenance of a generated dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub graph: GraphSpec,
    pub noise: NoiseSpec,
    pub m: usize,
    pub data_seed: u64,
    /// File name to lowercase hex SHA-256.
    pub checksums: BTreeMap<String, String>,
}

/// Writes `data.csv`, `truth.csv` and `manifest.json` into `dir`.
pub fn write_generated(
    dir: &Path,
    data: &Dataset,
    graph: &GraphSpec,
    noise: &NoiseSpec,
    data_seed: u64,
) -> Result<Manifest> {
    let truth = data
        .truth()
        .ok_or_else(|| Error::InvalidParameter("generated dataset has no ground truth".into()))?;
    let data_csv = data_csv_string(data);
    let truth_csv = matrix_csv_string(truth.as_array());
    let mut checksums = BTreeMap::new();
    checksums.insert(DATA_FILE.to_string(), sha256_hex(data_csv.as_bytes()));
    checksums.insert(TRUTH_FILE.to_string(), sha256_hex(truth_csv.as_bytes()));
    let manifest = Manifest {
        graph: graph.clone(),
        noise: *noise,
        m: data.m(),
        data_seed,
        checksums,
    };
    write_file(&dir.join(DATA_FILE), data_csv.as_bytes())?;
    write_file(&dir.join(TRUTH_FILE), truth_csv.as_bytes())?;
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write_file(&dir.join(MANIFEST_FILE), json.as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = read_file(&path)?;
    serde_json::from_slice(&bytes).map_err(|e| parse_error(&path, e.line() as u64, e.to_string()))
}

/// Fails with [`Error::Integrity`] unless `file` hashes to its manifest entry.
/// Files the manifest does not list pass unchecked.
pub fn verify_checksum(manifest: &Manifest, dir: &Path, file: &str) -> Result<()> {
    let Some(expected) = manifest.checksums.get(file) else {
        return Ok(());
    };
    let path = dir.join(file);
    let actual = sha256_hex(&read_file(&path)?);
    if &actual != expected {
        return Err(Error::Integrity {
            path,
            expected: expected.clone(),
            actual,
        });
    }
    Ok(())
}

/// Loads a generated dataset directory after checking every checksum.
pub fn load_generated(dir: &Path) -> Result<(Dataset, Manifest)> {
    let manifest = read_manifest(dir)?;
    for file in manifest.checksums.keys() {
        verify_checksum(&manifest, dir, file)?;
    }
    let data = read_data_csv(&dir.join(DATA_FILE))?;
    let truth = read_weights_csv(&dir.join(TRUTH_FILE))?;
    let data = Dataset::new(
        data.samples().clone(),
        data.variable_names().to_vec(),
        Some(truth),
    )?;
    Ok((data, manifest))
}

/// Loads data from a dataset directory or a CSV file. A CSV that sits next to
/// a manifest listing it is checked against the recorded checksum first.
pub fn load_data(path: &Path) -> Result<(Dataset, Option<Manifest>)> {
    if path.is_dir() {
        let (data, manifest) = load_generated(path)?;
        return Ok((data, Some(manifest)));
    }
    let dir = path
        .parent()
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    let dir = if dir.as_os_str().is_empty() {
        PathBuf::from(".")
    } else {
        dir
    };
    let manifest = if dir.join(MANIFEST_FILE).is_file() {
        let manifest = read_manifest(&dir)?;
        let file = path
            .file_name()
            .and_then(|f| f.to_str())
            .unwrap_or_default();
        if !manifest.checksums.contains_key(file) {
            None
        } else {
            verify_checksum(&manifest, &dir, file)?;
            Some(manifest)
        }
    } else {
        None
    };
    Ok((read_data_csv(path)?, manifest))
}
