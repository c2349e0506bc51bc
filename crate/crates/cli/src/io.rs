//! File formats: dictionary and observation CSV, ground-truth and report
//! JSON. Every float is written with 17 significant digits so that reading
//! a file back reproduces the exact `f64`.

use std::io::{self, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use crate::error::{CliError, CliResult};
use nnsparse::{Dictionary, GroundTruth, Support};

/// Round-trip representation of an `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{:.16e}", v)
}

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir)
        .map_err(|e| CliError::Io(format!("{}: {}", dir.display(), e)))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| CliError::Io(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

struct RoundTripFormatter;

impl serde_json::ser::Formatter for RoundTripFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(fmt_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Compact JSON with 17-significant-digit floats and a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, RoundTripFormatter);
    value
        .serialize(&mut ser)
        .map_err(|e| CliError::Numeric(format!("cannot serialise output: {}", e)))?;
    out.push(b'\n');
    Ok(out)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {}", path.display(), e)))
}

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {}", path.display(), e)))
}

/// Numeric table from a CSV file, row by row. Line numbers in errors are
/// 1-based file lines.
type Table = (Option<Vec<String>>, Vec<Vec<f64>>);

fn read_table(path: &Path, header: bool) -> CliResult<Table> {
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let names = if header {
        let h = reader
            .headers()
            .map_err(|e| CliError::Parse(format!("{}: {}", path.display(), e)))?;
        Some(h.iter().map(str::to_string).collect())
    } else {
        None
    };
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Parse(format!("{}: {}", path.display(), e)))?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record
            .iter()
            .enumerate()
            .map(|(c, field)| {
                field
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        CliError::Parse(format!(
                            "{}: line {}, column {}: '{}' is not a finite number",
                            path.display(),
                            line,
                            c + 1,
                            field
                        ))
                    })
            })
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Parse(format!("{}: no data rows", path.display())));
    }
    Ok((names, rows))
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows[0].len(), |r, c| rows[r][c])
}

/// Dictionary CSV: one row per band, one column per atom.
pub fn read_dictionary(path: &Path, header: bool) -> CliResult<Dictionary> {
    let (_, rows) = read_table(path, header)?;
    Dictionary::new(to_matrix(&rows))
        .map_err(|e| CliError::Parse(format!("{}: {}", path.display(), e)))
}

/// Observation CSV: one row per band, one column per observation.
pub fn read_observations(path: &Path) -> CliResult<Vec<DVector<f64>>> {
    let (_, rows) = read_table(path, false)?;
    let m = to_matrix(&rows);
    Ok(m.column_iter().map(|c| c.into_owned()).collect())
}

pub fn matrix_csv(m: &DMatrix<f64>, names: Option<&[String]>) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Io(e.to_string());
    if let Some(names) = names {
        w.write_record(names).map_err(csv_err)?;
    }
    for r in 0..m.nrows() {
        w.write_record(m.row(r).iter().map(|&v| fmt_f64(v)))
            .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

/// Ground truth as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthFile {
    pub coefficients: Vec<f64>,
    pub distortion: Vec<f64>,
    pub support: Vec<usize>,
}

impl TruthFile {
    pub fn from_truth(truth: &GroundTruth, support: &Support) -> Self {
        Self {
            coefficients: truth.coefficients().iter().copied().collect(),
            distortion: truth.distortion().iter().copied().collect(),
            support: support.indices().to_vec(),
        }
    }

    pub fn to_truth(&self, dict: &Dictionary) -> CliResult<(GroundTruth, Support)> {
        if self.coefficients.len() != dict.num_cols() || self.distortion.len() != dict.num_rows() {
            return Err(CliError::Parse(format!(
                "ground truth has {} coefficients and {} distortion entries, dictionary is {}x{}",
                self.coefficients.len(),
                self.distortion.len(),
                dict.num_rows(),
                dict.num_cols()
            )));
        }
        let truth = GroundTruth::new(
            DVector::from_vec(self.coefficients.clone()),
            DVector::from_vec(self.distortion.clone()),
        )?;
        let support = Support::from_unsorted(self.support.clone(), dict.num_cols())?;
        if support != truth.support() {
            return Err(CliError::Parse(
                "ground-truth support disagrees with its coefficients".into(),
            ));
        }
        Ok((truth, support))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [
            0.1,
            1.0 / 3.0,
            -2.5e-300,
            1e300,
            0.0,
            f64::MIN_POSITIVE,
            123456789.12345679,
        ] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        let json = to_json(&vec![0.1f64, 1.0 / 3.0]).unwrap();
        let back: Vec<f64> = serde_json::from_slice(&json).unwrap();
        assert_eq!(back, vec![0.1, 1.0 / 3.0]);
    }

    #[test]
    fn malformed_row_names_its_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "1,0\n0,1\n0.5,abc\n").unwrap();
        let err = read_dictionary(&path, false).unwrap_err();
        assert!(matches!(err, CliError::Parse(_)));
        assert!(err.to_string().contains("line 3"), "{}", err);

        std::fs::write(&path, "1,0\n0,1,2\n").unwrap();
        let err = read_dictionary(&path, false).unwrap_err();
        assert!(
            err.to_string().contains("line 2") || err.to_string().contains("line: 2"),
            "{}",
            err
        );
    }

    #[test]
    fn header_row_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "red,green\n1,0\n0,1\n").unwrap();
        let d = read_dictionary(&path, true).unwrap();
        assert_eq!((d.num_rows(), d.num_cols()), (2, 2));
        assert!(read_dictionary(&path, false).is_err());
    }
}
