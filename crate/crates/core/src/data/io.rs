//! On-disk formats.
//!
//! * `csv`: comma-separated rows, optional leading header line starting with `#`.
//! * `bin-f32`: magic `CTV1`, `u64` rows, `u64` cols (little endian), then
//!   `rows * cols` little-endian `f32` values, row-major.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, PromptViewTensor, View0, ViewMatrix};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"CTV1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixFormat {
    #[serde(rename = "csv")]
    Csv,
    #[serde(rename = "bin-f32")]
    BinF32,
}

impl MatrixFormat {
    pub fn extension(self) -> &'static str {
        match self {
            MatrixFormat::Csv => "csv",
            MatrixFormat::BinF32 => "bin",
        }
    }

    fn name(self) -> &'static str {
        match self {
            MatrixFormat::Csv => "csv",
            MatrixFormat::BinF32 => "bin-f32",
        }
    }
}

impl std::str::FromStr for MatrixFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(MatrixFormat::Csv),
            "bin-f32" => Ok(MatrixFormat::BinF32),
            other => Err(Error::invalid(
                "format",
                format!("unknown matrix format `{other}`"),
            )),
        }
    }
}

pub fn load_view_matrix(path: impl AsRef<Path>, format: MatrixFormat) -> Result<ViewMatrix> {
    let path = path.as_ref();
    match format {
        MatrixFormat::Csv => load_csv(path),
        MatrixFormat::BinF32 => load_bin(path),
    }
}

pub fn save_view_matrix(
    path: impl AsRef<Path>,
    matrix: &ViewMatrix,
    format: MatrixFormat,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let res = match format {
        MatrixFormat::Csv => write_csv(&mut out, matrix),
        MatrixFormat::BinF32 => write_bin(&mut out, matrix),
    };
    res.and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

fn malformed(path: &Path, format: MatrixFormat, message: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        format: format.name(),
        message: message.into(),
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file))
}

fn load_csv(path: &Path) -> Result<ViewMatrix> {
    let fmt = MatrixFormat::Csv;
    let mut reader = csv_reader(path)?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| malformed(path, fmt, e.to_string()))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(malformed(
                    path,
                    fmt,
                    format!("row {rows} has {} fields, expected {c}", record.len()),
                ))
            }
            _ => {}
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                malformed(
                    path,
                    fmt,
                    format!("unparseable value `{field}` at row {rows}, col {col}"),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row: rows, col });
            }
            values.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| malformed(path, fmt, "no data rows"))?;
    ViewMatrix::new(rows, cols, values)
}

fn write_csv(out: &mut impl Write, matrix: &ViewMatrix) -> std::io::Result<()> {
    writeln!(out, "# rows={} cols={}", matrix.rows(), matrix.cols())?;
    for row in matrix.row_iter() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

fn load_bin(path: &Path) -> Result<ViewMatrix> {
    let fmt = MatrixFormat::BinF32;
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[..4] != MAGIC {
        return Err(malformed(path, fmt, "missing CTV1 header"));
    }
    let rows = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let payload = &bytes[20..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| malformed(path, fmt, "header dimensions overflow"))?;
    if payload.len() as u64 != expected {
        return Err(malformed(
            path,
            fmt,
            format!(
                "header declares {rows}x{cols} ({expected} bytes) but payload has {} bytes",
                payload.len()
            ),
        ));
    }
    let (rows, cols) = (rows as usize, cols as usize);
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    ViewMatrix::new(rows, cols, values)
}

fn write_bin(out: &mut impl Write, matrix: &ViewMatrix) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&(matrix.rows() as u64).to_le_bytes())?;
    out.write_all(&(matrix.cols() as u64).to_le_bytes())?;
    for &v in matrix.values() {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// One matrix file per prompt plus the verbalizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptManifest {
    pub format: MatrixFormat,
    /// Paths relative to the manifest's directory.
    pub files: Vec<PathBuf>,
    pub verbalizer: Vec<String>,
    pub num_labels: usize,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        format: "json",
        message: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn base_dir(path: &Path) -> &Path {
    path.parent().unwrap_or_else(|| Path::new("."))
}

pub fn load_prompt_view(manifest_path: impl AsRef<Path>) -> Result<PromptViewTensor> {
    let manifest_path = manifest_path.as_ref();
    let manifest: PromptManifest = read_json(manifest_path)?;
    let dir = base_dir(manifest_path);
    let matrices = manifest
        .files
        .iter()
        .map(|f| load_view_matrix(dir.join(f), manifest.format))
        .collect::<Result<Vec<_>>>()?;
    PromptViewTensor::from_prompt_matrices(&matrices, manifest.verbalizer, manifest.num_labels)
}

/// Writes `prompt_<i>.<ext>` files and the manifest into `dir`.
pub fn save_prompt_view(
    dir: impl AsRef<Path>,
    manifest_name: &str,
    tensor: &PromptViewTensor,
    format: MatrixFormat,
) -> Result<PromptManifest> {
    let dir = dir.as_ref();
    let mut files = Vec::new();
    for (i, m) in tensor.prompt_matrices().iter().enumerate() {
        let name = PathBuf::from(format!("prompt_{i}.{}", format.extension()));
        save_view_matrix(dir.join(&name), m, format)?;
        files.push(name);
    }
    let manifest = PromptManifest {
        format,
        files,
        verbalizer: tensor.verbalizer().to_vec(),
        num_labels: tensor.num_labels(),
    };
    write_json(&dir.join(manifest_name), &manifest)?;
    Ok(manifest)
}

/// One label id per line; an optional leading `#` header is skipped.
pub fn load_gold_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .enumerate()
        .map(|(row, l)| {
            l.parse().map_err(|_| Error::Malformed {
                path: path.to_path_buf(),
                format: "labels",
                message: format!("unparseable label `{l}` at row {row}"),
            })
        })
        .collect()
}

pub fn save_gold_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("# label\n");
    for y in labels {
        text.push_str(&y.to_string());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum View0Source {
    /// Path of a [`PromptManifest`].
    Prompts(PathBuf),
    /// Path of a dense matrix in the manifest's format.
    Features(PathBuf),
}

/// Top-level description of a dataset on disk. Paths are relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub num_labels: usize,
    pub format: MatrixFormat,
    pub view0: View0Source,
    pub view1: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_labels: Option<PathBuf>,
    /// Per prompt, one or more label-token probability vectors obtained on
    /// content-free inputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_free: Option<Vec<Vec<Vec<f64>>>>,
}

impl DatasetManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }
}

/// A dataset loaded from a manifest, with content-free outputs if present.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub content_free: Option<Vec<Vec<Vec<f64>>>>,
}

pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<LoadedDataset> {
    let manifest_path = manifest_path.as_ref();
    let manifest: DatasetManifest = read_json(manifest_path)?;
    let dir = base_dir(manifest_path);
    let view0 = match &manifest.view0 {
        View0Source::Prompts(p) => View0::Prompts(load_prompt_view(dir.join(p))?),
        View0Source::Features(p) => {
            View0::Features(load_view_matrix(dir.join(p), manifest.format)?)
        }
    };
    let view1 = load_view_matrix(dir.join(&manifest.view1), manifest.format)?;
    let gold = manifest
        .gold_labels
        .as_ref()
        .map(|p| load_gold_labels(dir.join(p)))
        .transpose()?;
    Ok(LoadedDataset {
        dataset: Dataset::new(view0, view1, gold, manifest.num_labels)?,
        content_free: manifest.content_free,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn csv_identity() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(&p, "1,0\n0,1").unwrap();
        let m = load_view_matrix(&p, MatrixFormat::Csv).unwrap();
        assert_eq!(m, ViewMatrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    }

    #[test]
    fn csv_with_header_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(&p, "# a,b\n1.5, 2\n3,4\n").unwrap();
        let m = load_view_matrix(&p, MatrixFormat::Csv).unwrap();
        assert_eq!(m.rows(), 2);
        assert_eq!(m.get(0, 0), 1.5);
    }

    #[test]
    fn csv_nan_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(&p, "1,2\n3,nan\n").unwrap();
        let err = load_view_matrix(&p, MatrixFormat::Csv).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 1, col: 1 }), "{err}");
    }

    #[test]
    fn csv_ragged_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(&p, "1,2\n3\n").unwrap();
        assert!(matches!(
            load_view_matrix(&p, MatrixFormat::Csv),
            Err(Error::Malformed { .. })
        ));
    }

    #[test]
    fn bin_header_dims() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        let mut bytes = MAGIC.to_vec();
        bytes.extend(3u64.to_le_bytes());
        bytes.extend(4u64.to_le_bytes());
        for i in 0..12 {
            bytes.extend((i as f32 * 0.5).to_le_bytes());
        }
        fs::write(&p, &bytes).unwrap();
        let m = load_view_matrix(&p, MatrixFormat::BinF32).unwrap();
        assert_eq!((m.rows(), m.cols()), (3, 4));
        assert_eq!(m.get(2, 3), 5.5);
    }

    #[test]
    fn bin_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        let mut bytes = MAGIC.to_vec();
        bytes.extend(3u64.to_le_bytes());
        bytes.extend(4u64.to_le_bytes());
        bytes.extend(1.0f32.to_le_bytes());
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            load_view_matrix(&p, MatrixFormat::BinF32),
            Err(Error::Malformed { .. })
        ));
    }

    #[test]
    fn bin_rejects_infinity() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        let mut bytes = MAGIC.to_vec();
        bytes.extend(1u64.to_le_bytes());
        bytes.extend(2u64.to_le_bytes());
        bytes.extend(1.0f32.to_le_bytes());
        bytes.extend(f32::INFINITY.to_le_bytes());
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            load_view_matrix(&p, MatrixFormat::BinF32),
            Err(Error::NonFinite { row: 0, col: 1 })
        ));
    }

    #[test]
    fn gold_labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gold.csv");
        save_gold_labels(&p, &[0, 2, 1]).unwrap();
        assert_eq!(load_gold_labels(&p).unwrap(), vec![0, 2, 1]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn load_save_load_is_bit_identical(
            rows in 1usize..6,
            cols in 1usize..6,
            seed in proptest::collection::vec(-1e6f64..1e6, 36),
            binary in any::<bool>(),
        ) {
            let format = if binary { MatrixFormat::BinF32 } else { MatrixFormat::Csv };
            let m = ViewMatrix::new(rows, cols, seed[..rows * cols].to_vec()).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let a = dir.path().join("a");
            let b = dir.path().join("b");
            save_view_matrix(&a, &m, format).unwrap();
            let first = load_view_matrix(&a, format).unwrap();
            save_view_matrix(&b, &first, format).unwrap();
            let second = load_view_matrix(&b, format).unwrap();
            let bits = |m: &ViewMatrix| m.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&first), bits(&second));
            if !binary {
                prop_assert_eq!(bits(&first), bits(&m));
            }
        }
    }
}
