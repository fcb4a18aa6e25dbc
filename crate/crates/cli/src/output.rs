use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use cbfl::nn::{deserialize_params, serialize_params};
use cbfl::Mlp;
use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Creates `parent/name`, or `parent/name-1`, `parent/name-2`, … when taken.
/// Existing runs are never touched.
pub fn create_run_dir(parent: &Path, name: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    for index in 0.. {
        let candidate = if index == 0 {
            parent.join(name)
        } else {
            parent.join(format!("{name}-{index}"))
        };
        match fs::create_dir(&candidate) {
            Ok(()) => return Ok(candidate),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::io(&candidate, e)),
        }
    }
    unreachable!("unbounded suffix search")
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    write_text(path, &text)
}

pub fn read_json<D: DeserializeOwned>(path: &Path) -> CliResult<D> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Like [`write_csv`] but writes the header even when there are no rows.
pub fn write_csv_with_header<S: Serialize>(path: &Path, header: &[&str], rows: &[S]) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_csv<D: DeserializeOwned>(path: &Path) -> CliResult<Vec<D>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    r.deserialize()
        .collect::<Result<Vec<D>, _>>()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn csv_io(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Data(format!("{}: {other:?}", path.display())),
    }
}

pub fn save_weights(path: &Path, params: &Mlp) -> CliResult<()> {
    fs::write(path, serialize_params(params)).map_err(|e| CliError::io(path, e))
}

pub fn load_weights(path: &Path) -> CliResult<Mlp> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(deserialize_params(&bytes)?)
}

/// Rows of `matrix` with a leading id column; floats use the shortest exact form.
pub fn write_matrix(path: &Path, id_name: &str, value_prefix: &str, ids: &[String], matrix: &Array2<f64>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut header = vec![id_name.to_string()];
    header.extend((0..matrix.ncols()).map(|j| format!("{value_prefix}{j}")));
    w.write_record(&header)?;
    for (id, row) in ids.iter().zip(matrix.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Inverse of [`write_matrix`]: ids and the numeric block.
pub fn read_matrix(path: &Path) -> CliResult<(Vec<String>, Array2<f64>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let width = r.headers()?.len().saturating_sub(1);
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != width + 1 {
            return Err(CliError::Data(format!("{} row {}: expected {} fields", path.display(), i + 1, width + 1)));
        }
        ids.push(rec[0].to_string());
        for field in rec.iter().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| CliError::Data(format!("{} row {}: bad number {field:?}", path.display(), i + 1)))?;
            values.push(v);
        }
    }
    let matrix = Array2::from_shape_vec((ids.len(), width), values).expect("row widths checked");
    Ok((ids, matrix))
}

/// Files in `names` that are absent from `dir`.
pub fn missing_files(dir: &Path, names: &[&str]) -> Vec<String> {
    names
        .iter()
        .map(|n| dir.join(n))
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn run_dirs_get_suffixes() {
        let tmp = tempfile::tempdir().unwrap();
        let a = create_run_dir(tmp.path(), "train").unwrap();
        let b = create_run_dir(tmp.path(), "train").unwrap();
        let c = create_run_dir(tmp.path(), "train").unwrap();
        assert_eq!(a, tmp.path().join("train"));
        assert_eq!(b, tmp.path().join("train-1"));
        assert_eq!(c, tmp.path().join("train-2"));
    }

    #[test]
    fn matrices_round_trip_exactly() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("m.csv");
        let m = array![[0.1 + 0.2, -1e-300, 3.0], [f64::MIN_POSITIVE, 1.0 / 3.0, -0.0]];
        let ids = vec!["a".to_string(), "b".to_string()];
        write_matrix(&path, "id", "c", &ids, &m).unwrap();
        let (ids2, m2) = read_matrix(&path).unwrap();
        assert_eq!(ids2, ids);
        for (x, y) in m.iter().zip(&m2) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn missing_files_are_listed() {
        let tmp = tempfile::tempdir().unwrap();
        write_text(&tmp.path().join("a.csv"), "x\n").unwrap();
        let missing = missing_files(tmp.path(), &["a.csv", "b.csv"]);
        assert_eq!(missing.len(), 1);
        assert!(missing[0].ends_with("b.csv"));
    }
}
