use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Dataset, PredictionMatrix};
use crate::error::{Error, Result};

/// 17 significant digits: every `f64` survives a text round trip.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub(crate) fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(csv_err(path, "missing header row"));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    if rows.is_empty() {
        return Err(csv_err(path, "no data rows"));
    }
    Ok((headers, rows))
}

fn parse_finite(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Loads a headered CSV, moving `target_column` into the response.
///
/// A non-target column in which no cell parses as a number is treated as
/// categorical and one-hot encoded (levels in sorted order, named
/// `column_level`). Any other unparseable or non-finite cell is an error
/// reporting its file line and column.
pub fn load_csv(path: impl AsRef<Path>, target_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let (headers, rows) = read_table(path)?;

    let mut seen = BTreeSet::new();
    for h in &headers {
        if !seen.insert(h.as_str()) {
            return Err(Error::DuplicateColumn(h.clone()));
        }
    }
    let target = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| Error::MissingColumn(target_column.to_string()))?;

    let n = rows.len();
    let bad = |row: usize, col: usize| Error::BadCell {
        row: row + 2,
        column: headers[col].clone(),
        value: rows[row][col].clone(),
    };

    let mut response = Array1::zeros(n);
    for (i, r) in rows.iter().enumerate() {
        response[i] = parse_finite(&r[target]).ok_or_else(|| bad(i, target))?;
    }

    // Each output column: (name, values).
    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    for (j, name) in headers.iter().enumerate() {
        if j == target {
            continue;
        }
        let parsed: Vec<Option<f64>> = rows.iter().map(|r| r[j].parse::<f64>().ok()).collect();
        if parsed.iter().all(Option::is_none) {
            let levels: BTreeSet<&str> = rows.iter().map(|r| r[j].as_str()).collect();
            for level in levels {
                let vals = rows
                    .iter()
                    .map(|r| if r[j] == level { 1.0 } else { 0.0 })
                    .collect();
                columns.push((format!("{name}_{level}"), vals));
            }
            continue;
        }
        let mut vals = Vec::with_capacity(n);
        for (i, p) in parsed.iter().enumerate() {
            match p {
                Some(v) if v.is_finite() => vals.push(*v),
                _ => return Err(bad(i, j)),
            }
        }
        columns.push((name.clone(), vals));
    }
    if columns.is_empty() {
        return Err(csv_err(path, "no feature columns besides the target"));
    }

    let d = columns.len();
    let mut features = Array2::zeros((n, d));
    for (j, (_, vals)) in columns.iter().enumerate() {
        for (i, v) in vals.iter().enumerate() {
            features[[i, j]] = *v;
        }
    }
    let names = columns.into_iter().map(|(name, _)| name).collect();
    let ds_name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(ds_name, features, response, names, target_column)
}

/// Writes features then the response column, all at 17 significant digits.
pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut header: Vec<&str> = ds.column_names().iter().map(String::as_str).collect();
    header.push(ds.response_name());
    let rows = (0..ds.n_rows()).map(|i| {
        ds.row(i)
            .iter()
            .copied()
            .chain(std::iter::once(ds.response()[i]))
            .map(format_f64)
            .collect::<Vec<_>>()
    });
    write_table(path, &header, rows)
}

pub(crate) fn write_table<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionSidecar {
    bound_r0: f64,
    machine_labels: Vec<String>,
    #[serde(default)]
    provenance: serde_json::Value,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("json")
}

/// Writes the matrix as CSV (labels as header) plus a JSON sidecar next to
/// it (same stem, `.json`) holding `bound_r0` and free-form provenance.
pub fn save_prediction_matrix(
    pm: &PredictionMatrix,
    path: impl AsRef<Path>,
    provenance: serde_json::Value,
) -> Result<()> {
    let path = path.as_ref();
    let header: Vec<&str> = pm.machine_labels().iter().map(String::as_str).collect();
    let rows = pm
        .values()
        .rows()
        .into_iter()
        .map(|r| r.iter().copied().map(format_f64).collect::<Vec<_>>())
        .collect::<Vec<_>>();
    write_table(path, &header, rows)?;
    let side = PredictionSidecar {
        bound_r0: pm.bound_r0(),
        machine_labels: pm.machine_labels().to_vec(),
        provenance,
    };
    let sp = sidecar_path(path);
    let mut f = File::create(&sp).map_err(|source| Error::Io { path: sp.clone(), source })?;
    serde_json::to_writer_pretty(&mut f, &side)?;
    writeln!(f).map_err(|source| Error::Io { path: sp, source })?;
    Ok(())
}

/// Reads a prediction matrix; `bound_r0` comes from the sidecar when one is
/// present, otherwise from the entries.
pub fn load_prediction_matrix(path: impl AsRef<Path>) -> Result<PredictionMatrix> {
    let path = path.as_ref();
    let (headers, rows) = read_table(path)?;
    let (n, m) = (rows.len(), headers.len());
    let mut values = Array2::zeros((n, m));
    for (i, r) in rows.iter().enumerate() {
        if r.len() != m {
            return Err(csv_err(path, format!("line {} has {} fields, expected {m}", i + 2, r.len())));
        }
        for (j, cell) in r.iter().enumerate() {
            values[[i, j]] = parse_finite(cell).ok_or_else(|| Error::BadCell {
                row: i + 2,
                column: headers[j].clone(),
                value: cell.clone(),
            })?;
        }
    }
    let pm = PredictionMatrix::new(values, headers, 0.0)?;
    let sp = sidecar_path(path);
    if sp.exists() {
        let f = File::open(&sp).map_err(|source| Error::Io { path: sp.clone(), source })?;
        let side: PredictionSidecar = serde_json::from_reader(f)?;
        if side.machine_labels != pm.machine_labels() {
            return Err(csv_err(path, "sidecar labels do not match CSV header"));
        }
        return pm.with_bound(side.bound_r0);
    }
    Ok(pm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn loads_three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", "x1,x2,y\n1,2,3\n4,5,6\n7,8,9\n");
        let ds = load_csv(&p, "y").unwrap();
        assert_eq!((ds.n_rows(), ds.n_features()), (3, 2));
        assert_eq!(ds.response().to_vec(), vec![3.0, 6.0, 9.0]);
        assert_eq!(ds.column_names(), ["x1", "x2"]);
        assert_eq!(ds.row(1).to_vec(), vec![4.0, 5.0]);
    }

    #[test]
    fn missing_target_names_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", "x1,x2,y\n1,2,3\n");
        let err = load_csv(&p, "z").unwrap_err();
        assert!(matches!(&err, Error::MissingColumn(c) if c == "z"));
        assert!(err.to_string().contains('z'));
    }

    #[test]
    fn duplicate_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", "y,x,y\n1,2,3\n");
        assert!(matches!(load_csv(&p, "y"), Err(Error::DuplicateColumn(_))));
    }

    #[test]
    fn bad_cell_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", "x1,y\n1,2\nfoo,3\n");
        match load_csv(&p, "y").unwrap_err() {
            Error::BadCell { row, column, value } => {
                assert_eq!((row, column.as_str(), value.as_str()), (3, "x1", "foo"));
            }
            e => panic!("unexpected {e}"),
        }
        let p = write(dir.path(), "b.csv", "x1,y\n1,inf\n");
        assert!(matches!(load_csv(&p, "y"), Err(Error::BadCell { row: 2, .. })));
        let p = write(dir.path(), "c.csv", "x1,y\nNaN,1\n2,3\n");
        assert!(matches!(load_csv(&p, "y"), Err(Error::BadCell { row: 2, .. })));
        assert!(matches!(
            load_csv(dir.path().join("nope.csv"), "y"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn abalone_layout_one_hot_encodes_sex() {
        let dir = tempfile::tempdir().unwrap();
        let body = "\
Sex,Length,Diameter,Height,Whole weight,Shucked weight,Viscera weight,Shell weight,Rings
M,0.455,0.365,0.095,0.514,0.2245,0.101,0.15,15
M,0.35,0.265,0.09,0.2255,0.0995,0.0485,0.07,7
F,0.53,0.42,0.135,0.677,0.2565,0.1415,0.21,9
M,0.44,0.365,0.125,0.516,0.2155,0.114,0.155,10
I,0.33,0.255,0.08,0.205,0.0895,0.0395,0.055,7
";
        let p = write(dir.path(), "abalone.csv", body);
        let ds = load_csv(&p, "Rings").unwrap();
        assert_eq!(ds.n_features(), 10);
        assert_eq!(&ds.column_names()[..3], ["Sex_F", "Sex_I", "Sex_M"]);
        assert_eq!(ds.row(2).to_vec()[..3], [1.0, 0.0, 0.0]);
        assert_eq!(ds.row(4).to_vec()[..3], [0.0, 1.0, 0.0]);
        assert_eq!(ds.response().to_vec(), vec![15.0, 7.0, 9.0, 10.0, 7.0]);
    }

    #[test]
    fn save_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let x = array![[0.1, 1.0 / 3.0], [-2.5e-300, 7.0e10]];
        let ds = Dataset::with_default_names("t", x, array![std::f64::consts::PI, -1.0]).unwrap();
        let p = dir.path().join("t.csv");
        save_csv(&ds, &p).unwrap();
        let back = load_csv(&p, "Y").unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn prediction_matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pm = PredictionMatrix::new(
            array![[0.1, 0.2], [1.0 / 7.0, -3.0]],
            vec!["knn_k2".into(), "enet_a0_l1".into()],
            5.0,
        )
        .unwrap();
        let p = dir.path().join("pm.csv");
        save_prediction_matrix(&pm, &p, serde_json::json!({"grid": "test"})).unwrap();
        let back = load_prediction_matrix(&p).unwrap();
        assert_eq!(back, pm);
        assert_eq!(back.bound_r0(), 5.0);
    }
}
