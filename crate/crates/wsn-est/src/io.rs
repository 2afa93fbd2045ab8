//! CSV input and output for observation matrices.
//!
//! Layout: header `t,s1,...,sL`, one row per sampling instant, `t` counting
//! from zero. All floats are written with 9 significant digits.

use std::path::Path;

use crate::error::{Error, Result};

/// Formats with 9 significant digits, the precision used in every file the
/// crate writes.
pub fn fmt_g9(x: f64) -> String {
    format!("{x:.8e}")
}

/// Writes an observation matrix (rows = time, columns = sensors).
pub fn write_observations<P: AsRef<Path>>(path: P, obs: &[Vec<f64>]) -> Result<()> {
    let sensors = match obs.first() {
        Some(row) => row.len(),
        None => return Err(Error::DataFormat("no rows to write".into())),
    };
    if sensors == 0 {
        return Err(Error::DataFormat("rows have no sensor columns".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=sensors).map(|l| format!("s{l}")));
    w.write_record(&header)?;
    for (t, row) in obs.iter().enumerate() {
        if row.len() != sensors {
            return Err(Error::DataFormat(format!(
                "row {t} has {} columns, expected {sensors}",
                row.len()
            )));
        }
        let mut rec = vec![t.to_string()];
        rec.extend(row.iter().map(|&x| fmt_g9(x)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a matrix written by [`write_observations`], returning rows in time
/// order with the `t` column dropped.
pub fn read_observations<P: AsRef<Path>>(path: P) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.get(0) != Some("t") || header.len() < 2 {
        return Err(Error::DataFormat(
            "expected header starting with t,s1,...".into(),
        ));
    }
    let sensors = header.len() - 1;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut row = Vec::with_capacity(sensors);
        for field in rec.iter().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::DataFormat(format!("bad float {field:?}")))?;
            row.push(v);
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.csv");
        let obs = vec![vec![1.25, -3.5e-7], vec![0.0, 6.125e11]];
        write_observations(&path, &obs).unwrap();
        let back = read_observations(&path).unwrap();
        assert_eq!(back, obs);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,s1,s2\n"));
        assert!(text.contains("1.25000000e0"));
    }

    #[test]
    fn ragged_rows_rejected() {
        let err = write_observations("/dev/null", &[vec![1.0], vec![1.0, 2.0]]);
        assert!(err.is_err());
    }
}
