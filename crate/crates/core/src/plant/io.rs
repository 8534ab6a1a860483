//! CSV persistence of the generated datasets.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write/read cycle is lossless and repeated writes are byte-identical.

use std::path::Path;

use super::dataset::{CtrlDataset, Splits, SysIdDataset};
use crate::error::{Error, Result};

/// Write a header and rows of numbers.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read a numeric table; returns the header and rows.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = rec
            .iter()
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| {
                    Error::format(path, format!("row {}: `{s}` is not a number", i + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != header.len() {
            return Err(Error::format(
                path,
                format!("row {} has {} fields", i + 1, row.len()),
            ));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::format(path, "no data rows"));
    }
    Ok((header, rows))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::format(path, e.to_string())
    }
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}_{i}")).collect()
}

fn columns(header: &[String], prefix: &str) -> Vec<usize> {
    let p = format!("{prefix}_");
    header
        .iter()
        .enumerate()
        .filter(|(_, h)| {
            h.strip_prefix(&p)
                .is_some_and(|rest| rest.parse::<usize>().is_ok())
        })
        .map(|(i, _)| i)
        .collect()
}

fn pick(rows: &[Vec<f64>], cols: &[usize]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| cols.iter().map(|&c| r[c]).collect())
        .collect()
}

fn sample_time(path: &Path, rows: &[Vec<f64>]) -> Result<f64> {
    if rows.len() < 2 {
        return Err(Error::format(path, "need at least two samples"));
    }
    let ts = rows[1][0] - rows[0][0];
    if !(ts > 0.0) {
        return Err(Error::format(path, "time column is not increasing"));
    }
    Ok(ts)
}

fn require(path: &Path, header: &[String], prefix: &str) -> Result<Vec<usize>> {
    let c = columns(header, prefix);
    if c.is_empty() {
        return Err(Error::format(path, format!("missing `{prefix}_*` columns")));
    }
    Ok(c)
}

/// Columns `time,u_*,d_*,y_*`.
pub fn write_sysid_csv(path: &Path, ds: &SysIdDataset) -> Result<()> {
    let mut header = vec!["time".to_string()];
    header.extend(names("u", ds.n_u()));
    header.extend(names("d", ds.n_d()));
    header.extend(names("y", ds.n_y()));
    let rows: Vec<Vec<f64>> = (0..ds.len())
        .map(|k| {
            let mut r = vec![k as f64 * ds.ts];
            r.extend(&ds.u[k]);
            r.extend(&ds.d[k]);
            r.extend(&ds.y[k]);
            r
        })
        .collect();
    write_table(path, &header, &rows)
}

pub fn read_sysid_csv(path: &Path) -> Result<SysIdDataset> {
    let (header, rows) = read_table(path)?;
    let ts = sample_time(path, &rows)?;
    Ok(SysIdDataset {
        ts,
        u: pick(&rows, &require(path, &header, "u")?),
        d: pick(&rows, &require(path, &header, "d")?),
        y: pick(&rows, &require(path, &header, "y")?),
        splits: Splits::thirds(rows.len()),
    })
}

/// Columns `time,d_*,y_*,ylo_*,yhi_*,ulo_*,uhi_*`.
pub fn write_ctrl_csv(path: &Path, ds: &CtrlDataset) -> Result<()> {
    let mut header = vec!["time".to_string()];
    header.extend(names("d", ds.n_d()));
    header.extend(names("y", ds.n_y()));
    header.extend(names("ylo", ds.n_y()));
    header.extend(names("yhi", ds.n_y()));
    header.extend(names("ulo", ds.n_u()));
    header.extend(names("uhi", ds.n_u()));
    let rows: Vec<Vec<f64>> = (0..ds.len())
        .map(|k| {
            let mut r = vec![k as f64 * ds.ts];
            for part in [
                &ds.d,
                &ds.y,
                &ds.y_lower,
                &ds.y_upper,
                &ds.u_lower,
                &ds.u_upper,
            ] {
                r.extend(&part[k]);
            }
            r
        })
        .collect();
    write_table(path, &header, &rows)
}

pub fn read_ctrl_csv(path: &Path) -> Result<CtrlDataset> {
    let (header, rows) = read_table(path)?;
    let ts = sample_time(path, &rows)?;
    Ok(CtrlDataset {
        ts,
        d: pick(&rows, &require(path, &header, "d")?),
        y: pick(&rows, &require(path, &header, "y")?),
        y_lower: pick(&rows, &require(path, &header, "ylo")?),
        y_upper: pick(&rows, &require(path, &header, "yhi")?),
        u_lower: pick(&rows, &require(path, &header, "ulo")?),
        u_upper: pick(&rows, &require(path, &header, "uhi")?),
        splits: Splits::thirds(rows.len()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::dataset::{
        generate_ctrl_dataset, generate_sysid_dataset, ComfortConfig, ExcitationConfig,
    };
    use crate::plant::disturbance::AmbientConfig;
    use crate::plant::rc::{RcBuildingModel, RcParams};

    #[test]
    fn sysid_round_trip_is_lossless() {
        let m = RcBuildingModel::new(RcParams::default()).unwrap();
        let ds = generate_sysid_dataset(
            &m,
            2,
            &ExcitationConfig::default(),
            &AmbientConfig::default(),
            4,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_sysid_csv(&p, &ds).unwrap();
        let back = read_sysid_csv(&p).unwrap();
        assert_eq!(back, ds);
        let bytes = std::fs::read(&p).unwrap();
        write_sysid_csv(&p, &back).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), bytes);
    }

    #[test]
    fn ctrl_round_trip_is_lossless() {
        let m = RcBuildingModel::new(RcParams::default()).unwrap();
        let ds = generate_ctrl_dataset(
            &m,
            2,
            &ComfortConfig::default(),
            &ExcitationConfig::default(),
            &AmbientConfig::default(),
            4,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        write_ctrl_csv(&p, &ds).unwrap();
        assert_eq!(read_ctrl_csv(&p).unwrap(), ds);
    }

    #[test]
    fn malformed_files_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "time,u_0,d_0,y_0\n0,1,2,x\n").unwrap();
        assert!(matches!(read_sysid_csv(&p), Err(Error::Format { .. })));
        std::fs::write(&p, "time,u_0,y_0\n0,1,2\n900,1,2\n").unwrap();
        assert!(matches!(read_sysid_csv(&p), Err(Error::Format { .. })));
        assert!(matches!(
            read_sysid_csv(&dir.path().join("none.csv")),
            Err(Error::Io { .. })
        ));
    }
}
