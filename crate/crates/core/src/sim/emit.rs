//! CSV and JSON output with a fixed column order.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::closed_loop::TrajectoryRow;
use super::experiments::{OscillationSample, StpRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

/// A record with a documented CSV layout. `width` is the length of the
/// variable tail (the number of actions for distributions).
pub trait Tabular {
    fn columns(width: usize) -> Vec<String>;
    fn cells(&self) -> Vec<String>;
}

/// Seventeen significant digits, enough to round-trip any f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn tail(prefix: &str, width: usize) -> impl Iterator<Item = String> + '_ {
    (0..width).map(move |i| format!("{prefix}{i}"))
}

impl Tabular for TrajectoryRow {
    fn columns(width: usize) -> Vec<String> {
        ["seed", "round", "t_realized", "u", "action", "v_eps", "pop_target"]
            .into_iter()
            .map(String::from)
            .chain(tail("p_a", width))
            .collect()
    }

    fn cells(&self) -> Vec<String> {
        let mut c = vec![
            self.seed.to_string(),
            self.round.to_string(),
            self.t_realized.to_string(),
            fmt_f64(self.u),
            self.action.to_string(),
            fmt_f64(self.v_eps),
            fmt_f64(self.pop_target),
        ];
        c.extend(self.p_a.iter().map(|p| fmt_f64(*p)));
        c
    }
}

impl Tabular for StpRecord {
    fn columns(_: usize) -> Vec<String> {
        ["phi1", "phi3", "p_e1", "p_e2", "p_gamma", "violated"].into_iter().map(String::from).collect()
    }

    fn cells(&self) -> Vec<String> {
        vec![
            fmt_f64(self.phi1),
            fmt_f64(self.phi3),
            fmt_f64(self.p_e1),
            fmt_f64(self.p_e2),
            fmt_f64(self.p_gamma),
            self.violated.to_string(),
        ]
    }
}

impl Tabular for OscillationSample {
    fn columns(width: usize) -> Vec<String> {
        std::iter::once("t".to_string()).chain(tail("p_a", width)).collect()
    }

    fn cells(&self) -> Vec<String> {
        std::iter::once(fmt_f64(self.t)).chain(self.p_a.iter().map(|p| fmt_f64(*p))).collect()
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.display().to_string(), source }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Io { path: path.display().to_string(), source: std::io::Error::other(e.to_string()) }
}

pub fn emit<R: Tabular + Serialize>(records: &[R], width: usize, path: &Path, format: Format) -> Result<()> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
            w.write_record(R::columns(width)).map_err(csv_err(path))?;
            for r in records {
                w.write_record(r.cells()).map_err(csv_err(path))?;
            }
            w.flush().map_err(io_err(path))
        }
        Format::Json => write_json(&records, path),
    }
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| Error::Io { path: path.display().to_string(), source: std::io::Error::other(e) })?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

fn parse<T: std::str::FromStr>(field: Option<&str>, what: &str) -> Result<T> {
    field.and_then(|f| f.parse().ok()).ok_or_else(|| Error::Config(format!("trajectory csv: bad or missing {what}")))
}

/// Reads a trajectory file written by [`emit`].
pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    let width = header.len().checked_sub(7).ok_or_else(|| Error::Config("trajectory csv: short header".into()))?;
    if header.iter().map(String::from).collect::<Vec<_>>() != TrajectoryRow::columns(width) {
        return Err(Error::Config("trajectory csv: unexpected columns".into()));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        rows.push(TrajectoryRow {
            seed: parse(rec.get(0), "seed")?,
            round: parse(rec.get(1), "round")?,
            t_realized: parse(rec.get(2), "t_realized")?,
            u: parse(rec.get(3), "u")?,
            action: parse(rec.get(4), "action")?,
            v_eps: parse(rec.get(5), "v_eps")?,
            pop_target: parse(rec.get(6), "pop_target")?,
            p_a: (0..width).map(|i| parse(rec.get(7 + i), "p_a")).collect::<Result<_>>()?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(seed: u64, round: usize, u: f64, p: f64) -> TrajectoryRow {
        TrajectoryRow {
            seed,
            round,
            t_realized: 10,
            u,
            action: 1,
            v_eps: 0.1 / 3.0,
            pop_target: p,
            p_a: vec![p, 1.0 - p],
        }
    }

    #[test]
    fn empty_list_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        emit::<TrajectoryRow>(&[], 3, &path, Format::Csv).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "seed,round,t_realized,u,action,v_eps,pop_target,p_a0,p_a1,p_a2\n");
        assert!(read_trajectory_csv(&path).unwrap().is_empty());
    }

    #[test]
    fn stp_columns() {
        assert_eq!(StpRecord::columns(0).join(","), "phi1,phi3,p_e1,p_e2,p_gamma,violated");
    }

    #[test]
    fn seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(-2.0), "-2.0000000000000000e0");
    }

    #[test]
    fn json_mirrors_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        let rows = vec![row(3, 0, -0.25, 0.7)];
        emit(&rows, 2, &path, Format::Json).unwrap();
        let back: Vec<TrajectoryRow> = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn missing_directory_reports_path() {
        let err = emit::<StpRecord>(&[], 0, Path::new("/nonexistent/dir/stp.csv"), Format::Csv).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/stp.csv"));
    }

    proptest! {
        #[test]
        fn trajectory_round_trip(seed in 0u64..1000, u in -1.0f64..1.0, p in 0.0f64..1.0, rounds in 0usize..6) {
            let rows: Vec<_> = (0..rounds).map(|k| row(seed, k, u / (k + 1) as f64, p)).collect();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("t.csv");
            emit(&rows, 2, &path, Format::Csv).unwrap();
            prop_assert_eq!(read_trajectory_csv(&path).unwrap(), rows);
        }
    }
}
