//! File formats: Gram matrices (CSV and raw binary), loss-curve CSVs and
//! pretty-printed JSON.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dynamics::{LossCurves, LossPoint};
use crate::error::{Error, Result};
use crate::trainer::RecordedLoss;

/// Header of the loss-curve CSV.
pub const LOSS_COLUMNS: [&str; 7] = [
    "step",
    "t",
    "train_L_mu",
    "train_L_gamma",
    "test_L_mu",
    "test_L_gamma",
    "test_L_total",
];

/// One Gram row per line, no header.
pub fn write_gram_csv(path: &Path, gram: ArrayView2<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    for row in gram.rows() {
        w.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_gram_csv(path: &Path) -> Result<Array2<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        if *cols.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::Format {
                what: "Gram CSV",
                detail: format!("row {rows} has {} fields", rec.len()),
            });
        }
        for field in rec.iter() {
            data.push(field.trim().parse::<f64>().map_err(|e| Error::Format {
                what: "Gram CSV",
                detail: e.to_string(),
            })?);
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols.unwrap_or(0)), data).map_err(|e| Error::Shape(e.to_string()))
}

/// `rows` and `cols` as little-endian `u64`, then row-major little-endian
/// `f64` entries.
pub fn write_gram_binary(path: &Path, gram: ArrayView2<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(gram.nrows() as u64).to_le_bytes())?;
    w.write_all(&(gram.ncols() as u64).to_le_bytes())?;
    for v in gram.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_gram_binary(path: &Path) -> Result<Array2<f64>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let rows = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let cols = u64::from_le_bytes(word) as usize;
    let len = rows.checked_mul(cols).ok_or(Error::Format {
        what: "Gram binary",
        detail: "dimensions overflow".into(),
    })?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != len * 8 {
        return Err(Error::Format {
            what: "Gram binary",
            detail: format!("{rows}×{cols} header but {} payload bytes", bytes.len()),
        });
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Shape(e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
struct LossRow {
    step: usize,
    t: f64,
    #[serde(rename = "train_L_mu")]
    train_l_mu: f64,
    #[serde(rename = "train_L_gamma")]
    train_l_gamma: f64,
    #[serde(rename = "test_L_mu")]
    test_l_mu: f64,
    #[serde(rename = "test_L_gamma")]
    test_l_gamma: f64,
    #[serde(rename = "test_L_total")]
    test_l_total: f64,
}

/// Loss curves as CSV. Each `preamble` line is written first as a `#`
/// comment.
pub fn write_loss_csv<W: Write>(
    mut out: W,
    curves: &LossCurves,
    preamble: &[String],
) -> Result<()> {
    if curves.steps.len() != curves.points.len() || curves.t.len() != curves.points.len() {
        return Err(Error::Shape("loss curve columns differ in length".into()));
    }
    for line in preamble {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    for ((&step, &t), p) in curves.steps.iter().zip(&curves.t).zip(&curves.points) {
        w.serialize(LossRow {
            step,
            t,
            train_l_mu: p.train_l_mu,
            train_l_gamma: p.train_l_gamma,
            test_l_mu: p.test_l_mu,
            test_l_gamma: p.test_l_gamma,
            test_l_total: p.test_l_total,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_loss_csv_file(path: &Path, curves: &LossCurves, preamble: &[String]) -> Result<()> {
    write_loss_csv(BufWriter::new(File::create(path)?), curves, preamble)
}

/// Reads curves written by [`write_loss_csv`], skipping `#` comments.
pub fn read_loss_csv<R: Read>(input: R) -> Result<LossCurves> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != LOSS_COLUMNS {
        return Err(Error::Format {
            what: "loss CSV",
            detail: format!("unexpected header {header:?}"),
        });
    }
    let mut curves = LossCurves::default();
    for row in r.deserialize() {
        let row: LossRow = row?;
        curves.steps.push(row.step);
        curves.t.push(row.t);
        curves.points.push(LossPoint {
            train_l_mu: row.train_l_mu,
            train_l_gamma: row.train_l_gamma,
            test_l_mu: row.test_l_mu,
            test_l_gamma: row.test_l_gamma,
            test_l_total: row.test_l_total,
        });
    }
    Ok(curves)
}

/// Curves of a single run. An ensemble of one is its own mean, so the
/// whole loss sits in the `μ` columns.
pub fn run_curves(history: &[RecordedLoss]) -> LossCurves {
    LossCurves {
        steps: history.iter().map(|r| r.step).collect(),
        t: history.iter().map(|r| r.step as f64).collect(),
        points: history
            .iter()
            .map(|r| LossPoint {
                train_l_mu: r.train,
                train_l_gamma: 0.0,
                test_l_mu: r.test,
                test_l_gamma: 0.0,
                test_l_total: r.test,
            })
            .collect(),
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn gram_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let g = array![
            [1.0, 0.1 + 0.2, -3.5e-300],
            [f64::MIN_POSITIVE, 2.0 / 3.0, 1e300]
        ];
        let (c, b) = (dir.path().join("g.csv"), dir.path().join("g.bin"));
        write_gram_csv(&c, g.view()).unwrap();
        write_gram_binary(&b, g.view()).unwrap();
        assert_eq!(read_gram_csv(&c).unwrap(), g);
        assert_eq!(read_gram_binary(&b).unwrap(), g);
        assert_eq!(std::fs::metadata(&b).unwrap().len(), 16 + 6 * 8);
    }

    #[test]
    fn truncated_binary_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.bin");
        write_gram_binary(&p, array![[1.0, 2.0]].view()).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_gram_binary(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn loss_csv_has_the_fixed_header_and_round_trips() {
        let curves = run_curves(&[
            RecordedLoss {
                step: 0,
                train: 0.5,
                test: 0.7,
            },
            RecordedLoss {
                step: 10,
                train: 0.125,
                test: 0.3,
            },
        ]);
        let mut buf = Vec::new();
        write_loss_csv(&mut buf, &curves, &["config_sha256=abc".into()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "# config_sha256=abc");
        assert_eq!(lines.next().unwrap(), LOSS_COLUMNS.join(","));
        assert_eq!(read_loss_csv(buf.as_slice()).unwrap(), curves);
    }
}
