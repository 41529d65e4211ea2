//! CSV/JSON helpers. Every CSV is LF-terminated and floats use the shortest
//! round-trip representation, so identical inputs give identical bytes.

use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use csv::{ReaderBuilder, Terminator, WriterBuilder};
use kdm::Mat;
use serde::Serialize;

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(WriterBuilder::new().terminator(Terminator::Any(b'\n')).from_writer(f))
}

pub fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Appends rows, writing `header` first when the file is new or empty.
pub fn append_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut w = WriterBuilder::new().terminator(Terminator::Any(b'\n')).from_writer(f);
    if fresh {
        w.write_record(header)?;
    }
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_matrix(path: &Path, prefix: &str, m: &Mat) -> Result<()> {
    let header: Vec<String> = (1..=m.ncols()).map(|j| format!("{prefix}{j}")).collect();
    let rows: Vec<Vec<String>> =
        (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| fmt_f64(m[(i, j)])).collect()).collect();
    write_rows(path, &header, &rows)
}

pub fn read_matrix(path: &Path) -> Result<Mat> {
    let mut r = ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let cols = r.headers()?.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != cols {
            bail!("{}: ragged row {}", path.display(), rows + 1);
        }
        for v in rec.iter() {
            data.push(v.trim().parse::<f64>().with_context(|| format!("{}: bad number {v:?}", path.display()))?);
        }
        rows += 1;
    }
    if rows == 0 {
        bail!("{}: no rows", path.display());
    }
    Ok(Mat::from_row_slice(rows, cols, &data))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&s).with_context(|| format!("parsing {}", path.display()))
}

pub fn ensure_dir(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir.to_path_buf())
}

/// FNV-1a over the little-endian bytes of every entry, row-major.
pub fn fingerprint(m: &Mat) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            for b in m[(i, j)].to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    format!("{h:016x}")
}
