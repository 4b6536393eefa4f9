//! Point file formats.
//!
//! * `.txt`: one point per line, whitespace separated `x y z f1 [f2 ...]`.
//!   Blank lines and lines starting with `#` are skipped.
//! * `.bin`: packed little-endian `f32` records of `x y z intensity`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointFormat {
    Text,
    Binary,
}

impl PointFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("txt") => Ok(PointFormat::Text),
            Some("bin") => Ok(PointFormat::Binary),
            _ => Err(Error::Input(format!(
                "cannot infer point format of {}: expected .txt or .bin",
                path.display()
            ))),
        }
    }
}

const BIN_RECORD_FLOATS: usize = 4;

pub fn read_points(path: &Path) -> Result<PointCloud> {
    match PointFormat::from_path(path)? {
        PointFormat::Text => parse_text(&fs::read_to_string(path)?),
        PointFormat::Binary => parse_binary(&fs::read(path)?),
    }
}

pub fn write_points(path: &Path, cloud: &PointCloud) -> Result<()> {
    let format = PointFormat::from_path(path)?;
    let mut out = BufWriter::new(fs::File::create(path)?);
    match format {
        PointFormat::Text => out.write_all(format_text(cloud).as_bytes())?,
        PointFormat::Binary => out.write_all(&encode_binary(cloud)?)?,
    }
    out.flush()?;
    Ok(())
}

pub fn parse_text(src: &str) -> Result<PointCloud> {
    let mut cloud: Option<PointCloud> = None;
    for (lineno, line) in src.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values = line
            .split_whitespace()
            .map(|tok| tok.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Error::Input(format!("line {}: {e}", lineno + 1)))?;
        if values.len() < 4 {
            return Err(Error::Input(format!(
                "line {}: expected x y z and at least one feature, got {} values",
                lineno + 1,
                values.len()
            )));
        }
        let feats: Vec<f32> = values[3..].iter().map(|&v| v as f32).collect();
        let pc = cloud.get_or_insert_with(|| PointCloud::new(feats.len()));
        pc.push([values[0], values[1], values[2]], &feats)
            .map_err(|_| {
                Error::Input(format!("line {}: inconsistent feature count", lineno + 1))
            })?;
    }
    Ok(cloud.unwrap_or_else(|| PointCloud::new(1)))
}

/// Text rendering with shortest round-trip float formatting.
pub fn format_text(cloud: &PointCloud) -> String {
    let mut s = String::new();
    for i in 0..cloud.len() {
        let p = cloud.positions[i];
        s.push_str(&format!("{} {} {}", p[0], p[1], p[2]));
        for f in cloud.feature_row(i) {
            s.push_str(&format!(" {f}"));
        }
        s.push('\n');
    }
    s
}

pub fn parse_binary(bytes: &[u8]) -> Result<PointCloud> {
    let record = BIN_RECORD_FLOATS * 4;
    if bytes.len() % record != 0 {
        return Err(Error::Input(format!(
            "binary point file length {} is not a multiple of {record}",
            bytes.len()
        )));
    }
    let mut cloud = PointCloud::new(1);
    for rec in bytes.chunks_exact(record) {
        let v: Vec<f32> = rec
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        cloud.push([v[0] as f64, v[1] as f64, v[2] as f64], &[v[3]])?;
    }
    Ok(cloud)
}

pub fn encode_binary(cloud: &PointCloud) -> Result<Vec<u8>> {
    if cloud.channels != 1 {
        return Err(Error::Input(format!(
            "binary point files hold exactly one feature (intensity), cloud has {}",
            cloud.channels
        )));
    }
    let mut out = Vec::with_capacity(cloud.len() * BIN_RECORD_FLOATS * 4);
    for i in 0..cloud.len() {
        let p = cloud.positions[i];
        for v in [
            p[0] as f32,
            p[1] as f32,
            p[2] as f32,
            cloud.feature_row(i)[0],
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}
