//! Field snapshots and report files.
//!
//! A snapshot `name` is two files: `name.json`, a single-line header, and
//! `name.bin`, the samples as little-endian `f64` in row-major order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fracops::{ExtensionField, ExtensionKind, SlabSpec};
use crate::grid::{Grid, RealField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotHeader {
    pub dim: usize,
    pub n: usize,
    #[serde(rename = "L")]
    pub extent: f64,
    pub description: String,
    /// Present for extension fields; the payload then holds `layers + 1` layers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slab: Option<SlabSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ExtensionKind>,
}

impl SnapshotHeader {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dim, self.n, self.extent)
    }
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

fn write_raw(stem: &Path, header: &SnapshotHeader, values: &[f64]) -> Result<()> {
    let (hp, bp) = paths(stem);
    let mut line = serde_json::to_string(header)?;
    line.push('\n');
    fs::write(hp, line)?;
    let mut bytes = Vec::with_capacity(8 * values.len());
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(bp)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

fn read_raw(stem: &Path) -> Result<(SnapshotHeader, Vec<f64>)> {
    let (hp, bp) = paths(stem);
    let text = fs::read_to_string(&hp)?;
    let first = text.lines().next().ok_or_else(|| Error::Format(format!("{} is empty", hp.display())))?;
    let header: SnapshotHeader = serde_json::from_str(first)?;
    let bytes = fs::read(&bp)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!("{}: length not a multiple of 8", bp.display())));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header, values))
}

/// Write `stem.json` and `stem.bin`; any extension on `stem` is replaced.
pub fn write_snapshot(stem: &Path, field: &RealField, description: &str) -> Result<()> {
    let g = field.grid();
    let header = SnapshotHeader {
        dim: g.dim(),
        n: g.n(),
        extent: g.extent(),
        description: description.to_string(),
        slab: None,
        kind: None,
    };
    write_raw(stem, &header, field.values())
}

pub fn read_snapshot(stem: &Path) -> Result<(RealField, SnapshotHeader)> {
    let (header, values) = read_raw(stem)?;
    if header.slab.is_some() {
        return Err(Error::Format("snapshot holds an extension field".into()));
    }
    let field = RealField::new(header.grid()?, values)
        .map_err(|e| Error::Format(format!("{}: {e}", stem.display())))?;
    Ok((field, header))
}

pub fn write_extension_snapshot(stem: &Path, ext: &ExtensionField, description: &str) -> Result<()> {
    let g = ext.base_grid();
    let header = SnapshotHeader {
        dim: g.dim(),
        n: g.n(),
        extent: g.extent(),
        description: description.to_string(),
        slab: Some(*ext.slab()),
        kind: Some(ext.kind()),
    };
    write_raw(stem, &header, ext.values())
}

pub fn read_extension_snapshot(stem: &Path) -> Result<(ExtensionField, SnapshotHeader)> {
    let (header, values) = read_raw(stem)?;
    let slab = header
        .slab
        .ok_or_else(|| Error::Format("snapshot has no slab geometry".into()))?;
    let ext = ExtensionField::new(header.grid()?, slab, header.kind.unwrap_or(ExtensionKind::FiniteDifference), values)
        .map_err(|e| Error::Format(format!("{}: {e}", stem.display())))?;
    Ok((ext, header))
}

/// Pretty JSON with a trailing newline.
pub fn write_report_json<T: Serialize>(path: &Path, report: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}
