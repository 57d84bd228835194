//! Shape corpora on disk.
//!
//! A corpus is a CSV with one row per point (`idx,x,y,z[,rho]`); samples are
//! stored as consecutive blocks of `N` rows, `idx` running `0..N` within each
//! block. A JSON sidecar next to the CSV records the kind, `N`, sample count
//! and units.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use super::types::{ShapeKind, ShapeSample};
use crate::error::{domain, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub kind: ShapeKind,
    pub n: usize,
    pub count: usize,
    pub units: String,
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn write_corpus(path: &Path, kind: ShapeKind, samples: &[ShapeSample]) -> Result<()> {
    let n = samples.first().map_or(0, |s| s.len());
    if samples.iter().any(|s| s.len() != n || s.kind != kind) {
        return Err(domain("corpus samples must share kind and cardinality"));
    }
    let curve = kind.is_curve();
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", if curve { "idx,x,y,z,rho" } else { "idx,x,y,z" })?;
    for s in samples {
        for (i, p) in s.points.iter().enumerate() {
            if curve {
                writeln!(w, "{i},{},{},{},{}", p.x, p.y, p.z, s.arc_params[i])?;
            } else {
                writeln!(w, "{i},{},{},{}", p.x, p.y, p.z)?;
            }
        }
    }
    w.flush()?;
    let header = CorpusHeader {
        kind,
        n,
        count: samples.len(),
        units: "m".into(),
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&header)?)?;
    Ok(())
}

/// Reads a corpus written by [`write_corpus`]. Blocks containing malformed
/// rows are skipped; the number of skipped blocks is returned alongside.
pub fn read_corpus(path: &Path) -> Result<(CorpusHeader, Vec<ShapeSample>, usize)> {
    let header: CorpusHeader = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let mut samples = Vec::new();
    let mut skipped = 0usize;
    let mut block: Vec<Option<(Point3<f64>, Option<f64>)>> = Vec::with_capacity(header.n);

    let flush = |block: &mut Vec<Option<(Point3<f64>, Option<f64>)>>,
                 samples: &mut Vec<ShapeSample>,
                 skipped: &mut usize| {
        if block.is_empty() {
            return;
        }
        let ok = block.len() == header.n && block.iter().all(Option::is_some);
        if ok {
            let rows: Vec<_> = block.drain(..).map(Option::unwrap).collect();
            let points: Vec<_> = rows.iter().map(|r| r.0).collect();
            let built = if header.kind.is_curve() {
                match rows.iter().map(|r| r.1).collect::<Option<Vec<f64>>>() {
                    Some(rhos) => ShapeSample::with_params(points, header.kind, rhos),
                    None => ShapeSample::new(points, header.kind),
                }
            } else {
                ShapeSample::new(points, header.kind)
            };
            match built {
                Ok(s) => samples.push(s),
                Err(_) => *skipped += 1,
            }
        } else {
            *skipped += 1;
        }
        block.clear();
    };

    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(_) => {
                block.push(None);
                continue;
            }
        };
        let idx = record.get(0).and_then(|v| v.trim().parse::<usize>().ok());
        if idx == Some(0) {
            flush(&mut block, &mut samples, &mut skipped);
        }
        let parsed = (|| {
            idx?;
            let x = record.get(1)?.trim().parse::<f64>().ok()?;
            let y = record.get(2)?.trim().parse::<f64>().ok()?;
            let z = record.get(3)?.trim().parse::<f64>().ok()?;
            let rho = record.get(4).and_then(|v| v.trim().parse::<f64>().ok());
            Some((Point3::new(x, y, z), rho))
        })();
        block.push(parsed);
    }
    flush(&mut block, &mut samples, &mut skipped);
    Ok((header, samples, skipped))
}
