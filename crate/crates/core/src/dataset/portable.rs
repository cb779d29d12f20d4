//! Portable dataset layout: `manifest.jsonl` plus one greyscale PNG per cell.

use std::fs;
use std::io::{BufRead, BufReader, Cursor, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec;
use crate::problem::{Cell, Configuration, RpmProblem, RuleAnnotation, CANDIDATES, CONTEXT_CELLS};

pub const MANIFEST: &str = "manifest.jsonl";
pub const CELL_DIR: &str = "cells";

/// One line of `manifest.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub configuration: Configuration,
    pub answer: Option<usize>,
    pub rules: Option<RuleAnnotation>,
    /// Paths relative to the dataset root, context cells first.
    pub cells: Vec<String>,
    /// Hex SHA-256 of each cell's raw pixels, used to detect tampering.
    pub digests: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PortableSummary {
    pub dir: PathBuf,
    pub problems: usize,
    pub cells: usize,
}

fn cell_name(id: &str, index: usize) -> String {
    format!("{CELL_DIR}/{id}_{index:02}.png")
}

fn digest(pixels: &[u8]) -> String {
    hex::encode(Sha256::digest(pixels))
}

fn encode_png(cell: &Cell) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let side = cell.side() as u32;
    let mut encoder = png::Encoder::new(&mut out, side, side);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let fail = |e: png::EncodingError| Error::format("png", e.to_string());
    let mut writer = encoder.write_header().map_err(fail)?;
    writer.write_image_data(cell.pixels()).map_err(fail)?;
    writer.finish().map_err(fail)?;
    Ok(out)
}

fn decode_png(bytes: &[u8], name: &str) -> Result<Cell> {
    let fail = |m: String| Error::format(name, m);
    let mut reader = png::Decoder::new(Cursor::new(bytes))
        .read_info()
        .map_err(|e| fail(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| fail("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| fail(e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(fail("expected 8-bit greyscale".into()));
    }
    buf.truncate(info.buffer_size());
    Cell::from_raster(info.height as usize, info.width as usize, buf)
}

/// Write `problems` under `dir`; an empty list yields an empty manifest.
pub fn save_portable(problems: &[RpmProblem], dir: &Path) -> Result<PortableSummary> {
    let cells_dir = dir.join(CELL_DIR);
    fs::create_dir_all(&cells_dir).map_err(|e| Error::io(&cells_dir, e))?;
    let records = exec::map(problems, |p| -> Result<String> {
        let mut cells = Vec::with_capacity(CONTEXT_CELLS + CANDIDATES);
        let mut digests = Vec::with_capacity(CONTEXT_CELLS + CANDIDATES);
        for (i, cell) in p.context().iter().chain(p.candidates()).enumerate() {
            let name = cell_name(p.id(), i);
            let path = dir.join(&name);
            fs::write(&path, encode_png(cell)?).map_err(|e| Error::io(&path, e))?;
            cells.push(name);
            digests.push(digest(cell.pixels()));
        }
        let record = ManifestRecord {
            id: p.id().to_string(),
            configuration: p.configuration(),
            answer: p.answer(),
            rules: p.rules().cloned(),
            cells,
            digests,
        };
        Ok(serde_json::to_string(&record)?)
    });
    let manifest = dir.join(MANIFEST);
    let mut file = fs::File::create(&manifest).map_err(|e| Error::io(&manifest, e))?;
    for line in records {
        writeln!(file, "{}", line?).map_err(|e| Error::io(&manifest, e))?;
    }
    Ok(PortableSummary {
        dir: dir.to_path_buf(),
        problems: problems.len(),
        cells: problems.len() * (CONTEXT_CELLS + CANDIDATES),
    })
}

fn load_record(dir: &Path, record: ManifestRecord) -> Result<std::result::Result<RpmProblem, Vec<String>>> {
    if record.cells.len() != CONTEXT_CELLS + CANDIDATES || record.digests.len() != record.cells.len() {
        return Err(Error::format(
            format!("manifest record {}", record.id),
            "expected 16 cells with 16 digests",
        ));
    }
    let mut cells = Vec::with_capacity(record.cells.len());
    let mut problems = Vec::new();
    for (name, expected) in record.cells.iter().zip(&record.digests) {
        let path = dir.join(name);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(_) => {
                problems.push(format!("{name} (missing)"));
                continue;
            }
        };
        match decode_png(&bytes, name) {
            Ok(cell) if digest(cell.pixels()) == *expected => cells.push(cell),
            Ok(_) => problems.push(format!("{name} (content does not match manifest)")),
            Err(_) => problems.push(format!("{name} (unreadable)")),
        }
    }
    if !problems.is_empty() {
        return Ok(Err(problems));
    }
    let candidates = cells.split_off(CONTEXT_CELLS);
    let mut problem = RpmProblem::new(record.id, cells, candidates, record.configuration)?;
    if let Some(a) = record.answer {
        problem = problem.with_answer(a)?;
    }
    if let Some(r) = record.rules {
        problem = problem.with_rules(r)?;
    }
    Ok(Ok(problem))
}

/// Read a directory written by [`save_portable`], verifying every cell.
pub fn load_portable(dir: &Path) -> Result<Vec<RpmProblem>> {
    let manifest = dir.join(MANIFEST);
    let file = fs::File::open(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&manifest, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format(format!("{MANIFEST} line {}", n + 1), e.to_string()))?;
        records.push(record);
    }
    let loaded = exec::map(&records, |r| load_record(dir, r.clone()));
    let mut out = Vec::with_capacity(loaded.len());
    let mut missing = Vec::new();
    for item in loaded {
        match item? {
            Ok(p) => out.push(p),
            Err(m) => missing.extend(m),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Integrity(missing));
    }
    Ok(out)
}
