//! Flat binary latent snapshots and PGM previews. A snapshot is one ASCII
//! header line "channels height width\n" followed by exactly
//! channels*height*width little-endian f64 values in (channel, row, column)
//! order — nothing else, so files are byte-comparable across runs.

use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use ndarray::Array2;
use std::fs;
use std::path::Path;

/// Longest header this reader accepts; every well-formed header is shorter.
const MAX_HEADER: usize = 64;

/// Canonical file name for the i-th frame of a trajectory directory.
pub fn step_file_name(index: usize) -> String {
    format!("step_{index:04}.bin")
}

pub fn write_snapshot(path: &Path, grid: &LatentGrid) -> Result<()> {
    let (c, h, w) = grid.dims();
    let mut bytes = Vec::with_capacity(32 + c * h * w * 8);
    bytes.extend_from_slice(format!("{c} {h} {w}\n").as_bytes());
    for &v in grid.as_array() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_snapshot(path: &Path) -> Result<LatentGrid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let malformed = |reason: &str| Error::Snapshot {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };

    let newline = bytes
        .iter()
        .take(MAX_HEADER)
        .position(|&b| b == b'\n')
        .ok_or_else(|| malformed("missing header line"))?;
    let header = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| malformed("header is not ASCII"))?;
    let fields: Vec<&str> = header.split(' ').collect();
    if fields.len() != 3 {
        return Err(malformed(&format!(
            "header has {} fields, expected \"channels height width\"",
            fields.len()
        )));
    }
    let mut dims = [0usize; 3];
    for (slot, field) in dims.iter_mut().zip(&fields) {
        *slot = field
            .parse()
            .map_err(|_| malformed(&format!("non-numeric header field {field:?}")))?;
    }
    let [c, h, w] = dims;
    if c == 0 || h == 0 || w == 0 {
        return Err(malformed(&format!("zero dimension in header {c} {h} {w}")));
    }

    let payload = &bytes[newline + 1..];
    let expected = c * h * w * 8;
    if payload.len() != expected {
        return Err(malformed(&format!(
            "payload is {} bytes, expected {expected} for {c}x{h}x{w}",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|chunk| f64::from_le_bytes(chunk.try_into().expect("chunk of 8")))
        .collect();
    LatentGrid::from_shape_vec(c, h, w, values)
}

/// 8-bit binary PGM (P5). Pixels are clamped to [0, 255] and rounded; the
/// input stays untouched so metric statistics never see quantization.
pub fn write_pgm(path: &Path, pixels: &Array2<f64>) -> Result<()> {
    let (h, w) = pixels.dim();
    if h == 0 || w == 0 {
        return Err(Error::InvalidShape("PGM image must be nonempty".into()));
    }
    let mut bytes = Vec::with_capacity(32 + h * w);
    bytes.extend_from_slice(format!("P5\n{w} {h}\n255\n").as_bytes());
    for &v in pixels {
        bytes.push(v.clamp(0.0, 255.0).round() as u8);
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads an 8-bit binary PGM (P5) into raw pixel values. The header is the
/// strict form this crate writes — magic, width, height, maxval <= 255
/// separated by single whitespace characters, no comments — followed by
/// exactly width*height payload bytes.
pub fn read_pgm(path: &Path) -> Result<Array2<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let malformed = |reason: &str| Error::Snapshot {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };

    let mut cursor = 0usize;
    let mut token = |what: &str| -> Result<String> {
        while cursor < bytes.len() && bytes[cursor].is_ascii_whitespace() {
            cursor += 1;
        }
        let start = cursor;
        while cursor < bytes.len() && !bytes[cursor].is_ascii_whitespace() {
            cursor += 1;
        }
        if start == cursor {
            return Err(malformed(&format!("missing {what} in header")));
        }
        std::str::from_utf8(&bytes[start..cursor])
            .map(str::to_owned)
            .map_err(|_| malformed(&format!("{what} is not ASCII")))
    };
    if token("magic")? != "P5" {
        return Err(malformed("not a binary PGM (magic is not P5)"));
    }
    let parse = |what: &str, text: String| -> Result<usize> {
        text.parse().map_err(|_| malformed(&format!("non-numeric {what} {text:?}")))
    };
    let w = parse("width", token("width")?)?;
    let h = parse("height", token("height")?)?;
    let maxval = parse("maxval", token("maxval")?)?;
    if w == 0 || h == 0 {
        return Err(malformed(&format!("zero dimension {w}x{h}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(malformed(&format!("maxval {maxval} outside 1..=255")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if cursor >= bytes.len() || !bytes[cursor].is_ascii_whitespace() {
        return Err(malformed("missing separator after maxval"));
    }
    let payload = &bytes[cursor + 1..];
    if payload.len() != w * h {
        return Err(malformed(&format!(
            "payload is {} bytes, expected {} for {w}x{h}",
            payload.len(),
            w * h
        )));
    }
    Ok(Array2::from_shape_vec((h, w), payload.to_vec()).expect("length checked above"))
}
