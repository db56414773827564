//! Raw score-map files: magic `RXM1`, little-endian `u32` width and height,
//! then `width * height` little-endian `f64` scores in row-major order.

use std::fs;
use std::io;
use std::path::Path;

use crate::spectral::NoveltyMap;

pub const MAP_MAGIC: &[u8; 4] = b"RXM1";

/// Conventional file name for a sequence's map inside a maps directory.
pub fn map_file_name(sequence_id: &str) -> String {
    format!("{sequence_id}.rxm")
}

pub fn encode_map(map: &NoveltyMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + map.scores.len() * 8);
    out.extend_from_slice(MAP_MAGIC);
    out.extend_from_slice(&(map.width as u32).to_le_bytes());
    out.extend_from_slice(&(map.height as u32).to_le_bytes());
    for s in &map.scores {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

fn invalid(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

/// Decode map bytes. Identifiers are not stored in the file and come back empty.
pub fn decode_map(bytes: &[u8]) -> io::Result<NoveltyMap> {
    if bytes.len() < 12 || &bytes[..4] != MAP_MAGIC {
        return Err(invalid("not an RXM1 score map".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    let (width, height) = (word(4), word(8));
    let expected = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(8))
        .and_then(|b| b.checked_add(12))
        .ok_or_else(|| invalid("map dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(invalid(format!(
            "map {width}×{height} needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let scores = bytes[12..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(NoveltyMap {
        sequence_id: String::new(),
        model_fingerprint: String::new(),
        width,
        height,
        scores,
    })
}

pub fn write_map(path: &Path, map: &NoveltyMap) -> io::Result<()> {
    crate::io_util::write_atomic(path, &encode_map(map))
}

pub fn read_map(path: &Path) -> io::Result<NoveltyMap> {
    decode_map(&fs::read(path)?)
}
