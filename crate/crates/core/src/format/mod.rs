//! On-disk formats.
//!
//! Both containers share one framing: a 4-byte magic, a little-endian `u64`
//! header length, a UTF-8 JSON header with sorted keys and no whitespace,
//! then a binary payload addressed by offsets relative to its start.
//! Decoders accept only the canonical encoding, so decoding and re-encoding
//! any accepted file reproduces it byte for byte.

pub mod ddq;
pub mod dtc;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

const LEN_BYTES: usize = 8;

/// Serializes through `serde_json::Value`, whose maps are key-sorted.
fn header_bytes(header: &impl Serialize) -> Result<Vec<u8>> {
    let value = serde_json::to_value(header)?;
    Ok(serde_json::to_vec(&value)?)
}

fn frame(magic: &[u8; 4], header: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + LEN_BYTES + header.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header);
    out
}

/// Splits a file into its parsed header and the bytes after the header.
fn unframe<'a, H: DeserializeOwned>(magic: &[u8; 4], bytes: &'a [u8]) -> Result<(H, &'a [u8])> {
    if bytes.len() < 4 + LEN_BYTES || &bytes[..4] != magic {
        return Err(Error::Corrupt(format!(
            "missing `{}` magic",
            String::from_utf8_lossy(magic)
        )));
    }
    let len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes"));
    let end = usize::try_from(len)
        .ok()
        .and_then(|l| l.checked_add(12))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Corrupt(format!("header length {len} exceeds file size")))?;
    let header = serde_json::from_slice(&bytes[12..end])
        .map_err(|e| Error::Corrupt(format!("header: {e}")))?;
    Ok((header, &bytes[end..]))
}

fn section<'a>(payload: &'a [u8], offset: u64, len: usize, what: &str) -> Result<&'a [u8]> {
    usize::try_from(offset)
        .ok()
        .and_then(|o| Some((o, o.checked_add(len)?)))
        .filter(|&(_, end)| end <= payload.len())
        .map(|(o, end)| &payload[o..end])
        .ok_or_else(|| Error::Corrupt(format!("{what}: bytes {offset}+{len} out of bounds")))
}

fn put_u32s(out: &mut Vec<u8>, values: &[usize]) -> Result<()> {
    for &v in values {
        let v = u32::try_from(v)
            .map_err(|_| Error::Parameter(format!("index {v} does not fit in 32 bits")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

fn get_u32s(bytes: &[u8]) -> Vec<usize> {
    bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect()
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn get_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect()
}

fn ensure_canonical(bytes: &[u8], reencoded: &[u8]) -> Result<()> {
    if bytes != reencoded {
        return Err(Error::Corrupt("file is not in canonical layout".into()));
    }
    Ok(())
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Parameter(format!("`{}` is not a file path", path.display())))?;
    let tmp = dir.unwrap_or(Path::new(".")).join(format!(
        ".{}.tmp{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path)?;
    Ok(())
}
