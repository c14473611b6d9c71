//! Shared layout for the binary dataset and checkpoint files:
//! 4-byte magic, u32 version, u32 header length, JSON header, then packed
//! little-endian f64 payload.

use std::io::{Read, Write};

use serde::{de::DeserializeOwned, Serialize};

use crate::error::{NqpError, Result};

pub fn write_header<W: Write, H: Serialize>(w: &mut W, magic: &[u8; 4], version: u32, header: &H) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    w.write_all(magic)?;
    w.write_all(&version.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    Ok(())
}

pub fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Parses the header and returns the remaining payload bytes.
pub fn read_file<'a, H: DeserializeOwned>(bytes: &'a [u8], magic: &[u8; 4], version: u32) -> Result<(H, &'a [u8])> {
    if bytes.len() < 12 {
        return Err(NqpError::Corrupt(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != magic {
        return Err(NqpError::Corrupt(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(magic)
        )));
    }
    let found = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if found != version {
        return Err(NqpError::Version { found, expected: version });
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let rest = &bytes[12..];
    if rest.len() < len {
        return Err(NqpError::Corrupt("truncated header".into()));
    }
    let header = serde_json::from_slice(&rest[..len])?;
    Ok((header, &rest[len..]))
}

pub fn read_f64s(payload: &[u8], expected: usize) -> Result<Vec<f64>> {
    if payload.len() != expected * 8 {
        return Err(NqpError::Corrupt(format!(
            "payload holds {} bytes, expected {} ({} values)",
            payload.len(),
            expected * 8,
            expected
        )));
    }
    Ok(payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn read_all(path: &std::path::Path) -> Result<Vec<u8>> {
    let mut f = std::fs::File::open(path)?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    Ok(bytes)
}
