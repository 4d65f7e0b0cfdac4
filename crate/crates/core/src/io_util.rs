//! Little-endian float32 payload files: the on-disk number format shared by
//! masks, dataset samples, and checkpoints.

use crate::error::{CsError, Result};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

pub fn write_f32_payload(path: &Path, values: impl Iterator<Item = f64>) -> Result<()> {
    let mut buf = Vec::new();
    for v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_f32_payload(path: &Path) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() % 4 != 0 {
        return Err(CsError::Schema(format!(
            "{}: payload length {} is not a multiple of 4",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub fn expect_len(path: &Path, values: &[f64], expected: usize) -> Result<()> {
    if values.len() != expected {
        return Err(CsError::Schema(format!(
            "{}: expected {} values, found {}",
            path.display(),
            expected,
            values.len()
        )));
    }
    Ok(())
}
