//! Parameter vector serialization.
//!
//! Binary: 16-byte header (`b"PINN"`, u32 version, u64 length, all
//! little-endian) followed by little-endian f64 values. Text: one value per
//! line in shortest round-trip form.

use super::MlpError;
use std::io::{Read, Write};

const MAGIC: &[u8; 4] = b"PINN";
const VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> MlpError {
    MlpError::Format(e.to_string())
}

pub fn write_params_binary<W: Write>(params: &[f64], mut w: W) -> Result<(), MlpError> {
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(params.len() as u64).to_le_bytes()).map_err(io_err)?;
    for p in params {
        w.write_all(&p.to_le_bytes()).map_err(io_err)?;
    }
    Ok(())
}

pub fn read_params_binary<R: Read>(mut r: R) -> Result<Vec<f64>, MlpError> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header).map_err(|_| MlpError::Format("truncated header".into()))?;
    if &header[..4] != MAGIC {
        return Err(MlpError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(MlpError::Format(format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes")) as usize;
    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(io_err)?;
    if body.len() != len * 8 {
        return Err(MlpError::Format(format!("expected {len} values, found {} bytes", body.len())));
    }
    Ok(body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

pub fn write_params_text<W: Write>(params: &[f64], mut w: W) -> Result<(), MlpError> {
    for p in params {
        writeln!(w, "{p:?}").map_err(io_err)?;
    }
    Ok(())
}

pub fn read_params_text(text: &str) -> Result<Vec<f64>, MlpError> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| l.parse::<f64>().map_err(|_| MlpError::Format(format!("line {}: `{l}`", i + 1))))
        .collect()
}
