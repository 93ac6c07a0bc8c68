//! The `QTNS` tensor file format.
//!
//! Layout: magic `QTNS`, version byte `1`, rank byte, `rank` dimensions as
//! little-endian `u32`, element width byte (`8` or `32`), then the raw
//! elements in row-major order (`i8`, or little-endian `i32`).

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::layer::{ConvOutput, QuantizedTensor};

const MAGIC: &[u8; 4] = b"QTNS";
const VERSION: u8 = 1;

fn io_err(e: std::io::Error) -> Error {
    Error::Format(e.to_string())
}

fn write_header(w: &mut impl Write, dims: &[usize; 4], bits: u8) -> Result<()> {
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&[VERSION, 4]).map_err(io_err)?;
    for &d in dims {
        let d =
            u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes()).map_err(io_err)?;
    }
    w.write_all(&[bits]).map_err(io_err)
}

fn read_header(r: &mut impl Read) -> Result<([usize; 4], u8)> {
    let mut head = [0u8; 6];
    r.read_exact(&mut head).map_err(io_err)?;
    if &head[..4] != MAGIC {
        return Err(Error::Format("missing QTNS magic".into()));
    }
    if head[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", head[4])));
    }
    let rank = head[5] as usize;
    if rank == 0 || rank > 4 {
        return Err(Error::Format(format!("unsupported rank {rank}")));
    }
    // lower ranks are padded with leading ones
    let mut dims = [1usize; 4];
    for slot in dims[4 - rank..].iter_mut() {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(io_err)?;
        *slot = u32::from_le_bytes(b) as usize;
    }
    let mut bits = [0u8; 1];
    r.read_exact(&mut bits).map_err(io_err)?;
    Ok((dims, bits[0]))
}

fn read_payload(r: &mut impl Read, len: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated payload: {e}")))?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(io_err)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    Ok(buf)
}

pub fn write_quantized(w: &mut impl Write, t: &QuantizedTensor) -> Result<()> {
    write_header(w, &t.dims(), 8)?;
    let bytes: Vec<u8> = t.as_slice().iter().map(|&v| v as u8).collect();
    w.write_all(&bytes).map_err(io_err)
}

pub fn read_quantized(r: &mut impl Read) -> Result<QuantizedTensor> {
    let (dims, bits) = read_header(r)?;
    if bits != 8 {
        return Err(Error::Format(format!(
            "expected 8-bit elements, found {bits}"
        )));
    }
    let data = read_payload(r, dims.iter().product())?;
    QuantizedTensor::new(dims, data.into_iter().map(|b| b as i8).collect())
}

pub fn write_output(w: &mut impl Write, t: &ConvOutput) -> Result<()> {
    write_header(w, &t.dims(), 32)?;
    let mut bytes = Vec::with_capacity(t.as_slice().len() * 4);
    for v in t.as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes).map_err(io_err)
}

pub fn read_output(r: &mut impl Read) -> Result<ConvOutput> {
    let (dims, bits) = read_header(r)?;
    if bits != 32 {
        return Err(Error::Format(format!(
            "expected 32-bit elements, found {bits}"
        )));
    }
    let n: usize = dims.iter().product();
    let data = read_payload(r, n * 4)?;
    let values = data
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    ConvOutput::new(dims, values)
}
