//! Little-endian primitives for the binary file formats.

use std::io::{Read, Write};

use crate::error::{Error, Result};

fn eof_as_truncation(e: std::io::Error, what: &str) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Truncated(what.to_string())
    } else {
        Error::Io(e)
    }
}

pub(crate) fn write_u8<W: Write>(w: &mut W, v: u8) -> Result<()> {
    w.write_all(&[v])?;
    Ok(())
}

pub(crate) fn write_u16<W: Write>(w: &mut W, v: u16) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, vals: &[f32]) -> Result<()> {
    let mut buf = [0u8; 4096];
    for chunk in vals.chunks(1024) {
        for (i, &v) in chunk.iter().enumerate() {
            buf[i * 4..(i + 1) * 4].copy_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf[..chunk.len() * 4])?;
    }
    Ok(())
}

pub(crate) fn read_u8<R: Read>(r: &mut R, what: &str) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b).map_err(|e| eof_as_truncation(e, what))?;
    Ok(b[0])
}

pub(crate) fn read_u16<R: Read>(r: &mut R, what: &str) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b).map_err(|e| eof_as_truncation(e, what))?;
    Ok(u16::from_le_bytes(b))
}

pub(crate) fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| eof_as_truncation(e, what))?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_magic<R: Read>(r: &mut R, expected: [u8; 4], what: &str) -> Result<()> {
    let mut found = [0u8; 4];
    r.read_exact(&mut found)
        .map_err(|e| eof_as_truncation(e, what))?;
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

pub(crate) fn read_f32s<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)
        .map_err(|e| eof_as_truncation(e, what))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub(crate) fn read_bytes<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut bytes = vec![0u8; n];
    r.read_exact(&mut bytes)
        .map_err(|e| eof_as_truncation(e, what))?;
    Ok(bytes)
}

/// Reject content after the logical end of a file.
pub(crate) fn expect_eof<R: Read>(r: &mut R, what: &str) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => Ok(()),
        Ok(_) => Err(Error::Format(format!("{}: trailing bytes", what))),
        Err(e) => Err(Error::Io(e)),
    }
}
