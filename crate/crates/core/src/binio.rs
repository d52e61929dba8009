//! Little-endian primitive readers and writers shared by the binary file formats.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Format("unexpected end of file".into()),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

pub(crate) fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    Ok(read_array::<1, _>(r)?[0])
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    read_array(r).map(u32::from_le_bytes)
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    read_array(r).map(u64::from_le_bytes)
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    read_array(r).map(f64::from_le_bytes)
}

pub(crate) fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}
