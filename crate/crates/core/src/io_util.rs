use std::io::Read;

use crate::error::{Error, Result};

pub(crate) fn read_array<const N: usize, R: Read>(input: &mut R, format: &'static str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf).map_err(|e| Error::Malformed {
        format,
        reason: format!("truncated payload ({e})"),
    })?;
    Ok(buf)
}

pub(crate) fn read_u16<R: Read>(input: &mut R, format: &'static str) -> Result<u16> {
    read_array(input, format).map(u16::from_le_bytes)
}

pub(crate) fn read_u32<R: Read>(input: &mut R, format: &'static str) -> Result<u32> {
    read_array(input, format).map(u32::from_le_bytes)
}

pub(crate) fn read_f64<R: Read>(input: &mut R, format: &'static str) -> Result<f64> {
    read_array(input, format).map(f64::from_le_bytes)
}
