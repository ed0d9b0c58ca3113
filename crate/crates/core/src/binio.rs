//! Little-endian binary container primitives shared by the cache and model
//! file formats. Floats are stored via their bit patterns so round-trips are
//! bit-exact.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{CdeError, Result};

pub fn write_magic<W: Write>(w: &mut W, magic: &[u8; 8]) -> Result<()> {
    w.write_all(magic)?;
    Ok(())
}

pub fn check_magic<R: Read>(r: &mut R, magic: &[u8; 8]) -> Result<()> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    if &buf != magic {
        return Err(CdeError::Serialization(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&buf),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

pub fn write_u8<W: Write>(w: &mut W, v: u8) -> Result<()> {
    w.write_u8(v)?;
    Ok(())
}

pub fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    Ok(r.read_u8()?)
}

pub fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_u64::<LittleEndian>(v)?;
    Ok(())
}

pub fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(r.read_u64::<LittleEndian>()?)
}

pub fn write_usize<W: Write>(w: &mut W, v: usize) -> Result<()> {
    write_u64(w, v as u64)
}

pub fn read_usize<R: Read>(r: &mut R) -> Result<usize> {
    Ok(read_u64(r)? as usize)
}

pub fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_u64::<LittleEndian>(v.to_bits())?;
    Ok(())
}

pub fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(r.read_u64::<LittleEndian>()?))
}

pub fn write_f64_slice<W: Write>(w: &mut W, vs: &[f64]) -> Result<()> {
    write_usize(w, vs.len())?;
    for &v in vs {
        write_f64(w, v)?;
    }
    Ok(())
}

pub fn read_f64_vec<R: Read>(r: &mut R) -> Result<Vec<f64>> {
    let len = read_usize(r)?;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(read_f64(r)?);
    }
    Ok(out)
}

pub fn write_usize_slice<W: Write>(w: &mut W, vs: &[usize]) -> Result<()> {
    write_usize(w, vs.len())?;
    for &v in vs {
        write_usize(w, v)?;
    }
    Ok(())
}

pub fn read_usize_vec<R: Read>(r: &mut R) -> Result<Vec<usize>> {
    let len = read_usize(r)?;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(read_usize(r)?);
    }
    Ok(out)
}

pub fn expect_version<R: Read>(r: &mut R, supported: u8) -> Result<()> {
    let v = read_u8(r)?;
    if v != supported {
        return Err(CdeError::Serialization(format!(
            "unsupported container version {v}, expected {supported}"
        )));
    }
    Ok(())
}
