//! Binary file formats (all little-endian).
//!
//! | magic  | contents                                                          |
//! |--------|-------------------------------------------------------------------|
//! | `HSC1` | `u32` H, `u32` W, `u32` N, `u8` dtype, band-major planar values  |
//! | `MSK1` | `u32` H, `u32` W, `f32` values row-major                          |
//! | `MEA1` | `u32` H, `u32` W*, `f32` values row-major                         |
//!
//! Readers report the byte offset of the first field they could not decode.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};

use crate::cassi::{HsiCube, Mask, Measurement, NoiseModel};
use crate::error::{Error, Result};
use crate::scalar::DType;

pub const CUBE_MAGIC: &[u8; 4] = b"HSC1";
pub const MASK_MAGIC: &[u8; 4] = b"MSK1";
pub const MEASUREMENT_MAGIC: &[u8; 4] = b"MEA1";

/// Reader that tracks its position so decode errors can name a byte offset.
pub(crate) struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    pub(crate) fn new(inner: R) -> Self {
        CountingReader { inner, offset: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.offset
    }

    pub(crate) fn error_at(&self, offset: u64, msg: String) -> Error {
        Error::Format { offset, msg }
    }

    pub(crate) fn read_exact_at(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|e| self.error_at(at, format!("reading {what}: {e}")))?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn fixed<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.read_exact_at(&mut b, what)?;
        Ok(b)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.fixed::<1>(what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.fixed(what)?))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.fixed(what)?))
    }

    pub(crate) fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.fixed(what)?))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.fixed(what)?))
    }

    pub(crate) fn string(&mut self, len: usize, what: &str) -> Result<String> {
        let at = self.offset;
        let mut b = vec![0u8; len];
        self.read_exact_at(&mut b, what)?;
        String::from_utf8(b).map_err(|_| self.error_at(at, format!("{what} is not UTF-8")))
    }

    fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let got: [u8; 4] = self.fixed("magic")?;
        if &got != want {
            return Err(self.error_at(
                0,
                format!("bad magic {:?}, expected {}", String::from_utf8_lossy(&got), String::from_utf8_lossy(want)),
            ));
        }
        Ok(())
    }

    fn extent(&mut self, what: &str) -> Result<usize> {
        let at = self.offset;
        match self.u32(what)? {
            0 => Err(self.error_at(at, format!("{what} is zero"))),
            v => Ok(v as usize),
        }
    }

    /// Errors unless the stream is exhausted.
    fn finish(&mut self) -> Result<()> {
        let at = self.offset;
        let mut b = [0u8; 1];
        match self.inner.read(&mut b) {
            Ok(0) => Ok(()),
            Ok(_) => Err(self.error_at(at, "trailing bytes after payload".to_owned())),
            Err(e) => Err(self.error_at(at, e.to_string())),
        }
    }
}

pub fn write_cube<W: Write>(mut w: W, cube: &HsiCube, dtype: DType) -> Result<()> {
    w.write_all(CUBE_MAGIC)?;
    w.write_u32::<LittleEndian>(cube.height as u32)?;
    w.write_u32::<LittleEndian>(cube.width as u32)?;
    w.write_u32::<LittleEndian>(cube.bands as u32)?;
    w.write_u8(dtype.code())?;
    for b in 0..cube.bands {
        for &v in cube.values.iter().skip(b).step_by(cube.bands) {
            match dtype {
                DType::F32 => w.write_f32::<LittleEndian>(v as f32)?,
                DType::F64 => w.write_f64::<LittleEndian>(v)?,
            }
        }
    }
    Ok(())
}

pub fn read_cube<R: Read>(r: R) -> Result<HsiCube> {
    let mut r = CountingReader::new(r);
    r.magic(CUBE_MAGIC)?;
    let h = r.extent("height")?;
    let w = r.extent("width")?;
    let n = r.extent("bands")?;
    let at = r.offset();
    let dtype = DType::from_code(r.u8("dtype")?).ok_or_else(|| r.error_at(at, "unknown dtype code".to_owned()))?;
    let mut values = vec![0.0; h * w * n];
    for b in 0..n {
        for p in 0..h * w {
            let at = r.offset();
            let v = match dtype {
                DType::F32 => r.f32("value")? as f64,
                DType::F64 => r.f64("value")?,
            };
            if !v.is_finite() {
                return Err(r.error_at(at, "non-finite value".to_owned()));
            }
            values[p * n + b] = v;
        }
    }
    r.finish()?;
    Ok(HsiCube { height: h, width: w, bands: n, values })
}

pub fn write_mask<W: Write>(mut w: W, mask: &Mask) -> Result<()> {
    w.write_all(MASK_MAGIC)?;
    w.write_u32::<LittleEndian>(mask.height as u32)?;
    w.write_u32::<LittleEndian>(mask.width as u32)?;
    for &v in &mask.values {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    Ok(())
}

pub fn read_mask<R: Read>(r: R) -> Result<Mask> {
    let mut r = CountingReader::new(r);
    r.magic(MASK_MAGIC)?;
    let h = r.extent("height")?;
    let w = r.extent("width")?;
    let mut values = Vec::with_capacity(h * w);
    for _ in 0..h * w {
        let at = r.offset();
        let v = r.f32("value")? as f64;
        if !(0.0..=1.0).contains(&v) {
            return Err(r.error_at(at, format!("mask value {v} outside [0, 1]")));
        }
        values.push(v);
    }
    r.finish()?;
    Mask::new(h, w, values)
}

pub fn write_measurement<W: Write>(mut w: W, y: &Measurement) -> Result<()> {
    w.write_all(MEASUREMENT_MAGIC)?;
    w.write_u32::<LittleEndian>(y.height as u32)?;
    w.write_u32::<LittleEndian>(y.width as u32)?;
    for &v in &y.values {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    Ok(())
}

pub fn read_measurement<R: Read>(r: R) -> Result<Measurement> {
    let mut r = CountingReader::new(r);
    r.magic(MEASUREMENT_MAGIC)?;
    let h = r.extent("height")?;
    let w = r.extent("width")?;
    let mut values = Vec::with_capacity(h * w);
    for _ in 0..h * w {
        let at = r.offset();
        let v = r.f32("value")? as f64;
        if !v.is_finite() {
            return Err(r.error_at(at, "non-finite value".to_owned()));
        }
        values.push(v);
    }
    r.finish()?;
    Ok(Measurement { height: h, width: w, values, noise: NoiseModel::None })
}

pub fn save_cube(path: impl AsRef<Path>, cube: &HsiCube, dtype: DType) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_cube(&mut w, cube, dtype)?;
    w.flush()?;
    Ok(())
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    read_cube(BufReader::new(File::open(path)?))
}

pub fn save_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_mask(&mut w, mask)?;
    w.flush()?;
    Ok(())
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    read_mask(BufReader::new(File::open(path)?))
}

pub fn save_measurement(path: impl AsRef<Path>, y: &Measurement) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_measurement(&mut w, y)?;
    w.flush()?;
    Ok(())
}

pub fn load_measurement(path: impl AsRef<Path>) -> Result<Measurement> {
    read_measurement(BufReader::new(File::open(path)?))
}
