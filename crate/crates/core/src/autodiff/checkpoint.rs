//! `DHMW` weight files.
//!
//! Layout (little-endian): magic `DHMW`, `u16` version, `u32` header length
//! followed by that many bytes of UTF-8 `key=value` lines, `u32` record
//! count, then per record: `u16` name length, name bytes, `u8` rank, one
//! `u32` per extent, `u8` dtype (0 = f32, 1 = f64) and the raw values.

use std::io::{Read, Write};

use byteorder::{LittleEndian, WriteBytesExt};

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::io::CountingReader;
use crate::scalar::{DType, Scalar};

pub const MAGIC: &[u8; 4] = b"DHMW";
pub const VERSION: u16 = 1;

/// One stored array, values widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub header: String,
    pub records: Vec<Record>,
}

impl Checkpoint {
    pub fn from_params<S: Scalar>(header: impl Into<String>, params: &[Tensor<S>]) -> Self {
        let records = params
            .iter()
            .map(|p| Record {
                name: p.name().unwrap_or_default().to_owned(),
                shape: p.shape().to_vec(),
                dtype: S::DTYPE,
                values: p.data().iter().map(|v| v.as_f64()).collect(),
            })
            .collect();
        Checkpoint { header: header.into(), records }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u16::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(self.header.len() as u32)?;
        w.write_all(self.header.as_bytes())?;
        w.write_u32::<LittleEndian>(self.records.len() as u32)?;
        for r in &self.records {
            w.write_u16::<LittleEndian>(r.name.len() as u16)?;
            w.write_all(r.name.as_bytes())?;
            w.write_u8(r.shape.len() as u8)?;
            for &e in &r.shape {
                w.write_u32::<LittleEndian>(e as u32)?;
            }
            w.write_u8(r.dtype.code())?;
            for &v in &r.values {
                match r.dtype {
                    DType::F32 => w.write_f32::<LittleEndian>(v as f32)?,
                    DType::F64 => w.write_f64::<LittleEndian>(v)?,
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = CountingReader::new(r);
        let mut magic = [0u8; 4];
        r.read_exact_at(&mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(r.error_at(0, format!("bad magic {magic:?}, expected DHMW")));
        }
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(r.error_at(4, format!("unsupported version {version}")));
        }
        let hlen = r.u32("header length")? as usize;
        let header = r.string(hlen, "header")?;
        let count = r.u32("record count")?;
        let mut records = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let nlen = r.u16("name length")? as usize;
            let name = r.string(nlen, "name")?;
            let rank = r.u8("rank")? as usize;
            let shape = (0..rank).map(|_| r.u32("extent").map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
            let at = r.offset();
            let dtype =
                DType::from_code(r.u8("dtype")?).ok_or_else(|| r.error_at(at, "unknown dtype code".to_owned()))?;
            let n: usize = shape.iter().product();
            let values = (0..n)
                .map(|_| match dtype {
                    DType::F32 => r.f32("value").map(f64::from),
                    DType::F64 => r.f64("value"),
                })
                .collect::<Result<Vec<_>>>()?;
            records.push(Record { name, shape, dtype, values });
        }
        Ok(Checkpoint { header, records })
    }

    /// Copies stored values into parameters with matching names and shapes.
    /// Every parameter must be present in the checkpoint.
    pub fn assign<S: Scalar>(&self, params: &[Tensor<S>]) -> Result<()> {
        for p in params {
            let name = p.name().unwrap_or_default();
            let rec = self
                .records
                .iter()
                .find(|r| r.name == name)
                .ok_or_else(|| Error::Config(format!("checkpoint has no parameter `{name}`")))?;
            if rec.shape != p.shape() {
                return Err(Error::shape("checkpoint assign", &rec.shape, p.shape()));
            }
            let mut d = p.data_mut();
            for (dst, &v) in d.iter_mut().zip(&rec.values) {
                *dst = S::from_f64(v);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let p = Tensor::<f32>::parameter(vec![1.5, -2.0], &[2, 1], "w").unwrap();
        let ck = Checkpoint::from_params("a=1\n", &[p]);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let mut expect = b"DHMW".to_vec();
        expect.extend_from_slice(&1u16.to_le_bytes());
        expect.extend_from_slice(&4u32.to_le_bytes());
        expect.extend_from_slice(b"a=1\n");
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1u16.to_le_bytes());
        expect.push(b'w');
        expect.push(2);
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.push(0);
        expect.extend_from_slice(&1.5f32.to_le_bytes());
        expect.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(buf, expect);
        assert_eq!(Checkpoint::read_from(&buf[..]).unwrap(), ck);
    }

    #[test]
    fn truncated_file_reports_offset() {
        let p = Tensor::<f64>::parameter(vec![1.0; 4], &[4], "w").unwrap();
        let mut buf = Vec::new();
        Checkpoint::from_params("", &[p]).write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        match Checkpoint::read_from(&buf[..]).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset as usize, buf.len() - 5),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn assign_checks_names_and_shapes() {
        let p = Tensor::<f64>::parameter(vec![0.0; 2], &[2], "w").unwrap();
        let q = Tensor::<f64>::parameter(vec![3.0, 4.0], &[2], "w").unwrap();
        Checkpoint::from_params("", &[q]).assign(std::slice::from_ref(&p)).unwrap();
        assert_eq!(p.to_vec(), vec![3.0, 4.0]);
        let r = Tensor::<f64>::parameter(vec![0.0; 3], &[3], "w").unwrap();
        assert!(Checkpoint::from_params("", &[p]).assign(&[r]).is_err());
    }
}
