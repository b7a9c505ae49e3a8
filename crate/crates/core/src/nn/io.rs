//! Binary weight file.
//!
//! ```text
//! "BTRK"  u32 version=1  u32 record count
//! per record: u16 name length, UTF-8 name, u8 dtype (0 = f32), u8 rank,
//!             u32 dims[rank], row-major f32 payload
//! ```
//!
//! All integers and floats are little-endian. The first record is always
//! `input_spec` with dims `[3]` holding `(h, w, c)`; the remaining records
//! are the model parameters in [`Regressor::params`] order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::model::{Architecture, Regressor};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"BTRK";
const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;
const INPUT_SPEC: &str = "input_spec";

struct Record {
    name: String,
    dims: Vec<usize>,
    data: Vec<f32>,
}

fn write_record(out: &mut Vec<u8>, name: &str, dims: &[usize], data: &[f32]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(DTYPE_F32);
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_weights(model: &Regressor<f32>) -> Vec<u8> {
    let arch = model.architecture();
    let params = model.params();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&((params.len() + 1) as u32).to_le_bytes());
    let spec = [arch.input_h as f32, arch.input_w as f32, arch.input_c as f32];
    write_record(&mut out, INPUT_SPEC, &[3], &spec);
    for (name, t) in params {
        write_record(&mut out, &name, t.shape(), t.data());
    }
    out
}

pub fn save_weights(model: &Regressor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_weights(model)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Regressor<f32>> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    decode_weights(&buf)
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::UnexpectedEof);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn record(&mut self) -> Result<Record> {
        let len = self.u16()? as usize;
        let name = String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::WeightFormat("record name is not UTF-8".into()))?;
        let dtype = self.u8()?;
        if dtype != DTYPE_F32 {
            return Err(Error::WeightFormat(format!("{name}: unsupported dtype {dtype}")));
        }
        let rank = self.u8()? as usize;
        let dims = (0..rank)
            .map(|_| self.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::WeightFormat(format!("{name}: dims overflow")))?;
        let bytes = self.take(count.checked_mul(4).ok_or(Error::UnexpectedEof)?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Record { name, dims, data })
    }
}

fn shape_error(name: &str, expected: &[usize], found: &[usize]) -> Error {
    Error::WeightFormat(format!(
        "{name}: shape {found:?} does not match declared architecture {expected:?}"
    ))
}

pub fn decode_weights(buf: &[u8]) -> Result<Regressor<f32>> {
    let mut r = Reader { buf };
    if r.take(4)? != MAGIC {
        return Err(Error::WeightFormat("bad magic, not a BTRK weight file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::WeightFormat(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let records = (0..count).map(|_| r.record()).collect::<Result<Vec<_>>>()?;
    if !r.buf.is_empty() {
        return Err(Error::WeightFormat(format!("{} trailing bytes", r.buf.len())));
    }

    let (spec, params) = records
        .split_first()
        .ok_or_else(|| Error::WeightFormat("no records".into()))?;
    if spec.name != INPUT_SPEC || spec.dims != [3] {
        return Err(Error::WeightFormat(format!("first record must be `{INPUT_SPEC}` [3]")));
    }
    let dim = |v: f32| -> Result<usize> {
        if v >= 1.0 && v.fract() == 0.0 && v < 1e6 {
            Ok(v as usize)
        } else {
            Err(Error::WeightFormat(format!("bad input dimension {v}")))
        }
    };
    // conv layers come in weight/bias pairs, then two dense pairs
    if params.len() < 4 || params.len() % 2 != 0 {
        return Err(Error::WeightFormat(format!("unexpected parameter count {}", params.len())));
    }
    let n_conv = (params.len() - 4) / 2;
    let conv_channels = params[..2 * n_conv]
        .chunks(2)
        .map(|p| p[0].dims.last().copied().unwrap_or(0))
        .collect();
    let hidden = params[2 * n_conv].dims.first().copied().unwrap_or(0);
    let outputs = params[2 * n_conv + 2].dims.first().copied().unwrap_or(0);
    let arch = Architecture {
        input_h: dim(spec.data[0])?,
        input_w: dim(spec.data[1])?,
        input_c: dim(spec.data[2])?,
        conv_channels,
        hidden,
        outputs,
    };
    let mut model = Regressor::<f32>::zeroed(arch)?;
    let expected: Vec<(String, Vec<usize>)> = model
        .params()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    for ((name, shape), (rec, dst)) in expected.iter().zip(params.iter().zip(model.params_mut())) {
        if &rec.name != name {
            return Err(Error::WeightFormat(format!("expected record `{name}`, found `{}`", rec.name)));
        }
        if &rec.dims != shape {
            return Err(shape_error(name, shape, &rec.dims));
        }
        *dst = Tensor::new(rec.dims.clone(), rec.data.clone())?;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Regressor<f32> {
        Regressor::init(Architecture::standard(16, 12), 21).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let bytes = encode_weights(&m);
        let back = decode_weights(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_weights(&back), bytes);
        let x = Tensor::new(vec![1, 16, 12, 3], (0..576).map(|i| (i % 7) as f32 / 7.0).collect()).unwrap();
        let (a, b) = (m.forward(&x).unwrap(), back.forward(&x).unwrap());
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.btrk");
        let m = model();
        save_weights(&m, &p).unwrap();
        assert_eq!(load_weights(&p).unwrap(), m);
    }

    #[test]
    fn header_layout() {
        let bytes = encode_weights(&model());
        assert_eq!(&bytes[..4], b"BTRK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 11);
        assert_eq!(u16::from_le_bytes(bytes[12..14].try_into().unwrap()), 10);
        assert_eq!(&bytes[14..24], b"input_spec");
    }

    #[test]
    fn truncated_file() {
        let bytes = encode_weights(&model());
        for cut in [0, 3, 10, 40, bytes.len() - 1] {
            let err = decode_weights(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::UnexpectedEof), "cut {cut}: {err}");
        }
        assert_eq!(Error::UnexpectedEof.to_string(), "unexpected end of file");
    }

    #[test]
    fn wrong_magic_and_version() {
        let mut bytes = encode_weights(&model());
        bytes[0] = b'X';
        assert!(matches!(decode_weights(&bytes), Err(Error::WeightFormat(_))));
        let mut bytes = encode_weights(&model());
        bytes[4] = 2;
        let err = decode_weights(&bytes).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn shape_mismatch_against_architecture() {
        // hand-build a file whose dense1 input does not match the conv stack
        let m = model();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let params = m.params();
        out.extend_from_slice(&((params.len() + 1) as u32).to_le_bytes());
        write_record(&mut out, INPUT_SPEC, &[3], &[32.0, 12.0, 3.0]);
        for (name, t) in params {
            write_record(&mut out, &name, t.shape(), t.data());
        }
        let err = decode_weights(&out).unwrap_err();
        assert!(err.to_string().contains("declared architecture"), "{err}");
    }
}
