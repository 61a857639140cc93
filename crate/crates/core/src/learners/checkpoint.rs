//! `.lswt` weight files: `"LSWT"`, version byte, u32 LE tensor count, then per
//! tensor a u16 LE name length, UTF-8 name, u8 rank, rank × u32 LE dims and
//! the f32 LE values; a trailing u32 LE CRC-32 covers every preceding byte.

use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::raster::io::write_atomic;
use crate::scalar::Real;

use super::autodiff::ParamSet;
use super::tensor::Tensor;

pub const LSWT_MAGIC: [u8; 4] = *b"LSWT";
pub const LSWT_VERSION: u8 = 1;

pub fn encode_weights<T: Real>(params: &ParamSet<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&LSWT_MAGIC);
    out.push(LSWT_VERSION);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        let name_len = u16::try_from(name.len())
            .map_err(|_| FormatError::Malformed(format!("tensor name of {} bytes", name.len())))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.shape().len()).map_err(|_| FormatError::Malformed("rank above 255".into()))?;
        out.push(rank);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            let v = v.as_f64() as f32;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "checkpoint tensor",
                    index: 0,
                });
            }
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(FormatError::Truncated {
                needed: end,
                found: self.bytes.len(),
            }
            .into());
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
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
}

/// Decodes named tensors in file order.
pub fn decode_weights<T: Real>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    if bytes.len() < 4 || bytes[..4] != LSWT_MAGIC {
        return Err(FormatError::BadMagic {
            expected: LSWT_MAGIC,
            found: bytes[..bytes.len().min(4)].to_vec(),
        }
        .into());
    }
    if bytes.len() < 13 {
        return Err(FormatError::Truncated {
            needed: 13,
            found: bytes.len(),
        }
        .into());
    }
    if bytes[4] != LSWT_VERSION {
        return Err(FormatError::Version(bytes[4]).into());
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed }.into());
    }
    let mut cur = Cursor { bytes: body, pos: 5 };
    let count = cur.u32()? as usize;
    let mut out = Vec::new();
    let mut value_index = 0;
    for _ in 0..count {
        let len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|e| FormatError::Malformed(format!("tensor name: {e}")))?
            .to_string();
        let rank = cur.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| FormatError::Malformed(format!("dims {shape:?} overflow")))?;
        let raw = cur.take(n.checked_mul(4).ok_or_else(|| FormatError::Malformed("size overflow".into()))?)?;
        let mut data = Vec::with_capacity(n);
        for chunk in raw.chunks_exact(4) {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(FormatError::NonFinite(value_index).into());
            }
            value_index += 1;
            data.push(T::of(v as f64));
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    if cur.pos != body.len() {
        return Err(FormatError::Malformed(format!("{} trailing bytes", body.len() - cur.pos)).into());
    }
    Ok(out)
}

pub fn save_weights<T: Real>(params: &ParamSet<T>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_weights(params)?)
}

/// Loads a checkpoint into `params`, which fixes the expected names and shapes.
pub fn load_weights<T: Real>(params: &mut ParamSet<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Missing(path.to_path_buf()),
        _ => e.into(),
    })?;
    params.load(decode_weights(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> ParamSet<f32> {
        let mut ps = ParamSet::new();
        ps.push("down0.a.w", Tensor::new(vec![2, 1, 3, 3], (0..18).map(|i| i as f32 * 0.25 - 1.0).collect()).unwrap());
        ps.push("down0.a.b", Tensor::new(vec![2], vec![0.5, -0.5]).unwrap());
        ps
    }

    #[test]
    fn layout_is_bit_exact() {
        let bytes = encode_weights(&sample()).unwrap();
        assert_eq!(&bytes[..4], b"LSWT");
        assert_eq!(bytes[4], 1);
        assert_eq!(u32::from_le_bytes(bytes[5..9].try_into().unwrap()), 2);
        assert_eq!(u16::from_le_bytes(bytes[9..11].try_into().unwrap()), 9);
        assert_eq!(&bytes[11..20], b"down0.a.w");
        assert_eq!(bytes[20], 4);
        let expected_len = 9 + (2 + 9 + 1 + 16 + 72) + (2 + 9 + 1 + 4 + 8) + 4;
        assert_eq!(bytes.len(), expected_len);
        let crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        assert_eq!(crc, crc32fast::hash(&bytes[..bytes.len() - 4]));
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode_weights(&sample()).unwrap();
        let mut flipped = bytes.clone();
        flipped[30] ^= 0x01;
        assert!(matches!(
            decode_weights::<f32>(&flipped),
            Err(Error::Format(FormatError::Checksum { .. }))
        ));
        assert!(matches!(
            decode_weights::<f32>(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(
            decode_weights::<f32>(&magic),
            Err(Error::Format(FormatError::BadMagic { .. }))
        ));
        let mut version = bytes;
        version[4] = 2;
        assert!(matches!(
            decode_weights::<f32>(&version),
            Err(Error::Format(FormatError::Version(2)))
        ));
    }

    #[test]
    fn load_checks_names_and_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.lswt");
        save_weights(&sample(), &path).unwrap();
        let mut zeros = ParamSet::new();
        zeros.push("down0.a.w", Tensor::zeros(&[2, 1, 3, 3]));
        zeros.push("down0.a.b", Tensor::zeros(&[2]));
        load_weights(&mut zeros, &path).unwrap();
        assert_eq!(zeros, sample());

        let mut wrong = ParamSet::<f32>::new();
        wrong.push("down0.a.w", Tensor::zeros(&[2, 1, 1, 1]));
        wrong.push("down0.a.b", Tensor::zeros(&[2]));
        assert!(load_weights(&mut wrong, &path).is_err());
        assert!(matches!(
            load_weights(&mut wrong, dir.path().join("absent.lswt")),
            Err(Error::Missing(_))
        ));
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(vals in prop::collection::vec(-1e6f32..1e6, 1..40), rows in 1usize..4) {
            let mut ps = ParamSet::new();
            let n = vals.len();
            ps.push("a", Tensor::new(vec![n], vals.clone()).unwrap());
            ps.push("b", Tensor::new(vec![rows, n], vals.repeat(rows)).unwrap());
            let back = decode_weights::<f32>(&encode_weights(&ps).unwrap()).unwrap();
            for ((name, t), (n0, t0)) in back.iter().zip(ps.iter()) {
                prop_assert_eq!(name.as_str(), n0);
                prop_assert_eq!(t.shape(), t0.shape());
                for (x, y) in t.data().iter().zip(t0.data()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }
}
