//! The LRDC checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "LRDC" | version: u32 = 1 | count: u32
//! count × { name_len: u16 | name: UTF-8 | dtype: u8 (0 = f32) | ndim: u8 | dims: ndim × u64 | data: f32 × numel }
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{bail, Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"LRDC";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
pub const HEADER_LEN: usize = 12;

/// Named tensors in file order.
pub type TensorMap = IndexMap<String, Tensor>;

/// Serializes `tensors` to the LRDC byte layout, narrowing values to f32
/// (round to nearest, ties to even).
pub fn encode(tensors: &TensorMap) -> Result<Vec<u8>> {
    let count = u32::try_from(tensors.len())
        .map_err(|_| Error::Argument(format!("too many tensors: {}", tensors.len())))?;
    let payload: usize = tensors
        .iter()
        .map(|(n, t)| 2 + n.len() + 2 + 8 * t.ndim() + 4 * t.len())
        .sum();
    let mut out = Vec::with_capacity(HEADER_LEN + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in tensors {
        if name.is_empty() {
            bail!(Argument, "tensor names must be non-empty");
        }
        let name_len = u16::try_from(name.len()).map_err(|_| {
            Error::Argument(format!("tensor name is {} bytes, limit is 65535", name.len()))
        })?;
        let ndim = u8::try_from(t.ndim())
            .map_err(|_| Error::Argument(format!("tensor {name:?} has too many dimensions")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.push(ndim);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            let f = v as f32;
            if !f.is_finite() {
                bail!(Data, "tensor {name:?} has a value ({v}) not representable as finite f32");
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let avail = self.buf.len() - self.pos;
        if n > avail {
            bail!(
                Data,
                "truncated file: needed {n} bytes for {what} at byte offset {}, {avail} left",
                self.pos
            );
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

/// Parses an LRDC byte buffer. Every size is checked against the bytes
/// actually present before anything is allocated.
pub fn decode(buf: &[u8]) -> Result<TensorMap> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic").ok() != Some(MAGIC.as_slice()) {
        bail!(Data, "bad magic: not an LRDC checkpoint");
    }
    let version = r.u32("version")?;
    if version != VERSION {
        bail!(Data, "unsupported LRDC version {version}");
    }
    let count = r.u32("tensor count")?;
    let mut out = TensorMap::new();
    let mut seen = HashSet::new();
    for i in 0..count {
        let start = r.pos;
        let name_len = r.u16("name length")? as usize;
        if name_len == 0 {
            bail!(Data, "tensor #{i} at byte offset {start} has an empty name");
        }
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::Data(format!("tensor #{i} at byte offset {start}: name is not UTF-8")))?
            .to_string();
        if !seen.insert(name.clone()) {
            bail!(Data, "duplicate tensor name {name:?}");
        }
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F32 {
            bail!(Data, "tensor {name:?}: unsupported dtype {dtype}");
        }
        let ndim = r.u8("ndim")? as usize;
        if ndim == 0 {
            bail!(Data, "tensor {name:?}: zero-dimensional tensors are not allowed");
        }
        let mut shape = Vec::with_capacity(ndim);
        let mut numel: usize = 1;
        for _ in 0..ndim {
            let d = r.u64("dimension")?;
            if d == 0 {
                bail!(Data, "tensor {name:?}: zero-sized dimension");
            }
            let d = usize::try_from(d)
                .map_err(|_| Error::Data(format!("tensor {name:?}: dimension {d} too large")))?;
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| Error::Data(format!("tensor {name:?}: shape overflows")))?;
            shape.push(d);
        }
        let bytes = numel
            .checked_mul(4)
            .ok_or_else(|| Error::Data(format!("tensor {name:?}: shape overflows")))?;
        let raw = r.take(bytes, &format!("data of tensor {name:?}"))?;
        let mut data = Vec::with_capacity(numel);
        for (j, c) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
            if !v.is_finite() {
                bail!(Data, "tensor {name:?} has a non-finite value at element {j}");
            }
            data.push(v as f64);
        }
        out.insert(name, Tensor::from_parts_unchecked(shape, data));
    }
    if r.pos != buf.len() {
        bail!(
            Data,
            "{} trailing bytes after the last tensor (byte offset {})",
            buf.len() - r.pos,
            r.pos
        );
    }
    Ok(out)
}

pub fn write_checkpoint(path: impl AsRef<Path>, tensors: &TensorMap) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(tensors)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<TensorMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Rounds every value to the nearest f32, i.e. what a write/read round trip yields.
pub fn narrow_to_f32(t: &Tensor) -> Tensor {
    let data = t.data().iter().map(|&v| v as f32 as f64).collect();
    Tensor::from_parts_unchecked(t.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one(name: &str, t: Tensor) -> TensorMap {
        let mut m = TensorMap::new();
        m.insert(name.into(), t);
        m
    }

    #[test]
    fn empty_map_is_twelve_bytes() {
        let b = encode(&TensorMap::new()).unwrap();
        assert_eq!(b.len(), 12);
        assert_eq!(&b[..4], b"LRDC");
        assert_eq!(decode(&b).unwrap().len(), 0);
    }

    #[test]
    fn layout_arithmetic() {
        let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = encode(&one("w", t.clone())).unwrap();
        assert_eq!(b.len(), 12 + 2 + 1 + 1 + 1 + 16 + 16);
        assert_eq!(&b[12..14], &1u16.to_le_bytes());
        assert_eq!(b[14], b'w');
        assert_eq!(b[15], 0);
        assert_eq!(b[16], 2);
        assert_eq!(decode(&b).unwrap()["w"], t);
    }

    #[test]
    fn narrowing_rounds_to_nearest() {
        let x = 0.1f64;
        let b = encode(&one("x", Tensor::new(vec![1], vec![x]).unwrap())).unwrap();
        let back = decode(&b).unwrap()["x"].data()[0];
        assert_eq!(back, 0.1f32 as f64);
    }

    #[test]
    fn overflow_on_narrowing_is_rejected() {
        let t = Tensor::new(vec![1], vec![1e300]).unwrap();
        assert!(matches!(encode(&one("x", t)), Err(Error::Data(_))));
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let t = Tensor::from_fn(vec![3, 5], |i| i as f64).unwrap();
        let mut b = encode(&one("layer.weight", t)).unwrap();
        let e = decode(&b[..b.len() - 3]).unwrap_err();
        assert!(e.to_string().contains("byte offset"), "{e}");
        b[0] = b'X';
        assert!(decode(&b).unwrap_err().to_string().contains("bad magic"));
    }

    #[test]
    fn rejects_non_finite_payload() {
        let t = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut b = encode(&one("bad", t)).unwrap();
        let n = b.len();
        b[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        let e = decode(&b).unwrap_err().to_string();
        assert!(e.contains("\"bad\"") && e.contains("non-finite"), "{e}");
    }

    #[test]
    fn rejects_duplicates_and_trailing_bytes() {
        let t = Tensor::new(vec![1], vec![1.0]).unwrap();
        let mut b = encode(&one("a", t)).unwrap();
        let entry = b[12..].to_vec();
        b.extend_from_slice(&entry);
        b[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(decode(&b).unwrap_err().to_string().contains("duplicate"));
        b[8..12].copy_from_slice(&1u32.to_le_bytes());
        assert!(decode(&b).unwrap_err().to_string().contains("trailing"));
    }

    #[test]
    fn rejects_empty_and_long_names() {
        let t = Tensor::new(vec![1], vec![1.0]).unwrap();
        assert!(encode(&one("", t.clone())).is_err());
        assert!(encode(&one(&"n".repeat(70_000), t)).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_identical(
            shapes in proptest::collection::vec(proptest::collection::vec(1usize..5, 1..4), 0..5),
            seed in any::<u32>(),
        ) {
            let mut m = TensorMap::new();
            for (i, s) in shapes.into_iter().enumerate() {
                let t = Tensor::from_fn(s, |j| ((j as f64 + seed as f64) * 0.37).sin() as f32 as f64).unwrap();
                m.insert(format!("t{i}"), t);
            }
            let b = encode(&m).unwrap();
            let back = decode(&b).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(encode(&back).unwrap(), b);
        }
    }
}
