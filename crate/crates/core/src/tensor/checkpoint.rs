//! Named-tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "TLABTNSR"
//! version  u32      1
//! count    u32      number of entries
//! entry*   name_len u32, name (utf-8), ndim u32, dims u64 × ndim,
//!          offset u64 (bytes from the start of the payload)
//! payload  f64 little-endian values, entries back to back in header order
//! ```

use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const CONTAINER_MAGIC: &[u8; 8] = b"TLABTNSR";
pub const CONTAINER_VERSION: u32 = 1;

pub fn encode_container(entries: &[(String, Tensor)]) -> Vec<u8> {
    let mut head = Vec::new();
    head.extend_from_slice(CONTAINER_MAGIC);
    head.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    head.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    let mut payload = Vec::new();
    for (name, t) in entries {
        head.extend_from_slice(&(name.len() as u32).to_le_bytes());
        head.extend_from_slice(name.as_bytes());
        head.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            head.extend_from_slice(&(d as u64).to_le_bytes());
        }
        head.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    head.extend_from_slice(&payload);
    head
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_container(buf: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != CONTAINER_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CONTAINER_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut header = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = String::from_utf8(r.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("non-utf8 tensor name".into()))?;
        let nd = r.u32()? as usize;
        let mut shape = Vec::with_capacity(nd);
        for _ in 0..nd {
            shape.push(r.u64()? as usize);
        }
        let off = r.u64()? as usize;
        header.push((name, shape, off));
    }
    let payload = &buf[r.pos..];
    let mut out = Vec::with_capacity(count);
    for (name, shape, off) in header {
        let n: usize = shape.iter().product();
        let bytes = payload
            .get(off..off + 8 * n)
            .ok_or_else(|| Error::Checkpoint(format!("{name}: payload out of range")))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

pub fn write_container(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    fs::write(path, encode_container(entries)).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_container(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_bytes_for_tiny_container() {
        let t = Tensor::vector(vec![1.0]);
        let bytes = encode_container(&[("a".into(), t)]);
        let mut want = b"TLABTNSR".to_vec();
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&1u32.to_le_bytes());
        want.push(b'a');
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&1u64.to_le_bytes());
        want.extend_from_slice(&0u64.to_le_bytes());
        want.extend_from_slice(&1.0f64.to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn truncated_is_rejected() {
        let bytes = encode_container(&[("w".into(), Tensor::zeros(&[3, 2]))]);
        assert!(decode_container(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode_container(b"NOTMAGIC").is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_bit_exact(vals in proptest::collection::vec(any::<f64>(), 0..40), split in 0usize..40) {
            let split = split.min(vals.len());
            let a = Tensor::vector(vals[..split].to_vec());
            let b = Tensor::new(vec![1, vals.len() - split], vals[split..].to_vec()).unwrap();
            let entries = vec![("x.a".to_string(), a), ("y".to_string(), b)];
            let back = decode_container(&encode_container(&entries)).unwrap();
            prop_assert_eq!(back.len(), 2);
            for ((n1, t1), (n2, t2)) in entries.iter().zip(&back) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(t1.shape(), t2.shape());
                for (x, y) in t1.data().iter().zip(t2.data()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }
}
