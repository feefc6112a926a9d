//! `AVQC` checkpoint format, little endian throughout:
//!
//! ```text
//! "AVQC" | version u32 | count u32 |
//!   count x ( name_len u32 | name bytes | rank u32 | dims u32[rank] | f32[prod(dims)] )
//! ```

use std::io::{Read, Write};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"AVQC";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<'a>(
    entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
    mut out: impl Write,
) -> Result<()> {
    let entries: Vec<_> = entries.into_iter().collect();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out.write_all(&buf).map_err(|e| Error::io("<checkpoint>", e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::parse("AVQC", format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn read_checkpoint(mut input: impl Read) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<checkpoint>", e))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::parse("AVQC", "bad magic"));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::parse("AVQC", format!("unsupported version {version}")));
    }
    let count = cur.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| Error::parse("AVQC", "tensor name is not UTF-8"))?
            .to_string();
        let rank = cur.u32()? as usize;
        let dims = (0..rank)
            .map(|_| cur.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let raw = cur.take(4 * n)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        out.push((name, Tensor::new(dims, data)?));
    }
    if cur.pos != bytes.len() {
        return Err(Error::parse("AVQC", "trailing bytes after last tensor"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_f32_exact() {
        let a = Tensor::new(vec![2, 3], vec![0.5, -1.25, 3.0, 1e-3, 7.0, -0.0]).unwrap();
        let b = Tensor::scalar(0.1);
        let mut buf = Vec::new();
        write_checkpoint([("layer.a", &a), ("b", &b)], &mut buf).unwrap();
        assert_eq!(&buf[..4], b"AVQC");
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back[0].0, "layer.a");
        assert_eq!(back[0].1.shape(), &[2, 3]);
        assert_eq!(back[0].1.data()[3], f64::from(1e-3f32));
        assert_eq!(back[1].1.data()[0], f64::from(0.1f32));

        let mut again = Vec::new();
        write_checkpoint(back.iter().map(|(n, t)| (n.as_str(), t)), &mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn corrupt_inputs() {
        assert!(read_checkpoint(&b"AVQX\x01\0\0\0\0\0\0\0"[..]).is_err());
        let mut buf = Vec::new();
        write_checkpoint([("x", &Tensor::scalar(1.0))], &mut buf).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
        buf.push(0);
        assert!(read_checkpoint(buf.as_slice()).is_err());
    }
}
