//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes  "FPITCKPT"
//! version      u32      = 1
//! vocab_len    u32
//! tokens       vocab_len x (u32 byte length, UTF-8 bytes), in id order
//! dim          u32
//! window       u32
//! weights      window x f64
//! embed        vocab_len * dim x f64, row-major
//! out          vocab_len * dim x f64, row-major
//! has_adapter  u8 (0 or 1)
//! rank         u32                      (if has_adapter)
//! a            vocab_len * rank x f64   (if has_adapter)
//! b            dim * rank x f64         (if has_adapter)
//! ```
//!
//! Floats are stored as raw IEEE-754 bits, so a save/load round trip is
//! bit-exact.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{AdapterParams, BackboneParams, Vocab};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FPITCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub vocab: Vocab,
    pub backbone: BackboneParams,
    pub adapter: Option<AdapterParams>,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> std::io::Result<()> {
    let bb = &ckpt.backbone;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION as usize);
    put_u32(&mut buf, ckpt.vocab.len());
    for t in ckpt.vocab.tokens() {
        put_u32(&mut buf, t.len());
        buf.extend_from_slice(t.as_bytes());
    }
    put_u32(&mut buf, bb.dim);
    put_u32(&mut buf, bb.window());
    put_f64s(&mut buf, &bb.position_weights);
    put_f64s(&mut buf, &bb.embed);
    put_f64s(&mut buf, &bb.out);
    match &ckpt.adapter {
        Some(a) => {
            buf.push(1);
            put_u32(&mut buf, a.rank);
            put_f64s(&mut buf, &a.a);
            put_f64s(&mut buf, &a.b);
        }
        None => buf.push(0),
    }
    w.write_all(&buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let v = c.u32()?;
    let mut tokens = Vec::with_capacity(v.min(1 << 20));
    for _ in 0..v {
        let n = c.u32()?;
        let s = std::str::from_utf8(c.take(n)?)
            .map_err(|e| Error::Checkpoint(format!("token is not UTF-8: {e}")))?;
        tokens.push(s.to_string());
    }
    let vocab = Vocab::from_tokens(tokens)?;
    let dim = c.u32()?;
    let window = c.u32()?;
    let position_weights = c.f64s(window)?;
    let embed = c.f64s(v * dim)?;
    let out = c.f64s(v * dim)?;
    let backbone = BackboneParams {
        vocab_size: v,
        dim,
        position_weights,
        embed,
        out,
    };
    let adapter = match c.u8()? {
        0 => None,
        1 => {
            let rank = c.u32()?;
            let a = c.f64s(v * rank)?;
            let b = c.f64s(dim * rank)?;
            Some(AdapterParams {
                vocab_size: v,
                dim,
                rank,
                a,
                b,
            })
        }
        flag => return Err(Error::Checkpoint(format!("bad adapter flag {flag}"))),
    };
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - c.pos
        )));
    }
    Ok(Checkpoint {
        vocab,
        backbone,
        adapter,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(std::io::BufWriter::new(file), ckpt).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(file).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::tinylm::{AdapterShape, ModelDims};

    fn sample() -> Checkpoint {
        let vocab = Vocab::build(["alpha beta . gamma"]);
        let dims = ModelDims { dim: 3, window: 2, rank: 2, position_decay: 0.85 };
        let backbone = BackboneParams::random(vocab.len(), &dims, &mut rng::seeded(1));
        let mut adapter = AdapterParams::init(
            AdapterShape { vocab_size: vocab.len(), dim: 3, rank: 2 },
            0.7,
            &mut rng::seeded(2),
        );
        adapter.a[0] = -0.0;
        adapter.a[1] = f64::MIN_POSITIVE / 3.0;
        Checkpoint { vocab, backbone, adapter: Some(adapter) }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ck).unwrap();
        let back = read_checkpoint(&buf[..]).unwrap();
        let mut again = Vec::new();
        write_checkpoint(&mut again, &back).unwrap();
        assert_eq!(buf, again);
        assert_eq!(back.vocab, ck.vocab);
        assert!(back.adapter.as_ref().unwrap().a[0].is_sign_negative());

        let bare = Checkpoint { adapter: None, ..ck };
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &bare).unwrap();
        assert_eq!(read_checkpoint(&buf[..]).unwrap(), bare);
    }

    #[test]
    fn rejects_corruption() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample()).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&bad[..]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(read_checkpoint(&long[..]).is_err());
    }
}
