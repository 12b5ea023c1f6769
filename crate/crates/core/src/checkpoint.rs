//! `MWC1` checkpoint container.
//!
//! Layout (little-endian): magic `MWC1`, `u32` version, `u32`-length config
//! TOML, `u32`-length state TOML, then named tensor blocks until end of
//! file. A block is a `u16` name length, the UTF-8 name, a `u8` rank, one
//! `u32` per dimension and the `f32` values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::{Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MWC1";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_RANK: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Block {
    pub fn from_tensor<S: Scalar>(name: impl Into<String>, t: &Tensor<S>) -> Self {
        Self {
            name: name.into(),
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|v| v.as_f64() as f32).collect(),
        }
    }

    pub fn to_tensor<S: Scalar>(&self) -> Result<Tensor<S>> {
        Tensor::new(
            &self.shape,
            self.data.iter().map(|&v| S::of(f64::from(v))).collect(),
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub state: String,
    pub blocks: Vec<Block>,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn corrupt(&self, msg: impl Into<String>) -> Error {
        Error::Corrupt {
            what: "checkpoint",
            offset: self.pos as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.corrupt(format!(
                "truncated {what}: need {n} bytes, {} left",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2, what)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn text(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let at = self.pos;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|e| Error::Corrupt {
            what: "checkpoint",
            offset: (at + e.utf8_error().valid_up_to()) as u64,
            msg: format!("{what} is not UTF-8"),
        })
    }
}

impl Checkpoint {
    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for text in [&self.config, &self.state] {
            let n = u32::try_from(text.len())
                .map_err(|_| Error::Invalid("checkpoint text section exceeds 4 GiB".into()))?;
            out.extend_from_slice(&n.to_le_bytes());
            out.extend_from_slice(text.as_bytes());
        }
        for b in &self.blocks {
            let name_len = u16::try_from(b.name.len())
                .map_err(|_| Error::Invalid(format!("block name too long: {}", b.name)))?;
            if b.shape.is_empty() || b.shape.len() > MAX_RANK {
                return Err(Error::Invalid(format!(
                    "block {} has rank {}",
                    b.name,
                    b.shape.len()
                )));
            }
            if b.shape.iter().product::<usize>() != b.data.len() {
                return Err(Error::Shape(format!(
                    "block {} data does not match its shape",
                    b.name
                )));
            }
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(b.name.as_bytes());
            out.push(b.shape.len() as u8);
            for &d in &b.shape {
                let d = u32::try_from(d)
                    .map_err(|_| Error::Invalid(format!("block {} dimension too large", b.name)))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &b.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut c = Cursor { buf, pos: 0 };
        if c.take(4, "magic")? != CHECKPOINT_MAGIC {
            c.pos = 0;
            return Err(c.corrupt("bad magic, expected MWC1"));
        }
        let version = c.u32("version")?;
        if version != CHECKPOINT_VERSION {
            c.pos -= 4;
            return Err(c.corrupt(format!(
                "unsupported version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let config = c.text("config section")?;
        let state = c.text("state section")?;
        let mut blocks: Vec<Block> = Vec::new();
        while c.pos < buf.len() {
            let start = c.pos;
            let n = c.u16("block name length")? as usize;
            let name_bytes = c.take(n, "block name")?;
            let name = std::str::from_utf8(name_bytes)
                .map_err(|_| Error::Corrupt {
                    what: "checkpoint",
                    offset: (start + 2) as u64,
                    msg: "block name is not UTF-8".into(),
                })?
                .to_string();
            if blocks.iter().any(|b| b.name == name) {
                c.pos = start;
                return Err(c.corrupt(format!("duplicate block {name}")));
            }
            let rank = c.u8("block rank")? as usize;
            if rank == 0 || rank > MAX_RANK {
                c.pos -= 1;
                return Err(c.corrupt(format!("block {name} has invalid rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = c.u32("block dimension")? as usize;
                if d == 0 {
                    c.pos -= 4;
                    return Err(c.corrupt(format!("block {name} has a zero dimension")));
                }
                shape.push(d);
            }
            let count = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| c.corrupt(format!("block {name} is too large")))?;
            let raw = c.take(count, "block data")?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            blocks.push(Block { name, shape, data });
        }
        Ok(Self {
            config,
            state,
            blocks,
        })
    }

    /// Writes to a sibling temporary file first, so an interrupted save
    /// never replaces a good checkpoint with a partial one.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("mwc.tmp");
        fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            config: "a = 1\n".into(),
            state: "cycle = 2\n".into(),
            blocks: vec![
                Block {
                    name: "w".into(),
                    shape: vec![2, 3],
                    data: vec![1.0, -2.0, 0.5, 0.0, 3.25, f32::MIN_POSITIVE],
                },
                Block {
                    name: "b".into(),
                    shape: vec![1],
                    data: vec![7.0],
                },
            ],
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bytes = sample().to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn version_mismatch_rejected() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[4] = 2;
        let err = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
        assert!(
            err.contains("version 2") && err.contains("offset 4"),
            "{err}"
        );
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = sample().to_bytes().unwrap();
        let cut = &bytes[..bytes.len() - 3];
        let err = Checkpoint::from_bytes(cut).unwrap_err().to_string();
        assert!(err.contains("truncated block data"), "{err}");
        assert!(err.contains("byte offset"), "{err}");
    }

    #[test]
    fn zero_rank_rejected() {
        let mut bytes = sample().to_bytes().unwrap();
        let at = 4 + 4 + 4 + 6 + 4 + 10 + 2 + 1;
        assert_eq!(bytes[at], 2);
        bytes[at] = 0;
        let err = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains(&format!("offset {at}")), "{err}");
    }
}
