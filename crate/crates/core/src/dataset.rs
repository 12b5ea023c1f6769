//! `MWD1` trajectory dataset files.
//!
//! Layout (little-endian): magic `MWD1`, `u32` episode count, then per
//! episode `u32` frame count T, `u64` seed, T−1 action bytes and T frames
//! of 512 bit-packed bytes each.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::frame::{Frame, PACKED_FRAME_BYTES};
use crate::pongsim::{rollout, Action, Trajectory};

pub const DATASET_MAGIC: &[u8; 4] = b"MWD1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub episodes: Vec<Trajectory>,
}

/// Per-episode seed derived from the run seed (SplitMix64 finalizer).
pub fn episode_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Dataset {
    /// `episodes` random-policy rollouts of `steps` frames each.
    pub fn generate(episodes: usize, steps: usize, seed: u64) -> Result<Self> {
        let episodes = (0..episodes as u64)
            .map(|i| rollout(episode_seed(seed, i), steps))
            .collect::<Result<_>>()?;
        Ok(Self { episodes })
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Exact encoded size in bytes.
    pub fn encoded_len(&self) -> usize {
        8 + self
            .episodes
            .iter()
            .map(|e| 4 + 8 + e.actions.len() + e.frames.len() * PACKED_FRAME_BYTES)
            .sum::<usize>()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&(self.episodes.len() as u32).to_le_bytes())?;
        for ep in &self.episodes {
            ep.validate()?;
            w.write_all(&(ep.frames.len() as u32).to_le_bytes())?;
            w.write_all(&ep.seed.to_le_bytes())?;
            let actions: Vec<u8> = ep.actions.iter().map(|a| a.value()).collect();
            w.write_all(&actions)?;
            for f in &ep.frames {
                w.write_all(&f.to_packed())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut rd = Tracked {
            inner: r,
            offset: 0,
        };
        let magic: [u8; 4] = rd.array()?;
        if &magic != DATASET_MAGIC {
            return Err(corrupt(0, format!("bad magic {magic:?}")));
        }
        let count = u32::from_le_bytes(rd.array()?);
        let mut episodes = Vec::with_capacity(count.min(1 << 16) as usize);
        for _ in 0..count {
            let at = rd.offset;
            let t = u32::from_le_bytes(rd.array()?) as usize;
            if t == 0 {
                return Err(corrupt(at, "episode with zero frames".into()));
            }
            let seed = u64::from_le_bytes(rd.array()?);
            let at = rd.offset;
            let raw = rd.bytes(t - 1)?;
            let actions = raw
                .into_iter()
                .map(Action::new)
                .collect::<Result<Vec<_>>>()
                .map_err(|e| corrupt(at, e.to_string()))?;
            let mut frames = Vec::with_capacity(t);
            for _ in 0..t {
                let buf: [u8; PACKED_FRAME_BYTES] = rd.array()?;
                frames.push(Frame::from_packed(&buf).expect("packed frame size"));
            }
            episodes.push(Trajectory {
                frames,
                actions,
                seed,
            });
        }
        let mut probe = [0u8; 1];
        if rd.inner.read(&mut probe)? != 0 {
            return Err(corrupt(
                rd.offset,
                "trailing bytes after last episode".into(),
            ));
        }
        Ok(Self { episodes })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file))
    }
}

fn corrupt(offset: u64, msg: String) -> Error {
    Error::Corrupt {
        what: "dataset",
        offset,
        msg,
    }
}

struct Tracked<'a, R> {
    inner: &'a mut R,
    offset: u64,
}

impl<R: Read> Tracked<'_, R> {
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.fill(&mut buf)?;
        Ok(buf)
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.fill(&mut buf)?;
        Ok(buf)
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                corrupt(
                    self.offset,
                    format!("truncated, needed {} more bytes", buf.len()),
                )
            } else {
                Error::RawIo(e)
            }
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_size() {
        let ds = Dataset::generate(3, 20, 5).unwrap();
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), ds.encoded_len());
        assert_eq!(buf.len(), 8 + 3 * (4 + 8 + 19 + 20 * 512));
        assert_eq!(&buf[..4], b"MWD1");
        let back = Dataset::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn truncated_file_reports_offset() {
        let ds = Dataset::generate(1, 4, 5).unwrap();
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        buf.truncate(100);
        let err = Dataset::read_from(&mut buf.as_slice()).unwrap_err();
        assert!(matches!(err, Error::Corrupt { .. }), "{err}");
    }

    #[test]
    fn bad_action_byte_rejected() {
        let ds = Dataset::generate(1, 4, 5).unwrap();
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        buf[8 + 12] = 9;
        assert!(Dataset::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(
            Dataset::generate(2, 30, 9).unwrap(),
            Dataset::generate(2, 30, 9).unwrap()
        );
        assert_ne!(episode_seed(1, 0), episode_seed(1, 1));
    }
}
