//! Binary 64×64 observation frames.
//!
//! Each row is a `u64` with column 0 in the most significant bit, so the
//! big-endian bytes of the rows are exactly the row-major, MSB-first
//! bit-packed layout used on disk.

use std::fmt;

pub const FRAME_SIZE: usize = 64;
pub const FRAME_PIXELS: usize = FRAME_SIZE * FRAME_SIZE;
pub const PACKED_FRAME_BYTES: usize = FRAME_PIXELS / 8;

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Frame {
    rows: [u64; FRAME_SIZE],
}

#[inline]
fn bit(c: usize) -> u64 {
    1u64 << (FRAME_SIZE - 1 - c)
}

impl Default for Frame {
    fn default() -> Self {
        Self {
            rows: [0; FRAME_SIZE],
        }
    }
}

impl Frame {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn filled() -> Self {
        Self {
            rows: [u64::MAX; FRAME_SIZE],
        }
    }

    pub fn from_rows(rows: [u64; FRAME_SIZE]) -> Self {
        Self { rows }
    }

    pub fn rows(&self) -> &[u64; FRAME_SIZE] {
        &self.rows
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.rows[r] & bit(c) != 0
    }

    pub fn set(&mut self, r: usize, c: usize, on: bool) {
        if on {
            self.rows[r] |= bit(c);
        } else {
            self.rows[r] &= !bit(c);
        }
    }

    /// Sets every pixel of the rectangle clipped to the frame.
    pub fn fill_rect(&mut self, r0: i64, c0: i64, height: i64, width: i64) {
        let n = FRAME_SIZE as i64;
        for r in r0.max(0)..(r0 + height).min(n) {
            for c in c0.max(0)..(c0 + width).min(n) {
                self.set(r as usize, c as usize, true);
            }
        }
    }

    pub fn count_ones(&self) -> u32 {
        self.rows.iter().map(|r| r.count_ones()).sum()
    }

    /// Pixels as 0/1 values in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = u8> + '_ {
        self.rows
            .iter()
            .flat_map(|&row| (0..FRAME_SIZE).map(move |c| u8::from(row & bit(c) != 0)))
    }

    /// Builds a frame from 4096 row-major 0/1 values; nonzero means set.
    pub fn from_pixels(px: &[u8]) -> Option<Self> {
        if px.len() != FRAME_PIXELS {
            return None;
        }
        let mut f = Self::empty();
        for (i, &v) in px.iter().enumerate() {
            if v != 0 {
                f.set(i / FRAME_SIZE, i % FRAME_SIZE, true);
            }
        }
        Some(f)
    }

    pub fn to_packed(&self) -> [u8; PACKED_FRAME_BYTES] {
        let mut out = [0u8; PACKED_FRAME_BYTES];
        for (chunk, row) in out.chunks_exact_mut(8).zip(&self.rows) {
            chunk.copy_from_slice(&row.to_be_bytes());
        }
        out
    }

    pub fn from_packed(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != PACKED_FRAME_BYTES {
            return None;
        }
        let mut rows = [0u64; FRAME_SIZE];
        for (row, chunk) in rows.iter_mut().zip(bytes.chunks_exact(8)) {
            *row = u64::from_be_bytes(chunk.try_into().expect("8-byte chunk"));
        }
        Some(Self { rows })
    }

    /// Writes the frame as 0.0/1.0 values into `out` (length 4096).
    pub fn write_f<S: crate::numcore::Scalar>(&self, out: &mut [S]) {
        debug_assert_eq!(out.len(), FRAME_PIXELS);
        for (r, &row) in self.rows.iter().enumerate() {
            for c in 0..FRAME_SIZE {
                out[r * FRAME_SIZE + c] = if row & bit(c) != 0 {
                    S::one()
                } else {
                    S::zero()
                };
            }
        }
    }
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Frame({} on)", self.count_ones())?;
        for row in &self.rows {
            for c in 0..FRAME_SIZE {
                f.write_str(if row & bit(c) != 0 { "#" } else { "." })?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
