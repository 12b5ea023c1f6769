//! Observation transformations that turn the original environment into its
//! visual variants. Actions are never touched.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Frame, FRAME_SIZE};
use crate::pongsim::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformKind {
    Identity,
    /// Clockwise quarter turn followed by a horizontal flip, i.e. the
    /// matrix transpose.
    Transpose,
    /// Left and right halves exchanged.
    HorizontalSwap,
    /// Background and foreground exchanged.
    ColorInvert,
    /// Left-right reflection.
    Mirror,
    /// Top and bottom halves exchanged.
    VerticalSwap,
}

impl TransformKind {
    pub const ALL: [TransformKind; 6] = [
        TransformKind::Identity,
        TransformKind::Transpose,
        TransformKind::HorizontalSwap,
        TransformKind::ColorInvert,
        TransformKind::Mirror,
        TransformKind::VerticalSwap,
    ];

    pub const VARIANTS: [TransformKind; 5] = [
        TransformKind::Transpose,
        TransformKind::HorizontalSwap,
        TransformKind::ColorInvert,
        TransformKind::Mirror,
        TransformKind::VerticalSwap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Identity => "identity",
            TransformKind::Transpose => "transpose",
            TransformKind::HorizontalSwap => "horizontal-swap",
            TransformKind::ColorInvert => "color-invert",
            TransformKind::Mirror => "mirror",
            TransformKind::VerticalSwap => "vertical-swap",
        }
    }

    /// One-letter environment tag (`o` for the original).
    pub fn tag(self) -> &'static str {
        match self {
            TransformKind::Identity => "o",
            TransformKind::Transpose => "t",
            TransformKind::HorizontalSwap => "h",
            TransformKind::ColorInvert => "c",
            TransformKind::Mirror => "m",
            TransformKind::VerticalSwap => "v",
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let k = s.to_ascii_lowercase();
        TransformKind::ALL
            .into_iter()
            .find(|t| t.name() == k || t.tag() == k)
            .or(match k.as_str() {
                "hswap" => Some(TransformKind::HorizontalSwap),
                "vswap" => Some(TransformKind::VerticalSwap),
                "invert" | "color" => Some(TransformKind::ColorInvert),
                _ => None,
            })
            .ok_or_else(|| Error::Invalid(format!("unknown transform kind {s:?}")))
    }
}

const HALF: usize = FRAME_SIZE / 2;

pub fn apply(kind: TransformKind, frame: &Frame) -> Frame {
    let rows = frame.rows();
    let mut out = [0u64; FRAME_SIZE];
    match kind {
        TransformKind::Identity => return *frame,
        TransformKind::Transpose => {
            for (r, &row) in rows.iter().enumerate() {
                let rbit = 1u64 << (FRAME_SIZE - 1 - r);
                for (c, o) in out.iter_mut().enumerate() {
                    if row & (1u64 << (FRAME_SIZE - 1 - c)) != 0 {
                        *o |= rbit;
                    }
                }
            }
        }
        TransformKind::HorizontalSwap => {
            for (o, &row) in out.iter_mut().zip(rows) {
                *o = row.rotate_left(HALF as u32);
            }
        }
        TransformKind::ColorInvert => {
            for (o, &row) in out.iter_mut().zip(rows) {
                *o = !row;
            }
        }
        TransformKind::Mirror => {
            for (o, &row) in out.iter_mut().zip(rows) {
                *o = row.reverse_bits();
            }
        }
        TransformKind::VerticalSwap => {
            for (r, o) in out.iter_mut().enumerate() {
                *o = rows[(r + HALF) % FRAME_SIZE];
            }
        }
    }
    Frame::from_rows(out)
}

/// Validates a 0/1 pixel buffer before transforming it.
pub fn apply_pixels(kind: TransformKind, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.iter().any(|&v| v > 1) {
        return Err(Error::Invalid("frame entries must be 0 or 1".into()));
    }
    let f = Frame::from_pixels(pixels).ok_or_else(|| {
        Error::Shape(format!(
            "transform: expected {} pixels, got {}",
            FRAME_SIZE * FRAME_SIZE,
            pixels.len()
        ))
    })?;
    Ok(apply(kind, &f).pixels().collect())
}

pub fn transform_trajectory(kind: TransformKind, traj: &Trajectory) -> Trajectory {
    Trajectory {
        frames: traj.frames.iter().map(|f| apply(kind, f)).collect(),
        actions: traj.actions.clone(),
        seed: traj.seed,
    }
}
