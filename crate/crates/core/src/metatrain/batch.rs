//! Window sampling for the two environments.

use rand::Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::pongsim::{Action, Trajectory};
use crate::transforms::{apply, TransformKind};

use super::config::PairingMode;

/// A contiguous slice of one episode: `len` frames and the `len − 1`
/// actions between them.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub episode: usize,
    pub start: usize,
    pub frames: Vec<Frame>,
    pub actions: Vec<Action>,
}

impl Window {
    pub fn cut(traj: &Trajectory, episode: usize, start: usize, len: usize) -> Result<Self> {
        if len < 2 || start + len > traj.frames.len() {
            return Err(Error::Invalid(format!(
                "window [{start}, {}) does not fit an episode of {} frames",
                start + len,
                traj.frames.len()
            )));
        }
        Ok(Self {
            episode,
            start,
            frames: traj.frames[start..start + len].to_vec(),
            actions: traj.actions[start..start + len - 1].to_vec(),
        })
    }

    pub fn transformed(&self, kind: TransformKind) -> Self {
        Self {
            episode: self.episode,
            start: self.start,
            frames: self.frames.iter().map(|f| apply(kind, f)).collect(),
            actions: self.actions.clone(),
        }
    }
}

/// B windows of equal length T for one environment.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub windows: Vec<Window>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.windows.len()
    }

    pub fn seq_len(&self) -> usize {
        self.windows.first().map_or(0, |w| w.frames.len())
    }

    /// Frames `t0..t1` of every window, time-major: row `(t − t0)·B + b`.
    pub fn frames_time_major(&self, t0: usize, t1: usize) -> Vec<Frame> {
        (t0..t1)
            .flat_map(|t| self.windows.iter().map(move |w| w.frames[t]))
            .collect()
    }

    pub fn actions_at(&self, t: usize) -> Vec<Action> {
        self.windows.iter().map(|w| w.actions[t]).collect()
    }
}

/// Draws paired batches from a dataset of original-environment episodes.
/// Episodes shorter than the window length are skipped.
#[derive(Clone, Debug)]
pub struct Sampler {
    mode: PairingMode,
    variant: TransformKind,
    seq_len: usize,
    batch_size: usize,
    pools: [Vec<usize>; 2],
}

impl Sampler {
    pub fn new(
        data: &Dataset,
        mode: PairingMode,
        variant: TransformKind,
        batch_size: usize,
        seq_len: usize,
    ) -> Result<Self> {
        let eligible = |range: std::ops::Range<usize>| -> Vec<usize> {
            range
                .filter(|&i| data.episodes[i].frames.len() >= seq_len)
                .collect()
        };
        let n = data.len();
        let skipped = (0..n)
            .filter(|&i| data.episodes[i].frames.len() < seq_len)
            .count();
        if skipped > 0 {
            log::warn!("skipping {skipped} episodes shorter than {seq_len} frames");
        }
        let pools = match mode {
            PairingMode::Corresponding => {
                let all = eligible(0..n);
                [all.clone(), all]
            }
            PairingMode::NonCorresponding => [eligible(0..n / 2), eligible(n / 2..n)],
        };
        if pools.iter().any(Vec::is_empty) {
            return Err(Error::Invalid(format!(
                "dataset of {n} episodes has no usable episodes of length >= {seq_len} for {mode:?} pairing"
            )));
        }
        Ok(Self {
            mode,
            variant,
            seq_len,
            batch_size,
            pools,
        })
    }

    fn draw<R: Rng + ?Sized>(&self, data: &Dataset, pool: usize, rng: &mut R) -> Result<Batch> {
        let ids = &self.pools[pool];
        let windows = (0..self.batch_size)
            .map(|_| {
                let ep = ids[rng.random_range(0..ids.len())];
                let traj = &data.episodes[ep];
                let start = rng.random_range(0..=traj.frames.len() - self.seq_len);
                Window::cut(traj, ep, start, self.seq_len)
            })
            .collect::<Result<_>>()?;
        Ok(Batch { windows })
    }

    /// Batches for (original, variant). In corresponding mode the variant
    /// batch is the transform of the original batch.
    pub fn sample<R: Rng + ?Sized>(&self, data: &Dataset, rng: &mut R) -> Result<[Batch; 2]> {
        let o = self.draw(data, 0, rng)?;
        let i_src = match self.mode {
            PairingMode::Corresponding => o.clone(),
            PairingMode::NonCorresponding => self.draw(data, 1, rng)?,
        };
        let i = Batch {
            windows: i_src
                .windows
                .iter()
                .map(|w| w.transformed(self.variant))
                .collect(),
        };
        Ok([o, i])
    }
}
