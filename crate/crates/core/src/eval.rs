//! Cross-decoding evaluation and latent analyses.
//!
//! All evaluation uses posterior and predicted means; nothing here samples.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::episode_seed;
use crate::error::{Error, Result};
use crate::frame::{Frame, FRAME_PIXELS, FRAME_SIZE};
use crate::memory::MemoryModel;
use crate::metatrain::batch::{Batch, Window};
use crate::metatrain::step::predicted_latents;
use crate::numcore::{Graph, Scalar, Tensor};
use crate::pongsim::rollout;
use crate::transforms::{apply, TransformKind};
use crate::vision::{frames_tensor, mean_frame_sse, VisionModel, DEC_W1, LATENT_DIM};

/// Keeps held-out episode seeds apart from training episode seeds.
const HELD_OUT_DOMAIN: u64 = 0x6576_616c_5f73_6574;

/// Frames pushed through a graph at once during evaluation.
const CHUNK: usize = 256;

/// Held-out windows in the original environment, cut from fresh episodes.
#[derive(Clone, Debug, PartialEq)]
pub struct HeldOut {
    pub windows: Vec<Window>,
}

impl HeldOut {
    /// `count` windows of `seq_len` frames, each from its own episode of
    /// `episode_steps` frames.
    pub fn generate(count: usize, episode_steps: usize, seq_len: usize, seed: u64) -> Result<Self> {
        if count == 0 || seq_len < 2 || episode_steps < seq_len {
            return Err(Error::Invalid(format!(
                "held-out set: {count} windows of {seq_len} from episodes of {episode_steps}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let windows = (0..count)
            .map(|k| {
                let traj = rollout(
                    episode_seed(seed ^ HELD_OUT_DOMAIN, k as u64),
                    episode_steps,
                )?;
                let start = rng.random_range(0..=episode_steps - seq_len);
                Window::cut(&traj, k, start, seq_len)
            })
            .collect::<Result<_>>()?;
        Ok(Self { windows })
    }

    pub fn batch(&self, kind: TransformKind) -> Batch {
        Batch {
            windows: self.windows.iter().map(|w| w.transformed(kind)).collect(),
        }
    }

    /// Every frame of every window, transformed into `kind`.
    pub fn frames(&self, kind: TransformKind) -> Vec<Frame> {
        self.windows
            .iter()
            .flat_map(|w| w.frames.iter().map(move |f| apply(kind, f)))
            .collect()
    }
}

/// Mean over pairs of the squared error between `dst` and `src` encoded by
/// `vi` (posterior mean) and decoded by `vj`. With `vi == vj` and
/// `src == dst` this is the reconstruction loss.
pub fn transformation_loss<S: Scalar>(
    vi: &VisionModel<S>,
    vj: &VisionModel<S>,
    src: &[Frame],
    dst: &[Frame],
) -> Result<f64> {
    if src.len() != dst.len() || src.is_empty() {
        return Err(Error::Invalid(format!(
            "transformation_loss: {} source frames for {} targets",
            src.len(),
            dst.len()
        )));
    }
    let mut total = 0.0;
    for (s, d) in src.chunks(CHUNK).zip(dst.chunks(CHUNK)) {
        let mut g = Graph::new();
        let pi = vi.bind_const(&mut g);
        let pj = vj.bind_const(&mut g);
        let x = g.constant(frames_tensor(s)?);
        let (mu, _) = VisionModel::encode_graph(&mut g, &pi, x)?;
        let out = VisionModel::decode_graph(&mut g, &pj, mu)?;
        let y = g.constant(frames_tensor(d)?);
        let l = mean_frame_sse(&mut g, out, y)?;
        total += g.value(l).item().as_f64() * s.len() as f64;
    }
    Ok(total / src.len() as f64)
}

pub fn reconstruction_loss<S: Scalar>(v: &VisionModel<S>, frames: &[Frame]) -> Result<f64> {
    transformation_loss(v, v, frames, frames)
}

/// Teacher-forced prediction in `vi`'s latent space with means throughout,
/// decoded by `vj` and scored against the next frames of `dst`. The first
/// prediction of each window (made from a fresh recurrent state) is not
/// scored.
pub fn predicted_transformation_loss<S: Scalar>(
    vi: &VisionModel<S>,
    vj: &VisionModel<S>,
    memory: &MemoryModel<S>,
    src: &Batch,
    dst: &Batch,
) -> Result<f64> {
    let (t, b) = (src.seq_len(), src.size());
    if t < 3 || dst.seq_len() != t || dst.size() != b {
        return Err(Error::Invalid(format!(
            "predicted_transformation_loss: need matching batches of >= 3 frames, got {b}x{t} and {}x{}",
            dst.size(),
            dst.seq_len()
        )));
    }
    let mut g = Graph::new();
    let pi = vi.bind_const(&mut g);
    let pj = vj.bind_const(&mut g);
    let mp = memory.bind_const(&mut g);
    let z = predicted_latents(&mut g, &pi, &mp, src, true, &mut None)?;
    let z = g.slice(z, 0, b, (t - 2) * b)?;
    let out = VisionModel::decode_graph(&mut g, &pj, z)?;
    let y = g.constant(frames_tensor(&dst.frames_time_major(2, t))?);
    let l = mean_frame_sse(&mut g, out, y)?;
    Ok(g.value(l).item().as_f64())
}

pub fn prediction_loss<S: Scalar>(
    v: &VisionModel<S>,
    memory: &MemoryModel<S>,
    windows: &Batch,
) -> Result<f64> {
    predicted_transformation_loss(v, v, memory, windows, windows)
}

/// Losses for one ordered environment pair on a held-out set.
#[derive(Clone, Debug, PartialEq)]
pub struct PairMetrics {
    pub from: TransformKind,
    pub to: TransformKind,
    /// Reconstruction loss of `from`.
    pub l_r: f64,
    /// Prediction loss of `from`.
    pub l_p: f64,
    pub l_t: f64,
    pub l_pt: f64,
}

pub fn pair_metrics<S: Scalar>(
    vi: &VisionModel<S>,
    vj: &VisionModel<S>,
    memory: &MemoryModel<S>,
    kinds: (TransformKind, TransformKind),
    held: &HeldOut,
) -> Result<PairMetrics> {
    let (fi, fj) = (held.frames(kinds.0), held.frames(kinds.1));
    let (bi, bj) = (held.batch(kinds.0), held.batch(kinds.1));
    Ok(PairMetrics {
        from: kinds.0,
        to: kinds.1,
        l_r: reconstruction_loss(vi, &fi)?,
        l_p: prediction_loss(vi, memory, &bi)?,
        l_t: transformation_loss(vi, vj, &fi, &fj)?,
        l_pt: predicted_transformation_loss(vi, vj, memory, &bi, &bj)?,
    })
}

/// Binary PGM (P5) of pixel probabilities scaled to 0..=255.
pub fn pgm_bytes(probs: &[f64]) -> Result<Vec<u8>> {
    if probs.len() != FRAME_PIXELS {
        return Err(Error::Shape(format!(
            "pgm: expected {FRAME_PIXELS} values, got {}",
            probs.len()
        )));
    }
    let mut out = format!("P5\n{FRAME_SIZE} {FRAME_SIZE}\n255\n").into_bytes();
    out.extend(
        probs
            .iter()
            .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

/// Encodes each original-environment frame with `vision_o` and writes the
/// decoding of that latent by every given decoder as `t{t}_{tag}.pgm`.
/// The identity decoder's column is `vision_o`'s own reconstruction.
/// Returns the written paths in (time, decoder) order.
pub fn cross_decode_grid<S: Scalar>(
    vision_o: &VisionModel<S>,
    decoders: &[(TransformKind, &VisionModel<S>)],
    frames: &[Frame],
    out_dir: &Path,
) -> Result<Vec<std::path::PathBuf>> {
    if frames.is_empty() {
        return Err(Error::Invalid(
            "cross_decode_grid needs at least one frame".into(),
        ));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (mu, _) = vision_o.encode_batch(frames)?;
    let mut columns = Vec::with_capacity(decoders.len() + 1);
    columns.push((TransformKind::Identity, vision_o.decode_batch(&mu)?));
    for &(kind, v) in decoders
        .iter()
        .filter(|(k, _)| *k != TransformKind::Identity)
    {
        columns.push((kind, v.decode_batch(&mu)?));
    }
    let mut paths = Vec::new();
    for t in 0..frames.len() {
        for (kind, probs) in &columns {
            let px: Vec<f64> = probs.row(t).iter().map(|v| v.as_f64()).collect();
            let path = out_dir.join(format!("t{t}_{}.pgm", kind.tag()));
            fs::write(&path, pgm_bytes(&px)?).map_err(|e| Error::io(&path, e))?;
            paths.push(path);
        }
    }
    Ok(paths)
}

/// Per-dimension latent statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct DimStats {
    pub dim: usize,
    /// Mean posterior log standard deviation in each environment.
    pub logstd_i: f64,
    pub logstd_j: f64,
    /// Mean |z_i − z_j| over corresponding pairs (posterior means).
    pub l1: f64,
    /// Sum of |first-layer decoder weights| leaving this dimension.
    pub weight_mass: f64,
    /// Mean over frames of |∂(Σ output pixels)/∂z_d|.
    pub grad_mass: f64,
    pub is_key: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KeyElementReport {
    pub dims: Vec<DimStats>,
    pub key: Vec<usize>,
    /// Dimensions in the lowest and highest quartile of the mean
    /// log-std over both environments.
    pub low_quartile: Vec<usize>,
    pub high_quartile: Vec<usize>,
}

pub const REPORT_HEADER: &str = "dim,logstd_i,logstd_j,l1,weight_mass,grad_mass,is_key";

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn quartile(values: &[f64], low: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    if !low {
        idx.reverse();
    }
    let mut q: Vec<usize> = idx[..values.len() / 4].to_vec();
    q.sort_unstable();
    q
}

impl KeyElementReport {
    pub fn mean_l1(&self, dims: &[usize]) -> f64 {
        mean(dims.iter().map(|&d| self.dims[d].l1))
    }

    pub fn mean_grad(&self, dims: &[usize]) -> f64 {
        mean(dims.iter().map(|&d| self.dims[d].grad_mass))
    }

    /// Median gradient mass of the dimensions outside the key set.
    pub fn median_non_key_grad(&self) -> f64 {
        let mut v: Vec<f64> = self
            .dims
            .iter()
            .filter(|d| !d.is_key)
            .map(|d| d.grad_mass)
            .collect();
        if v.is_empty() {
            return f64::NAN;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{REPORT_HEADER}\n");
        for d in &self.dims {
            writeln!(
                s,
                "{},{},{},{},{},{},{}",
                d.dim,
                d.logstd_i,
                d.logstd_j,
                d.l1,
                d.weight_mass,
                d.grad_mass,
                u8::from(d.is_key)
            )
            .expect("write to string");
        }
        s
    }

    pub fn summary(&self) -> String {
        format!(
            "key={:?} l1_low={} l1_high={} grad_key={} grad_median_non_key={}",
            self.key,
            self.mean_l1(&self.low_quartile),
            self.mean_l1(&self.high_quartile),
            self.mean_grad(&self.key),
            self.median_non_key_grad()
        )
    }
}

/// Mean over frames of |∂(Σ pixels of decode(z))/∂z|, one value per dim.
pub fn output_gradient_mass<S: Scalar>(v: &VisionModel<S>, z: &Tensor<S>) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let p = v.bind_const(&mut g);
    let zn = g.param(z.clone());
    let out = VisionModel::decode_graph(&mut g, &p, zn)?;
    let total = g.sum(out)?;
    let grads = g.backward(total)?;
    let gz = g.grad_or_zeros(&grads, zn);
    let n = gz.rows();
    Ok((0..gz.cols())
        .map(|d| (0..n).map(|r| gz.at(r, d).as_f64().abs()).sum::<f64>() / n as f64)
        .collect())
}

/// Statistics over corresponding frames `(src[k], dst[k])` of environments
/// i and j. Decoder-side statistics use `vi`'s decoder.
pub fn key_element_report<S: Scalar>(
    vi: &VisionModel<S>,
    vj: &VisionModel<S>,
    src: &[Frame],
    dst: &[Frame],
) -> Result<KeyElementReport> {
    if src.len() != dst.len() || src.is_empty() {
        return Err(Error::Invalid(
            "key_element_report needs matching non-empty frame sets".into(),
        ));
    }
    let n = src.len();
    let mut ls_i = vec![0.0; LATENT_DIM];
    let mut ls_j = vec![0.0; LATENT_DIM];
    let mut l1 = vec![0.0; LATENT_DIM];
    let mut grad = vec![0.0; LATENT_DIM];
    for (s, d) in src.chunks(CHUNK).zip(dst.chunks(CHUNK)) {
        let (mi, li) = vi.encode_batch(s)?;
        let (mj, lj) = vj.encode_batch(d)?;
        for r in 0..s.len() {
            for k in 0..LATENT_DIM {
                ls_i[k] += 0.5 * li.at(r, k).as_f64();
                ls_j[k] += 0.5 * lj.at(r, k).as_f64();
                l1[k] += (mi.at(r, k).as_f64() - mj.at(r, k).as_f64()).abs();
            }
        }
        for (acc, v) in grad.iter_mut().zip(output_gradient_mass(vi, &mi)?) {
            *acc += v * s.len() as f64;
        }
    }
    let w = vi.params.get(DEC_W1);
    let dims: Vec<DimStats> = (0..LATENT_DIM)
        .map(|k| DimStats {
            dim: k,
            logstd_i: ls_i[k] / n as f64,
            logstd_j: ls_j[k] / n as f64,
            l1: l1[k] / n as f64,
            weight_mass: w.row(k).iter().map(|v| v.as_f64().abs()).sum(),
            grad_mass: grad[k] / n as f64,
            is_key: false,
        })
        .collect();
    let a: Vec<f64> = dims.iter().map(|d| d.logstd_i).collect();
    let b: Vec<f64> = dims.iter().map(|d| d.logstd_j).collect();
    let avg: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
    let (qa, qb) = (quartile(&a, true), quartile(&b, true));
    let key: Vec<usize> = qa.iter().copied().filter(|k| qb.contains(k)).collect();
    let mut dims = dims;
    for &k in &key {
        dims[k].is_key = true;
    }
    Ok(KeyElementReport {
        dims,
        key,
        low_quartile: quartile(&avg, true),
        high_quartile: quartile(&avg, false),
    })
}
