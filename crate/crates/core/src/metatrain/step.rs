//! Per-environment losses and gradients for the two training stages.
//!
//! Every function here only reads model parameters; optimizer updates
//! happen in the training loop once all environments have been evaluated.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::memory::{MemoryModel, MemoryNodes};
use crate::numcore::{Graph, NodeId, Scalar, Tensor};
use crate::vision::{
    frames_tensor, kl_free_bits, mean_frame_sse, reparameterize, VisionModel, VisionNodes,
    LATENT_DIM,
};

use super::batch::Batch;
use super::config::{LatentInput, LossWeights, TrainConfig};

/// Gaussian noise source; `None` means every latent is taken at its mean.
pub type Noise<'a> = Option<&'a mut dyn RngCore>;

fn latent<S: Scalar>(
    g: &mut Graph<S>,
    mu: NodeId,
    lv: NodeId,
    noise: &mut Noise<'_>,
) -> Result<NodeId> {
    match noise {
        Some(rng) => {
            let rows = g.shape(mu)[0];
            let eps = Tensor::standard_normal(&[rows, LATENT_DIM], &mut **rng);
            reparameterize(g, mu, lv, eps)
        }
        None => Ok(mu),
    }
}

/// Encodes frames `0..T−1` of `batch`, runs the memory cell over the
/// actions and returns the ((T−1)·B)×32 predicted latents, time-major.
/// With teacher forcing every step consumes the encoder latent of the true
/// frame; otherwise steps after the first consume the previous prediction.
pub fn predicted_latents<S: Scalar>(
    g: &mut Graph<S>,
    vp: &VisionNodes,
    mp: &MemoryNodes,
    batch: &Batch,
    teacher_forcing: bool,
    noise: &mut Noise<'_>,
) -> Result<NodeId> {
    let t = batch.seq_len();
    let b = batch.size();
    if t < 2 || b == 0 {
        return Err(Error::Invalid(format!(
            "batch of {b} windows of length {t} cannot be predicted"
        )));
    }
    let x = g.constant(frames_tensor(&batch.frames_time_major(0, t - 1))?);
    let (mu, lv) = VisionModel::encode_graph(g, vp, x)?;
    let z = latent(g, mu, lv, noise)?;
    let mut state = MemoryModel::zero_state(g, b);
    let mut preds = Vec::with_capacity(t - 1);
    for s in 0..t - 1 {
        let zin = match preds.last() {
            Some(&prev) if !teacher_forcing => prev,
            _ => g.slice(z, 0, s * b, b)?,
        };
        let (pm, plv, next) = MemoryModel::cell_graph(g, mp, zin, &batch.actions_at(s), state)?;
        state = next;
        preds.push(latent(g, pm, plv, noise)?);
    }
    g.concat(&preds, 0)
}

fn noise_for<'a>(cfg: &TrainConfig, rng: &'a mut dyn RngCore) -> Noise<'a> {
    match cfg.latent_input {
        LatentInput::Sampled => Some(rng),
        LatentInput::Mean => None,
    }
}

fn collect<S: Scalar>(
    g: &Graph<S>,
    grads: &crate::numcore::Gradients<S>,
    ids: &[NodeId],
) -> Vec<Tensor<S>> {
    ids.iter().map(|&id| g.grad_or_zeros(grads, id)).collect()
}

/// Prediction-stage result for one environment.
#[derive(Clone, Debug)]
pub struct PredOutcome<S> {
    /// Mean per-frame squared error of the decoded predictions.
    pub l_p: f64,
    pub vision_grads: Vec<Tensor<S>>,
    pub memory_grads: Vec<Tensor<S>>,
}

pub fn prediction_grads<S: Scalar>(
    vision: &VisionModel<S>,
    memory: &MemoryModel<S>,
    batch: &Batch,
    cfg: &TrainConfig,
    rng: &mut dyn RngCore,
) -> Result<PredOutcome<S>> {
    let mut g = Graph::new();
    let vp = vision.bind(&mut g);
    let mp = memory.bind(&mut g);
    let mut noise = noise_for(cfg, rng);
    let z = predicted_latents(&mut g, &vp, &mp, batch, cfg.teacher_forcing, &mut noise)?;
    let out = VisionModel::decode_graph(&mut g, &vp, z)?;
    let target = g.constant(frames_tensor(&batch.frames_time_major(1, batch.seq_len()))?);
    let lp = mean_frame_sse(&mut g, out, target)?;
    let loss = g.scale(lp, S::of(cfg.loss.beta_p))?;
    let grads = g.backward(loss)?;
    Ok(PredOutcome {
        l_p: g.value(lp).item().as_f64(),
        vision_grads: collect(&g, &grads, &vp.all()),
        memory_grads: collect(&g, &grads, &mp.all()),
    })
}

/// Batch statistics of an environment's posterior, used as the anchor of
/// the distribution-matching term.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentStats<S> {
    /// 1×32 batch mean of the posterior means.
    pub mean_mu: Tensor<S>,
    /// 1×32 batch mean of the posterior log standard deviations.
    pub mean_log_std: Tensor<S>,
}

impl<S: Scalar> LatentStats<S> {
    pub fn from_posterior(mu: &Tensor<S>, logvar: &Tensor<S>) -> Self {
        let mean = |t: &Tensor<S>, k: f64| {
            let (n, d) = (t.rows(), t.cols());
            let mut out = vec![0.0f64; d];
            for r in 0..n {
                for (o, v) in out.iter_mut().zip(t.row(r)) {
                    *o += v.as_f64();
                }
            }
            let data: Vec<f64> = out.iter().map(|v| k * v / n as f64).collect();
            Tensor::from_f64(&[1, d], &data).expect("stat shape")
        };
        Self {
            mean_mu: mean(mu, 1.0),
            mean_log_std: mean(logvar, 0.5),
        }
    }
}

/// `η_μ‖a.mean_mu − b.mean_mu‖² + η_σ‖a.mean_log_std − b.mean_log_std‖²`.
pub fn mmd_value<S: Scalar>(a: &LatentStats<S>, b: &LatentStats<S>, w: &LossWeights) -> f64 {
    let sq = |x: &Tensor<S>, y: &Tensor<S>| -> f64 {
        x.data()
            .iter()
            .zip(y.data())
            .map(|(p, q)| (p.as_f64() - q.as_f64()).powi(2))
            .sum()
    };
    w.eta_mu * sq(&a.mean_mu, &b.mean_mu) + w.eta_sigma * sq(&a.mean_log_std, &b.mean_log_std)
}

/// Graph form of [`mmd_value`] with the anchor statistics held constant.
pub fn mmd_graph<S: Scalar>(
    g: &mut Graph<S>,
    mu: NodeId,
    logvar: NodeId,
    anchor: &LatentStats<S>,
    w: &LossWeights,
) -> Result<NodeId> {
    let m = g.mean_rows(mu)?;
    let am = g.constant(anchor.mean_mu.clone());
    let dm = g.sub(m, am)?;
    let dm = g.square(dm)?;
    let dm = g.sum(dm)?;
    let ls = g.scale(logvar, S::of(0.5))?;
    let s = g.mean_rows(ls)?;
    let a_s = g.constant(anchor.mean_log_std.clone());
    let ds = g.sub(s, a_s)?;
    let ds = g.square(ds)?;
    let ds = g.sum(ds)?;
    let dm = g.scale(dm, S::of(w.eta_mu))?;
    let ds = g.scale(ds, S::of(w.eta_sigma))?;
    g.add(dm, ds)
}

/// Reconstruction-stage result for one environment.
#[derive(Clone, Debug)]
pub struct ReconOutcome<S> {
    pub l_r: f64,
    /// Batch-mean KL of the posterior against the unit Gaussian.
    pub l_kl: f64,
    /// Distance to the anchor statistics (only when an anchor was given).
    pub l_mmd: Option<f64>,
    pub stats: LatentStats<S>,
    pub vision_grads: Vec<Tensor<S>>,
}

/// Reconstruction loss plus the KL penalty, and for a non-anchor
/// environment the weighted distance to `anchor`. The distance enters the
/// objective only when `eta > 0`; it is reported either way.
pub fn reconstruction_grads<S: Scalar>(
    vision: &VisionModel<S>,
    batch: &Batch,
    cfg: &TrainConfig,
    anchor: Option<&LatentStats<S>>,
    rng: &mut dyn RngCore,
) -> Result<ReconOutcome<S>> {
    let w = &cfg.loss;
    let mut g = Graph::new();
    let vp = vision.bind(&mut g);
    let x = g.constant(frames_tensor(&batch.frames_time_major(0, batch.seq_len()))?);
    let (mu, lv) = VisionModel::encode_graph(&mut g, &vp, x)?;
    let mut noise = noise_for(cfg, rng);
    let z = latent(&mut g, mu, lv, &mut noise)?;
    let out = VisionModel::decode_graph(&mut g, &vp, z)?;
    let lr = mean_frame_sse(&mut g, out, x)?;
    let (pen, raw) = kl_free_bits(&mut g, mu, lv, w.free_bits)?;
    let a = g.scale(lr, S::of(w.beta_r))?;
    let b = g.scale(pen, S::of(w.kl_weight))?;
    let mut loss = g.add(a, b)?;
    let stats = LatentStats::from_posterior(g.value(mu), g.value(lv));
    let l_mmd = match anchor {
        Some(anchor) => {
            let m = mmd_graph(&mut g, mu, lv, anchor, w)?;
            if w.eta > 0.0 {
                let m = g.scale(m, S::of(w.eta))?;
                loss = g.add(loss, m)?;
            }
            Some(g.value(m).item().as_f64())
        }
        None => None,
    };
    let grads = g.backward(loss)?;
    Ok(ReconOutcome {
        l_r: g.value(lr).item().as_f64(),
        l_kl: g.value(raw).item().as_f64(),
        l_mmd,
        stats,
        vision_grads: collect(&g, &grads, &vp.all()),
    })
}
