//! Per-environment variational vision model.
//!
//! The "mini" preset is fully connected: encoder 4096→256 (tanh)→32+32,
//! decoder 32→256 (tanh)→4096 (sigmoid). Log-variances are clamped to
//! [`LOGVAR_MIN`, `LOGVAR_MAX`].

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Frame, FRAME_PIXELS};
use crate::numcore::{Graph, NodeId, ParamSet, Scalar, Tensor};

pub const LATENT_DIM: usize = 32;
pub const HIDDEN_DIM: usize = 256;
pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ArchPreset {
    #[default]
    Mini,
    Paper,
}

impl ArchPreset {
    pub fn name(self) -> &'static str {
        match self {
            ArchPreset::Mini => "mini",
            ArchPreset::Paper => "paper",
        }
    }

    pub fn ensure_available(self) -> Result<()> {
        match self {
            ArchPreset::Mini => Ok(()),
            ArchPreset::Paper => Err(Error::Invalid(
                "architecture preset \"paper\" needs a strided convolution primitive, \
                 which this build does not provide; use \"mini\""
                    .into(),
            )),
        }
    }
}

impl fmt::Display for ArchPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mini" => Ok(ArchPreset::Mini),
            "paper" => Ok(ArchPreset::Paper),
            _ => Err(Error::Invalid(format!("unknown architecture preset {s:?}"))),
        }
    }
}

/// Diagonal Gaussian over the latent space.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl GaussianParams {
    pub fn new(mu: Vec<f64>, logvar: Vec<f64>) -> Result<Self> {
        if mu.len() != logvar.len() {
            return Err(Error::Shape(format!(
                "gaussian: mu has {} dims, logvar {}",
                mu.len(),
                logvar.len()
            )));
        }
        let logvar = logvar
            .into_iter()
            .map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX))
            .collect();
        Ok(Self { mu, logvar })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn log_std(&self) -> impl Iterator<Item = f64> + '_ {
        self.logvar.iter().map(|v| v / 2.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentVec(pub Vec<f64>);

/// Decoder output: per-pixel probabilities in (0, 1).
#[derive(Clone, Debug, PartialEq)]
pub struct FrameProb(pub Vec<f64>);

/// `z = mu + exp(logvar/2)·ε`, ε ~ N(0, I).
pub fn sample_latent<R: Rng + ?Sized>(params: &GaussianParams, rng: &mut R) -> LatentVec {
    let eps = Tensor::<f64>::standard_normal(&[params.dim()], rng);
    LatentVec(
        params
            .mu
            .iter()
            .zip(&params.logvar)
            .zip(eps.data())
            .map(|((m, lv), e)| m + (lv / 2.0).exp() * e)
            .collect(),
    )
}

/// Squared-error distance summed over pixels.
pub fn recon_loss(pred: &FrameProb, target: &Frame) -> f64 {
    pred.0
        .iter()
        .zip(target.pixels())
        .map(|(p, t)| {
            let d = p - t as f64;
            d * d
        })
        .sum()
}

/// KL divergence from the unit Gaussian prior.
pub fn kl_loss(params: &GaussianParams) -> f64 {
    params
        .mu
        .iter()
        .zip(&params.logvar)
        .map(|(m, lv)| 0.5 * (lv.exp() + m * m - 1.0 - lv))
        .sum()
}

/// Graph handles of a bound [`VisionModel`].
#[derive(Clone, Copy, Debug)]
pub struct VisionNodes {
    pub enc_w1: NodeId,
    pub enc_b1: NodeId,
    pub enc_w2: NodeId,
    pub enc_b2: NodeId,
    pub dec_w1: NodeId,
    pub dec_b1: NodeId,
    pub dec_w2: NodeId,
    pub dec_b2: NodeId,
}

impl VisionNodes {
    fn from_ids(ids: &[NodeId]) -> Self {
        Self {
            enc_w1: ids[0],
            enc_b1: ids[1],
            enc_w2: ids[2],
            enc_b2: ids[3],
            dec_w1: ids[4],
            dec_b1: ids[5],
            dec_w2: ids[6],
            dec_b2: ids[7],
        }
    }

    pub fn all(&self) -> [NodeId; 8] {
        [
            self.enc_w1,
            self.enc_b1,
            self.enc_w2,
            self.enc_b2,
            self.dec_w1,
            self.dec_b1,
            self.dec_w2,
            self.dec_b2,
        ]
    }
}

pub const PARAM_NAMES: [&str; 8] = [
    "enc.w1", "enc.b1", "enc.w2", "enc.b2", "dec.w1", "dec.b1", "dec.w2", "dec.b2",
];

/// Index of the first decoder weight matrix (latent → hidden) in the params.
pub const DEC_W1: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct VisionModel<S> {
    pub preset: ArchPreset,
    pub params: ParamSet<S>,
}

fn glorot<S: Scalar, R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<S> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(&[fan_in, fan_out], limit, rng)
}

impl<S: Scalar> VisionModel<S> {
    pub fn new<R: Rng + ?Sized>(preset: ArchPreset, rng: &mut R) -> Result<Self> {
        preset.ensure_available()?;
        let mut params = ParamSet::new();
        for (i, &[fi, fo]) in Self::expected_shapes().iter().enumerate() {
            params.push(PARAM_NAMES[2 * i], glorot(fi, fo, rng));
            params.push(PARAM_NAMES[2 * i + 1], Tensor::zeros(&[fo]));
        }
        Ok(Self { preset, params })
    }

    fn expected_shapes() -> [[usize; 2]; 4] {
        [
            [FRAME_PIXELS, HIDDEN_DIM],
            [HIDDEN_DIM, 2 * LATENT_DIM],
            [LATENT_DIM, HIDDEN_DIM],
            [HIDDEN_DIM, FRAME_PIXELS],
        ]
    }

    /// Rebuilds a model from named tensors, checking every shape.
    pub fn from_params(preset: ArchPreset, params: ParamSet<S>) -> Result<Self> {
        preset.ensure_available()?;
        if params.names() != PARAM_NAMES {
            return Err(Error::Shape(format!(
                "vision: expected parameters {PARAM_NAMES:?}, got {:?}",
                params.names()
            )));
        }
        for (i, (name, got)) in params.iter().enumerate() {
            let [fi, fo] = Self::expected_shapes()[i / 2];
            let ok = if i % 2 == 0 {
                got.shape() == [fi, fo]
            } else {
                got.shape() == [fo]
            };
            if !ok {
                return Err(Error::Shape(format!(
                    "vision: {name} has unexpected shape {:?}",
                    got.shape()
                )));
            }
        }
        Ok(Self { preset, params })
    }

    pub fn bind(&self, g: &mut Graph<S>) -> VisionNodes {
        VisionNodes::from_ids(&self.params.bind(g))
    }

    /// Binds the parameters as constants, for evaluation passes.
    pub fn bind_const(&self, g: &mut Graph<S>) -> VisionNodes {
        let ids: Vec<NodeId> = self
            .params
            .tensors()
            .iter()
            .map(|t| g.constant(t.clone()))
            .collect();
        VisionNodes::from_ids(&ids)
    }

    /// `x`: n×4096 → (mu, logvar), each n×32.
    pub fn encode_graph(g: &mut Graph<S>, p: &VisionNodes, x: NodeId) -> Result<(NodeId, NodeId)> {
        let h = g.matmul(x, p.enc_w1)?;
        let h = g.add_bias(h, p.enc_b1)?;
        let h = g.tanh(h)?;
        let o = g.matmul(h, p.enc_w2)?;
        let o = g.add_bias(o, p.enc_b2)?;
        let mu = g.slice(o, 1, 0, LATENT_DIM)?;
        let lv = g.slice(o, 1, LATENT_DIM, LATENT_DIM)?;
        let lv = g.clamp(lv, S::of(LOGVAR_MIN), S::of(LOGVAR_MAX))?;
        Ok((mu, lv))
    }

    /// `z`: n×32 → n×4096 pixel probabilities.
    pub fn decode_graph(g: &mut Graph<S>, p: &VisionNodes, z: NodeId) -> Result<NodeId> {
        let h = g.matmul(z, p.dec_w1)?;
        let h = g.add_bias(h, p.dec_b1)?;
        let h = g.tanh(h)?;
        let o = g.matmul(h, p.dec_w2)?;
        let o = g.add_bias(o, p.dec_b2)?;
        g.sigmoid(o)
    }

    pub fn encode(&self, frame: &Frame) -> Result<GaussianParams> {
        let (mu, lv) = self.encode_batch(std::slice::from_ref(frame))?;
        GaussianParams::new(to_f64(mu.data()), to_f64(lv.data()))
    }

    /// Posterior means and log-variances for a batch of frames (n×32 each).
    pub fn encode_batch(&self, frames: &[Frame]) -> Result<(Tensor<S>, Tensor<S>)> {
        let mut g = Graph::new();
        let p = self.bind_const(&mut g);
        let x = g.constant(frames_tensor(frames)?);
        let (mu, lv) = Self::encode_graph(&mut g, &p, x)?;
        Ok((g.value(mu).clone(), g.value(lv).clone()))
    }

    pub fn decode(&self, z: &LatentVec) -> Result<FrameProb> {
        let zt = Tensor::new(&[1, z.0.len()], z.0.iter().map(|&v| S::of(v)).collect())?;
        let out = self.decode_batch(&zt)?;
        Ok(FrameProb(to_f64(out.data())))
    }

    /// `z`: n×32 latents → n×4096 probabilities.
    pub fn decode_batch(&self, z: &Tensor<S>) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let p = self.bind_const(&mut g);
        let zn = g.constant(z.clone());
        let out = Self::decode_graph(&mut g, &p, zn)?;
        Ok(g.value(out).clone())
    }
}

pub(crate) fn to_f64<S: Scalar>(v: &[S]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

/// Stacks frames into an n×4096 tensor of 0/1 values.
pub fn frames_tensor<S: Scalar>(frames: &[Frame]) -> Result<Tensor<S>> {
    if frames.is_empty() {
        return Err(Error::Invalid("no frames to stack".into()));
    }
    let mut data = vec![S::zero(); frames.len() * FRAME_PIXELS];
    for (f, chunk) in frames.iter().zip(data.chunks_exact_mut(FRAME_PIXELS)) {
        f.write_f(chunk);
    }
    Tensor::new(&[frames.len(), FRAME_PIXELS], data)
}

/// `mu + exp(logvar/2)·eps` recorded on the graph.
pub fn reparameterize<S: Scalar>(
    g: &mut Graph<S>,
    mu: NodeId,
    logvar: NodeId,
    eps: Tensor<S>,
) -> Result<NodeId> {
    let half = g.scale(logvar, S::of(0.5))?;
    let std = g.exp(half)?;
    let e = g.constant(eps);
    let noise = g.mul(std, e)?;
    g.add(mu, noise)
}

/// Mean over rows of the per-row summed squared error.
pub fn mean_frame_sse<S: Scalar>(g: &mut Graph<S>, pred: NodeId, target: NodeId) -> Result<NodeId> {
    let rows = g.value(pred).rows();
    let s = g.squared_error(pred, target)?;
    g.scale(s, S::one() / S::of(rows as f64))
}

/// Batch-averaged KL per latent dimension with a free-information floor:
/// dimensions below `floor` nats carry no penalty. Returns the penalty
/// `Σ_d max(KL_d − floor, 0)` and the raw per-frame KL `Σ_d KL_d`.
pub fn kl_free_bits<S: Scalar>(
    g: &mut Graph<S>,
    mu: NodeId,
    logvar: NodeId,
    floor: f64,
) -> Result<(NodeId, NodeId)> {
    let var = g.exp(logvar)?;
    let mu2 = g.square(mu)?;
    let a = g.add(var, mu2)?;
    let b = g.sub(a, logvar)?;
    let b = g.add_scalar(b, -S::one())?;
    let per = g.scale(b, S::of(0.5))?;
    let per_dim = g.mean_rows(per)?;
    let raw = g.sum(per_dim)?;
    let excess = g.add_scalar(per_dim, S::of(-floor))?;
    let excess = g.clamp(excess, S::zero(), S::infinity())?;
    let penalty = g.sum(excess)?;
    Ok((penalty, raw))
}
