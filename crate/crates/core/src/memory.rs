//! Shared recurrent memory model: an LSTM cell over `[z, one_hot(a)]` with
//! a linear head producing the next latent's diagonal Gaussian.

use rand::Rng;

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::numcore::{Graph, NodeId, ParamSet, Scalar, Tensor};
use crate::pongsim::{Action, NUM_ACTIONS};
use crate::vision::{
    frames_tensor, recon_loss, reparameterize, to_f64, FrameProb, GaussianParams, LatentVec,
    VisionModel, LATENT_DIM, LOGVAR_MAX, LOGVAR_MIN,
};

pub const HIDDEN_UNITS: usize = 32;
const INPUT_DIM: usize = LATENT_DIM + NUM_ACTIONS;
const GATES: usize = 4 * HIDDEN_UNITS;

pub const PARAM_NAMES: [&str; 5] = ["lstm.wx", "lstm.wh", "lstm.b", "head.w", "head.b"];

/// Recurrent state: output `h` and cell `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct Hidden {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

pub fn init_hidden() -> Hidden {
    Hidden {
        h: vec![0.0; HIDDEN_UNITS],
        c: vec![0.0; HIDDEN_UNITS],
    }
}

impl Hidden {
    pub fn norm(&self) -> f64 {
        self.h
            .iter()
            .chain(&self.c)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MemoryNodes {
    pub wx: NodeId,
    pub wh: NodeId,
    pub b: NodeId,
    pub head_w: NodeId,
    pub head_b: NodeId,
}

impl MemoryNodes {
    fn from_ids(ids: &[NodeId]) -> Self {
        Self {
            wx: ids[0],
            wh: ids[1],
            b: ids[2],
            head_w: ids[3],
            head_b: ids[4],
        }
    }

    pub fn all(&self) -> [NodeId; 5] {
        [self.wx, self.wh, self.b, self.head_w, self.head_b]
    }
}

/// Graph-side recurrent state for a batch.
#[derive(Clone, Copy, Debug)]
pub struct HiddenNodes {
    pub h: NodeId,
    pub c: NodeId,
}

/// Whether latents are drawn from their Gaussians or taken at the mean.
pub enum LatentMode<'a, R: Rng + ?Sized> {
    Sample(&'a mut R),
    Mean,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryModel<S> {
    pub params: ParamSet<S>,
}

fn one_hot<S: Scalar>(actions: &[Action]) -> Tensor<S> {
    let mut data = vec![S::zero(); actions.len() * NUM_ACTIONS];
    for (i, a) in actions.iter().enumerate() {
        data[i * NUM_ACTIONS + a.index()] = S::one();
    }
    Tensor::new(&[actions.len(), NUM_ACTIONS], data).expect("one-hot shape")
}

impl<S: Scalar> MemoryModel<S> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let lim = |fi: usize, fo: usize| (6.0 / (fi + fo) as f64).sqrt();
        params.push(
            PARAM_NAMES[0],
            Tensor::uniform(&[INPUT_DIM, GATES], lim(INPUT_DIM, GATES), rng),
        );
        params.push(
            PARAM_NAMES[1],
            Tensor::uniform(&[HIDDEN_UNITS, GATES], lim(HIDDEN_UNITS, GATES), rng),
        );
        // forget-gate bias starts at 1
        let mut b = vec![S::zero(); GATES];
        for v in &mut b[HIDDEN_UNITS..2 * HIDDEN_UNITS] {
            *v = S::one();
        }
        params.push(
            PARAM_NAMES[2],
            Tensor::new(&[GATES], b).expect("bias shape"),
        );
        params.push(
            PARAM_NAMES[3],
            Tensor::uniform(
                &[HIDDEN_UNITS, 2 * LATENT_DIM],
                lim(HIDDEN_UNITS, 2 * LATENT_DIM),
                rng,
            ),
        );
        params.push(PARAM_NAMES[4], Tensor::zeros(&[2 * LATENT_DIM]));
        Self { params }
    }

    pub fn from_params(params: ParamSet<S>) -> Result<Self> {
        let want: [&[usize]; 5] = [
            &[INPUT_DIM, GATES],
            &[HIDDEN_UNITS, GATES],
            &[GATES],
            &[HIDDEN_UNITS, 2 * LATENT_DIM],
            &[2 * LATENT_DIM],
        ];
        if params.names() != PARAM_NAMES {
            return Err(Error::Shape(format!(
                "memory: expected parameters {PARAM_NAMES:?}, got {:?}",
                params.names()
            )));
        }
        for ((name, t), w) in params.iter().zip(want) {
            if t.shape() != w {
                return Err(Error::Shape(format!(
                    "memory: {name} has shape {:?}, expected {w:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self { params })
    }

    pub fn bind(&self, g: &mut Graph<S>) -> MemoryNodes {
        MemoryNodes::from_ids(&self.params.bind(g))
    }

    pub fn bind_const(&self, g: &mut Graph<S>) -> MemoryNodes {
        let ids: Vec<NodeId> = self
            .params
            .tensors()
            .iter()
            .map(|t| g.constant(t.clone()))
            .collect();
        MemoryNodes::from_ids(&ids)
    }

    pub fn zero_state(g: &mut Graph<S>, batch: usize) -> HiddenNodes {
        HiddenNodes {
            h: g.constant(Tensor::zeros(&[batch, HIDDEN_UNITS])),
            c: g.constant(Tensor::zeros(&[batch, HIDDEN_UNITS])),
        }
    }

    /// One cell step for a batch. `z`: n×32, `actions`: n one-hot rows.
    /// Returns the next latent's (mu, logvar) and the next state.
    pub fn cell_graph(
        g: &mut Graph<S>,
        p: &MemoryNodes,
        z: NodeId,
        actions: &[Action],
        state: HiddenNodes,
    ) -> Result<(NodeId, NodeId, HiddenNodes)> {
        let a = g.constant(one_hot(actions));
        let x = g.concat(&[z, a], 1)?;
        let gx = g.matmul(x, p.wx)?;
        let gh = g.matmul(state.h, p.wh)?;
        let pre = g.add(gx, gh)?;
        let pre = g.add_bias(pre, p.b)?;
        let n = HIDDEN_UNITS;
        let i = g.slice(pre, 1, 0, n)?;
        let i = g.sigmoid(i)?;
        let f = g.slice(pre, 1, n, n)?;
        let f = g.sigmoid(f)?;
        let cand = g.slice(pre, 1, 2 * n, n)?;
        let cand = g.tanh(cand)?;
        let o = g.slice(pre, 1, 3 * n, n)?;
        let o = g.sigmoid(o)?;
        let keep = g.mul(f, state.c)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c)?;
        let h = g.mul(o, tc)?;
        let out = g.matmul(h, p.head_w)?;
        let out = g.add_bias(out, p.head_b)?;
        let mu = g.slice(out, 1, 0, LATENT_DIM)?;
        let lv = g.slice(out, 1, LATENT_DIM, LATENT_DIM)?;
        let lv = g.clamp(lv, S::of(LOGVAR_MIN), S::of(LOGVAR_MAX))?;
        Ok((mu, lv, HiddenNodes { h, c }))
    }

    /// Single-sample prediction of the next latent distribution.
    pub fn predict(
        &self,
        z: &LatentVec,
        a: Action,
        hidden: &Hidden,
    ) -> Result<(GaussianParams, Hidden)> {
        if z.0.len() != LATENT_DIM
            || hidden.h.len() != HIDDEN_UNITS
            || hidden.c.len() != HIDDEN_UNITS
        {
            return Err(Error::Shape(
                "predict: latent or hidden has wrong size".into(),
            ));
        }
        let row = |v: &[f64]| Tensor::new(&[1, v.len()], v.iter().map(|&x| S::of(x)).collect());
        let mut g = Graph::new();
        let p = self.bind_const(&mut g);
        let zn = g.constant(row(&z.0)?);
        let state = HiddenNodes {
            h: g.constant(row(&hidden.h)?),
            c: g.constant(row(&hidden.c)?),
        };
        let (mu, lv, next) = Self::cell_graph(&mut g, &p, zn, &[a], state)?;
        let params = GaussianParams::new(to_f64(g.value(mu).data()), to_f64(g.value(lv).data()))?;
        let hidden = Hidden {
            h: to_f64(g.value(next.h).data()),
            c: to_f64(g.value(next.c).data()),
        };
        Ok((params, hidden))
    }
}

/// Teacher-forced prediction along one sequence: encode every frame but the
/// last, step the cell with each action, and decode each predicted latent
/// through `vision`'s decoder. Returns T−1 frames (predictions of frames
/// 2..=T) and the final recurrent state.
pub fn rollout_predict<S: Scalar, R: Rng + ?Sized>(
    memory: &MemoryModel<S>,
    vision: &VisionModel<S>,
    frames: &[Frame],
    actions: &[Action],
    mut mode: LatentMode<'_, R>,
) -> Result<(Vec<FrameProb>, Hidden)> {
    if frames.len() < 2 {
        return Err(Error::Invalid(
            "rollout_predict needs at least two frames".into(),
        ));
    }
    if actions.len() + 1 != frames.len() {
        return Err(Error::Invalid(format!(
            "rollout_predict: {} frames need {} actions, got {}",
            frames.len(),
            frames.len() - 1,
            actions.len()
        )));
    }
    let mut g = Graph::new();
    let vp = vision.bind_const(&mut g);
    let mp = memory.bind_const(&mut g);
    let x = g.constant(frames_tensor::<S>(&frames[..frames.len() - 1])?);
    let (mu, lv) = VisionModel::encode_graph(&mut g, &vp, x)?;
    let steps = actions.len();
    let z = match &mut mode {
        LatentMode::Sample(rng) => {
            let eps = Tensor::standard_normal(&[steps, LATENT_DIM], *rng);
            reparameterize(&mut g, mu, lv, eps)?
        }
        LatentMode::Mean => mu,
    };
    let mut state = MemoryModel::zero_state(&mut g, 1);
    let mut preds = Vec::with_capacity(steps);
    for (t, &a) in actions.iter().enumerate() {
        let zt = g.slice(z, 0, t, 1)?;
        let (pm, plv, next) = MemoryModel::cell_graph(&mut g, &mp, zt, &[a], state)?;
        state = next;
        let zn = match &mut mode {
            LatentMode::Sample(rng) => {
                let eps = Tensor::standard_normal(&[1, LATENT_DIM], *rng);
                reparameterize(&mut g, pm, plv, eps)?
            }
            LatentMode::Mean => pm,
        };
        preds.push(zn);
    }
    let all = g.concat(&preds, 0)?;
    let out = VisionModel::decode_graph(&mut g, &vp, all)?;
    let probs = g.value(out);
    let frames_out = (0..steps)
        .map(|t| FrameProb(to_f64(probs.row(t))))
        .collect();
    let hidden = Hidden {
        h: to_f64(g.value(state.h).data()),
        c: to_f64(g.value(state.c).data()),
    };
    Ok((frames_out, hidden))
}

/// Sum over steps of the per-frame squared error.
pub fn pred_loss(preds: &[FrameProb], targets: &[Frame]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::Invalid(format!(
            "pred_loss: {} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    Ok(preds
        .iter()
        .zip(targets)
        .map(|(p, t)| recon_loss(p, t))
        .sum())
}
