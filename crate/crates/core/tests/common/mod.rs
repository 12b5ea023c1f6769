//! Oracles and fixtures shared by the integration test targets.
#![allow(dead_code)]

use metaworld::frame::{Frame, FRAME_SIZE};
use metaworld::memory::{MemoryModel, MemoryNodes};
use metaworld::metatrain::{Batch, TrainConfig, Window};
use metaworld::numcore::{Graph, NodeId, Tensor};
use metaworld::pongsim::rollout;
use metaworld::transforms::TransformKind;
use metaworld::vision::{
    kl_free_bits, mean_frame_sse, reparameterize, ArchPreset, VisionModel, VisionNodes, LATENT_DIM,
};
use metaworld::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniformly random bits, not simulator frames: the transforms must hold
/// for every binary image.
pub fn random_frame(rng: &mut impl Rng) -> Frame {
    let mut rows = [0u64; FRAME_SIZE];
    for r in &mut rows {
        *r = rng.random();
    }
    Frame::from_rows(rows)
}

/// Source pixel read by `kind` at output position (r, c), written as an
/// index map rather than bit arithmetic.
pub fn oracle_pixel(kind: TransformKind, f: &Frame, r: usize, c: usize) -> bool {
    let n = FRAME_SIZE;
    match kind {
        TransformKind::Identity => f.get(r, c),
        TransformKind::Transpose => f.get(c, r),
        TransformKind::HorizontalSwap => f.get(r, (c + n / 2) % n),
        TransformKind::ColorInvert => !f.get(r, c),
        TransformKind::Mirror => f.get(r, n - 1 - c),
        TransformKind::VerticalSwap => f.get((r + n / 2) % n, c),
    }
}

/// |autodiff − central difference| / max(1, |central difference|).
pub fn rel_err(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / fd.abs().max(1.0)
}

fn scalarize(g: &mut Graph<f64>, out: NodeId, proj: &Option<Tensor<f64>>) -> Result<NodeId> {
    match proj {
        None => Ok(out),
        Some(w) => {
            let w = g.constant(w.clone());
            let p = g.mul(out, w)?;
            g.sum(p)
        }
    }
}

/// Compares reverse-mode gradients of `build` against central differences.
/// Every input is perturbed, so constants belong inside `build`.
/// Non-scalar outputs are reduced with a fixed random projection. With
/// `sample = Some(k)` only `k` random coordinates per input are perturbed.
/// Returns the largest relative error.
pub fn grad_check<F>(
    params: &[Tensor<f64>],
    sample: Option<usize>,
    seed: u64,
    build: F,
) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut rng = rng(seed);
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = build(&mut g, &ids)?;
    let proj = (!g.value(out).is_scalar()).then(|| Tensor::uniform(g.shape(out), 1.0, &mut rng));
    let loss = scalarize(&mut g, out, &proj)?;
    let grads = g.backward(loss)?;

    let value_at = |ps: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = ps.iter().map(|p| g.constant(p.clone())).collect();
        let out = build(&mut g, &ids)?;
        let loss = scalarize(&mut g, out, &proj)?;
        Ok(g.value(loss).item())
    };

    let mut worst = 0.0f64;
    let mut work = params.to_vec();
    for (i, p) in params.iter().enumerate() {
        let ad = g.grad_or_zeros(&grads, ids[i]);
        let coords: Vec<usize> = match sample {
            Some(k) if k < p.len() => (0..k).map(|_| rng.random_range(0..p.len())).collect(),
            _ => (0..p.len()).collect(),
        };
        for j in coords {
            let x = p.data()[j];
            work[i].data_mut()[j] = x + FD_STEP;
            let up = value_at(&work)?;
            work[i].data_mut()[j] = x - FD_STEP;
            let down = value_at(&work)?;
            work[i].data_mut()[j] = x;
            let fd = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(ad.data()[j], fd));
        }
    }
    Ok(worst)
}

fn normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::standard_normal(shape, rng)
}

/// Standard normal values at least `gap` away from every point in `kinks`,
/// so a central difference never straddles a kink.
fn normal_avoiding(shape: &[usize], kinks: &[f64], gap: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut t = normal(shape, rng);
    for v in t.data_mut() {
        while kinks.iter().any(|k| (*v - k).abs() < gap) {
            *v = rng.random::<f64>() * 4.0 - 2.0;
        }
    }
    t
}

fn binary(shape: &[usize], density: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| f64::from(u8::from(rng.random_bool(density))))
        .collect();
    Tensor::new(shape, data).expect("shape")
}

type Build = Box<dyn Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>>;
type Inputs = Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>>;

/// One gradient-check case: random inputs for an instance seed, the graph
/// under test and how many coordinates per input to perturb.
pub struct Case {
    pub name: &'static str,
    pub inputs: Inputs,
    pub build: Build,
    pub sample: Option<usize>,
}

fn case(
    name: &'static str,
    inputs: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>> + 'static,
    build: impl Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId> + 'static,
) -> Case {
    Case {
        name,
        inputs: Box::new(inputs),
        build: Box::new(build),
        sample: None,
    }
}

impl Case {
    fn sampled(mut self, k: usize) -> Self {
        self.sample = Some(k);
        self
    }
}

fn vision_nodes(ids: &[NodeId]) -> VisionNodes {
    VisionNodes {
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

fn memory_nodes(ids: &[NodeId]) -> MemoryNodes {
    MemoryNodes {
        wx: ids[0],
        wh: ids[1],
        b: ids[2],
        head_w: ids[3],
        head_b: ids[4],
    }
}

/// A short batch from real rollouts.
pub fn tiny_batch(windows: usize, seq_len: usize, seed: u64) -> Batch {
    Batch {
        windows: (0..windows)
            .map(|w| {
                let traj = rollout(seed + w as u64, seq_len + 5).expect("rollout");
                Window::cut(&traj, w, w % 5, seq_len).expect("window")
            })
            .collect(),
    }
}

/// Every differentiable primitive plus the composite losses and the full
/// vision and recurrent graphs.
pub fn gradient_cases() -> Vec<Case> {
    let unary = |name: &'static str, f: fn(&mut Graph<f64>, NodeId) -> Result<NodeId>| {
        case(name, |r| vec![normal(&[3, 4], r)], move |g, x| f(g, x[0]))
    };
    let binary_op = |name: &'static str,
                     f: fn(&mut Graph<f64>, NodeId, NodeId) -> Result<NodeId>| {
        case(
            name,
            |r| vec![normal(&[3, 4], r), normal(&[3, 4], r)],
            move |g, x| f(g, x[0], x[1]),
        )
    };
    let mut cases = vec![
        case(
            "matmul",
            |r| vec![normal(&[3, 4], r), normal(&[4, 2], r)],
            |g, x| g.matmul(x[0], x[1]),
        ),
        case(
            "matmul_sparse_left",
            |r| vec![binary(&[2, 4096], 0.02, r), normal(&[4096, 3], r)],
            |g, x| g.matmul(x[0], x[1]),
        )
        .sampled(64),
        binary_op("add", |g, a, b| g.add(a, b)),
        binary_op("sub", |g, a, b| g.sub(a, b)),
        binary_op("mul", |g, a, b| g.mul(a, b)),
        binary_op("squared_error", |g, a, b| g.squared_error(a, b)),
        case(
            "add_bias",
            |r| vec![normal(&[3, 4], r), normal(&[1, 4], r)],
            |g, x| g.add_bias(x[0], x[1]),
        ),
        unary("sigmoid", |g, a| g.sigmoid(a)),
        unary("tanh", |g, a| g.tanh(a)),
        unary("exp", |g, a| g.exp(a)),
        case(
            "log",
            |r| vec![Tensor::uniform(&[3, 4], 1.0, r).map(|v| v + 1.5)],
            |g, x| g.log(x[0]),
        ),
        unary("neg", |g, a| g.neg(a)),
        unary("square", |g, a| g.square(a)),
        unary("scale", |g, a| g.scale(a, -1.7)),
        unary("add_scalar", |g, a| g.add_scalar(a, 0.3)),
        case(
            "clamp",
            |r| vec![normal_avoiding(&[3, 4], &[-0.5, 0.5], 1e-3, r)],
            |g, x| g.clamp(x[0], -0.5, 0.5),
        ),
        unary("sum", |g, a| g.sum(a)),
        unary("mean", |g, a| g.mean(a)),
        unary("sum_rows", |g, a| g.sum_rows(a)),
        unary("mean_rows", |g, a| g.mean_rows(a)),
        unary("reshape", |g, a| g.reshape(a, &[2, 6])),
        unary("slice_rows", |g, a| g.slice(a, 0, 1, 2)),
        unary("slice_cols", |g, a| g.slice(a, 1, 1, 2)),
        case(
            "concat_rows",
            |r| vec![normal(&[2, 3], r), normal(&[1, 3], r)],
            |g, x| g.concat(&[x[0], x[1]], 0),
        ),
        case(
            "concat_cols",
            |r| vec![normal(&[2, 3], r), normal(&[2, 2], r)],
            |g, x| g.concat(&[x[0], x[1]], 1),
        ),
        case(
            "reparameterize",
            |r| vec![normal(&[3, 4], r), normal(&[3, 4], r)],
            |g, x| reparameterize(g, x[0], x[1], normal(&[3, 4], &mut rng(7))),
        ),
        case(
            "kl_free_bits",
            |r| vec![normal(&[3, 4], r), normal(&[3, 4], r)],
            |g, x| {
                let (penalty, raw) = kl_free_bits(g, x[0], x[1], 0.0)?;
                let half = g.scale(raw, 0.5)?;
                g.add(penalty, half)
            },
        ),
        case(
            "mean_frame_sse",
            |r| vec![Tensor::uniform(&[3, 5], 1.0, r)],
            |g, x| {
                let t = g.constant(binary(&[3, 5], 0.5, &mut rng(8)));
                mean_frame_sse(g, x[0], t)
            },
        ),
        case(
            "mmd",
            |r| vec![normal(&[4, LATENT_DIM], r), normal(&[4, LATENT_DIM], r)],
            |g, x| {
                let anchor = metaworld::metatrain::step::LatentStats {
                    mean_mu: normal(&[1, LATENT_DIM], &mut rng(9)),
                    mean_log_std: normal(&[1, LATENT_DIM], &mut rng(10)),
                };
                let w = metaworld::metatrain::config::LossWeights::default();
                metaworld::metatrain::step::mmd_graph(g, x[0], x[1], &anchor, &w)
            },
        ),
        case(
            "lstm_cell",
            |r| {
                let mut p = MemoryModel::<f64>::new(r).params.tensors().to_vec();
                p.push(normal(&[3, LATENT_DIM], r));
                p.push(normal(&[3, 32], r));
                p.push(normal(&[3, 32], r));
                p
            },
            |g, x| {
                let mp = memory_nodes(&x[..5]);
                let state = metaworld::memory::HiddenNodes { h: x[6], c: x[7] };
                let actions =
                    [0u8, 2, 5].map(|a| metaworld::pongsim::Action::new(a).expect("action"));
                let (mu, lv, next) = MemoryModel::cell_graph(g, &mp, x[5], &actions, state)?;
                g.concat(&[mu, lv, next.h, next.c], 1)
            },
        ),
    ];
    let vae = case(
        "vae",
        |r| {
            VisionModel::<f64>::new(ArchPreset::Mini, r)
                .expect("mini")
                .params
                .tensors()
                .to_vec()
        },
        |g, x| {
            let vp = vision_nodes(&x[..8]);
            let batch = tiny_batch(2, 2, 11);
            let frames = g.constant(metaworld::vision::frames_tensor(
                &batch.frames_time_major(0, 1),
            )?);
            let (mu, lv) = VisionModel::encode_graph(g, &vp, frames)?;
            let z = reparameterize(g, mu, lv, normal(&[2, LATENT_DIM], &mut rng(12)))?;
            let out = VisionModel::decode_graph(g, &vp, z)?;
            let rec = mean_frame_sse(g, out, frames)?;
            let (kl, _) = kl_free_bits(g, mu, lv, 0.0)?;
            g.add(rec, kl)
        },
    )
    .sampled(6);
    let recurrent = case(
        "prediction_graph",
        |r| {
            let mut p = VisionModel::<f64>::new(ArchPreset::Mini, r)
                .expect("mini")
                .params
                .tensors()
                .to_vec();
            p.extend(MemoryModel::<f64>::new(r).params.tensors().iter().cloned());
            p
        },
        |g, x| {
            let vp = vision_nodes(&x[..8]);
            let mp = memory_nodes(&x[8..]);
            let batch = tiny_batch(2, 4, 23);
            let z = metaworld::metatrain::step::predicted_latents(
                g, &vp, &mp, &batch, true, &mut None,
            )?;
            let out = VisionModel::decode_graph(g, &vp, z)?;
            let target = g.constant(metaworld::vision::frames_tensor(
                &batch.frames_time_major(1, 4),
            )?);
            mean_frame_sse(g, out, target)
        },
    )
    .sampled(4);
    cases.push(vae);
    cases.push(recurrent);
    cases
}

/// Small but complete training setup for invariant tests.
#[allow(clippy::field_reassign_with_default)]
pub fn tiny_config() -> TrainConfig {
    let mut c = TrainConfig::default();
    c.batch_size = 2;
    c.seq_len = 4;
    c.cycles = 2;
    c.schedule.pred_iters = 2;
    c.schedule.recon_iters = 2;
    c.data.episodes = 6;
    c.data.steps = 12;
    c.eval.windows = 2;
    c.eval.episode_steps = 12;
    c.eval.every_cycles = 1;
    c.checkpoint_every = 1;
    c
}
