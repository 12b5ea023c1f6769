use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Block, Checkpoint};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::{pair_metrics, HeldOut};
use crate::memory::MemoryModel;
use crate::numcore::{Adam, AdamConfig, ParamSet, Scalar, Tensor};
use crate::transforms::TransformKind;
use crate::vision::VisionModel;

use super::batch::Sampler;
use super::config::{Precision, TrainConfig};
use super::metrics::{parse_csv, to_csv, MetricRow, Stage};
use super::step::{prediction_grads, reconstruction_grads};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.mwc";

/// Everything that determines the continuation of a run.
///
/// Slot 0 is the original environment and the anchor of the
/// distribution-matching term; slot 1 is the configured variant.
#[derive(Clone, Debug)]
pub struct TrainState<S> {
    pub config: TrainConfig,
    pub vision: [VisionModel<S>; 2],
    pub memory: MemoryModel<S>,
    pub opt_vision: [Adam<S>; 2],
    pub opt_memory: Adam<S>,
    /// Completed cycles.
    pub cycle: u64,
    /// Completed iterations over both stages.
    pub iter: u64,
    pub batch_rng: ChaCha8Rng,
    pub noise_rng: ChaCha8Rng,
    pub history: Vec<MetricRow>,
}

fn diverged(iter: u64, what: impl std::fmt::Display) -> Error {
    Error::Diverged {
        iter,
        msg: what.to_string(),
    }
}

fn check(iter: u64, name: &str, env: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(diverged(iter, format!("{name} for env {env} is {v}")))
    }
}

fn step_or_diverge<S: Scalar>(
    opt: &mut Adam<S>,
    params: &mut ParamSet<S>,
    grads: &[Tensor<S>],
    iter: u64,
) -> Result<()> {
    opt.step(params, grads).map_err(|e| match e {
        Error::NonFinite(m) => diverged(iter, m),
        other => other,
    })
}

impl<S: Scalar> TrainState<S> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seeds.init);
        let vision = [
            VisionModel::new(config.arch, &mut rng)?,
            VisionModel::new(config.arch, &mut rng)?,
        ];
        let memory = MemoryModel::new(&mut rng);
        let opt_vision = [
            Adam::new(config.optim.vision_o, &vision[0].params),
            Adam::new(config.optim.vision_i, &vision[1].params),
        ];
        let opt_memory = Adam::new(config.optim.memory, &memory.params);
        Ok(Self {
            batch_rng: ChaCha8Rng::seed_from_u64(config.seeds.batch),
            noise_rng: ChaCha8Rng::seed_from_u64(config.seeds.noise),
            config,
            vision,
            memory,
            opt_vision,
            opt_memory,
            cycle: 0,
            iter: 0,
            history: Vec::new(),
        })
    }

    pub fn env_kinds(&self) -> [TransformKind; 2] {
        [TransformKind::Identity, self.config.variant]
    }

    pub fn env_tags(&self) -> [&'static str; 2] {
        self.env_kinds().map(TransformKind::tag)
    }

    /// One prediction-stage iteration: the memory model's gradient is the
    /// sum of both environments' gradients (original first), computed
    /// before any parameter changes; each vision model takes its own.
    pub fn prediction_iteration(
        &mut self,
        data: &Dataset,
        sampler: &Sampler,
    ) -> Result<[MetricRow; 2]> {
        let iter = self.iter + 1;
        let batches = sampler.sample(data, &mut self.batch_rng)?;
        let mut outs = Vec::with_capacity(2);
        for (e, batch) in batches.iter().enumerate() {
            outs.push(prediction_grads(
                &self.vision[e],
                &self.memory,
                batch,
                &self.config,
                &mut self.noise_rng,
            )?);
        }
        let tags = self.env_tags();
        for (o, tag) in outs.iter().zip(tags) {
            check(iter, "L_p", tag, o.l_p)?;
        }
        let mut theta = outs[0].memory_grads.clone();
        for (acc, g) in theta.iter_mut().zip(&outs[1].memory_grads) {
            acc.add_assign(g);
        }
        step_or_diverge(&mut self.opt_memory, &mut self.memory.params, &theta, iter)?;
        for (e, o) in outs.iter().enumerate() {
            step_or_diverge(
                &mut self.opt_vision[e],
                &mut self.vision[e].params,
                &o.vision_grads,
                iter,
            )?;
        }
        self.iter = iter;
        let cycle = self.cycle + 1;
        Ok([0, 1].map(|e| {
            let mut r = MetricRow::new(cycle, iter, Stage::Pred, tags[e]);
            r.l_p = Some(outs[e].l_p);
            r
        }))
    }

    /// One reconstruction-stage iteration. Only vision parameters move;
    /// the variant is pulled toward the original's latent statistics.
    pub fn reconstruction_iteration(
        &mut self,
        data: &Dataset,
        sampler: &Sampler,
    ) -> Result<[MetricRow; 2]> {
        let iter = self.iter + 1;
        let batches = sampler.sample(data, &mut self.batch_rng)?;
        let o = reconstruction_grads(
            &self.vision[0],
            &batches[0],
            &self.config,
            None,
            &mut self.noise_rng,
        )?;
        let i = reconstruction_grads(
            &self.vision[1],
            &batches[1],
            &self.config,
            Some(&o.stats),
            &mut self.noise_rng,
        )?;
        let tags = self.env_tags();
        for (out, tag) in [(&o, tags[0]), (&i, tags[1])] {
            check(iter, "L_r", tag, out.l_r)?;
            check(iter, "L_kl", tag, out.l_kl)?;
            if let Some(m) = out.l_mmd {
                check(iter, "L_mmd", tag, m)?;
            }
        }
        step_or_diverge(
            &mut self.opt_vision[0],
            &mut self.vision[0].params,
            &o.vision_grads,
            iter,
        )?;
        step_or_diverge(
            &mut self.opt_vision[1],
            &mut self.vision[1].params,
            &i.vision_grads,
            iter,
        )?;
        self.iter = iter;
        let cycle = self.cycle + 1;
        Ok([(&o, tags[0]), (&i, tags[1])].map(|(out, tag)| {
            let mut r = MetricRow::new(cycle, iter, Stage::Recon, tag);
            r.l_r = Some(out.l_r);
            r.l_kl = Some(out.l_kl);
            r.l_mmd = out.l_mmd;
            r
        }))
    }

    /// Held-out metrics in both directions; row `env` reports its own
    /// `L_r`/`L_p` and the losses of decoding its latents with the other
    /// environment's decoder.
    pub fn evaluate(&self, held: &HeldOut) -> Result<[MetricRow; 2]> {
        let kinds = self.env_kinds();
        let tags = self.env_tags();
        let mut rows = Vec::with_capacity(2);
        for (a, b) in [(0, 1), (1, 0)] {
            let m = pair_metrics(
                &self.vision[a],
                &self.vision[b],
                &self.memory,
                (kinds[a], kinds[b]),
                held,
            )?;
            let mut r = MetricRow::new(self.cycle, self.iter, Stage::Eval, tags[a]);
            r.l_r = Some(m.l_r);
            r.l_p = Some(m.l_p);
            r.l_t = Some(m.l_t);
            r.l_pt = Some(m.l_pt);
            for (name, v) in [
                ("L_r", m.l_r),
                ("L_p", m.l_p),
                ("L_t", m.l_t),
                ("L_pt", m.l_pt),
            ] {
                check(self.iter, name, tags[a], v)?;
            }
            rows.push(r);
        }
        Ok([rows.remove(0), rows.remove(0)])
    }

    /// Runs one full cycle (prediction stage, then reconstruction stage),
    /// evaluating afterwards when due. Rows are appended to the history
    /// as they are produced.
    pub fn run_cycle(&mut self, data: &Dataset, sampler: &Sampler, held: &HeldOut) -> Result<()> {
        for _ in 0..self.config.schedule.pred_iters {
            let rows = self.prediction_iteration(data, sampler)?;
            self.history.extend(rows);
        }
        for _ in 0..self.config.schedule.recon_iters {
            let rows = self.reconstruction_iteration(data, sampler)?;
            self.history.extend(rows);
        }
        self.cycle += 1;
        let every = self.config.eval.every_cycles;
        if (every > 0 && self.cycle.is_multiple_of(every)) || self.cycle == self.config.cycles {
            let rows = self.evaluate(held)?;
            self.history.extend(rows);
        }
        Ok(())
    }

    /// The most recent eval rows, one per environment.
    pub fn last_eval(&self) -> Option<[&MetricRow; 2]> {
        let tags = self.env_tags();
        let find = |tag: &str| {
            self.history
                .iter()
                .rev()
                .find(|r| r.stage == Stage::Eval && r.env == tag)
        };
        Some([find(tags[0])?, find(tags[1])?])
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SavedRng {
    seed: String,
    stream: String,
    word_pos: String,
}

impl SavedRng {
    fn of(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream().to_string(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = |m: &str| Error::Config(format!("checkpoint rng state: {m}"));
        if self.seed.len() != 64 {
            return Err(bad("seed must be 64 hex digits"));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16)
                .map_err(|_| bad("seed is not hex"))?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream.parse().map_err(|_| bad("bad stream"))?);
        rng.set_word_pos(
            self.word_pos
                .parse()
                .map_err(|_| bad("bad word position"))?,
        );
        Ok(rng)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamSteps {
    memory: u64,
    vision_o: u64,
    vision_i: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SavedState {
    precision: Precision,
    cycle: u64,
    iter: u64,
    adam_steps: AdamSteps,
    batch_rng: SavedRng,
    noise_rng: SavedRng,
    metrics: String,
}

const SLOTS: [&str; 2] = ["o", "i"];

fn push_model<S: Scalar>(
    blocks: &mut Vec<Block>,
    prefix: &str,
    params: &ParamSet<S>,
    opt: &Adam<S>,
) {
    for (name, t) in params.iter() {
        blocks.push(Block::from_tensor(format!("{prefix}.{name}"), t));
    }
    for (name, (m, v)) in params
        .names()
        .iter()
        .zip(opt.first_moments().iter().zip(opt.second_moments()))
    {
        blocks.push(Block::from_tensor(format!("adam.{prefix}.{name}.m"), m));
        blocks.push(Block::from_tensor(format!("adam.{prefix}.{name}.v"), v));
    }
}

fn take_model<S: Scalar>(
    ckpt: &Checkpoint,
    prefix: &str,
    names: &[&str],
    config: AdamConfig,
    step: u64,
    used: &mut usize,
) -> Result<(ParamSet<S>, Adam<S>)> {
    let get = |name: String| -> Result<Tensor<S>> {
        ckpt.block(&name)
            .ok_or_else(|| Error::Config(format!("checkpoint is missing block {name}")))?
            .to_tensor()
    };
    let mut params = ParamSet::new();
    let (mut m, mut v) = (Vec::new(), Vec::new());
    for &n in names {
        params.push(n, get(format!("{prefix}.{n}"))?);
        m.push(get(format!("adam.{prefix}.{n}.m"))?);
        v.push(get(format!("adam.{prefix}.{n}.v"))?);
        *used += 3;
    }
    let opt = Adam::from_parts(config, step, m, v)?;
    Ok((params, opt))
}

impl<S: Scalar> TrainState<S> {
    /// Parameters and moments are stored as 32-bit floats.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let state = SavedState {
            precision: self.config.precision,
            cycle: self.cycle,
            iter: self.iter,
            adam_steps: AdamSteps {
                memory: self.opt_memory.step_count(),
                vision_o: self.opt_vision[0].step_count(),
                vision_i: self.opt_vision[1].step_count(),
            },
            batch_rng: SavedRng::of(&self.batch_rng),
            noise_rng: SavedRng::of(&self.noise_rng),
            metrics: to_csv(&self.history),
        };
        let mut blocks = Vec::new();
        for (e, slot) in SLOTS.iter().enumerate() {
            push_model(
                &mut blocks,
                &format!("vision.{slot}"),
                &self.vision[e].params,
                &self.opt_vision[e],
            );
        }
        push_model(&mut blocks, "memory", &self.memory.params, &self.opt_memory);
        Checkpoint {
            config: self.config.to_toml(),
            state: toml::to_string(&state).expect("state serializes"),
            blocks,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = TrainConfig::from_toml(&ckpt.config)?;
        let state: SavedState = toml::from_str(&ckpt.state)
            .map_err(|e| Error::Config(format!("checkpoint state: {e}")))?;
        let mut used = 0;
        let steps = [state.adam_steps.vision_o, state.adam_steps.vision_i];
        let opt_cfg = [config.optim.vision_o, config.optim.vision_i];
        let mut vis = Vec::new();
        for (e, slot) in SLOTS.iter().enumerate() {
            let (p, opt) = take_model(
                ckpt,
                &format!("vision.{slot}"),
                &crate::vision::PARAM_NAMES,
                opt_cfg[e],
                steps[e],
                &mut used,
            )?;
            vis.push((VisionModel::from_params(config.arch, p)?, opt));
        }
        let (mp, opt_memory) = take_model(
            ckpt,
            "memory",
            &crate::memory::PARAM_NAMES,
            config.optim.memory,
            state.adam_steps.memory,
            &mut used,
        )?;
        if used != ckpt.blocks.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} unexpected blocks",
                ckpt.blocks.len() - used
            )));
        }
        let (v1, o1) = vis.pop().expect("two vision slots");
        let (v0, o0) = vis.pop().expect("two vision slots");
        let mut config = config;
        config.precision = state.precision;
        Ok(Self {
            vision: [v0, v1],
            memory: MemoryModel::from_params(mp)?,
            opt_vision: [o0, o1],
            opt_memory,
            cycle: state.cycle,
            iter: state.iter,
            batch_rng: state.batch_rng.restore()?,
            noise_rng: state.noise_rng.restore()?,
            history: parse_csv(&state.metrics)?,
            config,
        })
    }
}

/// Loads the configured dataset, or generates it in memory when no path
/// is set.
pub fn load_dataset(config: &TrainConfig) -> Result<Dataset> {
    match &config.data.path {
        Some(p) => Dataset::load(p),
        None => Dataset::generate(config.data.episodes, config.data.steps, config.data.seed),
    }
}

/// Where a run writes its artifacts.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub dir: PathBuf,
}

impl RunDir {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
        })
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.dir.join(METRICS_FILE)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.dir.join(CHECKPOINT_FILE)
    }

    fn rewrite_metrics(&self, rows: &[MetricRow]) -> Result<()> {
        let p = self.metrics_path();
        fs::write(&p, to_csv(rows)).map_err(|e| Error::io(&p, e))
    }

    fn append_metrics(&self, rows: &[MetricRow]) -> Result<()> {
        let p = self.metrics_path();
        let mut f = OpenOptions::new()
            .append(true)
            .open(&p)
            .map_err(|e| Error::io(&p, e))?;
        let mut s = String::new();
        for r in rows {
            s.push_str(&r.to_csv_line());
            s.push('\n');
        }
        f.write_all(s.as_bytes()).map_err(|e| Error::io(&p, e))
    }
}

/// Trains until `state.cycle == config.cycles`. With a run directory the
/// metrics file is rewritten from the history at start (so a resumed run
/// continues it) and extended after every cycle; checkpoints are written
/// on the configured cadence and after the last cycle. On error the state
/// is left as it was when the error occurred and rows produced so far are
/// flushed.
pub fn train<S: Scalar>(
    state: &mut TrainState<S>,
    data: &Dataset,
    out: Option<&RunDir>,
) -> Result<()> {
    let cfg = state.config.clone();
    let sampler = Sampler::new(data, cfg.mode, cfg.variant, cfg.batch_size, cfg.seq_len)?;
    let held = HeldOut::generate(
        cfg.eval.windows,
        cfg.eval.episode_steps,
        cfg.seq_len,
        cfg.seeds.eval,
    )?;
    if let Some(out) = out {
        out.rewrite_metrics(&state.history)?;
    }
    let mut written = state.history.len();
    while state.cycle < cfg.cycles {
        let result = state.run_cycle(data, &sampler, &held);
        if let Some(out) = out {
            out.append_metrics(&state.history[written..])?;
            written = state.history.len();
        }
        result?;
        log::info!(
            "cycle {}/{} done (iteration {})",
            state.cycle,
            cfg.cycles,
            state.iter
        );
        let due = cfg.checkpoint_every > 0 && state.cycle.is_multiple_of(cfg.checkpoint_every);
        if let Some(out) = out {
            if due || state.cycle == cfg.cycles {
                state.to_checkpoint().save(&out.checkpoint_path())?;
            }
        }
    }
    Ok(())
}
