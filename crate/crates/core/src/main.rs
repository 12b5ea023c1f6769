use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use metaworld::checkpoint::Checkpoint;
use metaworld::dataset::Dataset;
use metaworld::eval::{cross_decode_grid, key_element_report, pair_metrics, HeldOut};
use metaworld::metatrain::{load_dataset, train, Precision, RunDir, TrainConfig, TrainState};
use metaworld::numcore::Scalar;
use metaworld::transforms::{transform_trajectory, TransformKind};
use metaworld::{Error, Result};

#[derive(Parser)]
#[command(
    name = "metaworld",
    version,
    about = "Shared latent dynamics across visually transformed Pong variants"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random-policy trajectory dataset.
    GenData {
        #[arg(long, default_value_t = 10_000)]
        episodes: usize,
        #[arg(long, default_value_t = 1_000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply an observation transform to every frame of a dataset.
    Transform {
        #[arg(long)]
        kind: TransformKind,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run meta-training, writing metrics.csv and checkpoints to DIR.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint; its stored config is used.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Held-out cross-decoding losses for every environment pair.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Number of held-out window pairs.
        #[arg(long, default_value_t = 32)]
        pairs: usize,
        #[arg(long, default_value_t = 4)]
        seed: u64,
    },
    /// Per-dimension latent statistics and key elements.
    Analyze {
        #[arg(long)]
        ckpt: PathBuf,
        /// Number of held-out frame pairs.
        #[arg(long, default_value_t = 512)]
        frames: usize,
        #[arg(long, default_value_t = 4)]
        seed: u64,
    },
    /// Write cross-decoding grids as PGM files. Pass one checkpoint per
    /// variant; the first one's original-environment model encodes.
    Render {
        #[arg(long, required = true, num_args = 1..)]
        ckpt: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        steps: usize,
        #[arg(long, default_value_t = 4)]
        seed: u64,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Diverged { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData {
            episodes,
            steps,
            seed,
            out,
        } => {
            let d = Dataset::generate(episodes, steps, seed)?;
            d.save(&out)?;
            println!(
                "wrote {} episodes ({} bytes) to {}",
                d.len(),
                d.encoded_len(),
                out.display()
            );
            Ok(())
        }
        Command::Transform { kind, input, out } => {
            let d = Dataset::load(&input)?;
            let t = Dataset {
                episodes: d
                    .episodes
                    .iter()
                    .map(|e| transform_trajectory(kind, e))
                    .collect(),
            };
            t.save(&out)
        }
        Command::Train {
            config,
            out,
            resume,
        } => cmd_train(config.as_deref(), &out, resume.as_deref()),
        Command::Eval { ckpt, pairs, seed } => {
            let c = Checkpoint::load(&ckpt)?;
            print!(
                "{}",
                with_precision(&c, |p| eval_report(p, &c, pairs, seed))?
            );
            Ok(())
        }
        Command::Analyze { ckpt, frames, seed } => {
            let c = Checkpoint::load(&ckpt)?;
            print!(
                "{}",
                with_precision(&c, |p| analyze_report(p, &c, frames, seed))?
            );
            Ok(())
        }
        Command::Render {
            ckpt,
            out,
            steps,
            seed,
        } => {
            let cs = ckpt
                .iter()
                .map(|p| Checkpoint::load(p))
                .collect::<Result<Vec<_>>>()?;
            let n = with_precision(&cs[0], |p| render_grid(p, &cs, &out, steps, seed))?;
            println!("wrote {n} files to {}", out.display());
            Ok(())
        }
    }
}

fn cmd_train(config: Option<&Path>, out: &Path, resume: Option<&Path>) -> Result<()> {
    let cfg = match config {
        Some(p) => Some(TrainConfig::load(p)?),
        None => None,
    };
    let dir = RunDir::create(out)?;
    match resume {
        Some(ck) => {
            let c = Checkpoint::load(ck)?;
            let stored = TrainConfig::from_toml(&c.config)?;
            if let Some(cfg) = &cfg {
                let mut same = cfg.clone();
                same.cycles = stored.cycles;
                if same != stored {
                    return Err(Error::Config(
                        "--config differs from the checkpoint's config in more than `cycles`"
                            .into(),
                    ));
                }
            }
            let cycles = cfg.map_or(stored.cycles, |c| c.cycles);
            match stored.precision {
                Precision::F32 => resume_run::<f32>(&c, cycles, &dir),
                Precision::F64 => resume_run::<f64>(&c, cycles, &dir),
            }
        }
        None => {
            let cfg = cfg.unwrap_or_default();
            match cfg.precision {
                Precision::F32 => fresh_run::<f32>(cfg, &dir),
                Precision::F64 => fresh_run::<f64>(cfg, &dir),
            }
        }
    }
}

fn fresh_run<S: Scalar>(cfg: TrainConfig, dir: &RunDir) -> Result<()> {
    let data = load_dataset(&cfg)?;
    let mut state = TrainState::<S>::new(cfg)?;
    finish(&mut state, &data, dir)
}

fn resume_run<S: Scalar>(c: &Checkpoint, cycles: u64, dir: &RunDir) -> Result<()> {
    let mut state = TrainState::<S>::from_checkpoint(c)?;
    state.config.cycles = cycles;
    let data = load_dataset(&state.config)?;
    finish(&mut state, &data, dir)
}

fn finish<S: Scalar>(state: &mut TrainState<S>, data: &Dataset, dir: &RunDir) -> Result<()> {
    let result = train(state, data, Some(dir));
    if let Err(e) = &result {
        if !matches!(e, Error::Diverged { .. }) {
            // keep whatever progress was made if the failure was not numerical
            let _ = state
                .to_checkpoint()
                .save(&dir.dir.join("final-attempt.mwc"));
        }
    }
    result?;
    if let Some([a, b]) = state.last_eval() {
        for r in [a, b] {
            println!("{}", r.to_csv_line());
        }
    }
    Ok(())
}

fn with_precision<T>(c: &Checkpoint, f: impl FnOnce(Precision) -> Result<T>) -> Result<T> {
    f(TrainConfig::from_toml(&c.config)?.precision)
}

fn eval_report(p: Precision, c: &Checkpoint, pairs: usize, seed: u64) -> Result<String> {
    match p {
        Precision::F32 => eval_typed::<f32>(c, pairs, seed),
        Precision::F64 => eval_typed::<f64>(c, pairs, seed),
    }
}

fn eval_typed<S: Scalar>(c: &Checkpoint, pairs: usize, seed: u64) -> Result<String> {
    let st = TrainState::<S>::from_checkpoint(c)?;
    let held = HeldOut::generate(pairs, st.config.eval.episode_steps, st.config.seq_len, seed)?;
    let kinds = st.env_kinds();
    let mut s = String::from("from,to,L_r,L_p,L_t,L_pt\n");
    for (a, b) in [(0, 1), (1, 0), (0, 0), (1, 1)] {
        let m = pair_metrics(
            &st.vision[a],
            &st.vision[b],
            &st.memory,
            (kinds[a], kinds[b]),
            &held,
        )?;
        writeln!(
            s,
            "{},{},{},{},{},{}",
            kinds[a].tag(),
            kinds[b].tag(),
            m.l_r,
            m.l_p,
            m.l_t,
            m.l_pt
        )
        .expect("write to string");
    }
    Ok(s)
}

fn analyze_report(p: Precision, c: &Checkpoint, frames: usize, seed: u64) -> Result<String> {
    match p {
        Precision::F32 => analyze_typed::<f32>(c, frames, seed),
        Precision::F64 => analyze_typed::<f64>(c, frames, seed),
    }
}

fn analyze_typed<S: Scalar>(c: &Checkpoint, frames: usize, seed: u64) -> Result<String> {
    let st = TrainState::<S>::from_checkpoint(c)?;
    let seq = st.config.seq_len;
    let held = HeldOut::generate(
        frames.div_ceil(seq),
        st.config.eval.episode_steps,
        seq,
        seed,
    )?;
    let [ki, kj] = st.env_kinds();
    let (src, dst) = (&held.frames(ki)[..frames], &held.frames(kj)[..frames]);
    let report = key_element_report(&st.vision[0], &st.vision[1], src, dst)?;
    Ok(format!("{}# {}\n", report.to_csv(), report.summary()))
}

fn render_grid(
    p: Precision,
    cs: &[Checkpoint],
    out: &Path,
    steps: usize,
    seed: u64,
) -> Result<usize> {
    match p {
        Precision::F32 => render_typed::<f32>(cs, out, steps, seed),
        Precision::F64 => render_typed::<f64>(cs, out, steps, seed),
    }
}

fn render_typed<S: Scalar>(
    cs: &[Checkpoint],
    out: &Path,
    steps: usize,
    seed: u64,
) -> Result<usize> {
    let states = cs
        .iter()
        .map(TrainState::<S>::from_checkpoint)
        .collect::<Result<Vec<_>>>()?;
    let base = &states[0];
    let held = HeldOut::generate(
        1,
        base.config.eval.episode_steps.max(steps),
        steps.max(2),
        seed,
    )?;
    let frames = &held.frames(TransformKind::Identity)[..steps];
    let decoders: Vec<_> = states
        .iter()
        .map(|s| (s.config.variant, &s.vision[1]))
        .collect();
    Ok(cross_decode_grid(&base.vision[0], &decoders, frames, out)?.len())
}
