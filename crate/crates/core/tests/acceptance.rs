//! Acceptance criteria 1 to 9. Every criterion runs at its stated
//! tolerance and prints one PASS/FAIL line; the test fails if any does.

mod common;

use std::fs;
use std::time::{Duration, Instant};

use metaworld::dataset::Dataset;
use metaworld::eval::{key_element_report, HeldOut};
use metaworld::frame::{Frame, FRAME_PIXELS, FRAME_SIZE};
use metaworld::memory::pred_loss;
use metaworld::metatrain::step::{mmd_value, prediction_grads, reconstruction_grads, LatentStats};
use metaworld::metatrain::{
    load_dataset, train, PairingMode, RunDir, Sampler, Stage, TrainConfig, TrainState,
};
use metaworld::numcore::{Adam, Tensor};
use metaworld::pongsim::{render, reset, rollout, Action, SimState, PADDLE_HEIGHT};
use metaworld::transforms::{apply, TransformKind};
use metaworld::vision::{kl_loss, recon_loss, FrameProb, GaussianParams, LATENT_DIM};
use rand::Rng;

use common::{grad_check, gradient_cases, oracle_pixel, random_frame, rng, tiny_config};

/// Desk-scale training length for criteria 6, 7 and 9.
const DESK_CYCLES: u64 = 100;
const DESK_LR: f64 = 1e-3;
/// All-0.5 decoder against any binary frame.
const HALF_BASELINE: f64 = 1024.0;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Verdict) -> Verdict {
    let start = Instant::now();
    let mut v = f();
    let took = start.elapsed();
    v.detail = format!("{}; {:.1} s", v.detail, took.as_secs_f64());
    if let Some(limit) = limit {
        if took > limit {
            v.pass = false;
            v.detail = format!("{} exceeds the {} s budget", v.detail, limit.as_secs());
        }
    }
    v
}

fn criterion_1() -> Verdict {
    const INSTANCES: usize = 4;
    let mut worst = (0.0f64, "");
    let mut count = 0;
    for (ci, case) in gradient_cases().iter().enumerate() {
        for k in 0..INSTANCES {
            let seed = (ci * 100 + k) as u64;
            let inputs = (case.inputs)(&mut rng(seed));
            let err =
                grad_check(&inputs, case.sample, seed, &case.build).expect("gradient check runs");
            if err > worst.0 {
                worst = (err, case.name);
            }
            count += 1;
        }
    }
    verdict(
        worst.0 < 1e-4 && count >= 100,
        format!(
            "{count} instances, max relative error {:.2e} ({})",
            worst.0, worst.1
        ),
    )
}

fn criterion_2() -> Verdict {
    let mut r = rng(2);
    let frames: Vec<Frame> = (0..1000).map(|_| random_frame(&mut r)).collect();
    let mut failures = Vec::new();
    for kind in TransformKind::ALL {
        for (n, f) in frames.iter().enumerate() {
            let t = apply(kind, f);
            if apply(kind, &t) != *f {
                failures.push(format!("{kind} involution on frame {n}"));
                break;
            }
            let oracle_ok = (0..FRAME_SIZE)
                .all(|row| (0..FRAME_SIZE).all(|c| t.get(row, c) == oracle_pixel(kind, f, row, c)));
            if !oracle_ok {
                failures.push(format!("{kind} pixel map on frame {n}"));
                break;
            }
        }
    }
    for (n, f) in frames.iter().enumerate() {
        let t = apply(TransformKind::Transpose, f);
        let mut m = [[false; FRAME_SIZE]; FRAME_SIZE];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = f.get(i, j);
            }
        }
        if (0..FRAME_SIZE).any(|i| (0..FRAME_SIZE).any(|j| t.get(j, i) != m[i][j])) {
            failures.push(format!("transpose on frame {n}"));
            break;
        }
    }
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            "6 kinds x 1000 random frames, involution and pixel maps exact".into()
        } else {
            failures.join(", ")
        },
    )
}

/// Whether the ball sprite is clipped by the frame or overlaps a paddle.
fn ball_is_occluded(s: &SimState) -> bool {
    let (by, bx) = (s.ball_y.round() as i64, s.ball_x.round() as i64);
    let ball = (by - 1, by, bx - 1, bx);
    let clipped = ball.0 < 0 || ball.1 > 63 || ball.2 < 0 || ball.3 > 63;
    let overlaps = |center: i64, col: i64| {
        let (top, bottom) = (center - PADDLE_HEIGHT / 2, center + PADDLE_HEIGHT / 2 - 1);
        ball.0 <= bottom && top <= ball.1 && ball.2 <= col + 1 && col <= ball.3
    };
    clipped || overlaps(s.left_paddle, 2) || overlaps(s.right_paddle, 60)
}

fn criterion_3() -> Verdict {
    let a = rollout(42, 1000).expect("rollout");
    let b = rollout(42, 1000).expect("rollout");
    let replay = a == b && a.frames.len() == 1000;

    let mut state = reset(9);
    let mut policy = rng(9);
    let mut problems = Vec::new();
    let mut occluded = 0usize;
    for step in 0..100_000u32 {
        let speed = state.ball_dx.abs();
        state.advance(Action::new(policy.random_range(0..6)).expect("action"));
        for (side, p) in [("left", state.left_paddle), ("right", state.right_paddle)] {
            let (top, bottom) = (p - PADDLE_HEIGHT / 2, p + PADDLE_HEIGHT / 2 - 1);
            if top < 0 || bottom > 63 {
                problems.push(format!(
                    "{side} paddle rows {top}..={bottom} at step {step}"
                ));
            }
        }
        if state.ball_dx.abs() != speed {
            problems.push(format!(
                "horizontal speed {speed} -> {} at step {step}",
                state.ball_dx.abs()
            ));
        }
        let n = render(&state).count_ones();
        if ball_is_occluded(&state) {
            occluded += 1;
            if !(32..=36).contains(&n) {
                problems.push(format!("{n} pixels with occluded ball at step {step}"));
            }
        } else if n != 36 {
            problems.push(format!("{n} pixels at step {step}"));
        }
        if problems.len() > 3 {
            break;
        }
    }
    verdict(
        replay && problems.is_empty(),
        format!(
            "replay identical: {replay}; 100000 steps, {occluded} with the ball occluded; {}",
            if problems.is_empty() {
                "no invariant violations".into()
            } else {
                problems.join(", ")
            }
        ),
    )
}

fn criterion_4() -> Verdict {
    let half = FrameProb(vec![0.5; FRAME_PIXELS]);
    let mut r = rng(4);
    let frames = [
        rollout(1, 2).expect("rollout").frames[1],
        random_frame(&mut r),
        Frame::empty(),
        Frame::filled(),
    ];
    let recon_ok = frames.iter().all(|f| recon_loss(&half, f) == HALF_BASELINE);
    let pred_ok = frames.iter().all(|f| {
        pred_loss(std::slice::from_ref(&half), std::slice::from_ref(f)).expect("aligned")
            == HALF_BASELINE
    });

    let stats = |mu: f64| LatentStats::<f64> {
        mean_mu: Tensor::full(&[1, LATENT_DIM], mu),
        mean_log_std: Tensor::full(&[1, LATENT_DIM], -0.7),
    };
    let mut w = TrainConfig::default().loss;
    w.eta_mu = 1.0;
    w.eta_sigma = 1.0;
    let mmd = mmd_value(&stats(1.0), &stats(0.0), &w);

    let prior = GaussianParams::new(vec![0.0; LATENT_DIM], vec![0.0; LATENT_DIM]).expect("params");
    let kl0 = kl_loss(&prior);
    let mut positive = true;
    for k in 0..200 {
        let mut mu = vec![0.0; LATENT_DIM];
        let mut lv = vec![0.0; LATENT_DIM];
        let d = r.random_range(0..LATENT_DIM);
        let v = r.random_range(1e-3..2.0) * if r.random_bool(0.5) { 1.0 } else { -1.0 };
        if k % 2 == 0 {
            mu[d] = v
        } else {
            lv[d] = v
        }
        positive &= kl_loss(&GaussianParams::new(mu, lv).expect("params")) > 0.0;
    }
    verdict(
        recon_ok && pred_ok && mmd == 32.0 && kl0 == 0.0 && positive,
        format!(
            "recon 1024 exact: {recon_ok}; pred 1024 exact: {pred_ok}; MMD {mmd}; KL(0,0) {kl0}; \
             KL > 0 off the prior in 200 cases: {positive}"
        ),
    )
}

fn criterion_5() -> Verdict {
    let cfg = tiny_config();
    let data = load_dataset(&cfg).expect("data");
    let sampler =
        Sampler::new(&data, cfg.mode, cfg.variant, cfg.batch_size, cfg.seq_len).expect("sampler");

    // Memory parameters and optimizer moments are untouched by reconstruction.
    let mut st = TrainState::<f32>::new(cfg.clone()).expect("state");
    st.prediction_iteration(&data, &sampler).expect("pred");
    let (theta, moments) = (st.memory.clone(), st.opt_memory.clone());
    for _ in 0..cfg.schedule.recon_iters * 2 {
        st.reconstruction_iteration(&data, &sampler).expect("recon");
    }
    let theta_fixed = st.memory == theta && st.opt_memory == moments;

    // The anchor environment does not see eta; with eta = 0 the variant
    // trains as an independent VAE.
    let mut zero = cfg.clone();
    zero.loss.eta = 0.0;
    let mut a = TrainState::<f32>::new(cfg.clone()).expect("state");
    let mut b = TrainState::<f32>::new(zero.clone()).expect("state");
    for _ in 0..3 {
        a.reconstruction_iteration(&data, &sampler).expect("recon");
        b.reconstruction_iteration(&data, &sampler).expect("recon");
    }
    let anchor_same = a.vision[0] == b.vision[0] && a.opt_vision[0] == b.opt_vision[0];
    let variant_moved = a.vision[1] != b.vision[1];
    let [bo, bi] = sampler.sample(&data, &mut rng(50)).expect("batch");
    let o = reconstruction_grads(&b.vision[0], &bo, &zero, None, &mut rng(51)).expect("grads");
    let with_anchor = reconstruction_grads(&b.vision[1], &bi, &zero, Some(&o.stats), &mut rng(52))
        .expect("grads");
    let alone = reconstruction_grads(&b.vision[1], &bi, &zero, None, &mut rng(52)).expect("grads");
    let independent = with_anchor.vision_grads == alone.vision_grads && with_anchor.l_mmd.is_some();

    // The applied memory gradient is the sum of per-environment gradients.
    let mut micro = cfg.clone();
    micro.batch_size = 2;
    let sampler =
        Sampler::new(&data, micro.mode, micro.variant, 2, micro.seq_len).expect("sampler");
    let mut st = TrainState::<f32>::new(micro.clone()).expect("state");
    let mut batch_rng = st.batch_rng.clone();
    let mut noise_rng = st.noise_rng.clone();
    let batches = sampler.sample(&data, &mut batch_rng).expect("batch");
    let per_env: Vec<_> = (0..2)
        .map(|e| {
            prediction_grads(
                &st.vision[e],
                &st.memory,
                &batches[e],
                &micro,
                &mut noise_rng,
            )
            .expect("grads")
        })
        .collect();
    let mut sum = per_env[0].memory_grads.clone();
    for (s, g) in sum.iter_mut().zip(&per_env[1].memory_grads) {
        s.add_assign(g);
    }
    let apply_grads = |grads: &[Tensor<f32>]| {
        let mut params = st.memory.params.clone();
        let mut opt: Adam<f32> = st.opt_memory.clone();
        opt.step(&mut params, grads).expect("step");
        params
    };
    let expected = apply_grads(&sum);
    let only_o = apply_grads(&per_env[0].memory_grads);
    st.prediction_iteration(&data, &sampler).expect("pred");
    let accumulated = st.memory.params == expected && st.memory.params != only_o;

    verdict(
        theta_fixed && anchor_same && variant_moved && independent && accumulated,
        format!(
            "theta bit-identical across reconstruction: {theta_fixed}; anchor unchanged by eta: {anchor_same}; \
             eta=0 variant equals independent VAE: {independent}; theta step equals summed gradients: {accumulated}"
        ),
    )
}

fn desk_config(mode: PairingMode) -> TrainConfig {
    let mut c = TrainConfig::default().with_lr(DESK_LR);
    c.variant = TransformKind::Mirror;
    c.mode = mode;
    c.cycles = DESK_CYCLES;
    c.checkpoint_every = DESK_CYCLES;
    c.data.episodes = 200;
    c.data.steps = 200;
    c
}

struct DeskRun {
    state: TrainState<f32>,
    metrics: String,
    /// Held-out eval rows of the untrained models.
    untrained: [f64; 2],
    took: Duration,
}

fn desk_run(cfg: TrainConfig) -> DeskRun {
    let start = Instant::now();
    let dir = tempfile::tempdir().expect("tempdir");
    let run = RunDir::create(dir.path()).expect("run dir");
    let data: Dataset = load_dataset(&cfg).expect("data");
    let mut state = TrainState::<f32>::new(cfg).expect("state");
    let c = &state.config;
    let held = HeldOut::generate(
        c.eval.windows,
        c.eval.episode_steps,
        c.seq_len,
        c.seeds.eval,
    )
    .expect("held out");
    let fresh = state.evaluate(&held).expect("eval");
    let untrained = [0, 1].map(|e| fresh[e].l_t.expect("L_t"));
    train(&mut state, &data, Some(&run)).expect("training run");
    let metrics = fs::read_to_string(run.metrics_path()).expect("metrics");
    DeskRun {
        state,
        metrics,
        untrained,
        took: start.elapsed(),
    }
}

fn final_eval(run: &DeskRun) -> [(String, f64, f64, f64, f64); 2] {
    let rows = run.state.last_eval().expect("final eval rows");
    rows.map(|r| {
        assert_eq!(r.stage, Stage::Eval);
        (
            r.env.clone(),
            r.l_r.expect("L_r"),
            r.l_p.expect("L_p"),
            r.l_t.expect("L_t"),
            r.l_pt.expect("L_pt"),
        )
    })
}

fn criterion_6(run: &DeskRun) -> Verdict {
    let mut pass = run.took <= Duration::from_secs(45 * 60);
    let mut parts = Vec::new();
    for (e, (env, lr, lp, lt, lpt)) in final_eval(run).into_iter().enumerate() {
        let ok = lt <= 3.0 * lr && lt <= 0.25 * run.untrained[e] && lpt <= 3.0 * lp;
        pass &= ok;
        parts.push(format!(
            "from {env}: L_r {lr:.2} L_t {lt:.2} ({:.2}x) L_p {lp:.2} L_pt {lpt:.2} ({:.2}x) untrained L_t {:.1}",
            lt / lr,
            lpt / lp,
            run.untrained[e]
        ));
    }
    verdict(
        pass,
        format!(
            "{DESK_CYCLES} cycles in {:.0} s; {}",
            run.took.as_secs_f64(),
            parts.join("; ")
        ),
    )
}

fn criterion_7(run: &DeskRun) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for (e, (env, lr, _, lt, _)) in final_eval(run).into_iter().enumerate() {
        pass &= lt <= 0.5 * run.untrained[e];
        parts.push(format!(
            "from {env}: L_r {lr:.2} L_t {lt:.2} untrained L_t {:.1}",
            run.untrained[e]
        ));
    }
    verdict(pass, format!("{DESK_CYCLES} cycles; {}", parts.join("; ")))
}

fn criterion_8(run: &DeskRun) -> Verdict {
    let st = &run.state;
    let seq = st.config.seq_len;
    let held = HeldOut::generate(
        512usize.div_ceil(seq),
        st.config.eval.episode_steps,
        seq,
        st.config.seeds.eval,
    )
    .expect("held out");
    let [ki, kj] = st.env_kinds();
    let report = key_element_report(
        &st.vision[0],
        &st.vision[1],
        &held.frames(ki)[..512],
        &held.frames(kj)[..512],
    )
    .expect("report");
    let (low, high) = (
        report.mean_l1(&report.low_quartile),
        report.mean_l1(&report.high_quartile),
    );
    let (key_grad, median) = (report.mean_grad(&report.key), report.median_non_key_grad());
    verdict(
        low < high && !report.key.is_empty() && key_grad > median,
        format!(
            "L1 low-logvar quartile {low:.3} vs high {high:.3}; key dims {:?} gradient mass {key_grad:.3} \
             vs non-key median {median:.3}",
            report.key
        ),
    )
}

fn criterion_9(first: &DeskRun) -> Verdict {
    let second = desk_run(first.state.config.clone());
    let same = second.metrics == first.metrics;
    let rows = first.metrics.lines().count() - 1;
    verdict(
        same,
        format!("metrics.csv identical across two runs: {same} ({rows} rows)"),
    )
}

#[test]
fn acceptance_criteria() {
    let mut lines = Vec::new();
    let mut report = |n: u32, name: &str, v: Verdict| {
        let line = format!(
            "criterion {n} {name}: {} ({})",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        println!("{line}");
        lines.push((v.pass, line));
    };
    report(
        1,
        "gradient correctness",
        timed(Some(Duration::from_secs(120)), criterion_1),
    );
    report(
        2,
        "transform suite",
        timed(Some(Duration::from_secs(10)), criterion_2),
    );
    report(
        3,
        "simulator determinism and invariants",
        timed(Some(Duration::from_secs(60)), criterion_3),
    );
    report(
        4,
        "loss and regularizer unit values",
        timed(Some(Duration::from_secs(1)), criterion_4),
    );
    report(
        5,
        "stage separation",
        timed(Some(Duration::from_secs(60)), criterion_5),
    );

    let corresponding = desk_run(desk_config(PairingMode::Corresponding));
    report(
        6,
        "corresponding desk-scale replication",
        criterion_6(&corresponding),
    );
    let non_corresponding = desk_run(desk_config(PairingMode::NonCorresponding));
    report(
        7,
        "non-corresponding desk-scale trend",
        criterion_7(&non_corresponding),
    );
    report(
        8,
        "key-element structure",
        timed(None, || criterion_8(&corresponding)),
    );
    report(
        9,
        "reproducibility",
        timed(None, || criterion_9(&corresponding)),
    );

    println!();
    for (_, line) in &lines {
        println!("{line}");
    }
    let failed: Vec<&str> = lines
        .iter()
        .filter(|(p, _)| !p)
        .map(|(_, l)| l.as_str())
        .collect();
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
