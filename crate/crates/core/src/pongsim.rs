//! Deterministic two-paddle Pong rendered to binary 64×64 frames.
//!
//! The ball position is the center of a 2×2 sprite; it covers rows
//! `round(y)-1..=round(y)` and columns `round(x)-1..=round(x)`. Paddles are
//! 2 columns wide and 8 rows tall, covering rows `center-4..=center+3`. The
//! opponent (left) follows the ball at 1 px/step; the agent (right) is
//! driven by actions. There is no score: a ball leaving the field is served
//! again from the center.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::frame::{Frame, FRAME_SIZE};

pub const NUM_ACTIONS: usize = 6;
pub const PADDLE_HEIGHT: i64 = 8;
pub const PADDLE_WIDTH: i64 = 2;
pub const BALL_SIZE: i64 = 2;
/// Leftmost column of the opponent paddle.
pub const LEFT_PADDLE_COL: i64 = 2;
/// Leftmost column of the agent paddle.
pub const RIGHT_PADDLE_COL: i64 = 60;
pub const PADDLE_SPEED: i64 = 2;
pub const OPPONENT_SPEED: i64 = 1;
pub const MAX_DY: f64 = 1.5;

const CENTER: f64 = 32.0;
const MIN_PADDLE_CENTER: i64 = PADDLE_HEIGHT / 2;
const MAX_PADDLE_CENTER: i64 = FRAME_SIZE as i64 - PADDLE_HEIGHT / 2;
const BALL_MIN: f64 = 1.0;
const BALL_MAX: f64 = FRAME_SIZE as f64 - 1.0;

/// One of the six discrete Atari-style actions.
///
/// 0 and 1 leave the agent paddle in place, 2 and 4 move it up, 3 and 5
/// move it down.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Action(u8);

impl Action {
    pub fn new(v: u8) -> Result<Self> {
        if (v as usize) < NUM_ACTIONS {
            Ok(Self(v))
        } else {
            Err(Error::Invalid(format!(
                "action {v} outside 0..{NUM_ACTIONS}"
            )))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn value(self) -> u8 {
        self.0
    }

    fn paddle_delta(self) -> i64 {
        match self.0 {
            2 | 4 => -PADDLE_SPEED,
            3 | 5 => PADDLE_SPEED,
            _ => 0,
        }
    }
}

impl TryFrom<u8> for Action {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        Self::new(v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub ball_x: f64,
    pub ball_y: f64,
    pub ball_dx: f64,
    pub ball_dy: f64,
    /// Center row of the opponent (left) paddle.
    pub left_paddle: i64,
    /// Center row of the agent (right) paddle.
    pub right_paddle: i64,
    pub steps: u64,
    rng: ChaCha8Rng,
}

fn serve_velocity(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let dx = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let dy = [-1.0, -0.5, 0.5, 1.0][rng.random_range(0..4)];
    (dx, dy)
}

fn clamp_paddle(c: i64) -> i64 {
    c.clamp(MIN_PADDLE_CENTER, MAX_PADDLE_CENTER)
}

fn spans_overlap(a0: i64, a1: i64, b0: i64, b1: i64) -> bool {
    a0 <= b1 && b0 <= a1
}

/// Initial state for `seed`: ball in the center, paddles centered, serve
/// direction drawn from the seeded generator.
pub fn reset(seed: u64) -> SimState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (dx, dy) = serve_velocity(&mut rng);
    SimState {
        ball_x: CENTER,
        ball_y: CENTER,
        ball_dx: dx,
        ball_dy: dy,
        left_paddle: CENTER as i64,
        right_paddle: CENTER as i64,
        steps: 0,
        rng,
    }
}

impl SimState {
    fn ball_rows(&self) -> (i64, i64) {
        let r = self.ball_y.round() as i64;
        (r - 1, r)
    }

    fn ball_cols(&self) -> (i64, i64) {
        let c = self.ball_x.round() as i64;
        (c - 1, c)
    }

    fn hits_paddle(&self, col: i64, center: i64) -> bool {
        let (c0, c1) = self.ball_cols();
        let (r0, r1) = self.ball_rows();
        spans_overlap(c0, c1, col, col + PADDLE_WIDTH - 1)
            && spans_overlap(
                r0,
                r1,
                center - PADDLE_HEIGHT / 2,
                center + PADDLE_HEIGHT / 2 - 1,
            )
    }

    fn deflect(&mut self, center: i64) {
        self.ball_dx = -self.ball_dx;
        let offset = self.ball_y - center as f64;
        let nudge = if offset > 1.0 {
            0.5
        } else if offset < -1.0 {
            -0.5
        } else {
            0.0
        };
        let dy = (self.ball_dy + nudge).clamp(-MAX_DY, MAX_DY);
        if dy != 0.0 {
            self.ball_dy = dy;
        }
    }

    /// Advances the simulation by one step in place.
    pub fn advance(&mut self, action: Action) {
        self.right_paddle = clamp_paddle(self.right_paddle + action.paddle_delta());

        let target = self.ball_y;
        let lp = self.left_paddle as f64;
        if lp < target - 0.5 {
            self.left_paddle += OPPONENT_SPEED;
        } else if lp > target + 0.5 {
            self.left_paddle -= OPPONENT_SPEED;
        }
        self.left_paddle = clamp_paddle(self.left_paddle);

        self.ball_x += self.ball_dx;
        self.ball_y += self.ball_dy;

        if self.ball_y <= BALL_MIN && self.ball_dy < 0.0 {
            self.ball_y = 2.0 * BALL_MIN - self.ball_y;
            self.ball_dy = -self.ball_dy;
        } else if self.ball_y >= BALL_MAX && self.ball_dy > 0.0 {
            self.ball_y = 2.0 * BALL_MAX - self.ball_y;
            self.ball_dy = -self.ball_dy;
        }

        if self.ball_dx < 0.0 && self.hits_paddle(LEFT_PADDLE_COL, self.left_paddle) {
            self.deflect(self.left_paddle);
        } else if self.ball_dx > 0.0 && self.hits_paddle(RIGHT_PADDLE_COL, self.right_paddle) {
            self.deflect(self.right_paddle);
        }

        if self.ball_x < BALL_MIN || self.ball_x > BALL_MAX {
            let (dx, dy) = serve_velocity(&mut self.rng);
            self.ball_x = CENTER;
            self.ball_y = CENTER;
            self.ball_dx = dx;
            self.ball_dy = dy;
        }
        self.steps += 1;
    }
}

/// Functional form of [`SimState::advance`].
pub fn step(state: &SimState, action: Action) -> SimState {
    let mut next = state.clone();
    next.advance(action);
    next
}

pub fn render(state: &SimState) -> Frame {
    let mut f = Frame::empty();
    let h = PADDLE_HEIGHT;
    f.fill_rect(state.left_paddle - h / 2, LEFT_PADDLE_COL, h, PADDLE_WIDTH);
    f.fill_rect(
        state.right_paddle - h / 2,
        RIGHT_PADDLE_COL,
        h,
        PADDLE_WIDTH,
    );
    let (r0, _) = state.ball_rows();
    let (c0, _) = state.ball_cols();
    f.fill_rect(r0, c0, BALL_SIZE, BALL_SIZE);
    f
}

/// One episode: `frames.len() == actions.len() + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub frames: Vec<Frame>,
    pub actions: Vec<Action>,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() || self.actions.len() + 1 != self.frames.len() {
            return Err(Error::Invalid(format!(
                "trajectory has {} frames and {} actions",
                self.frames.len(),
                self.actions.len()
            )));
        }
        Ok(())
    }
}

/// Uniform-random policy episode of `max_steps` frames.
pub fn rollout(seed: u64, max_steps: usize) -> Result<Trajectory> {
    if max_steps < 2 {
        return Err(Error::Invalid(format!(
            "rollout needs at least 2 steps, got {max_steps}"
        )));
    }
    let mut policy = ChaCha8Rng::seed_from_u64(seed);
    policy.set_stream(1);
    let mut state = reset(seed);
    let mut frames = Vec::with_capacity(max_steps);
    let mut actions = Vec::with_capacity(max_steps - 1);
    frames.push(render(&state));
    for _ in 1..max_steps {
        let a = Action(policy.random_range(0..NUM_ACTIONS as u8));
        state.advance(a);
        actions.push(a);
        frames.push(render(&state));
    }
    Ok(Trajectory {
        frames,
        actions,
        seed,
    })
}
