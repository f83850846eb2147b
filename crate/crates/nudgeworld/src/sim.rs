//! Seeded Monte Carlo rollouts of the user/assistant/world loop.
//!
//! Episodes are driven by a counter-based generator (ChaCha8) seeded per
//! episode, so batches are reproducible on any platform and may run in
//! parallel without changing results. Every step consumes exactly three
//! uniforms (execution, movement, disengagement) whether or not each branch
//! needs one; holding seeds fixed while varying the noise level therefore
//! couples trajectories pathwise, and raising the noise can only demote
//! outcomes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervention::{induced_action, InterventionKind, InterventionProfile};
use crate::model::{UserParams, UserState, WorldParams};
use crate::planner::AppPolicy;

/// One decision epoch: the state the walker was in, what the assistant
/// offered, what the user decided, and what actually happened.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub state: UserState,
    pub intervention: InterventionKind,
    pub a_intended: bool,
    pub a_observed: bool,
    pub r_app: f64,
}

/// How an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Goal,
    Disengaged,
    HorizonExceeded,
}

impl Outcome {
    pub fn label(self) -> &'static str {
        match self {
            Outcome::Goal => "goal",
            Outcome::Disengaged => "disengaged",
            Outcome::HorizonExceeded => "horizon_exceeded",
        }
    }
}

/// A full episode. `app_return` is the undiscounted sum of per-step rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed: u64,
    pub start: UserState,
    pub steps: Vec<Step>,
    pub outcome: Outcome,
    pub final_state: UserState,
    pub app_return: f64,
}

impl Trajectory {
    /// Writes the steps as CSV, one line per step.
    pub fn write_steps<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,w,intervention,a_intended,a_observed,r_app")?;
        for step in &self.steps {
            let w = match step.state {
                UserState::Progress(w) => w,
                // Steps are only taken from progress states.
                UserState::Goal | UserState::Disengaged => unreachable!(),
            };
            writeln!(
                out,
                "{},{},{},{},{},{}",
                step.index,
                w,
                step.intervention,
                step.a_intended as u8,
                step.a_observed as u8,
                step.r_app
            )?;
        }
        Ok(())
    }
}

/// Per-episode seeds derived from one master seed via the splitmix64 stream,
/// so a batch is identified by a single number.
pub fn derive_seeds(master_seed: u64, count: usize) -> Vec<u64> {
    let mut state = master_seed;
    (0..count)
        .map(|_| {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^ (z >> 31)
        })
        .collect()
}

/// Precomputed (chosen kind, induced decision) per progress position.
fn induced_table(
    user: &UserParams,
    world: &WorldParams,
    policy: &AppPolicy,
    profile: &InterventionProfile,
) -> Result<Vec<(InterventionKind, bool)>> {
    if policy.progress_decisions().len() != world.n_states - 1 {
        return Err(Error::InvalidParameter(format!(
            "policy covers {} progress states, world has {}",
            policy.progress_decisions().len(),
            world.n_states - 1
        )));
    }
    (1..world.n_states)
        .map(|w| {
            let decision = policy
                .decision_at(w)
                .ok_or_else(|| Error::InvalidParameter(format!("policy misses state {w}")))?;
            let delta = world.n_states - w;
            let induced = induced_action(user, world, delta, decision.chosen, profile)?;
            Ok((decision.chosen, induced))
        })
        .collect()
}

/// Runs one episode from progress position `start_w`.
///
/// Per step the assistant applies the policy's chosen kind, the user decides
/// under the perturbed parameters, execution succeeds with probability
/// `1 - sigma2`, and the world moves: right with `p_world` on an executed
/// action, to `Disengaged` with `d_world` on an abstention. The reward is
/// `2 * a_observed - 1`. Identical arguments produce identical trajectories.
pub fn rollout(
    user: &UserParams,
    world: &WorldParams,
    policy: &AppPolicy,
    profile: &InterventionProfile,
    seed: u64,
    horizon: usize,
    start_w: usize,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    if start_w == 0 || start_w >= world.n_states {
        return Err(Error::InvalidParameter(format!(
            "start_w must be a progress position in 1..={}, got {start_w}",
            world.n_states - 1
        )));
    }
    let table = induced_table(user, world, policy, profile)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = UserState::Progress(start_w);
    let mut w = start_w;
    let mut steps = Vec::new();
    let mut app_return = 0.0;
    let mut outcome = Outcome::HorizonExceeded;
    let mut final_state = start;

    for index in 0..horizon {
        // Three draws per step, branch or not: keeps streams aligned across
        // noise levels under a shared seed.
        let u_exec: f64 = rng.random();
        let u_move: f64 = rng.random();
        let u_dis: f64 = rng.random();

        let (intervention, a_intended) = table[w - 1];
        let a_observed = a_intended && u_exec < 1.0 - world.sigma2;
        let r_app = if a_observed { 1.0 } else { -1.0 };
        app_return += r_app;
        steps.push(Step {
            index,
            state: UserState::Progress(w),
            intervention,
            a_intended,
            a_observed,
            r_app,
        });

        if a_observed {
            if u_move < world.p_world {
                w += 1;
            }
        } else if u_dis < world.d_world {
            final_state = UserState::Disengaged;
            outcome = Outcome::Disengaged;
            return Ok(Trajectory { seed, start, steps, outcome, final_state, app_return });
        }
        if w == world.n_states {
            final_state = UserState::Goal;
            outcome = Outcome::Goal;
            return Ok(Trajectory { seed, start, steps, outcome, final_state, app_return });
        }
        final_state = UserState::Progress(w);
    }
    Ok(Trajectory { seed, start, steps, outcome, final_state, app_return })
}

/// A point estimate with a normal-approximation confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ci {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

const Z_95: f64 = 1.96;

impl Ci {
    fn rate(successes: usize, n: usize) -> Self {
        let p = successes as f64 / n as f64;
        let half = Z_95 * (p * (1.0 - p) / n as f64).sqrt();
        Ci { estimate: p, lo: (p - half).max(0.0), hi: (p + half).min(1.0) }
    }

    fn mean(samples: impl Iterator<Item = f64> + Clone) -> Option<Self> {
        let n = samples.clone().count();
        if n == 0 {
            return None;
        }
        let mean = samples.clone().sum::<f64>() / n as f64;
        let var = samples.map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let half = Z_95 * (var / n as f64).sqrt();
        Some(Ci { estimate: mean, lo: mean - half, hi: mean + half })
    }
}

/// Aggregates over a batch of independent episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub episodes: usize,
    pub goal_rate: Ci,
    pub disengage_rate: Ci,
    pub horizon_exceeded_rate: Ci,
    pub mean_app_return: Ci,
    /// Steps taken until absorption or cutoff, over all episodes.
    pub mean_steps: Ci,
    /// Steps to the goal, over goal episodes only; `None` if none reached it.
    pub mean_steps_to_goal: Option<Ci>,
}

/// Runs one episode per seed (in parallel, merged in seed order) and
/// summarizes the outcomes. The three outcome rates sum to one.
pub fn batch_stats(
    user: &UserParams,
    world: &WorldParams,
    policy: &AppPolicy,
    profile: &InterventionProfile,
    seeds: &[u64],
    horizon: usize,
    start_w: usize,
) -> Result<BatchStats> {
    if seeds.is_empty() {
        return Err(Error::InvalidParameter("batch_stats needs at least one seed".into()));
    }
    let trajectories: Vec<Trajectory> = seeds
        .par_iter()
        .map(|&seed| rollout(user, world, policy, profile, seed, horizon, start_w))
        .collect::<Result<_>>()?;

    let n = trajectories.len();
    let count = |o: Outcome| trajectories.iter().filter(|t| t.outcome == o).count();
    let goal = count(Outcome::Goal);
    let disengaged = count(Outcome::Disengaged);
    let exceeded = count(Outcome::HorizonExceeded);
    debug_assert_eq!(goal + disengaged + exceeded, n);

    Ok(BatchStats {
        episodes: n,
        goal_rate: Ci::rate(goal, n),
        disengage_rate: Ci::rate(disengaged, n),
        horizon_exceeded_rate: Ci::rate(exceeded, n),
        mean_app_return: Ci::mean(trajectories.iter().map(|t| t.app_return))
            .expect("nonempty batch"),
        mean_steps: Ci::mean(trajectories.iter().map(|t| t.steps.len() as f64))
            .expect("nonempty batch"),
        mean_steps_to_goal: Ci::mean(
            trajectories
                .iter()
                .filter(|t| t.outcome == Outcome::Goal)
                .map(|t| t.steps.len() as f64),
        ),
    })
}
