//! User-side decision model.
//!
//! The user walks a progress line `w = 1..N-1` toward a goal at `w = N`. Each
//! step they either perform the target behavior (move right with probability
//! `p_user` in their own model of the world, paying `burden`) or abstain
//! (risking disengagement with probability `d_world`). Both continuations have
//! closed-form discounted values, so the optimal decision at distance
//! `delta = N - w` reduces to comparing two scalars.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reward and belief parameters of the user.
///
/// `p_user` and `gamma_user` are the user's *subjective* progress probability
/// and discount; they need not match the world that actually moves them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserParams {
    /// Per-step reward for performing the behavior. Usually negative.
    pub burden: f64,
    /// One-shot reward collected on entering the goal state.
    pub goal_reward: f64,
    /// One-shot reward collected on disengaging.
    pub disengage_reward: f64,
    /// Subjective probability that performing the behavior advances `w`.
    pub p_user: f64,
    /// Subjective discount factor.
    pub gamma_user: f64,
}

impl UserParams {
    pub fn new(
        burden: f64,
        goal_reward: f64,
        disengage_reward: f64,
        p_user: f64,
        gamma_user: f64,
    ) -> Result<Self> {
        let params = Self { burden, goal_reward, disengage_reward, p_user, gamma_user };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("burden", self.burden),
            ("goal_reward", self.goal_reward),
            ("disengage_reward", self.disengage_reward),
        ] {
            if !value.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite, got {value}")));
            }
        }
        if !(0.0..=1.0).contains(&self.p_user) {
            return Err(Error::InvalidParameter(format!(
                "p_user must lie in [0, 1], got {}",
                self.p_user
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma_user) {
            return Err(Error::InvalidParameter(format!(
                "gamma_user must lie in [0, 1], got {}",
                self.gamma_user
            )));
        }
        Ok(())
    }
}

/// Ground-truth dynamics of the environment.
///
/// `n_states` is the goal position `N`: progress states are `1..N-1` and the
/// goal sits at `w = N`. Disengagement is a separate absorbing state reached
/// only from abstention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldParams {
    /// Goal position `N`. Progress states are `1..=N-1`.
    pub n_states: usize,
    /// True probability that a performed behavior advances `w`.
    pub p_world: f64,
    /// Probability of disengaging on a step where no behavior was performed.
    pub d_world: f64,
    /// Execution-noise variance: a commanded behavior is dropped with this probability.
    pub sigma2: f64,
}

impl WorldParams {
    pub fn new(n_states: usize, p_world: f64, d_world: f64, sigma2: f64) -> Result<Self> {
        let params = Self { n_states, p_world, d_world, sigma2 };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states < 2 {
            return Err(Error::InvalidParameter(format!(
                "n_states must be at least 2, got {}",
                self.n_states
            )));
        }
        if !(self.p_world > 0.0 && self.p_world <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "p_world must lie in (0, 1], got {}",
                self.p_world
            )));
        }
        if !(self.d_world > 0.0 && self.d_world <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "d_world must lie in (0, 1], got {}",
                self.d_world
            )));
        }
        if !(0.0..=1.0).contains(&self.sigma2) {
            return Err(Error::InvalidParameter(format!(
                "sigma2 must lie in [0, 1], got {}",
                self.sigma2
            )));
        }
        Ok(())
    }

    /// Number of progress states (`1..=N-1`).
    pub fn progress_states(&self) -> usize {
        self.n_states - 1
    }

    /// True when `w` is a valid progress state.
    pub fn is_progress(&self, w: usize) -> bool {
        (1..self.n_states).contains(&w)
    }
}

/// Position of the user: on the line, at the goal, or gone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UserState {
    Progress(usize),
    Goal,
    Disengaged,
}

impl UserState {
    /// Distance to the goal, defined only on progress states.
    pub fn delta(&self, world: &WorldParams) -> Option<usize> {
        match *self {
            UserState::Progress(w) if world.is_progress(w) => Some(world.n_states - w),
            _ => None,
        }
    }
}

/// The three discounted sums whose comparison decides the user's action,
/// plus the shared denominator `z = 1 - gamma*(1-p)`.
///
/// `burden_term + goal_term` is the march-right value and is exactly (bit for
/// bit) what [`v_right`] returns; `disengage_term` is exactly [`v_stay`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecisionComponents {
    pub burden_term: f64,
    pub goal_term: f64,
    pub disengage_term: f64,
    pub z: f64,
}

fn check_delta(delta: usize) -> Result<()> {
    if delta == 0 {
        return Err(Error::InvalidParameter("delta must be at least 1".into()));
    }
    Ok(())
}

/// Immediate reward to the user (goal/disengage rewards are granted on entry,
/// so at the absorbing states themselves they read as the entry reward).
pub fn user_reward(user: &UserParams, state: UserState, action: bool) -> f64 {
    match state {
        UserState::Progress(_) => {
            if action {
                user.burden
            } else {
                0.0
            }
        }
        UserState::Goal => user.goal_reward,
        UserState::Disengaged => user.disengage_reward,
    }
}

/// Value of abstaining forever: a geometric race between discounting and the
/// per-step disengagement hazard.
///
/// `v_stay = d*D / (1 - gamma*(1-d))`. Rejects the degenerate pair
/// `gamma_user = 1, d_world = 0` whose series does not converge.
pub fn v_stay(user: &UserParams, d_world: f64) -> Result<f64> {
    let denom = 1.0 - user.gamma_user * (1.0 - d_world);
    if denom <= 0.0 {
        return Err(Error::Singularity(format!(
            "1 - gamma*(1-d) = {denom} (gamma_user = {}, d_world = {d_world})",
            user.gamma_user
        )));
    }
    Ok(d_world * user.disengage_reward / denom)
}

/// The burden and goal components of the march-right value at distance `delta`.
///
/// With `z = 1 - gamma*(1-p)` and `t_k = gamma^k p^k / z^(k+1)`:
///
/// ```text
/// burden = B * sum_{k=0}^{delta-1} t_k        goal = G * p * t_{delta-1}
/// ```
///
/// Computed with a running product, so it stays finite and accurate out to
/// delta ~ 1e4 (the step ratio `gamma*p/z` never exceeds 1).
fn march_right_terms(user: &UserParams, delta: usize) -> Result<(f64, f64, f64)> {
    check_delta(delta)?;
    let z = 1.0 - user.gamma_user * (1.0 - user.p_user);
    if z <= 0.0 {
        return Err(Error::Singularity(format!(
            "z = 1 - gamma*(1-p) = {z} (gamma_user = {}, p_user = {})",
            user.gamma_user, user.p_user
        )));
    }
    let ratio = user.gamma_user * user.p_user / z;
    let mut term = 1.0 / z;
    let mut acc = term;
    for _ in 1..delta {
        term *= ratio;
        acc += term;
    }
    let burden_term = user.burden * acc;
    let goal_term = user.goal_reward * term * user.p_user;
    Ok((burden_term, goal_term, z))
}

/// Value of performing the behavior every step until the goal, at distance `delta`.
///
/// ```
/// use nudgeworld::model::{v_right, UserParams};
/// let user = UserParams::new(-1.0, 10.0, 0.0, 0.6, 0.6).unwrap();
/// // one step out: (p*G + B) / z = 5 / 0.76
/// assert!((v_right(&user, 1).unwrap() - 6.578947368421053).abs() < 1e-12);
/// ```
pub fn v_right(user: &UserParams, delta: usize) -> Result<f64> {
    let (burden_term, goal_term, _) = march_right_terms(user, delta)?;
    Ok(burden_term + goal_term)
}

/// All decision components at distance `delta`.
pub fn decision_components(
    user: &UserParams,
    d_world: f64,
    delta: usize,
) -> Result<DecisionComponents> {
    let (burden_term, goal_term, z) = march_right_terms(user, delta)?;
    let disengage_term = v_stay(user, d_world)?;
    Ok(DecisionComponents { burden_term, goal_term, disengage_term, z })
}

/// Optimal user decision at distance `delta`: `true` means perform the behavior.
///
/// The comparison is strict, so a tie resolves to abstaining.
pub fn user_policy(user: &UserParams, d_world: f64, delta: usize) -> Result<bool> {
    Ok(v_right(user, delta)? > v_stay(user, d_world)?)
}

/// Optimal state value at distance `delta`: the better of the two continuations.
pub fn user_value(user: &UserParams, d_world: f64, delta: usize) -> Result<f64> {
    Ok(v_right(user, delta)?.max(v_stay(user, d_world)?))
}
