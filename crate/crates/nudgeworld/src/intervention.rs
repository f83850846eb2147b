//! One-shot parameter perturbations and their cost.
//!
//! An intervention nudges exactly one user parameter for a single decision:
//! raise the burden reward, lower the disengage reward, or push the belief
//! parameters toward certainty. Feasibility caps keep each nudge inside the
//! parameter's domain, and `min_effectiveness` reports the cheapest nudge (as
//! a percentage of the cap) that flips the user's decision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{user_policy, UserParams, WorldParams};

/// Which parameter an intervention touches. The declaration order is also the
/// planner's tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    NoOp,
    OnB,
    OnD,
    OnGamma,
    OnP,
}

impl InterventionKind {
    /// All kinds in canonical (tie-break) order.
    pub const ALL: [InterventionKind; 5] = [
        InterventionKind::NoOp,
        InterventionKind::OnB,
        InterventionKind::OnD,
        InterventionKind::OnGamma,
        InterventionKind::OnP,
    ];

    /// The four kinds that actually perturb a parameter.
    pub const ACTIVE: [InterventionKind; 4] = [
        InterventionKind::OnB,
        InterventionKind::OnD,
        InterventionKind::OnGamma,
        InterventionKind::OnP,
    ];

    /// Stable short name used in tables and filenames.
    pub fn label(self) -> &'static str {
        match self {
            InterventionKind::NoOp => "none",
            InterventionKind::OnB => "b",
            InterventionKind::OnD => "d",
            InterventionKind::OnGamma => "gamma",
            InterventionKind::OnP => "p",
        }
    }

    /// True for the two belief nudges, whose caps are bounded by the unit
    /// interval rather than by configuration.
    pub fn is_bounded(self) -> bool {
        matches!(self, InterventionKind::OnGamma | InterventionKind::OnP)
    }
}

impl std::fmt::Display for InterventionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Magnitudes for each intervention kind plus the two knobs that shape the
/// feasibility caps: `d_floor` (lowest reachable disengage reward) and
/// `epsilon_b` (how far above zero a maximal burden nudge lands).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterventionProfile {
    pub delta_b: f64,
    pub delta_d: f64,
    pub delta_gamma: f64,
    pub delta_p: f64,
    pub d_floor: f64,
    pub epsilon_b: f64,
}

fn default_epsilon_b(user: &UserParams) -> f64 {
    1e-6 * f64::max(1.0, user.goal_reward.abs())
}

impl InterventionProfile {
    pub fn new(
        delta_b: f64,
        delta_d: f64,
        delta_gamma: f64,
        delta_p: f64,
        d_floor: f64,
        epsilon_b: f64,
    ) -> Result<Self> {
        for (name, v) in [
            ("delta_b", delta_b),
            ("delta_d", delta_d),
            ("delta_gamma", delta_gamma),
            ("delta_p", delta_p),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if !d_floor.is_finite() || !epsilon_b.is_finite() || epsilon_b < 0.0 {
            return Err(Error::InvalidParameter(
                "d_floor must be finite and epsilon_b finite nonnegative".into(),
            ));
        }
        Ok(Self { delta_b, delta_d, delta_gamma, delta_p, d_floor, epsilon_b })
    }

    /// Profile with every magnitude at its feasibility cap for `user`:
    /// burden pushed just above zero, beliefs to 1, disengage reward down to
    /// `-goal_reward`.
    pub fn maximal(user: &UserParams) -> Self {
        let d_floor = -user.goal_reward;
        let epsilon_b = default_epsilon_b(user);
        let mut profile =
            Self { delta_b: 0.0, delta_d: 0.0, delta_gamma: 0.0, delta_p: 0.0, d_floor, epsilon_b };
        profile.delta_b = profile.max_delta(InterventionKind::OnB, user);
        profile.delta_d = profile.max_delta(InterventionKind::OnD, user);
        profile.delta_gamma = profile.max_delta(InterventionKind::OnGamma, user);
        profile.delta_p = profile.max_delta(InterventionKind::OnP, user);
        profile
    }

    /// Profile that perturbs nothing (useful for planning against the user's
    /// unassisted policy).
    pub fn zeros(user: &UserParams) -> Self {
        Self {
            delta_b: 0.0,
            delta_d: 0.0,
            delta_gamma: 0.0,
            delta_p: 0.0,
            d_floor: -user.goal_reward,
            epsilon_b: default_epsilon_b(user),
        }
    }

    /// Configured magnitude for `kind`.
    pub fn delta(&self, kind: InterventionKind) -> f64 {
        match kind {
            InterventionKind::NoOp => 0.0,
            InterventionKind::OnB => self.delta_b,
            InterventionKind::OnD => self.delta_d,
            InterventionKind::OnGamma => self.delta_gamma,
            InterventionKind::OnP => self.delta_p,
        }
    }

    /// Feasibility cap for `kind` against `user`: the largest magnitude that
    /// keeps the parameter in its domain. Zero when the parameter has no room
    /// (burden already nonnegative, belief already 1, reward already at floor).
    pub fn max_delta(&self, kind: InterventionKind, user: &UserParams) -> f64 {
        match kind {
            InterventionKind::NoOp => 0.0,
            InterventionKind::OnB => {
                if user.burden < 0.0 {
                    -user.burden + self.epsilon_b
                } else {
                    0.0
                }
            }
            InterventionKind::OnD => f64::max(0.0, user.disengage_reward - self.d_floor),
            InterventionKind::OnGamma => 1.0 - user.gamma_user,
            InterventionKind::OnP => 1.0 - user.p_user,
        }
    }
}

/// `user` with `kind` shifted by an explicit magnitude, clamped to its domain.
/// Beliefs clamp at 1; the disengage reward never rises and never falls
/// through `d_floor`.
fn apply_magnitude(
    user: &UserParams,
    kind: InterventionKind,
    magnitude: f64,
    d_floor: f64,
) -> UserParams {
    let mut out = *user;
    match kind {
        InterventionKind::NoOp => {}
        InterventionKind::OnB => out.burden += magnitude,
        InterventionKind::OnD => {
            if out.disengage_reward > d_floor {
                out.disengage_reward = f64::max(d_floor, out.disengage_reward - magnitude);
            }
        }
        InterventionKind::OnGamma => out.gamma_user = f64::min(1.0, out.gamma_user + magnitude),
        InterventionKind::OnP => out.p_user = f64::min(1.0, out.p_user + magnitude),
    }
    out
}

/// The user parameters as the user perceives them for one decision under
/// `kind` at the profile's configured magnitude.
pub fn apply(user: &UserParams, kind: InterventionKind, profile: &InterventionProfile) -> UserParams {
    apply_magnitude(user, kind, profile.delta(kind), profile.d_floor)
}

/// The user's decision at distance `delta` under a transient application of
/// `kind`. `NoOp` reproduces the unassisted policy.
pub fn induced_action(
    user: &UserParams,
    world: &WorldParams,
    delta: usize,
    kind: InterventionKind,
    profile: &InterventionProfile,
) -> Result<bool> {
    let perturbed = apply(user, kind, profile);
    user_policy(&perturbed, world.d_world, delta)
}

/// Bisection width for the flip threshold, in parameter units.
pub const FLIP_TOLERANCE: f64 = 1e-9;

/// Cheapest flipping magnitude for `kind` at distance `delta`, as a percentage
/// of the feasibility cap.
///
/// Returns `Some(0.0)` when the user already acts, `None` when even the cap
/// fails to flip the decision (or the cap is zero). Otherwise scans
/// `resolution` grid points for the first flipping cell and bisects it to
/// [`FLIP_TOLERANCE`]; the returned threshold is the flipping end of the final
/// bracket.
pub fn min_effectiveness(
    user: &UserParams,
    world: &WorldParams,
    delta: usize,
    kind: InterventionKind,
    profile: &InterventionProfile,
    resolution: usize,
) -> Result<Option<f64>> {
    if kind == InterventionKind::NoOp {
        return Err(Error::InvalidParameter(
            "min_effectiveness is defined for parameter-shifting kinds only".into(),
        ));
    }
    if resolution < 1000 {
        return Err(Error::InvalidParameter(format!(
            "resolution must be at least 1000, got {resolution}"
        )));
    }
    if user_policy(user, world.d_world, delta)? {
        return Ok(Some(0.0));
    }
    let cap = profile.max_delta(kind, user);
    if cap <= 0.0 {
        return Ok(None);
    }
    let flips = |magnitude: f64| -> Result<bool> {
        let perturbed = apply_magnitude(user, kind, magnitude, profile.d_floor);
        user_policy(&perturbed, world.d_world, delta)
    };
    let mut lo = 0.0;
    let mut hi = None;
    for i in 1..=resolution {
        // Land exactly on the cap at the last point; rounding must not shave it.
        let m = if i == resolution { cap } else { cap * i as f64 / resolution as f64 };
        if flips(m)? {
            hi = Some(m);
            break;
        }
        lo = m;
    }
    let Some(mut hi) = hi else {
        return Ok(None);
    };
    while hi - lo > FLIP_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if flips(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(100.0 * hi / cap))
}
