//! The assisting agent's side: which nudge to offer in each world state.
//!
//! The planner wraps the user model in a second MDP. Its action set is the
//! intervention kinds, its reward is +1 when the (possibly ignored) nudge gets
//! the user to act and -1 otherwise, and its transitions follow the world
//! dynamics under the user's induced decision. Solving it yields a per-state
//! chosen kind; alongside it we record the full admissible set, because which
//! kinds *could* work is often more informative than the tie-broken pick.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::intervention::{induced_action, InterventionKind, InterventionProfile};
use crate::model::{user_policy, UserParams, UserState, WorldParams};
use crate::oracle::{state_index, value_iteration, TabularMdp};

/// Discount used by the assisting agent unless the caller overrides it.
pub const DEFAULT_GAMMA_APP: f64 = 0.99;

const PLANNER_VI_TOL: f64 = 1e-10;
const PLANNER_VI_MAX_ITER: usize = 1_000_000;

/// Everything the planner decided about one world state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDecision {
    pub state: UserState,
    /// Steps to the goal; `None` for the absorbing states.
    pub delta: Option<usize>,
    /// Kinds whose transient application makes the user act. Includes `NoOp`
    /// exactly when the user acts unassisted.
    pub admissible: BTreeSet<InterventionKind>,
    /// Value-maximal kind, ties broken in [`InterventionKind::ALL`] order.
    pub chosen: InterventionKind,
    /// True when the user acts without help.
    pub default_act: bool,
    /// The assisting agent's value at this state.
    pub app_value: f64,
}

/// The solved assisting-agent policy over every world state, ordered from the
/// farthest progress state toward the goal, then `Goal`, then `Disengaged`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppPolicy {
    pub decisions: Vec<StateDecision>,
    pub gamma_app: f64,
}

impl AppPolicy {
    /// Decisions at the non-absorbing states, farthest first.
    pub fn progress_decisions(&self) -> &[StateDecision] {
        let n = self.decisions.len();
        &self.decisions[..n - 2]
    }

    /// Decision at progress position `w` (1-based, `w = n_states` is the goal).
    pub fn decision_at(&self, w: usize) -> Option<&StateDecision> {
        self.decisions.iter().find(|d| d.state == UserState::Progress(w))
    }

    /// Chosen kind when the walker sits `delta` steps from the goal.
    pub fn chosen_at_delta(&self, delta: usize) -> Option<InterventionKind> {
        self.decisions.iter().find(|d| d.delta == Some(delta)).map(|d| d.chosen)
    }
}

/// Assisting-agent MDP over the shared state space. Actions are
/// [`InterventionKind::ALL`] in order. From a progress state the user acts
/// with probability `q = (1 - sigma2) * [kind induces action]`, moves right
/// with `q * p_world`, disengages with `(1 - q) * d_world`, and stays put
/// otherwise; the per-step reward is `2q - 1`.
pub fn build_app_mdp(
    user: &UserParams,
    world: &WorldParams,
    profile: &InterventionProfile,
    gamma_app: f64,
) -> Result<TabularMdp> {
    let n = world.n_states + 1; // progress states, goal, disengaged
    let kinds = InterventionKind::ALL;
    let mut transitions = vec![vec![vec![0.0; n]; kinds.len()]; n];
    let mut rewards = vec![vec![0.0; kinds.len()]; n];
    let mut absorbing = vec![false; n];

    for w in 1..world.n_states {
        let s = state_index(world, UserState::Progress(w));
        let delta = world.n_states - w;
        let right = if w + 1 == world.n_states {
            state_index(world, UserState::Goal)
        } else {
            state_index(world, UserState::Progress(w + 1))
        };
        let disengaged = state_index(world, UserState::Disengaged);
        for (a, kind) in kinds.into_iter().enumerate() {
            let induces = induced_action(user, world, delta, kind, profile)?;
            let q = if induces { 1.0 - world.sigma2 } else { 0.0 };
            rewards[s][a] = 2.0 * q - 1.0;
            transitions[s][a][right] += q * world.p_world;
            transitions[s][a][disengaged] += (1.0 - q) * world.d_world;
            transitions[s][a][s] +=
                q * (1.0 - world.p_world) + (1.0 - q) * (1.0 - world.d_world);
        }
    }
    for state in [UserState::Goal, UserState::Disengaged] {
        let s = state_index(world, state);
        absorbing[s] = true;
        for a in 0..kinds.len() {
            transitions[s][a][s] = 1.0;
        }
    }
    TabularMdp::new(transitions, rewards, gamma_app, absorbing)
}

/// Solves the assisting agent's problem: admissible set, chosen kind, and
/// default-act flag per state. The absorbing states get empty admissible sets
/// and `NoOp`, since no nudge can move a finished or disengaged user.
pub fn plan(
    user: &UserParams,
    world: &WorldParams,
    profile: &InterventionProfile,
    gamma_app: f64,
) -> Result<AppPolicy> {
    let mdp = build_app_mdp(user, world, profile, gamma_app)?;
    let solved = value_iteration(&mdp, PLANNER_VI_TOL, PLANNER_VI_MAX_ITER)?;

    let mut decisions = Vec::with_capacity(world.n_states + 1);
    for w in 1..world.n_states {
        let state = UserState::Progress(w);
        let s = state_index(world, state);
        let delta = world.n_states - w;
        let mut admissible = BTreeSet::new();
        for kind in InterventionKind::ALL {
            if induced_action(user, world, delta, kind, profile)? {
                admissible.insert(kind);
            }
        }
        decisions.push(StateDecision {
            state,
            delta: Some(delta),
            admissible,
            chosen: InterventionKind::ALL[solved.policy[s]],
            default_act: user_policy(user, world.d_world, delta)?,
            app_value: solved.values[s],
        });
    }
    for state in [UserState::Goal, UserState::Disengaged] {
        let s = state_index(world, state);
        decisions.push(StateDecision {
            state,
            delta: None,
            admissible: BTreeSet::new(),
            chosen: InterventionKind::NoOp,
            default_act: false,
            app_value: solved.values[s],
        });
    }
    Ok(AppPolicy { decisions, gamma_app })
}

/// Label for a maximal run of states with the same admissible-set shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowLabel {
    /// Nothing works.
    Hopeless,
    /// Only the unbounded reward nudges work.
    Window1,
    /// Exactly one of the belief nudges works (the run's signature kind).
    Window2,
    /// Both belief nudges work.
    Window3,
    /// The user acts unassisted.
    DefaultAct,
}

impl WindowLabel {
    pub fn label(self) -> &'static str {
        match self {
            WindowLabel::Hopeless => "hopeless",
            WindowLabel::Window1 => "window1",
            WindowLabel::Window2 => "window2",
            WindowLabel::Window3 => "window3",
            WindowLabel::DefaultAct => "default_act",
        }
    }
}

impl std::fmt::Display for WindowLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Window label of a single state's admissible set.
pub fn classify(admissible: &BTreeSet<InterventionKind>) -> WindowLabel {
    if admissible.is_empty() {
        return WindowLabel::Hopeless;
    }
    if admissible.contains(&InterventionKind::NoOp) {
        return WindowLabel::DefaultAct;
    }
    match admissible.iter().filter(|k| k.is_bounded()).count() {
        0 => WindowLabel::Window1,
        1 => WindowLabel::Window2,
        _ => WindowLabel::Window3,
    }
}

/// A maximal contiguous run of progress states sharing one window label.
/// `delta_far >= delta_near`; `kinds` is the union of the run's admissible
/// sets (by nestedness, the set at the near end).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRun {
    pub label: WindowLabel,
    pub delta_far: usize,
    pub delta_near: usize,
    pub kinds: BTreeSet<InterventionKind>,
}

impl WindowRun {
    /// The single belief kind that defines a `Window2` run, if that is what
    /// this run is.
    pub fn bounded_signature(&self) -> Option<InterventionKind> {
        if self.label != WindowLabel::Window2 {
            return None;
        }
        let mut bounded = self.kinds.iter().copied().filter(|k| k.is_bounded());
        match (bounded.next(), bounded.next()) {
            (Some(kind), None) => Some(kind),
            _ => None,
        }
    }
}

/// The planner's output grouped into labeled runs, farthest state first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowDecomposition {
    pub runs: Vec<WindowRun>,
}

impl WindowDecomposition {
    pub fn labels(&self) -> Vec<WindowLabel> {
        self.runs.iter().map(|r| r.label).collect()
    }

    pub fn run_with(&self, label: WindowLabel) -> Option<&WindowRun> {
        self.runs.iter().find(|r| r.label == label)
    }
}

/// Groups the policy's progress states into maximal same-label runs, scanning
/// from the farthest state toward the goal.
pub fn extract_windows(policy: &AppPolicy) -> WindowDecomposition {
    let mut runs: Vec<WindowRun> = Vec::new();
    for decision in policy.progress_decisions() {
        let delta = decision.delta.expect("progress states carry a distance");
        let label = classify(&decision.admissible);
        match runs.last_mut() {
            Some(run) if run.label == label => {
                run.delta_near = delta;
                run.kinds.extend(decision.admissible.iter().copied());
            }
            _ => runs.push(WindowRun {
                label,
                delta_far: delta,
                delta_near: delta,
                kinds: decision.admissible.clone(),
            }),
        }
    }
    WindowDecomposition { runs }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> WorldParams {
        WorldParams::new(8, 0.6, 0.1, 0.0).unwrap()
    }

    fn planned(user: &UserParams) -> (AppPolicy, WindowDecomposition) {
        let profile = InterventionProfile::maximal(user);
        let policy = plan(user, &world(), &profile, DEFAULT_GAMMA_APP).unwrap();
        let windows = extract_windows(&policy);
        (policy, windows)
    }

    fn myopic() -> UserParams {
        UserParams::new(-1.0, 10.0, 0.0, 0.6, 0.1).unwrap()
    }

    fn overconfident() -> UserParams {
        UserParams::new(-1.0, 10.0, 0.0, 0.9, 0.6).unwrap()
    }

    fn underconfident() -> UserParams {
        UserParams::new(-1.0, 10.0, 0.0, 0.1, 0.6).unwrap()
    }

    fn farsighted() -> UserParams {
        UserParams::new(-1.0, 10.0, 0.0, 0.6, 0.9).unwrap()
    }

    #[test]
    fn myopic_windows_run_burden_then_discount_then_default() {
        let (_, windows) = planned(&myopic());
        assert_eq!(
            windows.labels(),
            [WindowLabel::Window1, WindowLabel::Window2, WindowLabel::DefaultAct]
        );
        let w1 = &windows.runs[0];
        assert_eq!((w1.delta_far, w1.delta_near), (7, 6));
        assert_eq!(w1.kinds.iter().copied().collect::<Vec<_>>(), [InterventionKind::OnB]);
        let w2 = &windows.runs[1];
        assert_eq!((w2.delta_far, w2.delta_near), (5, 2));
        assert_eq!(w2.bounded_signature(), Some(InterventionKind::OnGamma));
        assert_eq!((windows.runs[2].delta_far, windows.runs[2].delta_near), (1, 1));
    }

    #[test]
    fn overconfident_windows_skip_straight_to_discount_nudges() {
        let (_, windows) = planned(&overconfident());
        assert_eq!(windows.labels(), [WindowLabel::Window2, WindowLabel::DefaultAct]);
        let w2 = &windows.runs[0];
        assert_eq!((w2.delta_far, w2.delta_near), (7, 4));
        assert_eq!(w2.bounded_signature(), Some(InterventionKind::OnGamma));
        assert_eq!((windows.runs[1].delta_far, windows.runs[1].delta_near), (3, 1));
    }

    #[test]
    fn underconfident_windows_end_on_belief_nudges_not_default() {
        let (_, windows) = planned(&underconfident());
        assert_eq!(windows.labels(), [WindowLabel::Window1, WindowLabel::Window2]);
        let w1 = &windows.runs[0];
        assert_eq!((w1.delta_far, w1.delta_near), (7, 4));
        assert_eq!(w1.kinds.iter().copied().collect::<Vec<_>>(), [InterventionKind::OnB]);
        let w2 = &windows.runs[1];
        assert_eq!((w2.delta_far, w2.delta_near), (3, 1));
        assert_eq!(w2.bounded_signature(), Some(InterventionKind::OnP));
    }

    #[test]
    fn farsighted_windows_pass_through_a_both_belief_stretch() {
        let (_, windows) = planned(&farsighted());
        assert_eq!(
            windows.labels(),
            [WindowLabel::Window2, WindowLabel::Window3, WindowLabel::DefaultAct]
        );
        let w2 = &windows.runs[0];
        assert_eq!((w2.delta_far, w2.delta_near), (7, 6));
        assert_eq!(w2.bounded_signature(), Some(InterventionKind::OnP));
        assert_eq!((windows.runs[1].delta_far, windows.runs[1].delta_near), (5, 5));
        assert_eq!((windows.runs[2].delta_far, windows.runs[2].delta_near), (4, 1));
    }

    #[test]
    fn stock_parameters_visit_every_label_but_hopeless() {
        let user = UserParams::new(-1.0, 10.0, 0.0, 0.6, 0.6).unwrap();
        let (_, windows) = planned(&user);
        assert_eq!(
            windows.labels(),
            [
                WindowLabel::Window1,
                WindowLabel::Window2,
                WindowLabel::Window3,
                WindowLabel::DefaultAct
            ]
        );
        assert_eq!(windows.runs[1].bounded_signature(), Some(InterventionKind::OnGamma));
    }

    #[test]
    fn chosen_kind_is_admissible_wherever_anything_works() {
        for user in [myopic(), overconfident(), underconfident(), farsighted()] {
            let (policy, _) = planned(&user);
            for d in policy.progress_decisions() {
                if !d.admissible.is_empty() {
                    assert!(d.admissible.contains(&d.chosen), "{:?} at {:?}", d.chosen, d.state);
                } else {
                    assert_eq!(d.chosen, InterventionKind::NoOp);
                }
            }
        }
    }

    #[test]
    fn default_act_iff_noop_is_admissible() {
        for user in [myopic(), overconfident(), underconfident(), farsighted()] {
            let (policy, _) = planned(&user);
            for d in policy.progress_decisions() {
                assert_eq!(d.default_act, d.admissible.contains(&InterventionKind::NoOp));
            }
        }
    }

    #[test]
    fn admissible_sets_grow_toward_the_goal() {
        for user in [myopic(), overconfident(), underconfident(), farsighted()] {
            let (policy, _) = planned(&user);
            let progress = policy.progress_decisions();
            for pair in progress.windows(2) {
                assert!(
                    pair[0].admissible.is_subset(&pair[1].admissible),
                    "admissible shrank from {:?} to {:?}",
                    pair[0].state,
                    pair[1].state
                );
            }
        }
    }

    #[test]
    fn absorbing_states_admit_nothing() {
        let (policy, _) = planned(&underconfident());
        for d in &policy.decisions {
            if matches!(d.state, UserState::Goal | UserState::Disengaged) {
                assert!(d.admissible.is_empty());
                assert_eq!(d.chosen, InterventionKind::NoOp);
                assert_eq!(d.delta, None);
            }
        }
        assert_eq!(policy.decisions.len(), 9);
        assert_eq!(policy.progress_decisions().len(), 7);
    }

    #[test]
    fn unreachable_goal_collapses_to_one_hopeless_run() {
        // A tiny goal next to a big standing reward: no single nudge flips any state.
        let user = UserParams::new(-1.0, 0.1, 5.0, 0.6, 0.6).unwrap();
        let (policy, windows) = planned(&user);
        assert_eq!(windows.labels(), [WindowLabel::Hopeless]);
        assert_eq!((windows.runs[0].delta_far, windows.runs[0].delta_near), (7, 1));
        for d in policy.progress_decisions() {
            assert_eq!(d.chosen, InterventionKind::NoOp);
        }
    }

    #[test]
    fn noisy_execution_still_reports_the_same_admissible_sets() {
        // Execution noise changes what the assistant attempts, not what would
        // work: with certain failure every kind ties and NoOp wins.
        let user = underconfident();
        let profile = InterventionProfile::maximal(&user);
        let clean = plan(&user, &world(), &profile, DEFAULT_GAMMA_APP).unwrap();
        let noisy_world = WorldParams::new(8, 0.6, 0.1, 1.0).unwrap();
        let noisy = plan(&user, &noisy_world, &profile, DEFAULT_GAMMA_APP).unwrap();
        for (c, n) in clean.decisions.iter().zip(&noisy.decisions) {
            assert_eq!(c.admissible, n.admissible);
            assert_eq!(n.chosen, InterventionKind::NoOp);
        }
    }

    #[test]
    fn window_order_is_monotone_toward_the_goal() {
        for user in [myopic(), overconfident(), underconfident(), farsighted()] {
            let (_, windows) = planned(&user);
            let labels = windows.labels();
            for pair in labels.windows(2) {
                assert!(pair[0] < pair[1], "labels regressed: {:?}", labels);
            }
        }
    }

    #[test]
    fn planner_rejects_a_degenerate_discount() {
        let user = underconfident();
        let profile = InterventionProfile::maximal(&user);
        assert!(plan(&user, &world(), &profile, 1.0).is_err());
    }
}
