//! Tabular MDP solver used as an independent check on the closed forms and as
//! the planner's backend.
//!
//! Everything here is dense and exact-ish: state counts in this toolkit are a
//! few hundred at most, so clarity wins over sparsity.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{user_reward, UserParams, UserState, WorldParams};

/// Dense finite MDP. `transitions[s][a][s']` is a probability,
/// `rewards[s][a]` the expected immediate reward (any one-shot reward for
/// entering an absorbing state is folded into the entering transition's
/// reward, so absorbing states self-loop at reward 0).
#[derive(Debug, Clone)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub rewards: Vec<Vec<f64>>,
    pub discount: f64,
    pub absorbing: Vec<bool>,
}

const ROW_SUM_TOL: f64 = 1e-8;

impl TabularMdp {
    /// Validates shapes, row stochasticity (within 1e-8), the discount range
    /// `[0, 1)`, and that absorbing states self-loop with zero reward.
    pub fn new(
        transitions: Vec<Vec<Vec<f64>>>,
        rewards: Vec<Vec<f64>>,
        discount: f64,
        absorbing: Vec<bool>,
    ) -> Result<Self> {
        let n_states = transitions.len();
        if n_states == 0 {
            return Err(Error::InvalidParameter("an MDP needs at least one state".into()));
        }
        let n_actions = transitions[0].len();
        if n_actions == 0 {
            return Err(Error::InvalidParameter("an MDP needs at least one action".into()));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::InvalidParameter(format!(
                "discount must lie in [0, 1) for the tabular solver, got {discount}"
            )));
        }
        if rewards.len() != n_states || absorbing.len() != n_states {
            return Err(Error::InvalidParameter("reward/absorbing shape mismatch".into()));
        }
        for s in 0..n_states {
            if transitions[s].len() != n_actions || rewards[s].len() != n_actions {
                return Err(Error::InvalidParameter(format!("state {s}: action arity mismatch")));
            }
            for a in 0..n_actions {
                let row = &transitions[s][a];
                if row.len() != n_states {
                    return Err(Error::InvalidParameter(format!(
                        "state {s}, action {a}: transition row has wrong length"
                    )));
                }
                let mut sum = 0.0;
                for (&pr, s2) in row.iter().zip(0..) {
                    if !(0.0..=1.0 + ROW_SUM_TOL).contains(&pr) {
                        return Err(Error::InvalidParameter(format!(
                            "P[{s}][{a}][{s2}] = {pr} is not a probability"
                        )));
                    }
                    sum += pr;
                }
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "P[{s}][{a}] sums to {sum}, expected 1"
                    )));
                }
                if absorbing[s] && (row[s] - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "absorbing state {s} must self-loop under every action"
                    )));
                }
                if absorbing[s] && rewards[s][a] != 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "absorbing state {s} must have zero reward (entry rewards live on the entering transition)"
                    )));
                }
            }
        }
        Ok(Self { n_states, n_actions, transitions, rewards, discount, absorbing })
    }
}

/// Output of [`value_iteration`].
#[derive(Debug, Clone)]
pub struct ValueIterationResult {
    pub values: Vec<f64>,
    /// Greedy action per state; ties resolve to the lowest action index.
    pub policy: Vec<usize>,
    pub iterations: usize,
    /// Final sup-norm Bellman residual.
    pub residual: f64,
}

/// Standard value iteration to a sup-norm residual of `tol`.
///
/// Ties in the greedy argmax go to the lowest action index, matching the
/// strict inequality used by the closed-form user policy (action 0 = abstain).
pub fn value_iteration(mdp: &TabularMdp, tol: f64, max_iter: usize) -> Result<ValueIterationResult> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let mut values = vec![0.0; mdp.n_states];
    let mut next = vec![0.0; mdp.n_states];
    let mut residual = f64::INFINITY;
    for iteration in 1..=max_iter {
        residual = 0.0;
        for s in 0..mdp.n_states {
            let mut best = f64::NEG_INFINITY;
            for a in 0..mdp.n_actions {
                let mut q = mdp.rewards[s][a];
                let row = &mdp.transitions[s][a];
                let mut future = 0.0;
                for (s2, &pr) in row.iter().enumerate() {
                    if pr > 0.0 {
                        future += pr * values[s2];
                    }
                }
                q += mdp.discount * future;
                if q > best {
                    best = q;
                }
            }
            next[s] = best;
            let d = (next[s] - values[s]).abs();
            if d > residual {
                residual = d;
            }
        }
        std::mem::swap(&mut values, &mut next);
        if residual <= tol {
            let policy = greedy_policy(mdp, &values);
            return Ok(ValueIterationResult { values, policy, iterations: iteration, residual });
        }
    }
    Err(Error::NonConvergence { iterations: max_iter, residual })
}

fn greedy_policy(mdp: &TabularMdp, values: &[f64]) -> Vec<usize> {
    (0..mdp.n_states)
        .map(|s| {
            let mut best_a = 0;
            let mut best_q = f64::NEG_INFINITY;
            for a in 0..mdp.n_actions {
                let mut q = mdp.rewards[s][a];
                for (s2, &pr) in mdp.transitions[s][a].iter().enumerate() {
                    if pr > 0.0 {
                        q += mdp.discount * pr * values[s2];
                    }
                }
                if q > best_q {
                    best_q = q;
                    best_a = a;
                }
            }
            best_a
        })
        .collect()
}

/// Where a fixed policy ends up: for every state, the probability of being
/// absorbed at each absorbing state.
#[derive(Debug, Clone)]
pub struct AbsorptionProbabilities {
    /// Absorbing state indices, in state order; columns of `probabilities`.
    pub absorbing_states: Vec<usize>,
    /// `probabilities[s][j]` = P(absorbed at `absorbing_states[j]` | start `s`).
    pub probabilities: Vec<Vec<f64>>,
}

impl AbsorptionProbabilities {
    pub fn probability(&self, from: usize, absorbing: usize) -> Option<f64> {
        let j = self.absorbing_states.iter().position(|&s| s == absorbing)?;
        Some(self.probabilities[from][j])
    }
}

/// Solves the absorbing-chain system `(I - Q) X = R` for the Markov chain
/// induced by `policy`. Errors if the chain has no absorbing states, the
/// system is singular, or probability mass fails to absorb (row sums off 1).
pub fn absorption_probabilities(
    mdp: &TabularMdp,
    policy: &[usize],
) -> Result<AbsorptionProbabilities> {
    if policy.len() != mdp.n_states {
        return Err(Error::InvalidParameter(format!(
            "policy covers {} states, MDP has {}",
            policy.len(),
            mdp.n_states
        )));
    }
    if let Some(&a) = policy.iter().find(|&&a| a >= mdp.n_actions) {
        return Err(Error::InvalidParameter(format!("policy action {a} out of range")));
    }
    let absorbing_states: Vec<usize> = (0..mdp.n_states).filter(|&s| mdp.absorbing[s]).collect();
    if absorbing_states.is_empty() {
        return Err(Error::SingularSystem("chain has no absorbing states".into()));
    }
    let transient: Vec<usize> = (0..mdp.n_states).filter(|&s| !mdp.absorbing[s]).collect();
    let n_t = transient.len();
    let n_a = absorbing_states.len();

    let mut probabilities = vec![vec![0.0; n_a]; mdp.n_states];
    for (j, &s) in absorbing_states.iter().enumerate() {
        probabilities[s][j] = 1.0;
    }
    if n_t > 0 {
        let chain_row = |s: usize| &mdp.transitions[s][policy[s]];
        let i_minus_q = DMatrix::from_fn(n_t, n_t, |i, j| {
            let q = chain_row(transient[i])[transient[j]];
            if i == j {
                1.0 - q
            } else {
                -q
            }
        });
        let entry = DMatrix::from_fn(n_t, n_a, |i, j| chain_row(transient[i])[absorbing_states[j]]);
        let solved = i_minus_q
            .lu()
            .solve(&entry)
            .ok_or_else(|| Error::SingularSystem("I - Q is not invertible".into()))?;
        for (i, &s) in transient.iter().enumerate() {
            let mut row_sum = 0.0;
            for j in 0..n_a {
                probabilities[s][j] = solved[(i, j)];
                row_sum += solved[(i, j)];
            }
            if (row_sum - 1.0).abs() > 1e-6 {
                return Err(Error::SingularSystem(format!(
                    "absorption row for state {s} sums to {row_sum}; mass does not absorb"
                )));
            }
        }
    }
    Ok(AbsorptionProbabilities { absorbing_states, probabilities })
}

/// State indexing shared by the user and app MDPs: progress states first
/// (`w -> w - 1`), then the goal, then disengaged.
pub fn state_index(world: &WorldParams, state: UserState) -> usize {
    match state {
        UserState::Progress(w) => {
            debug_assert!(world.is_progress(w));
            w - 1
        }
        UserState::Goal => world.n_states - 1,
        UserState::Disengaged => world.n_states,
    }
}

/// Inverse of [`state_index`].
pub fn index_state(world: &WorldParams, index: usize) -> UserState {
    if index + 1 < world.n_states {
        UserState::Progress(index + 1)
    } else if index + 1 == world.n_states {
        UserState::Goal
    } else {
        UserState::Disengaged
    }
}

/// The user's own decision problem as a tabular MDP: transitions follow the
/// user's subjective `p_user`, abstention risks `d_world`-disengagement, and
/// goal/disengage rewards are granted on the entering transition.
///
/// Action 0 abstains, action 1 performs the behavior. `gamma_user` must be
/// below 1 here (the closed forms also cover the boundary).
pub fn build_user_mdp(user: &UserParams, world: &WorldParams) -> Result<TabularMdp> {
    user.validate()?;
    world.validate()?;
    let n = world.n_states + 1;
    let goal = state_index(world, UserState::Goal);
    let gone = state_index(world, UserState::Disengaged);

    let mut transitions = vec![vec![vec![0.0; n]; 2]; n];
    let mut rewards = vec![vec![0.0; 2]; n];
    let mut absorbing = vec![false; n];
    absorbing[goal] = true;
    absorbing[gone] = true;
    for a in 0..2 {
        transitions[goal][a][goal] = 1.0;
        transitions[gone][a][gone] = 1.0;
    }

    for w in 1..world.n_states {
        let s = state_index(world, UserState::Progress(w));
        let base = |action: bool| user_reward(user, UserState::Progress(w), action);
        // Abstain: disengage with d_world, collecting D on entry.
        transitions[s][0][gone] = world.d_world;
        transitions[s][0][s] = 1.0 - world.d_world;
        rewards[s][0] = base(false) + world.d_world * user.disengage_reward;
        // Act: advance with p_user, collecting G if the next cell is the goal.
        let next = if w + 1 == world.n_states {
            goal
        } else {
            state_index(world, UserState::Progress(w + 1))
        };
        transitions[s][1][next] = user.p_user;
        transitions[s][1][s] += 1.0 - user.p_user;
        rewards[s][1] = base(true)
            + if next == goal { user.p_user * user.goal_reward } else { 0.0 };
    }

    TabularMdp::new(transitions, rewards, user.gamma_user, absorbing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{user_value, v_right, v_stay};

    fn defaults() -> (UserParams, WorldParams) {
        (
            UserParams::new(-1.0, 10.0, 0.0, 0.6, 0.6).unwrap(),
            WorldParams::new(8, 0.6, 0.1, 0.0).unwrap(),
        )
    }

    #[test]
    fn user_mdp_matches_closed_forms_at_defaults() {
        let (user, world) = defaults();
        let mdp = build_user_mdp(&user, &world).unwrap();
        let solved = value_iteration(&mdp, 1e-12, 200_000).unwrap();
        for w in 1..world.n_states {
            let delta = world.n_states - w;
            let s = state_index(&world, UserState::Progress(w));
            let expected = user_value(&user, world.d_world, delta).unwrap();
            assert!(
                (solved.values[s] - expected).abs() < 1e-8,
                "w = {w}: oracle {} vs closed form {expected}",
                solved.values[s]
            );
        }
        assert_eq!(solved.values[state_index(&world, UserState::Goal)], 0.0);
    }

    #[test]
    fn oracle_policy_matches_strict_comparison() {
        let (user, world) = defaults();
        let mdp = build_user_mdp(&user, &world).unwrap();
        let solved = value_iteration(&mdp, 1e-12, 200_000).unwrap();
        for w in 1..world.n_states {
            let delta = world.n_states - w;
            let s = state_index(&world, UserState::Progress(w));
            let acts = v_right(&user, delta).unwrap() > v_stay(&user, world.d_world).unwrap();
            assert_eq!(solved.policy[s] == 1, acts, "w = {w}");
        }
    }

    #[test]
    fn always_acting_reaches_the_goal_surely() {
        let (user, world) = defaults();
        let mdp = build_user_mdp(&user, &world).unwrap();
        let policy = vec![1; mdp.n_states];
        let abs = absorption_probabilities(&mdp, &policy).unwrap();
        let goal = state_index(&world, UserState::Goal);
        for w in 1..world.n_states {
            let s = state_index(&world, UserState::Progress(w));
            let p = abs.probability(s, goal).unwrap();
            assert!((p - 1.0).abs() < 1e-10, "w = {w}: {p}");
        }
    }

    #[test]
    fn never_acting_disengages_surely() {
        let (user, world) = defaults();
        let mdp = build_user_mdp(&user, &world).unwrap();
        let policy = vec![0; mdp.n_states];
        let abs = absorption_probabilities(&mdp, &policy).unwrap();
        let gone = state_index(&world, UserState::Disengaged);
        for w in 1..world.n_states {
            let s = state_index(&world, UserState::Progress(w));
            let p = abs.probability(s, gone).unwrap();
            assert!((p - 1.0).abs() < 1e-10, "w = {w}: {p}");
        }
    }

    #[test]
    fn absorption_rows_sum_to_one() {
        let (user, world) = defaults();
        let mdp = build_user_mdp(&user, &world).unwrap();
        // Mixed policy: act only within two steps of the goal.
        let policy: Vec<usize> = (0..mdp.n_states)
            .map(|s| match index_state(&world, s) {
                UserState::Progress(w) => usize::from(world.n_states - w <= 2),
                _ => 0,
            })
            .collect();
        let abs = absorption_probabilities(&mdp, &policy).unwrap();
        for s in 0..mdp.n_states {
            let sum: f64 = abs.probabilities[s].iter().sum();
            assert!((sum - 1.0).abs() <= 1e-10, "state {s}: {sum}");
        }
    }

    #[test]
    fn rejects_chain_without_absorption() {
        // Two states, both transient, spinning forever.
        let transitions = vec![
            vec![vec![0.0, 1.0]],
            vec![vec![1.0, 0.0]],
        ];
        let rewards = vec![vec![0.0], vec![0.0]];
        let mdp = TabularMdp::new(transitions, rewards, 0.9, vec![false, false]).unwrap();
        assert!(matches!(
            absorption_probabilities(&mdp, &[0, 0]),
            Err(Error::SingularSystem(_))
        ));
    }

    #[test]
    fn non_convergence_reports_residual() {
        let (user, world) = defaults();
        let mdp = build_user_mdp(&user, &world).unwrap();
        match value_iteration(&mdp, 1e-12, 3) {
            Err(Error::NonConvergence { iterations, residual }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 1e-12);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn construction_rejects_bad_rows() {
        let bad = TabularMdp::new(
            vec![vec![vec![0.5, 0.4]], vec![vec![0.0, 1.0]]],
            vec![vec![0.0], vec![0.0]],
            0.9,
            vec![false, true],
        );
        assert!(bad.is_err());
        let bad_discount = TabularMdp::new(
            vec![vec![vec![1.0]]],
            vec![vec![0.0]],
            1.0,
            vec![true],
        );
        assert!(bad_discount.is_err());
    }

    #[test]
    fn state_indexing_round_trips() {
        let (_, world) = defaults();
        for s in 0..=world.n_states {
            assert_eq!(state_index(&world, index_state(&world, s)), s);
        }
    }
}
