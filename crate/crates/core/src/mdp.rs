//! Finite MDPs, the point-mass grid, rollouts and occupancy measures.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::soft_rl::Policy;
use crate::table::Table;

const STOCHASTIC_TOL: f64 = 1e-12;

/// Finite MDP with absorbing-state flags.
///
/// Transitions are stored sparsely per `(s, a)` as `(next_state, probability)` lists.
/// Immutable once built.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<Vec<(usize, f64)>>,
    absorbing: Vec<bool>,
    goal: Vec<bool>,
    initial_dist: Vec<f64>,
    gamma: f64,
    true_reward: Option<Table>,
}

impl TabularMdp {
    /// `transition[s * n_actions + a]` lists the successors of `(s, a)`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<Vec<(usize, f64)>>,
        absorbing: Vec<bool>,
        initial_dist: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        let invalid = |msg: String| Err(Error::InvalidEnvironment(msg));
        if n_states == 0 || n_actions == 0 {
            return invalid("empty state or action space".into());
        }
        if !(0.0..1.0).contains(&gamma) {
            return invalid(format!("gamma {gamma} outside [0, 1)"));
        }
        if transition.len() != n_states * n_actions
            || absorbing.len() != n_states
            || initial_dist.len() != n_states
        {
            return invalid("dimension mismatch".into());
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = &transition[s * n_actions + a];
                if row.iter().any(|&(t, p)| t >= n_states || !(p >= 0.0)) {
                    return invalid(format!("bad successor entry at ({s}, {a})"));
                }
                let total: f64 = row.iter().map(|&(_, p)| p).sum();
                if (total - 1.0).abs() > STOCHASTIC_TOL {
                    return invalid(format!("row ({s}, {a}) sums to {total}"));
                }
                if absorbing[s] {
                    let stay: f64 = row.iter().filter(|&&(t, _)| t == s).map(|&(_, p)| p).sum();
                    if (stay - 1.0).abs() > STOCHASTIC_TOL {
                        return invalid(format!("absorbing state {s} does not self-loop under action {a}"));
                    }
                }
            }
        }
        let mass: f64 = initial_dist.iter().sum();
        if (mass - 1.0).abs() > STOCHASTIC_TOL || initial_dist.iter().any(|&p| !(p >= 0.0)) {
            return invalid(format!("initial distribution sums to {mass}"));
        }
        if initial_dist.iter().zip(&absorbing).any(|(&p, &abs)| abs && p > 0.0) {
            return invalid("initial distribution puts mass on an absorbing state".into());
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            absorbing,
            goal: vec![false; n_states],
            initial_dist,
            gamma,
            true_reward: None,
        })
    }

    pub fn with_true_reward(mut self, reward: Table) -> Result<Self> {
        if reward.n_states() != self.n_states || reward.n_actions() != self.n_actions {
            return Err(Error::InvalidEnvironment("reward table shape mismatch".into()));
        }
        self.true_reward = Some(reward);
        Ok(self)
    }

    /// Marks goal states; reaching one counts as success.
    pub fn with_goals(mut self, goal: Vec<bool>) -> Result<Self> {
        if goal.len() != self.n_states {
            return Err(Error::InvalidEnvironment("goal flag length mismatch".into()));
        }
        self.goal = goal;
        Ok(self)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn is_absorbing(&self, s: usize) -> bool {
        self.absorbing[s]
    }

    pub fn absorbing(&self) -> &[bool] {
        &self.absorbing
    }

    pub fn is_goal(&self, s: usize) -> bool {
        self.goal[s]
    }

    /// Absorbing states that are not goals.
    pub fn is_failure(&self, s: usize) -> bool {
        self.absorbing[s] && !self.goal[s]
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn true_reward(&self) -> Option<&Table> {
        self.true_reward.as_ref()
    }

    pub fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transition[s * self.n_actions + a]
    }

    /// `E_{s' ~ P(.|s,a)} f(s')`
    pub fn expect_next(&self, s: usize, a: usize, f: impl Fn(usize) -> f64) -> f64 {
        self.successors(s, a).iter().map(|&(t, p)| p * f(t)).sum()
    }

    pub fn step<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        sample_sparse(self.successors(s, a), rng)
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(&self.initial_dist, rng)
    }

    /// Dense state-to-state matrix `P_pi[s][s'] = sum_a pi(a|s) P(s'|s,a)`.
    pub fn policy_transition_matrix(&self, policy: &Policy) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.n_states, self.n_states);
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let w = policy.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                for &(t, q) in self.successors(s, a) {
                    p[(s, t)] += w * q;
                }
            }
        }
        p
    }

    /// Value of sitting in absorbing state `s` forever: mean action reward over `1 - gamma`.
    pub fn absorbing_value(&self, reward: &Table, s: usize) -> f64 {
        let row = reward.row(s);
        row.iter().sum::<f64>() / row.len() as f64 / (1.0 - self.gamma)
    }

    pub(crate) fn check_policy(&self, policy: &Policy) -> Result<()> {
        if policy.n_states() != self.n_states || policy.n_actions() != self.n_actions {
            return Err(Error::InvalidPolicy("policy shape does not match the MDP".into()));
        }
        policy.validate()
    }

    /// Random MDP with `n_absorbing` absorbing states placed last.
    ///
    /// Each non-absorbing `(s, a)` reaches up to three random successors.
    pub fn random<R: Rng + ?Sized>(
        n_states: usize,
        n_actions: usize,
        n_absorbing: usize,
        gamma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        assert!(n_absorbing < n_states, "need at least one non-absorbing state");
        let n_live = n_states - n_absorbing;
        let mut transition = Vec::with_capacity(n_states * n_actions);
        for s in 0..n_states {
            for _ in 0..n_actions {
                if s >= n_live {
                    transition.push(vec![(s, 1.0)]);
                    continue;
                }
                let k = rng.gen_range(1..=3.min(n_states));
                let mut succ: Vec<(usize, f64)> = Vec::with_capacity(k);
                for _ in 0..k {
                    let t = rng.gen_range(0..n_states);
                    let w = rng.gen_range(0.1..1.0);
                    match succ.iter_mut().find(|(u, _)| *u == t) {
                        Some(entry) => entry.1 += w,
                        None => succ.push((t, w)),
                    }
                }
                let total: f64 = succ.iter().map(|&(_, w)| w).sum();
                succ.iter_mut().for_each(|e| e.1 /= total);
                transition.push(succ);
            }
        }
        let absorbing: Vec<bool> = (0..n_states).map(|s| s >= n_live).collect();
        let raw: Vec<f64> = (0..n_live).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mut initial_dist: Vec<f64> = raw.iter().map(|w| w / total).collect();
        initial_dist.resize(n_states, 0.0);
        Self::new(n_states, n_actions, transition, absorbing, initial_dist, gamma)
    }
}

pub(crate) fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

fn sample_sparse<R: Rng + ?Sized>(entries: &[(usize, f64)], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(t, p) in entries {
        acc += p;
        if u < acc {
            return t;
        }
    }
    entries.last().map(|&(t, _)| t).expect("empty successor list")
}

/// One `(s, a, s', absorbing)` record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    #[serde(rename = "absorbing")]
    pub absorbing_next: bool,
}

/// A transition with the action withheld (learning from observations).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservedTransition {
    pub s: usize,
    pub s_next: usize,
    pub absorbing: bool,
}

impl From<&Transition> for ObservedTransition {
    fn from(t: &Transition) -> Self {
        Self {
            s: t.s,
            s_next: t.s_next,
            absorbing: t.absorbing_next,
        }
    }
}

/// Replay buffer / demonstration store.
///
/// With a capacity set, pushing into a full set overwrites the oldest record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransitionSet {
    records: Vec<Transition>,
    capacity: Option<usize>,
    head: usize,
}

impl TransitionSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(capacity: usize) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        Self {
            records: Vec::with_capacity(capacity.min(1 << 20)),
            capacity: Some(capacity),
            head: 0,
        }
    }

    pub fn from_records(records: Vec<Transition>) -> Self {
        Self {
            records,
            capacity: None,
            head: 0,
        }
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Transition] {
        &self.records
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.records.iter()
    }

    pub fn push(&mut self, t: Transition) {
        match self.capacity {
            Some(cap) if self.records.len() >= cap => {
                self.records[self.head] = t;
                self.head = (self.head + 1) % cap;
            }
            _ => self.records.push(t),
        }
    }

    pub fn extend(&mut self, ts: impl IntoIterator<Item = Transition>) {
        for t in ts {
            self.push(t);
        }
    }

    /// Uniform sampling with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Transition> {
        if self.records.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| self.records[rng.gen_range(0..self.records.len())])
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for t in &self.records {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Learner-visible view for learning from observations: no action field.
    pub fn write_observations_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for t in &self.records {
            serde_json::to_writer(&mut w, &ObservedTransition::from(t))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut records = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Ok(Self::from_records(records))
    }

    pub fn save(&self, path: impl AsRef<Path>, observations_only: bool) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        if observations_only {
            self.write_observations_jsonl(&mut w)?;
        } else {
            self.write_jsonl(&mut w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_jsonl(BufReader::new(File::open(path)?))
    }
}

/// Whether a [`StateActionDistribution`] is a probability table or an
/// unnormalized discounted occupancy measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Normalization {
    Distribution,
    Occupancy { gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateActionDistribution {
    pub values: Table,
    pub normalization: Normalization,
}

impl StateActionDistribution {
    /// Wraps a normalized table, checking nonnegativity and unit mass (1e-10).
    pub fn distribution(values: Table) -> Result<Self> {
        if values.as_slice().iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidDistribution("negative or NaN entry".into()));
        }
        let mass = values.sum();
        if (mass - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidDistribution(format!("mass {mass} != 1")));
        }
        Ok(Self {
            values,
            normalization: Normalization::Distribution,
        })
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[(s, a)]
    }

    pub fn total_mass(&self) -> f64 {
        self.values.sum()
    }
}

/// Discounted occupancy `rho(s,a) = pi(a|s) sum_t gamma^t mu_t(s)`, by linear solve.
pub fn occupancy_measure(mdp: &TabularMdp, policy: &Policy) -> Result<StateActionDistribution> {
    mdp.check_policy(policy)?;
    let p = mdp.policy_transition_matrix(policy);
    let visits = linalg::solve_discounted_transpose(&p, mdp.gamma(), mdp.initial_dist())?;
    let values = Table::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| visits[s] * policy.prob(s, a));
    Ok(StateActionDistribution {
        values,
        normalization: Normalization::Occupancy { gamma: mdp.gamma() },
    })
}

/// Fixed-point iteration of the occupancy flow equation. Slow; kept as a cross-check.
pub fn occupancy_measure_iterative(
    mdp: &TabularMdp,
    policy: &Policy,
    tol: f64,
    max_iter: usize,
) -> Result<StateActionDistribution> {
    mdp.check_policy(policy)?;
    let p = mdp.policy_transition_matrix(policy);
    let gamma = mdp.gamma();
    let mu0 = mdp.initial_dist();
    let mut visits = mu0.to_vec();
    for _ in 0..max_iter {
        let mut next = mu0.to_vec();
        for s in 0..mdp.n_states() {
            if visits[s] == 0.0 {
                continue;
            }
            for t in 0..mdp.n_states() {
                next[t] += gamma * visits[s] * p[(s, t)];
            }
        }
        let diff = next.iter().zip(&visits).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        visits = next;
        if diff < tol {
            break;
        }
    }
    let values = Table::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| visits[s] * policy.prob(s, a));
    Ok(StateActionDistribution {
        values,
        normalization: Normalization::Occupancy { gamma },
    })
}

/// `d = (1 - gamma) rho`. Normalized inputs pass through unchanged.
pub fn occupancy_to_distribution(rho: &StateActionDistribution) -> Result<StateActionDistribution> {
    if rho.values.as_slice().iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidDistribution("negative or NaN entry".into()));
    }
    if rho.total_mass() <= 0.0 {
        return Err(Error::InvalidDistribution("zero mass".into()));
    }
    let values = match rho.normalization {
        Normalization::Occupancy { gamma } => rho.values.map(|v| (1.0 - gamma) * v),
        Normalization::Distribution => rho.values.clone(),
    };
    Ok(StateActionDistribution {
        values,
        normalization: Normalization::Distribution,
    })
}

/// Samples one episode from `mu0`, stopping after the first transition into an
/// absorbing state or after `horizon` steps.
pub fn rollout_with_rng<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &Policy,
    horizon: usize,
    rng: &mut R,
) -> Vec<Transition> {
    let mut s = mdp.sample_initial(rng);
    let mut out = Vec::new();
    for _ in 0..horizon {
        let a = policy.sample(s, rng);
        let s_next = mdp.step(s, a, rng);
        let absorbing_next = mdp.is_absorbing(s_next);
        out.push(Transition {
            s,
            a,
            s_next,
            absorbing_next,
        });
        if absorbing_next {
            break;
        }
        s = s_next;
    }
    out
}

pub fn rollout(mdp: &TabularMdp, policy: &Policy, horizon: usize, seed: u64) -> Vec<Transition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rollout_with_rng(mdp, policy, horizon, &mut rng)
}

/// Parameters of the point-mass grid task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub size: usize,
    pub spawn_cells: Vec<usize>,
    pub goal_cells: Vec<usize>,
    pub hazard_cells: Vec<usize>,
    pub gamma: f64,
    #[serde(default = "default_goal_reward")]
    pub goal_reward: f64,
    /// When false, goal cells are ordinary states paying `goal_reward` on every
    /// step spent there and only hazards end an episode.
    #[serde(default = "default_goal_absorbing")]
    pub goal_absorbing: bool,
}

fn default_goal_absorbing() -> bool {
    true
}

fn default_goal_reward() -> f64 {
    1.0
}

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;

impl GridSpec {
    /// Spawns in the four corners, goal in the center and a hazard ring at
    /// Chebyshev radius `size / 2 - 1` with one gap in the middle of each side.
    ///
    /// `size` must be odd and at least 5.
    pub fn pointmass(size: usize, gamma: f64) -> Self {
        assert!(size >= 5 && size % 2 == 1, "point-mass grid needs an odd size >= 5");
        let c = size / 2;
        let r = c - 1;
        let cell = |row: usize, col: usize| row * size + col;
        let mut hazard_cells = Vec::new();
        for row in 0..size {
            for col in 0..size {
                let dr = row.abs_diff(c);
                let dc = col.abs_diff(c);
                let on_ring = dr.max(dc) == r;
                let gap = (dr == 0 || dc == 0) && on_ring;
                if on_ring && !gap {
                    hazard_cells.push(cell(row, col));
                }
            }
        }
        Self {
            size,
            spawn_cells: vec![cell(0, 0), cell(0, size - 1), cell(size - 1, 0), cell(size - 1, size - 1)],
            goal_cells: vec![cell(c, c)],
            hazard_cells,
            gamma,
            goal_reward: 1.0,
            goal_absorbing: true,
        }
    }

    pub fn build(&self) -> Result<TabularMdp> {
        build_grid(
            self.size,
            &self.spawn_cells,
            &self.goal_cells,
            &self.hazard_cells,
            self.gamma,
            self.goal_reward,
            self.goal_absorbing,
        )
    }
}

/// Deterministic 4-action grid dynamics (up, down, left, right). Moves off the
/// grid leave the agent in place; cells in `absorbing` self-loop.
pub fn grid_transitions(size: usize, absorbing: &[bool]) -> Vec<Vec<(usize, f64)>> {
    let mut transition = Vec::with_capacity(size * size * 4);
    for (s, &stuck) in absorbing.iter().enumerate().take(size * size) {
        let (row, col) = (s / size, s % size);
        for a in 0..4 {
            let next = if stuck {
                s
            } else {
                match a {
                    UP if row > 0 => s - size,
                    DOWN if row + 1 < size => s + size,
                    LEFT if col > 0 => s - 1,
                    RIGHT if col + 1 < size => s + 1,
                    _ => s,
                }
            };
            transition.push(vec![(next, 1.0)]);
        }
    }
    transition
}

/// Point-mass grid with absorbing goals and hazards; the goal pays
/// `goal_reward` for every action once reached.
pub fn build_pointmass_grid(
    size: usize,
    spawn_cells: &[usize],
    goal_cells: &[usize],
    hazard_cells: &[usize],
    gamma: f64,
    goal_reward: f64,
) -> Result<TabularMdp> {
    build_grid(size, spawn_cells, goal_cells, hazard_cells, gamma, goal_reward, true)
}

fn build_grid(
    size: usize,
    spawn_cells: &[usize],
    goal_cells: &[usize],
    hazard_cells: &[usize],
    gamma: f64,
    goal_reward: f64,
    goal_absorbing: bool,
) -> Result<TabularMdp> {
    let invalid = |msg: &str| Err(Error::InvalidEnvironment(msg.into()));
    if size == 0 {
        return invalid("grid size must be positive");
    }
    let n = size * size;
    let all = spawn_cells.iter().chain(goal_cells).chain(hazard_cells);
    if all.clone().any(|&c| c >= n) {
        return invalid("cell id outside the grid");
    }
    if spawn_cells.is_empty() || spawn_cells.len() > 4 {
        return invalid("expected between one and four spawn cells");
    }
    // spawns may share a cell with a non-absorbing goal; hazards stay separate
    if let Some(c) = hazard_cells.iter().find(|c| spawn_cells.contains(c) || goal_cells.contains(c)) {
        return Err(Error::InvalidEnvironment(format!("hazard cell {c} overlaps a spawn or goal cell")));
    }
    if !(goal_reward > 0.0) {
        return invalid("goal reward must be positive");
    }
    let mut absorbing = vec![false; n];
    let mut goal = vec![false; n];
    for &c in goal_cells {
        absorbing[c] = goal_absorbing;
        goal[c] = true;
    }
    for &c in hazard_cells {
        absorbing[c] = true;
    }
    let mut initial_dist = vec![0.0; n];
    for &c in spawn_cells {
        initial_dist[c] = 1.0 / spawn_cells.len() as f64;
    }
    let reward = Table::from_fn(n, 4, |s, _| if goal[s] { goal_reward } else { 0.0 });
    TabularMdp::new(n, 4, grid_transitions(size, &absorbing), absorbing, initial_dist, gamma)?
        .with_goals(goal)?
        .with_true_reward(reward)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::soft_rl::Policy;

    fn two_state_chain(gamma: f64) -> TabularMdp {
        TabularMdp::new(2, 1, vec![vec![(1, 1.0)], vec![(1, 1.0)]], vec![false, true], vec![1.0, 0.0], gamma)
            .unwrap()
    }

    #[test]
    fn pointmass_default_geometry() {
        let spec = GridSpec::pointmass(7, 0.99);
        let mdp = spec.build().unwrap();
        assert_eq!(mdp.n_states(), 49);
        assert_eq!(mdp.n_actions(), 4);
        assert_eq!(spec.hazard_cells.len(), 12);
        for &h in &spec.hazard_cells {
            assert!(mdp.is_absorbing(h) && mdp.is_failure(h));
        }
        assert!(mdp.is_goal(24) && mdp.is_absorbing(24));
        // gaps in the ring
        for gap in [7 + 3, 3 * 7 + 1, 5 * 7 + 3, 3 * 7 + 5] {
            assert!(!mdp.is_absorbing(gap));
        }
        let mu0 = mdp.initial_dist();
        for c in [0, 6, 42, 48] {
            assert_eq!(mu0[c], 0.25);
        }
        // off-grid moves are no-ops
        assert_eq!(mdp.successors(0, UP), &[(0, 1.0)]);
        assert_eq!(mdp.successors(0, RIGHT), &[(1, 1.0)]);
    }

    #[test]
    fn degenerate_single_cell_dynamics_self_loop() {
        let t = grid_transitions(1, &[true]);
        assert_eq!(t.len(), 4);
        assert!(t.iter().all(|row| row == &vec![(0, 1.0)]));
        // the only cell is the goal, so nothing is left to spawn in
        assert!(matches!(
            build_pointmass_grid(1, &[0], &[0], &[], 0.9, 1.0),
            Err(Error::InvalidEnvironment(_))
        ));
    }

    #[test]
    fn hazards_everywhere_reject_spawns() {
        let goal = 4;
        let hazards: Vec<usize> = (0..9).filter(|&c| c != goal).collect();
        let err = build_pointmass_grid(3, &[0, 2, 6, 8], &[goal], &hazards, 0.9, 1.0);
        assert!(matches!(err, Err(Error::InvalidEnvironment(_))));
    }

    #[test]
    fn two_state_chain_occupancy() {
        let mdp = two_state_chain(0.5);
        let pi = Policy::uniform(2, 1);
        let rho = occupancy_measure(&mdp, &pi).unwrap();
        assert!((rho.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((rho.get(1, 0) - 1.0).abs() < 1e-12);
        assert!((rho.total_mass() - 2.0).abs() < 1e-12);
        let d = occupancy_to_distribution(&rho).unwrap();
        assert!((d.get(0, 0) - 0.5).abs() < 1e-12);
        assert!((d.get(1, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_absorbing_start_keeps_all_mass() {
        // state 0 is absorbing but we need mu0 off absorbing states, so start in
        // a state that immediately and deterministically enters it
        let mdp = TabularMdp::new(
            2,
            2,
            vec![vec![(1, 1.0)], vec![(1, 1.0)], vec![(1, 1.0)], vec![(1, 1.0)]],
            vec![false, true],
            vec![1.0, 0.0],
            0.9,
        )
        .unwrap();
        let pi = Policy::from_rows(vec![vec![0.5, 0.5], vec![0.25, 0.75]]).unwrap();
        let rho = occupancy_measure(&mdp, &pi).unwrap();
        let tail = 0.9 / (1.0 - 0.9);
        assert!((rho.get(1, 0) - 0.25 * tail).abs() < 1e-10);
        assert!((rho.get(1, 1) - 0.75 * tail).abs() < 1e-10);
    }

    #[test]
    fn gamma_zero_distribution_is_unchanged() {
        let mdp = two_state_chain(0.0);
        let rho = occupancy_measure(&mdp, &Policy::uniform(2, 1)).unwrap();
        let d = occupancy_to_distribution(&rho).unwrap();
        assert_eq!(d.values, rho.values);
        assert!((d.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_mass_rejected() {
        let rho = StateActionDistribution {
            values: Table::zeros(2, 2),
            normalization: Normalization::Occupancy { gamma: 0.9 },
        };
        assert!(matches!(occupancy_to_distribution(&rho), Err(Error::InvalidDistribution(_))));
    }

    #[test]
    fn non_stochastic_policy_rejected() {
        let mdp = two_state_chain(0.9);
        let bad = Policy::from_rows_unchecked(vec![vec![0.5], vec![1.0]]);
        assert!(matches!(occupancy_measure(&mdp, &bad), Err(Error::InvalidPolicy(_))));
    }

    #[test]
    fn iterative_occupancy_agrees_with_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mdp = TabularMdp::random(6, 3, 1, 0.8, &mut rng).unwrap();
        let pi = Policy::random(6, 3, &mut rng);
        let exact = occupancy_measure(&mdp, &pi).unwrap();
        let iter = occupancy_measure_iterative(&mdp, &pi, 1e-14, 10_000).unwrap();
        assert!(exact.values.max_abs_diff(&iter.values) < 1e-10);
    }

    #[test]
    fn rollout_stops_at_hazard() {
        let spec = GridSpec::pointmass(7, 0.9);
        let mdp = spec.build().unwrap();
        // from every corner, moving down-right diagonally hits the ring; always go right
        let mut rows = vec![vec![0.0, 0.0, 0.0, 1.0]; 49];
        // go down in column 0 until row 1, then right into (1,1)
        rows[0] = vec![0.0, 1.0, 0.0, 0.0];
        let pi = Policy::from_rows(rows).unwrap();
        // find a seed that spawns at (0,0)
        let traj = (0..100)
            .map(|seed| rollout(&mdp, &pi, 50, seed))
            .find(|t| t[0].s == 0)
            .unwrap();
        assert_eq!(traj.len(), 2);
        assert_eq!(traj[1].s_next, 8);
        assert!(traj.last().unwrap().absorbing_next);
    }

    #[test]
    fn deterministic_rollouts_ignore_seed() {
        let mdp = two_state_chain(0.9);
        let pi = Policy::uniform(2, 1);
        assert_eq!(rollout(&mdp, &pi, 10, 1), rollout(&mdp, &pi, 10, 99));
    }

    #[test]
    fn ring_buffer_overwrites_oldest() {
        let mut set = TransitionSet::with_capacity(2);
        for s in 0..3 {
            set.push(Transition { s, a: 0, s_next: s, absorbing_next: false });
        }
        assert_eq!(set.len(), 2);
        let states: Vec<usize> = set.iter().map(|t| t.s).collect();
        assert_eq!(states, vec![2, 1]);
    }

    #[test]
    fn jsonl_format() {
        let set = TransitionSet::from_records(vec![Transition { s: 1, a: 2, s_next: 3, absorbing_next: true }]);
        let mut buf = Vec::new();
        set.write_jsonl(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "{\"s\":1,\"a\":2,\"s_next\":3,\"absorbing\":true}\n");
        let back = TransitionSet::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back.records(), set.records());
        let mut obs = Vec::new();
        set.write_observations_jsonl(&mut obs).unwrap();
        assert_eq!(String::from_utf8(obs).unwrap(), "{\"s\":1,\"s_next\":3,\"absorbing\":true}\n");
    }
}
