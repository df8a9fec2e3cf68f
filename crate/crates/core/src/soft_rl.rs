//! Maximum-entropy RL primitives: softmax extraction, soft and hard policy
//! evaluation, soft value iteration and the entropy / combined critics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{TabularMdp, Transition};
use crate::table::Table;

const ROW_TOL: f64 = 1e-10;
const MAX_VALUE_ITERATIONS: usize = 200_000;

/// Per-state action distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    probs: Table,
    /// Temperature the policy was extracted with, if it came from a softmax.
    #[serde(default)]
    beta: Option<f64>,
}

impl Policy {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: Table::filled(n_states, n_actions, 1.0 / n_actions as f64),
            beta: None,
        }
    }

    pub fn from_table(probs: Table) -> Result<Self> {
        let p = Self { probs, beta: None };
        p.validate()?;
        Ok(p)
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_table(Table::from_rows(rows)?)
    }

    #[cfg(test)]
    pub(crate) fn from_rows_unchecked(rows: Vec<Vec<f64>>) -> Self {
        Self {
            probs: Table::from_rows(rows).expect("rectangular rows"),
            beta: None,
        }
    }

    /// One action per state with probability 1.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        Self {
            probs: Table::from_fn(actions.len(), n_actions, |s, a| f64::from(u8::from(actions[s] == a))),
            beta: None,
        }
    }

    /// Rows drawn uniformly from the simplex interior (normalized uniforms).
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, rng: &mut R) -> Self {
        let mut probs = Table::from_fn(n_states, n_actions, |_, _| rng.gen_range(0.05..1.0));
        for s in 0..n_states {
            let row = probs.row_mut(s);
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= total);
        }
        Self { probs, beta: None }
    }

    pub fn validate(&self) -> Result<()> {
        for (s, row) in self.probs.rows().enumerate() {
            if row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::InvalidPolicy(format!("negative or NaN probability in state {s}")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > ROW_TOL {
                return Err(Error::InvalidPolicy(format!("row {s} sums to {total}")));
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.probs.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.n_actions()
    }

    pub fn beta(&self) -> Option<f64> {
        self.beta
    }

    pub fn probs(&self) -> &Table {
        &self.probs
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[(s, a)]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        self.probs.row(s)
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        crate::mdp::sample_index(self.row(s), rng)
    }

    /// Most probable action; ties go to the lowest action id.
    pub fn mode(&self, s: usize) -> usize {
        argmax(self.row(s))
    }

    /// Deterministic policy that always plays [`Policy::mode`].
    pub fn greedy(&self) -> Policy {
        let actions: Vec<usize> = (0..self.n_states()).map(|s| self.mode(s)).collect();
        Policy::deterministic(&actions, self.n_actions())
    }

    /// `-beta * sum_a pi(a|s) log pi(a|s)`
    pub fn entropy_bonus(&self, s: usize, beta: f64) -> f64 {
        -beta * self.row(s).iter().map(|&p| xlogx(p)).sum::<f64>()
    }

    pub fn is_deterministic(&self) -> bool {
        self.probs.rows().all(|row| row.iter().all(|&p| p == 0.0 || p == 1.0))
    }

    /// Policy expectation `sum_a pi(a|s) table(s, a)`.
    pub fn expect(&self, table: &Table, s: usize) -> f64 {
        self.row(s).iter().zip(table.row(s)).map(|(p, q)| p * q).sum()
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn xlogx(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `pi(a|s) ∝ exp(q(s,a) / beta)`
pub fn maxent_policy(q_soft: &Table, beta: f64) -> Result<Policy> {
    if !(beta > 0.0) {
        return Err(Error::InvalidTemperature(beta));
    }
    let mut probs = Table::zeros(q_soft.n_states(), q_soft.n_actions());
    for s in 0..q_soft.n_states() {
        let row = q_soft.row(s);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let out = probs.row_mut(s);
        for (o, &q) in out.iter_mut().zip(row) {
            *o = ((q - m) / beta).exp();
        }
        let z: f64 = out.iter().sum();
        out.iter_mut().for_each(|p| *p /= z);
    }
    Ok(Policy {
        probs,
        beta: Some(beta),
    })
}

/// `V(s) = sum_a pi(a|s) (q(s,a) - beta log pi(a|s))`
pub fn soft_value(q_soft: &Table, policy: &Policy, beta: f64) -> Vec<f64> {
    (0..q_soft.n_states())
        .map(|s| policy.expect(q_soft, s) + policy.entropy_bonus(s, beta))
        .collect()
}

/// `beta * log sum_a exp(q(s,a) / beta)`, the soft value of the softmax policy.
pub fn log_sum_exp_value(q_soft: &Table, beta: f64) -> Vec<f64> {
    (0..q_soft.n_states())
        .map(|s| beta * log_sum_exp(q_soft.row(s).iter().map(|&q| q / beta)))
        .collect()
}

/// Soft Q-function of the optimal max-entropy policy for `reward`.
///
/// Absorbing states are not bootstrapped: their value is fixed to the mean
/// action reward over `1 - gamma`, with no entropy bonus.
pub fn soft_value_iteration(mdp: &TabularMdp, reward: &Table, beta: f64, tol: f64) -> Result<Table> {
    if !(beta > 0.0) {
        return Err(Error::InvalidTemperature(beta));
    }
    assert!(tol > 0.0, "tolerance must be positive");
    let gamma = mdp.gamma();
    let absorbing_value: Vec<Option<f64>> = (0..mdp.n_states())
        .map(|s| mdp.is_absorbing(s).then(|| mdp.absorbing_value(reward, s)))
        .collect();
    let mut q = Table::zeros(mdp.n_states(), mdp.n_actions());
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_VALUE_ITERATIONS {
        let lse = log_sum_exp_value(&q, beta);
        let v: Vec<f64> = lse
            .iter()
            .zip(&absorbing_value)
            .map(|(&l, abs)| abs.unwrap_or(l))
            .collect();
        let next = Table::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| {
            reward[(s, a)] + gamma * mdp.expect_next(s, a, |t| v[t])
        });
        residual = next.max_abs_diff(&q);
        q = next;
        if residual <= tol {
            return Ok(q);
        }
    }
    Err(Error::ConvergenceFailure {
        iterations: MAX_VALUE_ITERATIONS,
        residual,
    })
}

/// One soft Bellman backup with the softmax policy, using the same absorbing
/// treatment as [`soft_value_iteration`].
pub fn soft_optimal_backup(mdp: &TabularMdp, reward: &Table, q: &Table, beta: f64) -> Table {
    let lse = log_sum_exp_value(q, beta);
    let v: Vec<f64> = (0..mdp.n_states())
        .map(|s| if mdp.is_absorbing(s) { mdp.absorbing_value(reward, s) } else { lse[s] })
        .collect();
    Table::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| {
        reward[(s, a)] + mdp.gamma() * mdp.expect_next(s, a, |t| v[t])
    })
}

/// Hard value iteration (`V(s) = max_a Q(s,a)`) with the same absorbing treatment.
pub fn hard_value_iteration(mdp: &TabularMdp, reward: &Table, tol: f64) -> Result<Table> {
    let gamma = mdp.gamma();
    let mut q = Table::zeros(mdp.n_states(), mdp.n_actions());
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_VALUE_ITERATIONS {
        let v: Vec<f64> = (0..mdp.n_states())
            .map(|s| {
                if mdp.is_absorbing(s) {
                    mdp.absorbing_value(reward, s)
                } else {
                    q.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
                }
            })
            .collect();
        let next = Table::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| {
            reward[(s, a)] + gamma * mdp.expect_next(s, a, |t| v[t])
        });
        residual = next.max_abs_diff(&q);
        q = next;
        if residual <= tol {
            return Ok(q);
        }
    }
    Err(Error::ConvergenceFailure {
        iterations: MAX_VALUE_ITERATIONS,
        residual,
    })
}

/// `Q = r + gamma P U` where `U = (I - gamma P_pi)^{-1} b`.
fn evaluate_with_state_term(mdp: &TabularMdp, policy: &Policy, base: &Table, state_term: &[f64]) -> Result<Table> {
    mdp.check_policy(policy)?;
    let p = mdp.policy_transition_matrix(policy);
    let rhs: Vec<f64> = state_term.to_vec();
    let u = linalg::solve_discounted(&p, mdp.gamma(), &rhs)?;
    Ok(Table::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| {
        base[(s, a)] + mdp.gamma() * mdp.expect_next(s, a, |t| u[t])
    }))
}

/// Exact `Q^pi = r + gamma P Pi Q^pi` without entropy bonus.
pub fn policy_evaluation_hard(mdp: &TabularMdp, reward: &Table, policy: &Policy) -> Result<Table> {
    let r_pi: Vec<f64> = (0..mdp.n_states()).map(|s| policy.expect(reward, s)).collect();
    evaluate_with_state_term(mdp, policy, reward, &r_pi)
}

/// Exact soft `Q~^pi = r + gamma E[ sum_a' pi (Q~ - beta log pi) ]`.
pub fn soft_policy_evaluation(mdp: &TabularMdp, reward: &Table, policy: &Policy, beta: f64) -> Result<Table> {
    let u: Vec<f64> = (0..mdp.n_states())
        .map(|s| policy.expect(reward, s) + policy.entropy_bonus(s, beta))
        .collect();
    evaluate_with_state_term(mdp, policy, reward, &u)
}

/// Entropy critic: discounted future entropy bonus, excluding the current step.
pub fn entropy_critic(mdp: &TabularMdp, policy: &Policy, beta: f64) -> Result<Table> {
    let e: Vec<f64> = (0..mdp.n_states()).map(|s| policy.entropy_bonus(s, beta)).collect();
    let zero = Table::zeros(mdp.n_states(), mdp.n_actions());
    evaluate_with_state_term(mdp, policy, &zero, &e)
}

/// Learned critic tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticState {
    pub q: Table,
    pub q_target: Table,
    #[serde(default)]
    pub h: Option<Table>,
    #[serde(default)]
    pub g: Option<Table>,
    #[serde(default)]
    pub step_count: u64,
}

impl CriticState {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            q: Table::zeros(n_states, n_actions),
            q_target: Table::zeros(n_states, n_actions),
            h: None,
            g: None,
            step_count: 0,
        }
    }
}

/// Regression target of the combined critic for one transition.
///
/// Transitions into absorbing states do not bootstrap.
fn combined_target(
    t: &Transition,
    r_q: f64,
    bootstrap: &Table,
    k: f64,
    beta: f64,
    gamma: f64,
    policy: &Policy,
) -> f64 {
    let next = if t.absorbing_next {
        0.0
    } else {
        policy.entropy_bonus(t.s_next, beta) + policy.expect(bootstrap, t.s_next)
    };
    k * r_q * r_q + gamma * next
}

/// Squared Bellman error of the combined critic `G` and its gradient in `g`,
/// with the bootstrap table held fixed.
#[allow(clippy::too_many_arguments)]
pub fn combined_critic_loss_and_grad(
    g: &Table,
    bootstrap: &Table,
    batch: &[Transition],
    r_q: &[f64],
    k: f64,
    beta: f64,
    gamma: f64,
    policy: &Policy,
) -> (f64, Table) {
    assert_eq!(batch.len(), r_q.len(), "one implicit reward per transition");
    let mut grad = Table::zeros(g.n_states(), g.n_actions());
    if batch.is_empty() {
        return (0.0, grad);
    }
    let n = batch.len() as f64;
    let mut loss = 0.0;
    for (t, &r) in batch.iter().zip(r_q) {
        let y = combined_target(t, r, bootstrap, k, beta, gamma, policy);
        let diff = g[(t.s, t.a)] - y;
        loss += diff * diff / n;
        grad[(t.s, t.a)] += 2.0 * diff / n;
    }
    (loss, grad)
}

/// One semi-gradient step on the combined critic; the current table is the bootstrap.
#[allow(clippy::too_many_arguments)]
pub fn combined_critic_update(
    g: &Table,
    batch: &[Transition],
    r_q: &[f64],
    k: f64,
    beta: f64,
    gamma: f64,
    policy: &Policy,
    lr: f64,
) -> Table {
    let (_, grad) = combined_critic_loss_and_grad(g, g, batch, r_q, k, beta, gamma, policy);
    let mut out = g.clone();
    out.add_scaled(&grad, -lr);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cycle_mdp(n: usize, n_actions: usize, gamma: f64) -> TabularMdp {
        // deterministic, no absorbing states: action a moves s -> (s + a + 1) % n
        let transition = (0..n)
            .flat_map(|s| (0..n_actions).map(move |a| vec![((s + a + 1) % n, 1.0)]))
            .collect();
        let mut mu0 = vec![0.0; n];
        mu0[0] = 1.0;
        TabularMdp::new(n, n_actions, transition, vec![false; n], mu0, gamma).unwrap()
    }

    #[test]
    fn softmax_two_actions() {
        let q = Table::from_rows(vec![vec![1.0, 0.0]]).unwrap();
        let pi = maxent_policy(&q, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((pi.prob(0, 0) - e / (e + 1.0)).abs() < 1e-12);
        assert!((pi.prob(0, 1) - 1.0 / (e + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn softmax_constant_row_is_uniform() {
        let q = Table::filled(3, 4, 7.5);
        let pi = maxent_policy(&q, 0.3).unwrap();
        assert!(pi.probs().as_slice().iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn softmax_rejects_bad_temperature() {
        let q = Table::zeros(1, 2);
        assert!(matches!(maxent_policy(&q, 0.0), Err(Error::InvalidTemperature(_))));
        assert!(matches!(maxent_policy(&q, -1.0), Err(Error::InvalidTemperature(_))));
    }

    #[test]
    fn soft_value_cases() {
        let q = Table::from_rows(vec![vec![2.0, -1.0, 0.5]]).unwrap();
        let det = Policy::deterministic(&[1], 3);
        assert_eq!(soft_value(&q, &det, 1.0), vec![-1.0]);

        let zero = Table::zeros(2, 4);
        let v = soft_value(&zero, &Policy::uniform(2, 4), 1.0);
        assert!(v.iter().all(|&x| (x - 4f64.ln()).abs() < 1e-12));

        let pi = maxent_policy(&q, 0.7).unwrap();
        let a = soft_value(&q, &pi, 0.7)[0];
        let b = log_sum_exp_value(&q, 0.7)[0];
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn uniform_entropy_critic_geometric_series() {
        let mdp = cycle_mdp(5, 4, 0.9);
        let h = entropy_critic(&mdp, &Policy::uniform(5, 4), 1.0).unwrap();
        let expected = 9.0 * 4f64.ln();
        assert!(h.as_slice().iter().all(|&x| (x - expected).abs() < 1e-10));
    }

    #[test]
    fn deterministic_entropy_critic_is_zero() {
        let mdp = cycle_mdp(4, 2, 0.9);
        let pi = Policy::deterministic(&[0, 1, 1, 0], 2);
        let h = entropy_critic(&mdp, &pi, 2.0).unwrap();
        assert!(h.as_slice().iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn hard_evaluation_gamma_zero_and_constant_reward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mdp = TabularMdp::random(5, 3, 0, 0.0, &mut rng).unwrap();
        let r = Table::from_fn(5, 3, |s, a| (s as f64) - (a as f64) * 0.5);
        let pi = Policy::random(5, 3, &mut rng);
        assert_eq!(policy_evaluation_hard(&mdp, &r, &pi).unwrap(), r);

        let mdp = TabularMdp::random(5, 3, 0, 0.95, &mut rng).unwrap();
        let r0 = Table::filled(5, 3, 0.3);
        let q = policy_evaluation_hard(&mdp, &r0, &pi).unwrap();
        assert!(q.as_slice().iter().all(|&x| (x - 0.3 / 0.05).abs() < 1e-9));
    }

    #[test]
    fn soft_value_iteration_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mdp = TabularMdp::random(6, 3, 1, 0.9, &mut rng).unwrap();
        let r = Table::from_fn(6, 3, |_, _| rng.gen_range(-1.0..1.0));
        let r = Table::from_fn(6, 3, |s, a| if s == 5 { 0.4 } else { r[(s, a)] });
        let tol = 1e-9;
        let q = soft_value_iteration(&mdp, &r, 0.5, tol).unwrap();
        let again = soft_optimal_backup(&mdp, &r, &q, 0.5);
        assert!(again.max_abs_diff(&q) <= tol);
        // absorbing state: analytic value, no entropy tail
        for a in 0..3 {
            assert!((q[(5, a)] - 0.4 / 0.1).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_reward_small_beta() {
        let mdp = cycle_mdp(4, 3, 0.9);
        let beta = 1e-3;
        let q = soft_value_iteration(&mdp, &Table::zeros(4, 3), beta, 1e-12).unwrap();
        let bonus = beta * 3f64.ln() / (1.0 - 0.9);
        assert!(q.as_slice().iter().all(|&x| x >= -1e-12 && x <= bonus + 1e-9));
    }

    #[test]
    fn combined_critic_fixed_point_constant_reward() {
        // k > 0, constant implicit reward, deterministic policy
        let mdp = cycle_mdp(3, 2, 0.8);
        let pi = Policy::deterministic(&[0, 1, 0], 2);
        let batch: Vec<Transition> = (0..3)
            .flat_map(|s| (0..2).map(move |a| (s, a)))
            .map(|(s, a)| Transition { s, a, s_next: mdp.successors(s, a)[0].0, absorbing_next: false })
            .collect();
        let r = vec![1.5; batch.len()];
        let k = 0.25;
        let mut g = Table::zeros(3, 2);
        for _ in 0..5_000 {
            g = combined_critic_update(&g, &batch, &r, k, 1.0, 0.8, &pi, 1.0);
        }
        let expected = k * 1.5 * 1.5 / (1.0 - 0.8);
        assert!(g.as_slice().iter().all(|&x| (x - expected).abs() < 1e-9));
    }

    #[test]
    fn combined_critic_k_zero_deterministic_goes_to_zero() {
        let mdp = cycle_mdp(3, 2, 0.8);
        let pi = Policy::deterministic(&[1, 1, 0], 2);
        let batch: Vec<Transition> = (0..3)
            .flat_map(|s| (0..2).map(move |a| (s, a)))
            .map(|(s, a)| Transition { s, a, s_next: mdp.successors(s, a)[0].0, absorbing_next: false })
            .collect();
        let mut g = Table::filled(3, 2, 5.0);
        for _ in 0..5_000 {
            g = combined_critic_update(&g, &batch, &[0.7; 6], 0.0, 1.0, 0.8, &pi, 1.0);
        }
        assert!(g.as_slice().iter().all(|&x| x.abs() < 1e-9));
    }

    #[test]
    fn policy_json_round_trip() {
        let pi = maxent_policy(&Table::from_rows(vec![vec![0.0, 1.0]]).unwrap(), 2.0).unwrap();
        let back: Policy = serde_json::from_str(&serde_json::to_string(&pi).unwrap()).unwrap();
        assert_eq!(back, pi);
    }
}
