//! Property suite run by `lsiq verify`: measured residuals against their tolerances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::divergence::{
    chi2_convexity_bound, chi2_mixture_closed_form, optimal_reward, variational_objective, MixtureSpec,
};
use crate::error::Result;
use crate::lsiq::{
    forward_backup, implicit_reward, iq_loss_and_grad, iqv0_loss_and_grad, ls_loss_and_grad, objective_identity_check,
    policy_values, sqil_loss_and_grad, LsIqConfig, Operator, SqilTargets,
};
use crate::mdp::{
    occupancy_measure, occupancy_measure_iterative, occupancy_to_distribution, StateActionDistribution, TabularMdp,
    Transition,
};
use crate::soft_rl::{
    combined_critic_loss_and_grad, entropy_critic, policy_evaluation_hard, soft_policy_evaluation, CriticState, Policy,
};
use crate::table::Table;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
    /// Quantities reported for information only.
    pub notes: Vec<String>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn check(&mut self, name: &str, measured: f64, tolerance: f64) {
        self.checks.push(CheckResult {
            name: name.into(),
            measured,
            tolerance,
            passed: measured <= tolerance,
        });
    }
}

impl std::fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{tag} {:<40} measured={:.3e} tol={:.1e}", c.name, c.measured, c.tolerance)?;
        }
        for n in &self.notes {
            writeln!(f, "note {n}")?;
        }
        Ok(())
    }
}

/// Random probability vector; entries are zeroed with probability `p_zero`
/// (at least one entry stays positive).
fn random_distribution(n: usize, p_zero: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let keep = rng.gen_range(0..n);
    let raw: Vec<f64> = (0..n)
        .map(|i| if i != keep && rng.gen_bool(p_zero) { 0.0 } else { rng.gen_range(0.01..1.0) })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

fn as_distribution(values: Vec<f64>, n_actions: usize) -> Result<StateActionDistribution> {
    let rows = values.chunks(n_actions).map(|c| c.to_vec()).collect();
    StateActionDistribution::distribution(Table::from_rows(rows)?)
}

/// Reward with action-independent values on absorbing states.
fn random_reward(mdp: &TabularMdp, rng: &mut ChaCha8Rng) -> Table {
    let mut r = Table::from_fn(mdp.n_states(), mdp.n_actions(), |_, _| rng.gen_range(-1.0..1.0));
    for s in (0..mdp.n_states()).filter(|&s| mdp.is_absorbing(s)) {
        let v = r[(s, 0)];
        r.row_mut(s).fill(v);
    }
    r
}

fn random_mdp(rng: &mut ChaCha8Rng) -> Result<TabularMdp> {
    let n_states = rng.gen_range(2..=10);
    let n_actions = rng.gen_range(1..=4);
    let n_absorbing = rng.gen_range(0..n_states.min(3));
    let gamma = rng.gen_range(0.5..0.99);
    TabularMdp::random(n_states, n_actions, n_absorbing, gamma, rng)
}

fn finite_difference(f: impl Fn(&Table) -> f64, x: &Table) -> Table {
    let h = 1e-5;
    Table::from_fn(x.n_states(), x.n_actions(), |s, a| {
        let mut plus = x.clone();
        plus[(s, a)] += h;
        let mut minus = x.clone();
        minus[(s, a)] -= h;
        (f(&plus) - f(&minus)) / (2.0 * h)
    })
}

/// Largest `|analytic - numeric| / max(1, |numeric|)`.
fn relative_gap(analytic: &Table, numeric: &Table) -> f64 {
    analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(a, n)| (a - n).abs() / n.abs().max(1.0))
        .fold(0.0, f64::max)
}

fn random_batch(n: usize, n_states: usize, n_actions: usize, rng: &mut ChaCha8Rng) -> Vec<Transition> {
    (0..n)
        .map(|_| Transition {
            s: rng.gen_range(0..n_states),
            a: rng.gen_range(0..n_actions),
            s_next: rng.gen_range(0..n_states),
            absorbing_next: rng.gen_bool(0.25),
        })
        .collect()
}

pub fn verify(seed: u64) -> Result<VerifyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = VerifyReport {
        checks: Vec::new(),
        notes: Vec::new(),
    };

    // objective identity under exact distributions
    let (mut worst, mut stated_worst) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let mdp = random_mdp(&mut rng)?;
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let q = Table::from_fn(ns, na, |_, _| rng.gen_range(-2.0..2.0));
        let pi = Policy::random(ns, na, &mut rng);
        let de = as_distribution(random_distribution(ns * na, 0.3, &mut rng), na)?;
        let dp = occupancy_to_distribution(&occupancy_measure(&mdp, &pi)?)?;
        let cfg = LsIqConfig {
            c: rng.gen_range(0.1..2.0),
            alpha: rng.gen_range(0.05..0.95),
            beta: rng.gen_range(0.0..1.0),
            gamma: mdp.gamma(),
            ..Default::default()
        };
        let id = objective_identity_check(&q, &mdp, &pi, &de, &dp, &cfg)?;
        worst = worst.max(id.residual());
        stated_worst = stated_worst.max(id.stated_residual());
    }
    report.check("objective identity |J - K + cL|", worst, 1e-10);
    report.notes.push(format!("|J + K + cL| reaches {stated_worst:.3e} (equals 2K)"));

    // chi^2 mixture bounds and the optimal reward
    let (mut range, mut reward_range, mut variational) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let n = rng.gen_range(2..=12);
        let de = random_distribution(n, 0.3, &mut rng);
        let dp = random_distribution(n, 0.3, &mut rng);
        for c in [0.25, 0.5, 1.0, 2.0] {
            let spec = MixtureSpec::new(c, 0.5, as_distribution(de.clone(), 1)?, as_distribution(dp.clone(), 1)?)?;
            let chi = chi2_mixture_closed_form(&spec)?;
            range = range.max((-chi).max(chi - 1.0 / c).max(0.0));
            let r = optimal_reward(&spec)?;
            let excess = r.as_slice().iter().map(|x| (x.abs() - 1.0 / c).max(0.0)).fold(0.0, f64::max);
            reward_range = reward_range.max(excess);
            variational = variational.max((variational_objective(&r, &spec) - chi).abs());
        }
    }
    report.check("chi2 mixture within [0, 1/c]", range, 1e-12);
    report.check("optimal reward within [-1/c, 1/c]", reward_range, 0.0);
    report.check("variational value at optimum", variational, 1e-10);

    let mut violation = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(2..=12);
        let de = random_distribution(n, 0.2, &mut rng);
        let dp = random_distribution(n, 0.2, &mut rng);
        for alpha in [0.1, 0.5, 0.9] {
            let b = chi2_convexity_bound(&de, &dp, alpha);
            if !b.scaled.is_infinite() {
                violation = violation.max(b.mixture - b.scaled);
            }
        }
    }
    report.check("convexity bound violation", violation.max(0.0), 1e-10);

    // forward backup: fixed point and contraction
    let (mut fixed, mut contraction) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let mdp = random_mdp(&mut rng)?;
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let reward = random_reward(&mdp, &mut rng);
        let pi = Policy::random(ns, na, &mut rng);
        let q = policy_evaluation_hard(&mdp, &reward, &pi)?;
        fixed = fixed.max(forward_backup(&mdp, &reward, &q, &pi).max_abs_diff(&q));
        let qa = Table::from_fn(ns, na, |_, _| rng.gen_range(-10.0..10.0));
        let qb = Table::from_fn(ns, na, |_, _| rng.gen_range(-10.0..10.0));
        let lhs = forward_backup(&mdp, &reward, &qa, &pi).max_abs_diff(&forward_backup(&mdp, &reward, &qb, &pi));
        contraction = contraction.max(lhs / qa.max_abs_diff(&qb) - mdp.gamma());
    }
    report.check("forward backup fixed point", fixed, 1e-8);
    report.check("forward backup contraction excess", contraction.max(0.0), 1e-12);

    // soft Q = hard Q + entropy critic
    let mut decomposition = 0.0f64;
    for _ in 0..50 {
        let mdp = random_mdp(&mut rng)?;
        let reward = random_reward(&mdp, &mut rng);
        let pi = Policy::random(mdp.n_states(), mdp.n_actions(), &mut rng);
        let beta = rng.gen_range(0.01..2.0);
        let soft = soft_policy_evaluation(&mdp, &reward, &pi, beta)?;
        let hard = policy_evaluation_hard(&mdp, &reward, &pi)?;
        let h = entropy_critic(&mdp, &pi, beta)?;
        decomposition = decomposition.max(soft.max_abs_diff(&hard.zip_map(&h, |a, b| a + b)));
    }
    report.check("critic decomposition", decomposition, 1e-8);

    // occupancy: direct solve against iteration
    let mut occupancy = 0.0f64;
    for _ in 0..20 {
        let mdp = random_mdp(&mut rng)?;
        let pi = Policy::random(mdp.n_states(), mdp.n_actions(), &mut rng);
        let a = occupancy_measure(&mdp, &pi)?;
        let b = occupancy_measure_iterative(&mdp, &pi, 1e-13, 1_000_000)?;
        occupancy = occupancy.max(a.values.max_abs_diff(&b.values));
    }
    report.check("occupancy solve vs iteration", occupancy, 1e-8);

    // loss gradients, target bounds, operator agreement, SQIL reduction
    let (mut grad_gap, mut bounds, mut agreement, mut sqil_gap) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let (ns, na) = (rng.gen_range(2..=6), rng.gen_range(1..=4));
        let mut critic = CriticState::zeros(ns, na);
        critic.q = Table::from_fn(ns, na, |_, _| rng.gen_range(-3.0..3.0));
        critic.q_target = Table::from_fn(ns, na, |_, _| rng.gen_range(-3.0..3.0));
        let expert = random_batch(8, ns, na, &mut rng);
        let batch = random_batch(8, ns, na, &mut rng);
        let pi = Policy::random(ns, na, &mut rng);
        let mu0 = random_distribution(ns, 0.3, &mut rng);
        let cfg = LsIqConfig {
            c: rng.gen_range(0.25..2.0),
            alpha: rng.gen_range(0.1..0.9),
            beta: rng.gen_range(0.0..1.0),
            gamma: rng.gen_range(0.5..0.99),
            fixed_expert_target: rng.gen_bool(0.5),
            clip_targets: false,
            ..Default::default()
        };
        let with_q = |q: &Table| CriticState { q: q.clone(), ..critic.clone() };
        let ls = ls_loss_and_grad(&critic, &expert, &batch, &pi, &cfg, None)?;
        let fd = finite_difference(|q| ls_loss_and_grad(&with_q(q), &expert, &batch, &pi, &cfg, None).unwrap().loss, &critic.q);
        grad_gap = grad_gap.max(relative_gap(&ls.grad, &fd));
        let sq = sqil_loss_and_grad(&critic, &expert, &batch, &pi, &cfg)?;
        let fd = finite_difference(|q| sqil_loss_and_grad(&with_q(q), &expert, &batch, &pi, &cfg).unwrap().loss, &critic.q);
        grad_gap = grad_gap.max(relative_gap(&sq.grad, &fd));
        let iq = iq_loss_and_grad(&critic.q, &expert, &batch, &pi, &cfg)?;
        let fd = finite_difference(|q| iq_loss_and_grad(q, &expert, &batch, &pi, &cfg).unwrap().loss, &critic.q);
        grad_gap = grad_gap.max(relative_gap(&iq.grad, &fd));
        let v0 = iqv0_loss_and_grad(&critic.q, &expert, &batch, &pi, &cfg, &mu0)?;
        let fd = finite_difference(|q| iqv0_loss_and_grad(q, &expert, &batch, &pi, &cfg, &mu0).unwrap().loss, &critic.q);
        grad_gap = grad_gap.max(relative_gap(&v0.grad, &fd));
        let r_q: Vec<f64> = batch.iter().map(|_| rng.gen_range(-2.0..2.0)).collect();
        let bootstrap = Table::from_fn(ns, na, |_, _| rng.gen_range(-1.0..1.0));
        let (_, g_grad) = combined_critic_loss_and_grad(&critic.q, &bootstrap, &batch, &r_q, 0.4, cfg.beta, cfg.gamma, &pi);
        let fd = finite_difference(
            |g| combined_critic_loss_and_grad(g, &bootstrap, &batch, &r_q, 0.4, cfg.beta, cfg.gamma, &pi).0,
            &critic.q,
        );
        grad_gap = grad_gap.max(relative_gap(&g_grad, &fd));

        let clipped = LsIqConfig { clip_targets: true, fixed_expert_target: false, ..cfg.clone() };
        let t = clipped.targets()?;
        let mut wild = critic.clone();
        wild.q_target = wild.q_target.map(|x| x.signum() * 10.0 * t.q_max);
        let out = ls_loss_and_grad(&wild, &expert, &batch, &pi, &clipped, None)?;
        for y in out.expert_targets.iter().chain(&out.policy_targets) {
            bounds = bounds.max((y - t.q_max).max(t.q_min - y).max(0.0));
        }

        let live: Vec<Transition> = batch.iter().map(|t| Transition { absorbing_next: false, ..*t }).collect();
        let v = policy_values(&critic.q, &pi, cfg.beta);
        let iq_op = LsIqConfig { operator: Operator::IqOperator, ..cfg.clone() };
        let ls_op = LsIqConfig { operator: Operator::LsiqOperator, ..cfg.clone() };
        for side in [true, false] {
            let a = implicit_reward(&critic, &live, &v, &iq_op, side)?;
            let b = implicit_reward(&critic, &live, &v, &ls_op, side)?;
            agreement = agreement.max(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
        }

        let degraded = LsIqConfig {
            operator: Operator::IqOperator,
            fixed_expert_target: false,
            clip_targets: false,
            entropy_clip: false,
            ..cfg.clone()
        };
        let sqil = LsIqConfig { sqil_targets: SqilTargets::Symmetric, ..degraded.clone() };
        let a = ls_loss_and_grad(&critic, &expert, &batch, &pi, &degraded, None)?;
        let b = sqil_loss_and_grad(&critic, &expert, &batch, &pi, &sqil)?;
        let identical = a.grad.as_slice().iter().zip(b.grad.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits());
        if !identical {
            sqil_gap = sqil_gap.max(a.grad.max_abs_diff(&b.grad).max(f64::MIN_POSITIVE));
        }
    }
    report.check("loss gradients vs finite differences", grad_gap, 1e-6);
    report.check("clipped targets outside [q_min, q_max]", bounds, 0.0);
    report.check("operator agreement without absorbing", agreement, 0.0);
    report.check("SQIL reduction (bitwise)", sqil_gap, 0.0);

    Ok(report)
}
