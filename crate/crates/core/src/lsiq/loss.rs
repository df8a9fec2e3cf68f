//! Implicit rewards, regression targets and the critic losses.

use crate::error::{Error, Result};
use crate::mdp::Transition;
use crate::soft_rl::Policy;
use crate::table::Table;

use super::config::{Algorithm, BootstrapValue, LsIqConfig, Operator, SqilTargets};

/// `V(s) = sum_a pi(a|s) q(s, a)`, plus the entropy bonus when `beta > 0`.
pub fn policy_values(q: &Table, policy: &Policy, beta: f64) -> Vec<f64> {
    (0..q.n_states())
        .map(|s| {
            let bonus = if beta > 0.0 { policy.entropy_bonus(s, beta) } else { 0.0 };
            policy.expect(q, s) + bonus
        })
        .collect()
}

/// Value the operator assigns to an absorbing successor.
fn absorbing_successor_value(operator: Operator, r_absorbing: f64, gamma: f64) -> f64 {
    match operator {
        Operator::IqOperator => 0.0,
        Operator::LsiqOperator => r_absorbing / (1.0 - gamma),
    }
}

/// Inverse Bellman operator applied to the online table, one reward per transition.
pub fn implicit_reward(
    critic: &crate::soft_rl::CriticState,
    batch: &[Transition],
    soft_values: &[f64],
    cfg: &LsIqConfig,
    expert_side: bool,
) -> Result<Vec<f64>> {
    let targets = cfg.targets()?;
    let r_a = if expert_side { targets.r_max } else { targets.r_min };
    let v_a = absorbing_successor_value(cfg.operator, r_a, cfg.gamma);
    Ok(batch
        .iter()
        .map(|t| {
            let next = if t.absorbing_next { v_a } else { soft_values[t.s_next] };
            critic.q[(t.s, t.a)] - cfg.gamma * next
        })
        .collect())
}

/// Fully resolved regression-target rule shared by LS-IQ and SQIL.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetRule {
    pub r_max: f64,
    pub r_min: f64,
    pub q_max: f64,
    pub q_min: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub operator: Operator,
    pub fixed_expert_target: bool,
    pub clip_targets: bool,
    /// Temperature of the entropy bonus inside the bootstrap value (0 disables it).
    pub bonus_beta: f64,
    pub bootstrap: BootstrapValue,
}

impl TargetRule {
    pub fn lsiq(cfg: &LsIqConfig) -> Result<Self> {
        let t = cfg.targets()?;
        Ok(Self {
            r_max: t.r_max,
            r_min: t.r_min,
            q_max: t.q_max,
            q_min: t.q_min,
            alpha: cfg.alpha,
            gamma: cfg.gamma,
            operator: cfg.operator,
            fixed_expert_target: cfg.fixed_expert_target,
            clip_targets: cfg.clip_targets,
            bonus_beta: if cfg.soft_bootstrap() { cfg.beta } else { 0.0 },
            bootstrap: cfg.bootstrap,
        })
    }

    /// SQIL: bootstrapped targets everywhere, zero-valued absorbing states, no clipping.
    pub fn sqil(cfg: &LsIqConfig) -> Result<Self> {
        let (r_max, r_min) = match cfg.sqil_targets {
            SqilTargets::Binary => (1.0, 0.0),
            SqilTargets::Symmetric => {
                let t = cfg.targets()?;
                (t.r_max, t.r_min)
            }
        };
        let (q_max, q_min) = super::config::q_bounds(r_max, r_min, cfg.gamma);
        Ok(Self {
            r_max,
            r_min,
            q_max,
            q_min,
            alpha: cfg.alpha,
            gamma: cfg.gamma,
            operator: Operator::IqOperator,
            fixed_expert_target: false,
            clip_targets: false,
            bonus_beta: if cfg.soft_bootstrap() { cfg.beta } else { 0.0 },
            bootstrap: cfg.bootstrap,
        })
    }

    /// Bootstrap value `V_hat(s')` from the target table.
    pub fn bootstrap_value(&self, q_target: &Table, policy: &Policy, s: usize, entropy_cap: Option<f64>) -> f64 {
        let clip = |x: f64| if self.clip_targets { x.clamp(self.q_min, self.q_max) } else { x };
        let row = q_target.row(s);
        let hard = match self.bootstrap {
            BootstrapValue::Policy => row.iter().zip(policy.row(s)).map(|(&q, &p)| p * clip(q)).sum(),
            BootstrapValue::Max => row.iter().map(|&q| clip(q)).fold(f64::NEG_INFINITY, f64::max),
        };
        let mut bonus = if self.bonus_beta > 0.0 { policy.entropy_bonus(s, self.bonus_beta) } else { 0.0 };
        if let Some(cap) = entropy_cap {
            bonus = bonus.min(cap);
        }
        clip(hard + bonus)
    }

    pub fn expert_target(&self, t: &Transition, q_target: &Table, policy: &Policy, entropy_cap: Option<f64>) -> f64 {
        if self.fixed_expert_target {
            return self.q_max;
        }
        if t.absorbing_next {
            return match self.operator {
                Operator::LsiqOperator => self.q_max,
                Operator::IqOperator => self.r_max,
            };
        }
        self.bounded(self.r_max + self.gamma * self.bootstrap_value(q_target, policy, t.s_next, entropy_cap))
    }

    pub fn policy_target(&self, t: &Transition, q_target: &Table, policy: &Policy) -> f64 {
        if t.absorbing_next {
            return match self.operator {
                Operator::LsiqOperator => self.q_min,
                Operator::IqOperator => self.r_min,
            };
        }
        self.bounded(self.r_min + self.gamma * self.bootstrap_value(q_target, policy, t.s_next, None))
    }

    // r + gamma * q_max can round just past q_max.
    fn bounded(&self, target: f64) -> f64 {
        if self.clip_targets {
            target.clamp(self.q_min, self.q_max)
        } else {
            target
        }
    }
}

/// Loss value, gradient with respect to the online table, and the emitted targets.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Table,
    pub expert_targets: Vec<f64>,
    pub policy_targets: Vec<f64>,
}

fn check_batches(expert: &[Transition], policy_batch: &[Transition]) -> Result<()> {
    if expert.is_empty() {
        return Err(Error::InvalidBatch("expert batch is empty".into()));
    }
    if policy_batch.is_empty() {
        return Err(Error::InvalidBatch("policy batch is empty".into()));
    }
    Ok(())
}

/// `alpha mean_E (Q - T_E)^2 + (1 - alpha) mean_pi (Q - T_pi)^2` with targets held constant.
pub fn least_squares_loss_and_grad(
    q: &Table,
    q_target: &Table,
    expert: &[Transition],
    policy_batch: &[Transition],
    policy: &Policy,
    rule: &TargetRule,
    entropy_cap: Option<f64>,
) -> Result<LossOutput> {
    check_batches(expert, policy_batch)?;
    let mut grad = Table::zeros(q.n_states(), q.n_actions());
    let mut loss = 0.0;

    let w_e = rule.alpha / expert.len() as f64;
    let expert_targets: Vec<f64> = expert
        .iter()
        .map(|t| rule.expert_target(t, q_target, policy, entropy_cap))
        .collect();
    for (t, &y) in expert.iter().zip(&expert_targets) {
        let diff = q[(t.s, t.a)] - y;
        loss += w_e * diff * diff;
        grad[(t.s, t.a)] += 2.0 * w_e * diff;
    }

    let w_p = (1.0 - rule.alpha) / policy_batch.len() as f64;
    let policy_targets: Vec<f64> = policy_batch
        .iter()
        .map(|t| rule.policy_target(t, q_target, policy))
        .collect();
    for (t, &y) in policy_batch.iter().zip(&policy_targets) {
        let diff = q[(t.s, t.a)] - y;
        loss += w_p * diff * diff;
        grad[(t.s, t.a)] += 2.0 * w_p * diff;
    }

    Ok(LossOutput {
        loss,
        grad,
        expert_targets,
        policy_targets,
    })
}

/// LS-IQ loss with the configured operator, fixed targets and clipping.
pub fn ls_loss_and_grad(
    critic: &crate::soft_rl::CriticState,
    expert: &[Transition],
    policy_batch: &[Transition],
    policy: &Policy,
    cfg: &LsIqConfig,
    entropy_cap: Option<f64>,
) -> Result<LossOutput> {
    let rule = TargetRule::lsiq(cfg)?;
    least_squares_loss_and_grad(&critic.q, &critic.q_target, expert, policy_batch, policy, &rule, entropy_cap)
}

pub fn sqil_loss_and_grad(
    critic: &crate::soft_rl::CriticState,
    expert: &[Transition],
    policy_batch: &[Transition],
    policy: &Policy,
    cfg: &LsIqConfig,
) -> Result<LossOutput> {
    let rule = TargetRule::sqil(cfg)?;
    least_squares_loss_and_grad(&critic.q, &critic.q_target, expert, policy_batch, policy, &rule, None)
}

/// IQ implicit reward `Q(s,a) - (1 - nu) gamma V(s')` and its partial
/// derivatives, accumulated into `grad` with weight `w`.
fn iq_reward(q: &Table, v: &[f64], t: &Transition, gamma: f64) -> f64 {
    let next = if t.absorbing_next { 0.0 } else { v[t.s_next] };
    q[(t.s, t.a)] - gamma * next
}

fn accumulate_iq_reward_grad(grad: &mut Table, policy: &Policy, t: &Transition, gamma: f64, w: f64) {
    grad[(t.s, t.a)] += w;
    if !t.absorbing_next {
        for (a, &p) in policy.row(t.s_next).iter().enumerate() {
            grad[(t.s_next, a)] -= w * gamma * p;
        }
    }
}

/// Negative IQ objective on a batch, with the chi^2 mixture regularizer.
///
/// The soft value is taken from the online table under the fixed `policy`,
/// so the gradient flows through `V(s')`.
pub fn iq_loss_and_grad(
    q: &Table,
    expert: &[Transition],
    policy_batch: &[Transition],
    policy: &Policy,
    cfg: &LsIqConfig,
) -> Result<LossOutput> {
    check_batches(expert, policy_batch)?;
    let (c, alpha, gamma) = (cfg.c, cfg.alpha, cfg.gamma);
    let v = policy_values(q, policy, cfg.beta);
    let mut grad = Table::zeros(q.n_states(), q.n_actions());
    let mut j = 0.0;

    let n_e = expert.len() as f64;
    for t in expert {
        let r = iq_reward(q, &v, t, gamma);
        j += (r - c * alpha * r * r) / n_e;
        let dloss_dr = -(1.0 - 2.0 * c * alpha * r) / n_e;
        accumulate_iq_reward_grad(&mut grad, policy, t, gamma, dloss_dr);
    }
    let n_p = policy_batch.len() as f64;
    for t in policy_batch {
        let r = iq_reward(q, &v, t, gamma);
        j -= (r + c * (1.0 - alpha) * r * r) / n_p;
        let dloss_dr = (1.0 + 2.0 * c * (1.0 - alpha) * r) / n_p;
        accumulate_iq_reward_grad(&mut grad, policy, t, gamma, dloss_dr);
    }

    Ok(LossOutput {
        loss: -j,
        grad,
        expert_targets: Vec::new(),
        policy_targets: Vec::new(),
    })
}

/// IQ with the policy expectation replaced by `(1 - gamma) E_mu0[V(s0)]`.
/// The regularizer still uses the policy batch.
pub fn iqv0_loss_and_grad(
    q: &Table,
    expert: &[Transition],
    policy_batch: &[Transition],
    policy: &Policy,
    cfg: &LsIqConfig,
    initial_dist: &[f64],
) -> Result<LossOutput> {
    check_batches(expert, policy_batch)?;
    if initial_dist.len() != q.n_states() {
        return Err(Error::InvalidDistribution("initial distribution has the wrong length".into()));
    }
    let (c, alpha, gamma) = (cfg.c, cfg.alpha, cfg.gamma);
    let v = policy_values(q, policy, cfg.beta);
    let mut grad = Table::zeros(q.n_states(), q.n_actions());
    let mut j = 0.0;

    let n_e = expert.len() as f64;
    for t in expert {
        let r = iq_reward(q, &v, t, gamma);
        j += (r - c * alpha * r * r) / n_e;
        let dloss_dr = -(1.0 - 2.0 * c * alpha * r) / n_e;
        accumulate_iq_reward_grad(&mut grad, policy, t, gamma, dloss_dr);
    }
    for (s, &mu) in initial_dist.iter().enumerate() {
        if mu == 0.0 {
            continue;
        }
        j -= (1.0 - gamma) * mu * v[s];
        for (a, &p) in policy.row(s).iter().enumerate() {
            grad[(s, a)] += (1.0 - gamma) * mu * p;
        }
    }
    let n_p = policy_batch.len() as f64;
    for t in policy_batch {
        let r = iq_reward(q, &v, t, gamma);
        j -= c * (1.0 - alpha) * r * r / n_p;
        let dloss_dr = 2.0 * c * (1.0 - alpha) * r / n_p;
        accumulate_iq_reward_grad(&mut grad, policy, t, gamma, dloss_dr);
    }

    Ok(LossOutput {
        loss: -j,
        grad,
        expert_targets: Vec::new(),
        policy_targets: Vec::new(),
    })
}

/// Loss selected by `cfg.algorithm`.
pub fn algorithm_loss_and_grad(
    critic: &crate::soft_rl::CriticState,
    expert: &[Transition],
    policy_batch: &[Transition],
    policy: &Policy,
    cfg: &LsIqConfig,
    initial_dist: &[f64],
    entropy_cap: Option<f64>,
) -> Result<LossOutput> {
    match cfg.algorithm {
        Algorithm::Lsiq => ls_loss_and_grad(critic, expert, policy_batch, policy, cfg, entropy_cap),
        Algorithm::Sqil => sqil_loss_and_grad(critic, expert, policy_batch, policy, cfg),
        Algorithm::Iq => iq_loss_and_grad(&critic.q, expert, policy_batch, policy, cfg),
        Algorithm::Iqv0 => iqv0_loss_and_grad(&critic.q, expert, policy_batch, policy, cfg, initial_dist),
    }
}
