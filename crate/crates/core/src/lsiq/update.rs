//! Critic steps, entropy clipping, policy extraction and the training agent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::Transition;
use crate::soft_rl::{argmax, combined_critic_update, maxent_policy, CriticState, Policy};
use crate::table::Table;

use super::config::{LsIqConfig, TargetUpdate};
use super::loss::{algorithm_loss_and_grad, implicit_reward, policy_values, LossOutput};

/// Per-step inputs that do not live in the critic.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub initial_dist: &'a [f64],
    /// Cap on the expert-side entropy bonus, when entropy clipping is active.
    pub expert_entropy_cap: Option<f64>,
}

/// One gradient step on the loss selected by `cfg.algorithm`, followed by the
/// target-table update.
pub fn critic_step(
    critic: &mut CriticState,
    expert: &[Transition],
    policy_batch: &[Transition],
    policy: &Policy,
    cfg: &LsIqConfig,
    ctx: &StepContext<'_>,
) -> Result<LossOutput> {
    let out = algorithm_loss_and_grad(
        critic,
        expert,
        policy_batch,
        policy,
        cfg,
        ctx.initial_dist,
        ctx.expert_entropy_cap,
    )?;
    if cfg.lr_q != 0.0 {
        critic.q.add_scaled(&out.grad, -cfg.lr_q);
    }
    match cfg.target_update {
        TargetUpdate::Hard { period } => {
            if (critic.step_count + 1).is_multiple_of(period) {
                critic.q_target = critic.q.clone();
            }
        }
        TargetUpdate::Polyak { tau } => {
            critic.q_target = critic.q_target.zip_map(&critic.q, |t, q| t + tau * (q - t));
        }
    }
    critic.step_count += 1;
    Ok(out)
}

/// Running statistic of the largest policy-side entropy bonus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyClip {
    pub tracker: f64,
    pub decay: f64,
}

impl EntropyClip {
    pub fn new(decay: f64) -> Self {
        Self { tracker: 0.0, decay }
    }

    /// `tracker <- decay tracker + (1 - decay) max(bonuses)`; returns the new cap.
    /// An empty batch leaves the tracker unchanged.
    pub fn update(&mut self, bonuses: &[f64]) -> f64 {
        let (tracker, cap) = entropy_clip_update(self.tracker, bonuses, self.decay);
        self.tracker = tracker;
        cap
    }
}

pub fn entropy_clip_update(tracker: f64, bonuses: &[f64], decay: f64) -> (f64, f64) {
    let Some(max) = bonuses.iter().copied().reduce(f64::max) else {
        return (tracker, tracker);
    };
    let next = decay * tracker + (1.0 - decay) * max;
    (next, next)
}

/// `Q_dagger = q + (g or h)` per the critic flags.
pub fn augmented_q(critic: &CriticState, cfg: &LsIqConfig) -> Result<Table> {
    let extra = if cfg.use_regularization_critic {
        Some(critic.g.as_ref().ok_or_else(|| {
            Error::Configuration("use_regularization_critic is set but the critic has no g table".into())
        })?)
    } else if cfg.use_entropy_critic {
        Some(critic.h.as_ref().ok_or_else(|| {
            Error::Configuration("use_entropy_critic is set but the critic has no h table".into())
        })?)
    } else {
        None
    };
    Ok(match extra {
        Some(t) => critic.q.zip_map(t, |a, b| a + b),
        None => critic.q.clone(),
    })
}

/// Softmax of the augmented Q-table at temperature `beta`; greedy when `beta = 0`.
pub fn policy_improvement(critic: &CriticState, cfg: &LsIqConfig) -> Result<Policy> {
    let q = augmented_q(critic, cfg)?;
    if cfg.beta > 0.0 {
        maxent_policy(&q, cfg.beta)
    } else {
        let actions: Vec<usize> = q.rows().map(argmax).collect();
        Ok(Policy::deterministic(&actions, q.n_actions()))
    }
}

/// Learner state for the full update loop: critic, current policy and entropy clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsIqAgent {
    pub cfg: LsIqConfig,
    pub critic: CriticState,
    pub policy: Policy,
    pub entropy_clip: EntropyClip,
}

impl LsIqAgent {
    pub fn new(cfg: LsIqConfig, n_states: usize, n_actions: usize) -> Result<Self> {
        cfg.validate()?;
        let mut critic = CriticState::zeros(n_states, n_actions);
        if cfg.use_regularization_critic {
            critic.g = Some(Table::zeros(n_states, n_actions));
        } else if cfg.use_entropy_critic {
            critic.h = Some(Table::zeros(n_states, n_actions));
        }
        let policy = policy_improvement(&critic, &cfg)?;
        let entropy_clip = EntropyClip::new(cfg.entropy_clip_decay);
        Ok(Self {
            cfg,
            critic,
            policy,
            entropy_clip,
        })
    }

    /// Critic step, auxiliary critic step and policy extraction on one pair of batches.
    pub fn update(&mut self, expert: &[Transition], policy_batch: &[Transition], initial_dist: &[f64]) -> Result<f64> {
        let cfg = &self.cfg;
        let cap = if cfg.entropy_clip && cfg.soft_bootstrap() {
            let bonuses: Vec<f64> = policy_batch
                .iter()
                .filter(|t| !t.absorbing_next)
                .map(|t| self.policy.entropy_bonus(t.s_next, cfg.beta))
                .collect();
            Some(self.entropy_clip.update(&bonuses))
        } else {
            None
        };
        let ctx = StepContext {
            initial_dist,
            expert_entropy_cap: cap,
        };
        let out = critic_step(&mut self.critic, expert, policy_batch, &self.policy, cfg, &ctx)?;

        if cfg.use_regularization_critic || cfg.use_entropy_critic {
            let values = policy_values(&self.critic.q, &self.policy, 0.0);
            let r_q = implicit_reward(&self.critic, policy_batch, &values, cfg, false)?;
            let (slot, k) = if cfg.use_regularization_critic {
                (&mut self.critic.g, cfg.k())
            } else {
                (&mut self.critic.h, 0.0)
            };
            let table = slot.as_ref().ok_or_else(|| Error::Configuration("auxiliary critic table missing".into()))?;
            let updated =
                combined_critic_update(table, policy_batch, &r_q, k, cfg.beta, cfg.gamma, &self.policy, cfg.lr_g);
            *slot = Some(updated);
        }

        self.policy = policy_improvement(&self.critic, cfg)?;
        Ok(out.loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lsiq::config::Algorithm;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tr(s: usize, a: usize, s_next: usize, absorbing_next: bool) -> Transition {
        Transition {
            s,
            a,
            s_next,
            absorbing_next,
        }
    }

    #[test]
    fn zero_learning_rate_keeps_critic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = Table::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0));
        let mut critic = CriticState {
            q: q.clone(),
            q_target: q.clone(),
            h: None,
            g: None,
            step_count: 0,
        };
        for algorithm in [Algorithm::Lsiq, Algorithm::Sqil, Algorithm::Iq, Algorithm::Iqv0] {
            let cfg = LsIqConfig { lr_q: 0.0, algorithm, ..Default::default() };
            let ctx = StepContext {
                initial_dist: &[1.0, 0.0, 0.0],
                expert_entropy_cap: None,
            };
            critic_step(&mut critic, &[tr(0, 1, 1, false)], &[tr(1, 0, 2, true)], &Policy::uniform(3, 2), &cfg, &ctx)
                .unwrap();
            assert_eq!(critic.q, q);
            assert_eq!(critic.q_target, q);
        }
        assert_eq!(critic.step_count, 4);
    }

    #[test]
    fn hard_target_update_period() {
        let cfg = LsIqConfig {
            target_update: TargetUpdate::Hard { period: 2 },
            ..Default::default()
        };
        let mut critic = CriticState::zeros(2, 1);
        let ctx = StepContext {
            initial_dist: &[1.0, 0.0],
            expert_entropy_cap: None,
        };
        let policy = Policy::uniform(2, 1);
        critic_step(&mut critic, &[tr(0, 0, 1, true)], &[tr(0, 0, 1, true)], &policy, &cfg, &ctx).unwrap();
        assert_eq!(critic.q_target, Table::zeros(2, 1));
        critic_step(&mut critic, &[tr(0, 0, 1, true)], &[tr(0, 0, 1, true)], &policy, &cfg, &ctx).unwrap();
        assert_eq!(critic.q_target, critic.q);
    }

    #[test]
    fn fixed_targets_converge_to_q_max() {
        // full-support batches over a 2-state, 2-action chain with a fixed policy
        let cfg = LsIqConfig {
            c: 1.0,
            gamma: 0.9,
            lr_q: 0.5,
            target_update: TargetUpdate::Polyak { tau: 0.1 },
            ..Default::default()
        };
        let q_max = cfg.targets().unwrap().q_max;
        let expert = [tr(0, 0, 1, false), tr(1, 0, 0, false)];
        let policy_batch = [tr(0, 1, 1, false), tr(1, 1, 0, false)];
        let policy = Policy::uniform(2, 2);
        let mut critic = CriticState::zeros(2, 2);
        let ctx = StepContext {
            initial_dist: &[1.0, 0.0],
            expert_entropy_cap: None,
        };
        for _ in 0..5000 {
            critic_step(&mut critic, &expert, &policy_batch, &policy, &cfg, &ctx).unwrap();
        }
        assert!((critic.q[(0, 0)] - q_max).abs() < 1e-4);
        assert!((critic.q[(1, 0)] - q_max).abs() < 1e-4);
    }

    #[test]
    fn entropy_clip_tracker() {
        let mut clip = EntropyClip::new(0.9);
        for _ in 0..500 {
            clip.update(&[0.2, 0.7, 0.1]);
        }
        assert!((clip.tracker - 0.7).abs() < 1e-12);
        let (t, cap) = entropy_clip_update(5.0, &[0.3, 0.4], 0.0);
        assert_eq!((t, cap), (0.4, 0.4));
        assert_eq!(entropy_clip_update(1.5, &[], 0.9), (1.5, 1.5));
    }

    #[test]
    fn policy_improvement_variants() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = Table::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0));
        let mut critic = CriticState::zeros(3, 2);
        critic.q = q.clone();
        let plain = LsIqConfig { beta: 0.5, ..Default::default() };
        let expected = maxent_policy(&q, 0.5).unwrap();
        assert_eq!(policy_improvement(&critic, &plain).unwrap(), expected);

        let with_g = LsIqConfig { use_regularization_critic: true, ..plain.clone() };
        assert!(matches!(policy_improvement(&critic, &with_g), Err(Error::Configuration(_))));
        critic.g = Some(Table::zeros(3, 2));
        critic.h = Some(Table::zeros(3, 2));
        assert_eq!(policy_improvement(&critic, &with_g).unwrap(), expected);
        let with_h = LsIqConfig { use_entropy_critic: true, ..plain };
        assert_eq!(policy_improvement(&critic, &with_h).unwrap(), expected);

        let greedy = LsIqConfig { beta: 0.0, ..Default::default() };
        assert!(policy_improvement(&critic, &greedy).unwrap().is_deterministic());
    }
}
