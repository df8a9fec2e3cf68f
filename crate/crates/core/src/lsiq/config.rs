use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inverse Bellman operator used for transitions into absorbing states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Operator {
    /// Absorbing states are worth zero.
    IqOperator,
    /// Absorbing states are worth `r_A / (1 - gamma)`.
    LsiqOperator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Algorithm {
    Lsiq,
    Sqil,
    Iq,
    Iqv0,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TargetUpdate {
    Hard { period: u64 },
    Polyak { tau: f64 },
}

/// Value used to bootstrap the policy-side target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BootstrapValue {
    /// Expectation under the current policy.
    Policy,
    /// `max_a Q(s', a)`.
    Max,
}

/// Reward pair used by the SQIL baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SqilTargets {
    /// `(1, 0)`
    Binary,
    /// `(r_max, r_min)` derived from `c` and `alpha`.
    Symmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LsIqConfig {
    pub c: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub operator: Operator,
    pub fixed_expert_target: bool,
    pub clip_targets: bool,
    pub entropy_clip: bool,
    pub entropy_clip_decay: f64,
    pub use_entropy_critic: bool,
    pub use_regularization_critic: bool,
    pub lr_q: f64,
    pub lr_g: f64,
    pub target_update: TargetUpdate,
    pub batch_size: usize,
    pub algorithm: Algorithm,
    pub bootstrap: BootstrapValue,
    pub sqil_targets: SqilTargets,
}

impl Default for LsIqConfig {
    fn default() -> Self {
        Self {
            c: 0.5,
            alpha: 0.5,
            beta: 1.0,
            gamma: 0.99,
            operator: Operator::LsiqOperator,
            fixed_expert_target: true,
            clip_targets: true,
            entropy_clip: false,
            entropy_clip_decay: 0.99,
            use_entropy_critic: false,
            use_regularization_critic: false,
            lr_q: 0.5,
            lr_g: 0.5,
            target_update: TargetUpdate::Polyak { tau: 0.005 },
            batch_size: 32,
            algorithm: Algorithm::Lsiq,
            bootstrap: BootstrapValue::Policy,
            sqil_targets: SqilTargets::Binary,
        }
    }
}

impl LsIqConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Configuration(msg));
        if !(self.c > 0.0) {
            return bad(format!("c = {} must be positive", self.c));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha = {} outside (0, 1)", self.alpha));
        }
        if !(self.beta >= 0.0) {
            return bad(format!("beta = {} must be nonnegative", self.beta));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma = {} outside (0, 1)", self.gamma));
        }
        if !(self.lr_q >= 0.0 && self.lr_g >= 0.0) {
            return bad("learning rates must be nonnegative".into());
        }
        if !(0.0..1.0).contains(&self.entropy_clip_decay) {
            return bad("entropy_clip_decay outside [0, 1)".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        match self.target_update {
            TargetUpdate::Hard { period: 0 } => return bad("hard target period must be positive".into()),
            TargetUpdate::Polyak { tau } if !(tau > 0.0 && tau <= 1.0) => {
                return bad(format!("polyak tau = {tau} outside (0, 1]"))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn targets(&self) -> Result<RewardTargets> {
        let (r_max, r_min) = reward_targets(self.c, self.alpha)?;
        let (q_max, q_min) = q_bounds(r_max, r_min, self.gamma);
        Ok(RewardTargets {
            r_max,
            r_min,
            q_max,
            q_min,
        })
    }

    /// Weight of the policy-side reward regularizer, `c (1 - alpha)`.
    pub fn k(&self) -> f64 {
        self.c * (1.0 - self.alpha)
    }

    /// Whether the soft value used for bootstrapping carries the entropy bonus.
    /// With an entropy or combined critic the Q-table is a hard Q-function.
    pub fn soft_bootstrap(&self) -> bool {
        self.beta > 0.0 && !self.use_entropy_critic && !self.use_regularization_critic
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardTargets {
    pub r_max: f64,
    pub r_min: f64,
    pub q_max: f64,
    pub q_min: f64,
}

/// `(r_max, r_min) = (1 / (2 alpha c), -1 / (2 (1 - alpha) c))`
pub fn reward_targets(c: f64, alpha: f64) -> Result<(f64, f64)> {
    if alpha == 0.0 || alpha == 1.0 {
        return Err(Error::InfiniteTarget(alpha));
    }
    if !(c > 0.0) || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Configuration(format!("need c > 0 and 0 < alpha < 1, got c = {c}, alpha = {alpha}")));
    }
    Ok((1.0 / (2.0 * alpha * c), -1.0 / (2.0 * (1.0 - alpha) * c)))
}

/// `(q_max, q_min) = (r_max, r_min) / (1 - gamma)`
pub fn q_bounds(r_max: f64, r_min: f64, gamma: f64) -> (f64, f64) {
    (r_max / (1.0 - gamma), r_min / (1.0 - gamma))
}
