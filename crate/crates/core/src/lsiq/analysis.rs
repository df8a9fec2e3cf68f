//! Exact-distribution diagnostics: the objective identity and the forward backup.

use crate::error::Result;
use crate::mdp::{StateActionDistribution, TabularMdp};
use crate::soft_rl::Policy;
use crate::table::Table;

use super::config::LsIqConfig;

/// Inverse-RL objective `J`, least-squares objective `L` and constant `K`
/// evaluated on the same table and policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveIdentity {
    pub j: f64,
    pub l: f64,
    pub k: f64,
    pub c: f64,
}

impl ObjectiveIdentity {
    /// `|J + K + c L|`.
    pub fn stated_residual(&self) -> f64 {
        (self.j + self.k + self.c * self.l).abs()
    }

    /// `|J - K + c L|`, which vanishes since `J = K - c L` after completing the square.
    pub fn residual(&self) -> f64 {
        (self.j - self.k + self.c * self.l).abs()
    }
}

/// Evaluate `J` and `L` under exact distributions.
///
/// The implicit reward is `r(s,a) = q(s,a) - gamma E_{s'}[V(s')]` with the soft
/// value `V(s) = sum_a pi(a|s) (q(s,a) - beta log pi(a|s))`, and `H(pi)` is the
/// expected negative log-likelihood of `pi` under `d_policy`.
pub fn objective_identity_check(
    q: &Table,
    mdp: &TabularMdp,
    policy: &Policy,
    d_expert: &StateActionDistribution,
    d_policy: &StateActionDistribution,
    cfg: &LsIqConfig,
) -> Result<ObjectiveIdentity> {
    mdp.check_policy(policy)?;
    let targets = cfg.targets()?;
    let (c, alpha, beta, gamma) = (cfg.c, cfg.alpha, cfg.beta, mdp.gamma());
    let v: Vec<f64> = (0..mdp.n_states())
        .map(|s| policy.expect(q, s) + policy.entropy_bonus(s, beta))
        .collect();

    let (mut j, mut l, mut entropy) = (0.0, 0.0, 0.0);
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let r = q[(s, a)] - gamma * mdp.expect_next(s, a, |sn| v[sn]);
            let (de, dp) = (d_expert.get(s, a), d_policy.get(s, a));
            j += de * r - dp * r - c * alpha * de * r * r - c * (1.0 - alpha) * dp * r * r;
            l += alpha * de * (r - targets.r_max).powi(2) + (1.0 - alpha) * dp * (r - targets.r_min).powi(2);
            let p = policy.prob(s, a);
            if dp > 0.0 && p > 0.0 {
                entropy -= dp * p.ln();
            }
        }
    }
    j -= beta * entropy;
    l += beta / c * entropy;
    Ok(ObjectiveIdentity {
        j,
        l,
        k: 1.0 / (4.0 * alpha * c) + 1.0 / (4.0 * (1.0 - alpha) * c),
        c,
    })
}

/// Forward backup whose fixed point is the hard `Q^pi` of `reward`:
/// `(B Q)(s,a) = r(s,a) + gamma E_{s'}[(1 - nu(s')) E_pi Q(s', .) + nu(s') V_A(s')]`
/// with the analytic absorbing value `V_A`.
pub fn forward_backup(mdp: &TabularMdp, reward: &Table, q: &Table, policy: &Policy) -> Table {
    let gamma = mdp.gamma();
    let next: Vec<f64> = (0..mdp.n_states())
        .map(|s| {
            if mdp.is_absorbing(s) {
                mdp.absorbing_value(reward, s)
            } else {
                policy.expect(q, s)
            }
        })
        .collect();
    Table::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| {
        reward[(s, a)] + gamma * mdp.expect_next(s, a, |sn| next[sn])
    })
}
