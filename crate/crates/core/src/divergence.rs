//! Chi-squared divergence between the expert distribution and the
//! expert/policy mixture.
//!
//! Mixture quantities use the "2 chi^2 with k = c/2" scaling, so that the
//! divergence lies in `[0, 1/c]`. [`pearson_chi2`] is the standard Pearson
//! divergence with `f(t) = (t - 1)^2`.

use crate::error::{Error, Result};
use crate::mdp::StateActionDistribution;
use crate::table::Table;

#[derive(Debug, Clone)]
pub struct MixtureSpec {
    pub c: f64,
    pub alpha: f64,
    pub d_expert: StateActionDistribution,
    pub d_policy: StateActionDistribution,
}

impl MixtureSpec {
    pub fn new(c: f64, alpha: f64, d_expert: StateActionDistribution, d_policy: StateActionDistribution) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::UnsupportedConfiguration(format!("c = {c} must be positive")));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::UnsupportedConfiguration(format!("alpha = {alpha} outside (0, 1)")));
        }
        if !d_expert.values.same_shape(&d_policy.values) {
            return Err(Error::InvalidDistribution("expert and policy tables differ in shape".into()));
        }
        Ok(Self {
            c,
            alpha,
            d_expert,
            d_policy,
        })
    }

    fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.d_expert
            .values
            .as_slice()
            .iter()
            .copied()
            .zip(self.d_policy.values.as_slice().iter().copied())
    }

    fn require_symmetric(&self) -> Result<()> {
        if self.alpha != 0.5 {
            return Err(Error::UnsupportedConfiguration(format!(
                "closed form only available for alpha = 0.5, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// `E_dE[r] - E_dpi[r] - c alpha E_dE[r^2] - c (1 - alpha) E_dpi[r^2]`
pub fn variational_objective(r: &Table, spec: &MixtureSpec) -> f64 {
    let (c, alpha) = (spec.c, spec.alpha);
    spec.pairs()
        .zip(r.as_slice())
        .map(|((de, dp), &y)| de * y - dp * y - c * alpha * de * y * y - c * (1.0 - alpha) * dp * y * y)
        .sum()
}

/// Maximizer of [`variational_objective`] at `alpha = 1/2`:
/// `(1/c) (dE - dpi) / (dE + dpi)`, zero off the union support.
pub fn optimal_reward(spec: &MixtureSpec) -> Result<Table> {
    spec.require_symmetric()?;
    Ok(spec.d_expert.values.zip_map(&spec.d_policy.values, |de, dp| {
        let total = de + dp;
        if total > 0.0 {
            (de - dp) / (spec.c * total)
        } else {
            0.0
        }
    }))
}

/// `(1 / 2c) sum (dE - dpi)^2 / (dE + dpi)` over the union support.
pub fn chi2_mixture_closed_form(spec: &MixtureSpec) -> Result<f64> {
    spec.require_symmetric()?;
    Ok(spec
        .pairs()
        .filter(|(de, dp)| de + dp > 0.0)
        .map(|(de, dp)| (de - dp).powi(2) / (de + dp))
        .sum::<f64>()
        / (2.0 * spec.c))
}

/// Pearson `chi^2(p || q) = sum (p - q)^2 / q`; `+inf` if `q = 0 < p` anywhere.
pub fn pearson_chi2(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if qi > 0.0 {
            total += (pi - qi).powi(2) / qi;
        } else if pi > 0.0 {
            return f64::INFINITY;
        }
    }
    total
}

/// Both sides of `chi2(dE || alpha dE + (1 - alpha) dpi) <= (1 - alpha) chi2(dE || dpi)`.
#[derive(Debug, Clone, Copy)]
pub struct ConvexityBound {
    pub mixture: f64,
    pub scaled: f64,
    pub holds: bool,
}

pub fn chi2_convexity_bound(d_expert: &[f64], d_policy: &[f64], alpha: f64) -> ConvexityBound {
    let mix: Vec<f64> = d_expert
        .iter()
        .zip(d_policy)
        .map(|(&e, &p)| alpha * e + (1.0 - alpha) * p)
        .collect();
    let mixture = pearson_chi2(d_expert, &mix);
    let scaled = (1.0 - alpha) * pearson_chi2(d_expert, d_policy);
    ConvexityBound {
        mixture,
        scaled,
        holds: scaled.is_infinite() || mixture <= scaled + 1e-10,
    }
}

pub fn chi2_convexity_bound_check(d_expert: &[f64], d_policy: &[f64], alpha: f64) -> bool {
    chi2_convexity_bound(d_expert, d_policy, alpha).holds
}
