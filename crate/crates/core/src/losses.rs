//! Training losses. All reduce over the batch with a mean.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower clamp applied to predicted probabilities before the log.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossConfig {
    Nll,
    BetaNll { beta: f64 },
    SoftCe,
}

impl LossConfig {
    pub fn beta_nll(beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::Parameter(format!("beta {beta} not in [0, 1]")));
        }
        Ok(LossConfig::BetaNll { beta })
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossConfig::Nll => "nll",
            LossConfig::BetaNll { .. } => "beta_nll",
            LossConfig::SoftCe => "soft_ce",
        }
    }
}

fn check_variance(var: &Var<'_>) -> Result<()> {
    if var.value().data().iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Domain("non-positive predicted variance".into()));
    }
    Ok(())
}

fn nll_terms<'t>(mu: Var<'t>, var: Var<'t>, y: Var<'t>) -> Result<Var<'t>> {
    check_variance(&var)?;
    let log_term = var.log()?.scale(0.5);
    let sq = mu.sub(y)?.square().div(var)?.scale(0.5);
    log_term.add(sq)
}

/// `mean(log σ² / 2 + (μ - y)² / (2σ²))`.
pub fn gaussian_nll<'t>(mu: Var<'t>, var: Var<'t>, y: Var<'t>) -> Result<Var<'t>> {
    Ok(nll_terms(mu, var, y)?.mean())
}

/// Gaussian NLL weighted per point by `stop_gradient(σ^{2β})`.
pub fn beta_nll<'t>(mu: Var<'t>, var: Var<'t>, y: Var<'t>, beta: f64) -> Result<Var<'t>> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Parameter(format!("beta {beta} not in [0, 1]")));
    }
    let terms = nll_terms(mu, var, y)?;
    let weight = var.stop_gradient().powf(beta)?;
    Ok(weight.mul(terms)?.mean())
}

/// `mean over rows of -Σ_c p_true,c · log max(p_pred,c, 1e-12)`.
pub fn soft_cross_entropy<'t>(p_pred: Var<'t>, p_true: Var<'t>) -> Result<Var<'t>> {
    let (ps, ts) = (p_pred.shape(), p_true.shape());
    if ps != ts {
        return Err(Error::Dimension(format!("soft CE of {ps:?} and {ts:?}")));
    }
    let rows = if ps.len() > 1 { ps[0] } else { 1 };
    let log_p = p_pred.clamp_min(PROB_CLAMP).log()?;
    Ok(p_true.mul(log_p)?.sum().scale(-1.0 / rows as f64))
}

/// Plain-value soft cross-entropy of one distribution pair.
pub fn soft_cross_entropy_value(p_pred: &[f64], p_true: &[f64]) -> f64 {
    -p_true
        .iter()
        .zip(p_pred)
        .map(|(t, p)| t * p.max(PROB_CLAMP).ln())
        .sum::<f64>()
}

/// Loss for one batch given the head outputs and targets.
pub fn apply<'t>(config: &LossConfig, mean: Var<'t>, variance: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    match *config {
        LossConfig::Nll => gaussian_nll(mean, variance, target),
        LossConfig::BetaNll { beta } => beta_nll(mean, variance, target, beta),
        LossConfig::SoftCe => soft_cross_entropy(mean, target),
    }
}

/// Value of the Gaussian NLL for plain columns; used by baselines and tests.
pub fn gaussian_nll_value(mu: &Tensor, var: &Tensor, y: &Tensor) -> f64 {
    let n = mu.len() as f64;
    mu.data()
        .iter()
        .zip(var.data())
        .zip(y.data())
        .map(|((m, v), t)| 0.5 * v.ln() + (m - t).powi(2) / (2.0 * v))
        .sum::<f64>()
        / n
}
