//! Aleatoric/epistemic disentanglement.
//!
//! Regression: the M pass outputs `(μᵢ, σ²ᵢ)` are combined into one Gaussian
//! with mean `μ* = M⁻¹Σμᵢ` and variance `σ²* = M⁻¹Σ(σ²ᵢ + μᵢ²) − μ*²`, which
//! splits exactly into the mean of the variances (aleatoric) plus the
//! variance of the means (epistemic). Population (divide-by-M) moments are
//! used throughout so the split is an identity.
//!
//! Classification: the same split is applied per class to the logit means and
//! logit variances, and each logit distribution is mapped to probabilities by
//! the sampling softmax `p = N⁻¹ Σⱼ softmax(μ + σ ∘ εⱼ)`. Probabilities and
//! entropies of the three components do not add up; only the logit variances
//! do.

use crate::autodiff::{softmax_into, Var};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;
use crate::uq::{LogitSamples, RegressionSamples};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegressionDisentangled {
    pub mean: f64,
    pub predictive_variance: f64,
    pub aleatoric_variance: f64,
    pub epistemic_variance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogitDisentangled {
    pub mean_logits: Vec<f64>,
    pub aleatoric_logit_var: Vec<f64>,
    pub epistemic_logit_var: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationDisentangled {
    pub mean_logits: Vec<f64>,
    pub aleatoric_logit_var: Vec<f64>,
    pub epistemic_logit_var: Vec<f64>,
    pub p_pred: Vec<f64>,
    pub p_ale: Vec<f64>,
    pub p_epi: Vec<f64>,
    pub h_pred: f64,
    pub h_ale: f64,
    pub h_epi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplingSoftmaxConfig {
    sample_count: usize,
}

impl SamplingSoftmaxConfig {
    pub const DEFAULT_SAMPLES: usize = 100;

    pub fn new(sample_count: usize) -> Result<Self> {
        if sample_count == 0 {
            return Err(Error::Parameter("sampling softmax needs N >= 1".into()));
        }
        Ok(Self { sample_count })
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }
}

impl Default for SamplingSoftmaxConfig {
    fn default() -> Self {
        Self {
            sample_count: Self::DEFAULT_SAMPLES,
        }
    }
}

/// Mean shifted by the first element, so equal inputs give that value exactly.
fn mean(xs: &[f64]) -> f64 {
    let x0 = xs[0];
    x0 + xs.iter().map(|x| x - x0).sum::<f64>() / xs.len() as f64
}

/// Population variance around a precomputed mean.
fn centered_variance(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

fn check_regression(s: &RegressionSamples) -> Result<()> {
    if s.means.is_empty() {
        return Err(Error::EmptySamples);
    }
    if s.means.len() != s.variances.len() {
        return Err(Error::Dimension("means and variances differ in length".into()));
    }
    if s.variances.iter().any(|&v| v < 0.0) {
        return Err(Error::Domain("negative sample variance".into()));
    }
    Ok(())
}

/// Mixture mean and variance `(μ*, σ²*)`.
///
/// `M⁻¹Σμᵢ² − μ*²` is evaluated in its centered form `M⁻¹Σ(μᵢ − μ*)²`,
/// which is the same quantity without cancellation for large means.
pub fn combine_gaussian_mixture(samples: &RegressionSamples) -> Result<(f64, f64)> {
    check_regression(samples)?;
    let mu = mean(&samples.means);
    let var = mean(&samples.variances) + centered_variance(&samples.means, mu);
    Ok((mu, var.max(0.0)))
}

/// `(aleatoric, epistemic) = (M⁻¹Σσ²ᵢ, M⁻¹Σμᵢ² − μ*²)`.
pub fn decompose_variance(samples: &RegressionSamples) -> Result<(f64, f64)> {
    check_regression(samples)?;
    let mu = mean(&samples.means);
    let aleatoric = mean(&samples.variances);
    let epistemic = centered_variance(&samples.means, mu).max(0.0);
    Ok((aleatoric, epistemic))
}

pub fn disentangle_regression(samples: &RegressionSamples) -> Result<RegressionDisentangled> {
    let (mean, predictive_variance) = combine_gaussian_mixture(samples)?;
    let (aleatoric_variance, epistemic_variance) = decompose_variance(samples)?;
    Ok(RegressionDisentangled {
        mean,
        predictive_variance,
        aleatoric_variance,
        epistemic_variance,
    })
}

fn check_logits(mu: &[f64], var: &[f64]) -> Result<()> {
    if mu.len() != var.len() {
        return Err(Error::Dimension(format!(
            "{} logit means vs {} variances",
            mu.len(),
            var.len()
        )));
    }
    if mu.is_empty() {
        return Err(Error::Dimension("no classes".into()));
    }
    if var.iter().any(|&v| v < 0.0) {
        return Err(Error::Domain("negative logit variance".into()));
    }
    Ok(())
}

fn accumulate_softmax(mu: &[f64], var: &[f64], n: usize, mut eps: impl FnMut() -> f64) -> Vec<f64> {
    let c = mu.len();
    if var.iter().all(|&v| v == 0.0) {
        let mut p = vec![0.0; c];
        softmax_into(mu, &mut p);
        return p;
    }
    let sigma: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
    let mut z = vec![0.0; c];
    let mut s = vec![0.0; c];
    let mut acc = vec![0.0; c];
    for _ in 0..n {
        for k in 0..c {
            z[k] = mu[k] + sigma[k] * eps();
        }
        softmax_into(&z, &mut s);
        for (a, v) in acc.iter_mut().zip(&s) {
            *a += v;
        }
    }
    let inv = 1.0 / n as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    acc
}

/// Monte-Carlo estimate of `E[softmax(z)]` for `z ~ N(μ, diag(σ²))`.
///
/// Draws `N × C` standard normals from `rng` in row-major order; with all
/// variances zero the result is `softmax(μ)` and no draws are made.
pub fn sampling_softmax(
    mu: &[f64],
    var: &[f64],
    config: SamplingSoftmaxConfig,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    check_logits(mu, var)?;
    Ok(accumulate_softmax(mu, var, config.sample_count, || rng.normal()))
}

/// [`sampling_softmax`] with caller-supplied `N × C` noise.
pub fn sampling_softmax_with_noise(mu: &[f64], var: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
    check_logits(mu, var)?;
    let c = mu.len();
    if noise.is_empty() || !noise.len().is_multiple_of(c) {
        return Err(Error::Dimension(format!(
            "noise of length {} for {c} classes",
            noise.len()
        )));
    }
    let mut it = noise.iter().copied();
    Ok(accumulate_softmax(mu, var, noise.len() / c, || it.next().unwrap()))
}

/// Differentiable sampling softmax on the tape.
///
/// `mu` and `var` are `[n, C]`; `noise` is `[N, n, C]` and is held constant,
/// so gradients flow through `μ + σ ∘ ε`.
pub fn sampling_softmax_var<'t>(mu: Var<'t>, var: Var<'t>, noise: &Tensor) -> Result<Var<'t>> {
    let (ms, vs) = (mu.shape(), var.shape());
    if ms != vs || noise.shape().len() != ms.len() + 1 || noise.shape()[1..] != ms[..] {
        return Err(Error::Dimension(format!(
            "sampling softmax of mean {ms:?}, variance {vs:?}, noise {:?}",
            noise.shape()
        )));
    }
    let sigma = var.sqrt()?;
    let eps = mu.tape().constant(noise.clone());
    eps.mul(sigma)?.add(mu)?.softmax()?.mean_leading()
}

/// Shannon entropy in nats; `0 · ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    if p.iter().any(|&v| v < 0.0) {
        return Err(Error::Domain("negative probability".into()));
    }
    Ok(-p
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>())
}

/// Per-class mean logits, mean logit variance and variance of logit means.
pub fn disentangle_logits(samples: &LogitSamples) -> Result<LogitDisentangled> {
    samples.validate()?;
    let c = samples.classes();
    let mut mean_logits = vec![0.0; c];
    let mut aleatoric = vec![0.0; c];
    let mut epistemic = vec![0.0; c];
    let mut column = vec![0.0; samples.len()];
    for k in 0..c {
        for (i, row) in samples.means.iter().enumerate() {
            column[i] = row[k];
        }
        let m = mean(&column);
        mean_logits[k] = m;
        epistemic[k] = centered_variance(&column, m).max(0.0);
        aleatoric[k] = samples.variances.iter().map(|r| r[k]).sum::<f64>() / samples.len() as f64;
    }
    Ok(LogitDisentangled {
        mean_logits,
        aleatoric_logit_var: aleatoric,
        epistemic_logit_var: epistemic,
    })
}

/// Full classification pipeline with one shared `N × C` noise draw for the
/// three sampling-softmax evaluations.
pub fn classification_uncertainty(
    samples: &LogitSamples,
    config: SamplingSoftmaxConfig,
    rng: &mut RngStream,
) -> Result<ClassificationDisentangled> {
    let parts = disentangle_logits(samples)?;
    let noise = rng.normals(config.sample_count * samples.classes());
    classification_from_parts(parts, &noise)
}

pub(crate) fn classification_from_parts(parts: LogitDisentangled, noise: &[f64]) -> Result<ClassificationDisentangled> {
    let total: Vec<f64> = parts
        .aleatoric_logit_var
        .iter()
        .zip(&parts.epistemic_logit_var)
        .map(|(a, e)| a + e)
        .collect();
    let mu = &parts.mean_logits;
    let p_pred = sampling_softmax_with_noise(mu, &total, noise)?;
    let p_ale = sampling_softmax_with_noise(mu, &parts.aleatoric_logit_var, noise)?;
    let p_epi = sampling_softmax_with_noise(mu, &parts.epistemic_logit_var, noise)?;
    Ok(ClassificationDisentangled {
        h_pred: entropy(&p_pred)?,
        h_ale: entropy(&p_ale)?,
        h_epi: entropy(&p_epi)?,
        p_pred,
        p_ale,
        p_epi,
        mean_logits: parts.mean_logits,
        aleatoric_logit_var: parts.aleatoric_logit_var,
        epistemic_logit_var: parts.epistemic_logit_var,
    })
}

/// Diagnostic predictive distribution: the mean over passes of each pass's
/// sampling-softmax probabilities, and its entropy.
pub fn mean_probability_prediction(
    samples: &LogitSamples,
    config: SamplingSoftmaxConfig,
    rng: &mut RngStream,
) -> Result<(Vec<f64>, f64)> {
    samples.validate()?;
    let noise = rng.normals(config.sample_count * samples.classes());
    let mut acc = vec![0.0; samples.classes()];
    for (mu, var) in samples.means.iter().zip(&samples.variances) {
        let p = sampling_softmax_with_noise(mu, var, &noise)?;
        acc.iter_mut().zip(&p).for_each(|(a, v)| *a += v);
    }
    let m = samples.len() as f64;
    acc.iter_mut().for_each(|a| *a /= m);
    let h = entropy(&acc)?;
    Ok((acc, h))
}
