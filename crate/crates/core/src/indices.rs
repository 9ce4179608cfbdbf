//! Inequality index estimators for iid samples, plus log-normal population
//! values used as variance-smoothing anchors and simulation oracles.
//!
//! All estimators are pure functions of the income vector. Incomes must be
//! finite and non-negative; the entropy and Atkinson families additionally
//! require strictly positive incomes (log and negative powers are undefined
//! at zero), while the Gini index tolerates zeros as they occur in survey
//! income data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num;

/// Index families handled by the toolkit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndexKind {
    Gini,
    RelativeTheil,
    Atkinson,
    GeneralizedEntropy,
    RelativeEntropy,
}

/// An index family together with the parameters that pin down one member:
/// inequality aversion for Atkinson, entropy order for the entropy family,
/// and the population size used by relative normalizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSpec {
    pub kind: IndexKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population_size: Option<u64>,
}

impl IndexSpec {
    pub fn gini() -> Self {
        Self { kind: IndexKind::Gini, epsilon: None, alpha: None, population_size: None }
    }

    pub fn relative_theil() -> Self {
        Self { kind: IndexKind::RelativeTheil, epsilon: None, alpha: None, population_size: None }
    }

    pub fn atkinson(epsilon: f64) -> Self {
        Self { kind: IndexKind::Atkinson, epsilon: Some(epsilon), alpha: None, population_size: None }
    }

    pub fn generalized_entropy(alpha: f64) -> Self {
        Self { kind: IndexKind::GeneralizedEntropy, epsilon: None, alpha: Some(alpha), population_size: None }
    }

    pub fn relative_entropy(alpha: f64) -> Self {
        Self { kind: IndexKind::RelativeEntropy, epsilon: None, alpha: Some(alpha), population_size: None }
    }

    /// Enforce the parameter/kind pairing rules.
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            IndexKind::Atkinson => {
                let eps = self
                    .epsilon
                    .ok_or_else(|| Error::InvalidConfig("atkinson requires epsilon".into()))?;
                if !(eps.is_finite() && eps >= 0.0) {
                    return Err(Error::InvalidConfig(format!("epsilon must be >= 0, got {eps}")));
                }
                if self.alpha.is_some() {
                    return Err(Error::InvalidConfig("alpha is not an atkinson parameter".into()));
                }
            }
            IndexKind::GeneralizedEntropy | IndexKind::RelativeEntropy => {
                let alpha = self
                    .alpha
                    .ok_or_else(|| Error::InvalidConfig("entropy family requires alpha".into()))?;
                if !alpha.is_finite() || alpha == 0.0 || alpha == 1.0 {
                    return Err(Error::AlphaDegenerate(alpha));
                }
                if self.epsilon.is_some() {
                    return Err(Error::InvalidConfig("epsilon is not an entropy parameter".into()));
                }
            }
            IndexKind::Gini | IndexKind::RelativeTheil => {
                if self.epsilon.is_some() || self.alpha.is_some() {
                    return Err(Error::InvalidConfig(
                        "epsilon/alpha only apply to atkinson or entropy indices".into(),
                    ));
                }
            }
        }
        if let Some(n) = self.population_size {
            if n < 2 {
                return Err(Error::InvalidConfig(format!("population_size must be >= 2, got {n}")));
            }
        }
        Ok(())
    }

    /// Short label used in artifact files, e.g. `atkinson(0.5)`.
    pub fn label(&self) -> String {
        match self.kind {
            IndexKind::Gini => "gini".into(),
            IndexKind::RelativeTheil => "relative-theil".into(),
            IndexKind::Atkinson => format!("atkinson({})", self.epsilon.unwrap_or(f64::NAN)),
            IndexKind::GeneralizedEntropy => format!("ge({})", self.alpha.unwrap_or(f64::NAN)),
            IndexKind::RelativeEntropy => format!("re({})", self.alpha.unwrap_or(f64::NAN)),
        }
    }
}

/// Log-normal income model for one domain: log z ~ N(mu, phi2), sample size n.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LogNormalParams {
    pub mu: f64,
    pub phi2: f64,
    pub n: f64,
}

impl LogNormalParams {
    pub fn new(mu: f64, phi2: f64, n: f64) -> Result<Self> {
        if !(phi2.is_finite() && phi2 > 0.0) {
            return Err(Error::DomainError(format!("phi2 must be > 0, got {phi2}")));
        }
        if !(n.is_finite() && n >= 2.0) {
            return Err(Error::DomainError(format!("n must be >= 2, got {n}")));
        }
        Ok(Self { mu, phi2, n })
    }
}

fn check_incomes(z: &[f64], allow_zero: bool) -> Result<()> {
    if z.is_empty() {
        return Err(Error::EmptyOrDegenerate("empty income vector".into()));
    }
    for (i, &v) in z.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("income[{i}] = {v}")));
        }
        if v < 0.0 || (!allow_zero && v == 0.0) {
            return Err(Error::NonPositiveIncome(format!("income[{i}] = {v}")));
        }
    }
    Ok(())
}

/// Gini index of an iid sample: 2 Σ z_i r_i / (n² μ̂) − (n+1)/n, with
/// ascending ranks and ties resolved to average ranks.
pub fn gini_iid(z: &[f64]) -> Result<f64> {
    check_incomes(z, true)?;
    let n = z.len();
    if n < 2 {
        return Err(Error::EmptyOrDegenerate(format!("gini needs n >= 2, got {n}")));
    }
    let mu = num::mean(z);
    if mu <= 0.0 {
        return Err(Error::EmptyOrDegenerate("mean income is zero".into()));
    }
    let ranks = num::average_ranks(z);
    let s: f64 = z.iter().zip(&ranks).map(|(zi, ri)| zi * ri).sum();
    let nf = n as f64;
    Ok(2.0 * s / (nf * nf * mu) - (nf + 1.0) / nf)
}

/// Absolute Theil index (1/n) Σ (z_i/μ̂) log(z_i/μ̂) of an iid sample.
pub fn theil_iid(z: &[f64]) -> Result<f64> {
    check_incomes(z, false)?;
    let n = z.len();
    if n < 2 {
        return Err(Error::EmptyOrDegenerate(format!("theil needs n >= 2, got {n}")));
    }
    let mu = num::mean(z);
    Ok(z.iter().map(|&zi| (zi / mu) * (zi / mu).ln()).sum::<f64>() / n as f64)
}

/// Relative Theil index: the Theil index scaled by its maximum log n.
pub fn relative_theil_iid(z: &[f64]) -> Result<f64> {
    let t = theil_iid(z)?;
    Ok(t / (z.len() as f64).ln())
}

/// Atkinson index with inequality aversion `epsilon >= 0`.
///
/// The `epsilon = 1` branch uses exp(mean log z) rather than the n-th root of
/// the product, which is the same quantity without overflow.
pub fn atkinson_iid(z: &[f64], epsilon: f64) -> Result<f64> {
    check_incomes(z, false)?;
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::DomainError(format!("epsilon must be >= 0, got {epsilon}")));
    }
    if epsilon == 0.0 {
        return Ok(0.0);
    }
    let mu = num::mean(z);
    if epsilon == 1.0 {
        let mean_log = z.iter().map(|&v| v.ln()).sum::<f64>() / z.len() as f64;
        Ok(1.0 - mean_log.exp() / mu)
    } else {
        let m = z.iter().map(|&v| v.powf(1.0 - epsilon)).sum::<f64>() / z.len() as f64;
        Ok(1.0 - m.powf(1.0 / (1.0 - epsilon)) / mu)
    }
}

/// Generalized Entropy index of order `alpha` (alpha ∉ {0, 1}):
/// (1/(n α(α−1))) Σ [(z_i/μ̂)^α − 1], with n the realized sample size.
pub fn generalized_entropy_iid(z: &[f64], alpha: f64) -> Result<f64> {
    check_incomes(z, false)?;
    if !alpha.is_finite() || alpha == 0.0 || alpha == 1.0 {
        return Err(Error::AlphaDegenerate(alpha));
    }
    let n = z.len() as f64;
    let mu = num::mean(z);
    let s: f64 = z.iter().map(|&zi| (zi / mu).powf(alpha) - 1.0).sum();
    Ok(s / (n * alpha * (alpha - 1.0)))
}

/// Maximum attainable Generalized Entropy value on a sample of size `n`,
/// reached when a single unit holds all income: (n^{α−1} − 1)/(α(α−1)).
pub fn ge_max_support(alpha: f64, n: f64) -> Result<f64> {
    if !alpha.is_finite() || alpha == 0.0 || alpha == 1.0 {
        return Err(Error::AlphaDegenerate(alpha));
    }
    if n < 2.0 {
        return Err(Error::DomainError(format!("n must be >= 2, got {n}")));
    }
    Ok((n.powf(alpha - 1.0) - 1.0) / (alpha * (alpha - 1.0)))
}

/// Relative Entropy index: GE(α) scaled by its maximum support on `n` units.
pub fn relative_entropy_iid(z: &[f64], alpha: f64, n: usize) -> Result<f64> {
    let ge = generalized_entropy_iid(z, alpha)?;
    Ok(ge / ge_max_support(alpha, n as f64)?)
}

/// Population value of an index under log-normal income.
///
/// Closed forms exist for Atkinson (1 − e^{−ε φ²/2}), Relative Theil
/// (φ²/(2 log n)) and Relative Entropy ((e^{φ²α(α−1)/2} − 1)/(n^{α−1} − 1)).
/// The Gini and plain Generalized Entropy kinds are not supported here.
pub fn lognormal_theta(p: &LogNormalParams, spec: &IndexSpec) -> Result<f64> {
    spec.validate()?;
    match spec.kind {
        IndexKind::Atkinson => {
            let eps = spec.epsilon.expect("validated");
            Ok(1.0 - (-eps * p.phi2 / 2.0).exp())
        }
        IndexKind::RelativeTheil => Ok(p.phi2 / (2.0 * p.n.ln())),
        IndexKind::RelativeEntropy => {
            let a = spec.alpha.expect("validated");
            Ok(((p.phi2 * a * (a - 1.0) / 2.0).exp() - 1.0) / (p.n.powf(a - 1.0) - 1.0))
        }
        IndexKind::Gini | IndexKind::GeneralizedEntropy => {
            Err(Error::UnsupportedIndex(format!("{:?} has no log-normal closed form here", spec.kind)))
        }
    }
}

/// Evaluate the iid estimator selected by `spec` on `z`.
///
/// Relative normalizations use the realized sample size.
pub fn index_iid(spec: &IndexSpec, z: &[f64]) -> Result<f64> {
    spec.validate()?;
    match spec.kind {
        IndexKind::Gini => gini_iid(z),
        IndexKind::RelativeTheil => relative_theil_iid(z),
        IndexKind::Atkinson => atkinson_iid(z, spec.epsilon.expect("validated")),
        IndexKind::GeneralizedEntropy => generalized_entropy_iid(z, spec.alpha.expect("validated")),
        IndexKind::RelativeEntropy => {
            relative_entropy_iid(z, spec.alpha.expect("validated"), z.len())
        }
    }
}
