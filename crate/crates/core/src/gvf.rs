//! Index-specific sampling variance functions and the generalized variance
//! function (GVF) smoothing model.
//!
//! Each unit-interval index has an approximate srs variance of the form
//! f(θ)/n: Atkinson 2θ²e^{−2θ}, Relative Theil 2θ², Gini θ²(1−θ²) and
//! Relative Entropy(α) 2θ²·exp{2θ(n^{α−1}−1)} (the one family whose
//! numerator keeps an n-dependence). Raw bootstrap variances are smoothed by
//! regressing f(y_d)/V̂_boot[y_d] on the domain sample size ñ_d through the
//! origin; the slope ψ̂ is the design-effect deflator and ψ̂·ñ_d the
//! effective sample size.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indices::{index_iid, lognormal_theta, IndexKind, IndexSpec, LogNormalParams};
use crate::num;
use crate::rng::{substream, StreamTag};

const CLAMP: f64 = 1e-6;

/// θ clamped away from the support boundary before evaluating f(θ).
fn clamp_theta(theta: f64) -> f64 {
    if theta <= CLAMP || theta >= 1.0 - CLAMP {
        log::warn!("index value {theta} clamped to ({CLAMP}, {})", 1.0 - CLAMP);
    }
    theta.clamp(CLAMP, 1.0 - CLAMP)
}

/// Numerator f(θ) of the variance function. `n` enters only for Relative
/// Entropy, whose exponential factor carries the sample size.
pub fn variance_numerator(spec: &IndexSpec, theta: f64, n: f64) -> Result<f64> {
    spec.validate()?;
    if !(0.0..1.0).contains(&theta) || theta == 0.0 {
        return Err(Error::DomainError(format!("theta must lie in (0,1), got {theta}")));
    }
    match spec.kind {
        IndexKind::Atkinson => Ok(2.0 * theta * theta * (-2.0 * theta).exp()),
        IndexKind::RelativeTheil => Ok(2.0 * theta * theta),
        IndexKind::Gini => Ok(theta * theta * (1.0 - theta * theta)),
        IndexKind::RelativeEntropy => {
            if n <= 1.0 {
                return Err(Error::DomainError(format!("n must exceed 1, got {n}")));
            }
            let alpha = spec.alpha.expect("validated");
            Ok(2.0 * theta * theta * (2.0 * theta * (n.powf(alpha - 1.0) - 1.0)).exp())
        }
        IndexKind::GeneralizedEntropy => Err(Error::UnsupportedIndex(
            "generalized entropy has no unit-interval variance function here".into(),
        )),
    }
}

/// Approximate srs variance f(θ)/n of the index estimator.
pub fn variance_function_value(spec: &IndexSpec, theta: f64, n: f64) -> Result<f64> {
    if n <= 1.0 {
        return Err(Error::DomainError(format!("n must exceed 1, got {n}")));
    }
    Ok(variance_numerator(spec, theta, n)? / n)
}

/// Binomial-proportion variance θ(1−θ)/n, kept for comparison plots.
pub fn proportion_variance(theta: f64, n: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::DomainError(format!("theta must lie in [0,1], got {theta}")));
    }
    if n <= 1.0 {
        return Err(Error::DomainError(format!("n must exceed 1, got {n}")));
    }
    Ok(theta * (1.0 - theta) / n)
}

/// Monte-Carlo check of a variance function under srs log-normal sampling.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct McVarianceCheck {
    pub mc_var: f64,
    pub formula_var: f64,
    /// mc_var / formula_var
    pub ratio: f64,
}

/// Draw `reps` srs samples of size `p.n` from the log-normal income model,
/// compute the iid index each time, and compare the Monte-Carlo variance to
/// the formula value at the population index.
///
/// The Gini population value has no closed form here; it is anchored by the
/// iid estimator on a single large reference sample.
pub fn mc_validate_variance_function(
    spec: &IndexSpec,
    p: &LogNormalParams,
    reps: usize,
    seed: u64,
) -> Result<McVarianceCheck> {
    spec.validate()?;
    if reps < 1000 {
        return Err(Error::InvalidConfig(format!("need reps >= 1000, got {reps}")));
    }
    let n = p.n as usize;
    let phi = p.phi2.sqrt();

    let theta = match spec.kind {
        IndexKind::Gini => {
            let mut rng = substream(seed, StreamTag::McValidate, u64::MAX >> 8);
            let big: Vec<f64> =
                (0..2_000_000).map(|_| (p.mu + phi * normal(&mut rng)).exp()).collect();
            index_iid(spec, &big)?
        }
        _ => lognormal_theta(p, spec)?,
    };
    let formula_var = variance_function_value(spec, theta, p.n)?;

    use rayon::prelude::*;
    let values: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, StreamTag::McValidate, r as u64);
            let z: Vec<f64> = (0..n).map(|_| (p.mu + phi * normal(&mut rng)).exp()).collect();
            index_iid(spec, &z).expect("positive log-normal incomes")
        })
        .collect();
    let mc_var = num::sample_var(&values);
    Ok(McVarianceCheck { mc_var, formula_var, ratio: mc_var / formula_var })
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

/// Fitted GVF smoothing model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GvfFit {
    /// design-effect deflator ψ̂ > 0
    pub psi_hat: f64,
    /// squared correlation between observed ratios and ψ̂·ñ_d
    pub pseudo_r2: f64,
    /// smoothed variance f(y_d)/(ψ̂ ñ_d) per domain
    pub smoothed: Vec<f64>,
    /// effective sample size ψ̂·ñ_d per domain
    pub n_eff: Vec<f64>,
}

/// Fit the smoothing model f(y_d)/V̂_boot = ψ·ñ_d + ε_d by feasible GLS
/// through the origin.
///
/// Residual variance is modeled proportional to ñ_d²; after an ordinary
/// through-origin pass, standardized residuals are clipped at 3 robust sd
/// so near-zero bootstrap variances cannot blow up the ratio, then the
/// reweighted pass yields ψ̂.
pub fn gvf_fit(y: &[f64], v_boot: &[f64], n_tilde: &[f64], spec: &IndexSpec) -> Result<GvfFit> {
    if y.len() != v_boot.len() || y.len() != n_tilde.len() {
        return Err(Error::LengthMismatch(format!(
            "y {}, v_boot {}, n_tilde {}",
            y.len(),
            v_boot.len(),
            n_tilde.len()
        )));
    }
    let mut ratios = Vec::new();
    let mut sizes = Vec::new();
    for i in 0..y.len() {
        if v_boot[i] > 0.0 && n_tilde[i] > 0.0 {
            let f = variance_numerator(spec, clamp_theta(y[i]), n_tilde[i])?;
            let r = f / v_boot[i];
            if r.is_finite() {
                ratios.push(r);
                sizes.push(n_tilde[i]);
            }
        }
    }
    if ratios.len() < 3 {
        return Err(Error::SingularFit(format!(
            "need >= 3 domains with positive bootstrap variance, got {}",
            ratios.len()
        )));
    }
    let snn: f64 = sizes.iter().map(|n| n * n).sum();
    if snn == 0.0 {
        return Err(Error::SingularFit("all domain sizes are zero".into()));
    }

    // Under Var(ε_d) ∝ ñ_d² the per-domain slopes q_d = ratio/ñ_d are
    // homoskedastic; clip them at 3 robust sd around their median (a lone
    // near-zero bootstrap variance would otherwise dominate any mean-based
    // reference), then the reweighted through-origin pass with 1/ñ² weights
    // reduces to the mean of the clipped slopes.
    let q: Vec<f64> = ratios.iter().zip(&sizes).map(|(r, n)| r / n).collect();
    let center = num::median(&q);
    let s = 1.4826 * num::median(&q.iter().map(|v| (v - center).abs()).collect::<Vec<_>>());
    let psi_hat = if s > 0.0 {
        q.iter().map(|v| v.clamp(center - 3.0 * s, center + 3.0 * s)).sum::<f64>() / q.len() as f64
    } else {
        center
    };
    if !(psi_hat.is_finite() && psi_hat > 0.0) {
        return Err(Error::SingularFit(format!("psi_hat = {psi_hat}")));
    }

    let fitted: Vec<f64> = sizes.iter().map(|n| psi_hat * n).collect();
    let c = num::pearson(&ratios, &fitted);
    let pseudo_r2 = if c.is_finite() { c * c } else { 0.0 };

    let mut smoothed = Vec::with_capacity(y.len());
    let mut n_eff = Vec::with_capacity(y.len());
    for i in 0..y.len() {
        let f = variance_numerator(spec, clamp_theta(y[i]), n_tilde[i])?;
        smoothed.push(f / (psi_hat * n_tilde[i]));
        n_eff.push(psi_hat * n_tilde[i]);
    }
    Ok(GvfFit { psi_hat, pseudo_r2, smoothed, n_eff })
}

/// Write the smoothing report CSV:
/// `domain,y,v_boot,v_smoothed,n_tilde,n_eff`.
pub fn write_smoothing_report<W: Write>(
    mut w: W,
    domains: &[String],
    y: &[f64],
    v_boot: &[f64],
    n_tilde: &[f64],
    fit: &GvfFit,
) -> Result<()> {
    writeln!(w, "#ineq-sae/gvf-report/v1")?;
    writeln!(w, "domain,y,v_boot,v_smoothed,n_tilde,n_eff")?;
    for i in 0..domains.len() {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            domains[i], y[i], v_boot[i], fit.smoothed[i], n_tilde[i], fit.n_eff[i]
        )?;
    }
    Ok(())
}

/// JSON summary of the fit: {psi_hat, pseudo_r2}.
pub fn write_fit_json<W: Write>(w: W, fit: &GvfFit) -> Result<()> {
    #[derive(Serialize)]
    struct FitJson<'a> {
        schema: &'a str,
        psi_hat: f64,
        pseudo_r2: f64,
    }
    serde_json::to_writer_pretty(
        w,
        &FitJson { schema: "ineq-sae/gvf-fit/v1", psi_hat: fit.psi_hat, pseudo_r2: fit.pseudo_r2 },
    )?;
    Ok(())
}
