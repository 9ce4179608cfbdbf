//! Fit comparison and small-area diagnostics: leave-one-out information
//! criterion, coefficient-of-variation reduction and design-consistency
//! summaries.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::num;

/// Leave-one-out information criterion from pointwise log-likelihoods.
#[derive(Debug, Clone, Serialize)]
pub struct LooResult {
    pub looic: f64,
    pub se: f64,
    pub elpd: f64,
    /// pointwise elpd contributions per domain
    pub pointwise: Vec<f64>,
}

/// Importance-sampling LOO with truncated weights.
///
/// `loglik` is draws × domains. Raw importance weights 1/p(y_d | draw) are
/// capped at mean · S^{3/4} before reweighting, which keeps the estimator
/// finite without fitting a tail model; the standard error scales the
/// domain-wise variance of the pointwise contributions by √D.
pub fn loo_ic(loglik: &[Vec<f64>]) -> Result<LooResult> {
    let s = loglik.len();
    if s < 2 {
        return Err(Error::TooFewDraws(format!("loo needs >= 2 draws, got {s}")));
    }
    let d = loglik[0].len();
    if d == 0 || loglik.iter().any(|row| row.len() != d) {
        return Err(Error::LengthMismatch("ragged log-likelihood matrix".into()));
    }
    let log_s = (s as f64).ln();
    let mut pointwise = Vec::with_capacity(d);
    for j in 0..d {
        let ll: Vec<f64> = loglik.iter().map(|row| row[j]).collect();
        if ll.iter().all(|v| *v == f64::NEG_INFINITY) {
            return Err(Error::DegenerateWeights(j));
        }
        // log raw weights are -ll; cap at log(mean) + 0.75 log S
        let lw: Vec<f64> = ll.iter().map(|v| -v).collect();
        let log_mean_w = num::log_sum_exp(&lw) - log_s;
        let cap = log_mean_w + 0.75 * log_s;
        let lw: Vec<f64> = lw.iter().map(|v| v.min(cap)).collect();
        // elpd_d = log Σ w·exp(ll) − log Σ w
        let num_terms: Vec<f64> = lw.iter().zip(&ll).map(|(w, l)| w + l).collect();
        let elpd = num::log_sum_exp(&num_terms) - num::log_sum_exp(&lw);
        if !elpd.is_finite() {
            return Err(Error::DegenerateWeights(j));
        }
        pointwise.push(elpd);
    }
    let elpd: f64 = pointwise.iter().sum();
    let se_elpd = (d as f64 * num::sample_var(&pointwise)).sqrt();
    Ok(LooResult { looic: -2.0 * elpd, se: 2.0 * se_elpd, elpd, pointwise })
}

/// Coefficient-of-variation reduction of the model-based estimator relative
/// to the direct one:
/// cvr = 1 − [sd(θ|data)·y] / [sd(y)·E(θ|data)].
pub fn cvr(y: f64, v: f64, theta_draws: &[f64]) -> Result<f64> {
    if v == 0.0 {
        return Err(Error::DegenerateDirect(format!("y = {y}")));
    }
    if !(v > 0.0 && y > 0.0) {
        return Err(Error::DomainError(format!("need y > 0 and v > 0, got y = {y}, v = {v}")));
    }
    let post_mean = num::mean(theta_draws);
    if !(post_mean > 0.0) {
        return Err(Error::DomainError(format!("posterior mean {post_mean} not positive")));
    }
    let post_sd = num::sample_var(theta_draws).sqrt();
    let post_sd = if post_sd.is_nan() { 0.0 } else { post_sd };
    Ok(1.0 - post_sd * y / (v.sqrt() * post_mean))
}

/// Design-consistency table: per-domain residuals y_d − θ̂_d against sample
/// sizes, with a monotone-trend statistic.
#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyReport {
    pub domains: Vec<String>,
    pub n_tilde: Vec<f64>,
    pub residual: Vec<f64>,
    /// Spearman correlation of |residual| with ñ_d; expected negative when
    /// shrinkage concentrates in small domains. None for a single domain.
    pub trend: Option<f64>,
}

pub fn consistency_report(
    domains: &[String],
    y: &[f64],
    theta_hat: &[f64],
    n_tilde: &[f64],
) -> Result<ConsistencyReport> {
    let d = domains.len();
    if y.len() != d || theta_hat.len() != d || n_tilde.len() != d {
        return Err(Error::LengthMismatch("consistency report inputs".into()));
    }
    let residual: Vec<f64> = y.iter().zip(theta_hat).map(|(yi, ti)| yi - ti).collect();
    let trend = if d >= 3 {
        let abs: Vec<f64> = residual.iter().map(|r| r.abs()).collect();
        let t = num::spearman(&abs, n_tilde);
        t.is_finite().then_some(t)
    } else {
        None
    };
    Ok(ConsistencyReport { domains: domains.to_vec(), n_tilde: n_tilde.to_vec(), residual, trend })
}

/// Headline diagnostics JSON: {looic, looic_se, acvr, max_rhat, min_ess}.
#[derive(Debug, Clone, Serialize)]
pub struct FitDiagnostics {
    pub looic: f64,
    pub looic_se: f64,
    /// average coefficient-of-variation reduction across domains
    pub acvr: f64,
    pub max_rhat: f64,
    pub min_ess: f64,
}

pub fn write_diagnostics_json<W: Write>(w: W, diag: &FitDiagnostics) -> Result<()> {
    #[derive(Serialize)]
    struct Tagged<'a> {
        schema: &'a str,
        #[serde(flatten)]
        diag: &'a FitDiagnostics,
    }
    serde_json::to_writer_pretty(w, &Tagged { schema: "ineq-sae/diagnostics/v1", diag })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, StreamTag};
    use rand::Rng;

    fn normal<R: Rng>(rng: &mut R) -> f64 {
        use rand_distr::{Distribution, StandardNormal};
        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
    }

    fn normal_lpdf(y: f64, mu: f64, sd: f64) -> f64 {
        -0.5 * ((y - mu) / sd).powi(2) - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }

    /// Conjugate posterior draws and the pointwise loglik matrix for an iid
    /// normal model with known sd.
    fn normal_model_loglik(y: &[f64], sd: f64, draws: usize, seed: u64) -> Vec<Vec<f64>> {
        let n = y.len() as f64;
        let post_mean = num::mean(y); // flat prior
        let post_sd = sd / n.sqrt();
        let mut rng = substream(seed, StreamTag::Chain, 0);
        (0..draws)
            .map(|_| {
                let mu = post_mean + post_sd * normal(&mut rng);
                y.iter().map(|&yi| normal_lpdf(yi, mu, sd)).collect()
            })
            .collect()
    }

    #[test]
    fn identical_models_identical_looic() {
        let y: Vec<f64> = (0..20).map(|i| (i as f64) / 7.0 % 1.3).collect();
        let a = loo_ic(&normal_model_loglik(&y, 1.0, 400, 3)).unwrap();
        let b = loo_ic(&normal_model_loglik(&y, 1.0, 400, 3)).unwrap();
        assert_eq!(a.looic, b.looic);
    }

    #[test]
    fn looic_invariant_to_domain_and_draw_order() {
        let y: Vec<f64> = (0..15).map(|i| (i as f64 * 0.37).sin()).collect();
        let m = normal_model_loglik(&y, 1.0, 300, 5);
        let mut domains_reversed: Vec<Vec<f64>> =
            m.iter().map(|row| row.iter().rev().cloned().collect()).collect();
        let a = loo_ic(&m).unwrap();
        let b = loo_ic(&domains_reversed).unwrap();
        assert!((a.looic - b.looic).abs() < 1e-10);
        domains_reversed.reverse(); // permute draws
        let c = loo_ic(&domains_reversed).unwrap();
        assert!((a.looic - c.looic).abs() < 1e-10);
    }

    #[test]
    fn looic_prefers_true_variance_model() {
        let mut wins = 0;
        let seeds = 50;
        for seed in 0..seeds {
            let mut rng = substream(seed, StreamTag::McValidate, 77);
            let y: Vec<f64> = (0..25).map(|_| normal(&mut rng)).collect();
            let good = loo_ic(&normal_model_loglik(&y, 1.0, 400, seed)).unwrap();
            let bad = loo_ic(&normal_model_loglik(&y, 2.5, 400, seed + 1000)).unwrap();
            if good.looic < bad.looic {
                wins += 1;
            }
        }
        assert!(wins >= 45, "true model won {wins}/{seeds}");
    }

    #[test]
    fn loo_single_draw_errors() {
        assert!(matches!(loo_ic(&[vec![-1.0, -2.0]]), Err(Error::TooFewDraws(_))));
    }

    #[test]
    fn loo_all_rejected_domain_errors() {
        let m = vec![vec![f64::NEG_INFINITY; 2]; 10];
        assert!(matches!(loo_ic(&m), Err(Error::DegenerateWeights(0))));
    }

    #[test]
    fn cvr_reference_points() {
        // degenerate posterior: full reduction
        assert!((cvr(0.3, 0.01, &[0.25; 50]).unwrap() - 1.0).abs() < 1e-12);
        // posterior CV equal to direct CV: no reduction. Two symmetric
        // points ±a around the mean have sample sd a·√2.
        let y = 0.4;
        let v = 0.0025f64;
        let target_sd = v.sqrt() / y * 0.4; // sd with cv equal to the direct one
        let a = target_sd / 2f64.sqrt();
        let c = cvr(y, v, &[0.4 - a, 0.4 + a]).unwrap();
        assert!(c.abs() < 1e-6, "cvr {c}");
        // posterior CV twice the direct CV
        let c2 = cvr(y, v, &[0.4 - 2.0 * a, 0.4 + 2.0 * a]).unwrap();
        assert!((c2 + 1.0).abs() < 1e-6, "cvr {c2}");
    }

    #[test]
    fn cvr_zero_direct_variance_errors() {
        assert!(matches!(cvr(0.3, 0.0, &[0.3, 0.31]), Err(Error::DegenerateDirect(_))));
    }

    #[test]
    fn consistency_trend_negative_under_shrinkage() {
        // residual magnitude shrinking with size gives a negative trend
        let d = 24;
        let domains: Vec<String> = (0..d).map(|i| format!("d{i}")).collect();
        let n_tilde: Vec<f64> = (0..d).map(|i| 10.0 + 10.0 * i as f64).collect();
        let mut rng = substream(3, StreamTag::McValidate, 21);
        let y: Vec<f64> = (0..d).map(|_| 0.3 + 0.05 * normal(&mut rng)).collect();
        let theta: Vec<f64> = y
            .iter()
            .zip(&n_tilde)
            .map(|(&yi, &ni)| yi - (8.0 / ni) * (1.0 + 0.1 * normal(&mut rng)))
            .collect();
        let rep = consistency_report(&domains, &y, &theta, &n_tilde).unwrap();
        assert!(rep.trend.unwrap() < -0.5, "trend {:?}", rep.trend);
    }

    #[test]
    fn consistency_single_domain_flagged() {
        let rep = consistency_report(&["a".into()], &[0.3], &[0.29], &[12.0]).unwrap();
        assert!(rep.trend.is_none());
        assert!((rep.residual[0] - 0.01).abs() < 1e-12);
    }

    #[test]
    fn consistency_residuals_vanish_with_variance() {
        // theta == y exactly: all residuals zero, trend undefined (flagged)
        let d = 6;
        let domains: Vec<String> = (0..d).map(|i| format!("d{i}")).collect();
        let y = vec![0.2, 0.3, 0.25, 0.4, 0.33, 0.21];
        let n: Vec<f64> = (0..d).map(|i| 20.0 + i as f64).collect();
        let rep = consistency_report(&domains, &y, &y, &n).unwrap();
        assert!(rep.residual.iter().all(|r| r.abs() < 1e-15));
        assert!(rep.trend.is_none());
    }
}
