//! Adaptive random-walk Metropolis over an unconstrained log-posterior, with
//! warm-up adaptation, multi-chain execution and convergence diagnostics.
//!
//! One iteration sweeps the coordinates with Gaussian random-walk proposals;
//! each coordinate owns a proposal scale adapted by Robbins–Monro towards
//! the target acceptance during warm-up (a diagonal proposal covariance).
//! Targets may expose a cheap delta evaluation for coordinates that touch a
//! single additive term (random effects), which the sweep exploits; the full
//! log-posterior is refreshed every sweep so rounding cannot accumulate.
//! Chains run on independent RNG substreams and results are deterministic
//! for a fixed seed.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num;
use crate::rng::{substream, StreamTag};

/// A target distribution on the unconstrained scale.
pub trait LogPosterior: Sync {
    fn dim(&self) -> usize;

    /// Log-density up to a constant; −∞ encodes constraint violations.
    fn log_posterior(&self, x: &[f64]) -> f64;

    fn param_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x[{i}]")).collect()
    }

    /// Number of per-domain derived quantities (0 when not an area model).
    fn n_domains(&self) -> usize {
        0
    }

    /// Fill per-domain target values θ_d and pointwise log-likelihoods at x.
    fn derived(&self, _x: &[f64], _theta: &mut [f64], _loglik: &mut [f64]) {}

    fn init_point(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    /// Initial per-coordinate proposal scales.
    fn init_scales(&self) -> Vec<f64> {
        vec![0.5; self.dim()]
    }

    /// Log-posterior change from setting coordinate `j` to `new`, for
    /// coordinates whose terms are separable from the rest. `None` means the
    /// sweep must fall back to a full evaluation.
    fn log_posterior_delta(&self, _x: &[f64], _j: usize, _new: f64) -> Option<f64> {
        None
    }

    /// Fixed sparse directions along which the target is nearly flat
    /// (hierarchical ridges such as intercept vs. random effects). The sweep
    /// adds one adaptively-scaled Gaussian proposal per direction, which
    /// keeps coordinate-wise mixing honest on strongly coupled posteriors.
    fn ridge_directions(&self) -> Vec<Vec<(usize, f64)>> {
        Vec::new()
    }

    /// Exact Gaussian conditional (mean, sd) of the step along ridge `r`
    /// given the state, for directions that leave the likelihood invariant;
    /// the engine then takes a Gibbs step instead of a Metropolis one.
    fn ridge_conditional(&self, _x: &[f64], _r: usize) -> Option<(f64, f64)> {
        None
    }

    /// Group scale moves (scale coordinate, multiplied block): the proposal
    /// adds δ to the scale coordinate and multiplies the block by e^δ, with
    /// the block-volume Jacobian folded into the acceptance ratio. This is
    /// the ancillary counterpart of a centered random-effect block and
    /// unsticks scale/spread couplings.
    fn scale_moves(&self) -> Vec<(usize, Vec<usize>)> {
        Vec::new()
    }

    /// Number of custom transformed moves (reparametrized proposals).
    fn n_transformed(&self) -> usize {
        0
    }

    /// Apply transformed move `t` with step `delta` to `x`, writing the
    /// proposal into `out` and returning log|Jacobian| of the map, or None
    /// when the map is undefined at this state. The map must satisfy
    /// T_{−δ}(T_δ(x)) = x.
    fn transformed(&self, _x: &[f64], _t: usize, _delta: f64, _out: &mut [f64]) -> Option<f64> {
        None
    }
}

/// Sampler settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub chains: usize,
    pub iterations: usize,
    pub warmup: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub target_accept: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    AdaptiveMetropolis,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            iterations: 5000,
            warmup: 2000,
            seed: 0,
            algorithm: Algorithm::AdaptiveMetropolis,
            target_accept: 0.3,
        }
    }
}

impl SamplerConfig {
    fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::InvalidConfig("need at least 1 chain".into()));
        }
        if self.warmup >= self.iterations {
            return Err(Error::InvalidConfig(format!(
                "warmup {} must be below iterations {}",
                self.warmup, self.iterations
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidConfig(format!("target_accept {} outside (0,1)", self.target_accept)));
        }
        Ok(())
    }
}

/// Post-warm-up draws with derived per-domain quantities.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub param_names: Vec<String>,
    /// draws[chain][kept iteration][parameter], unconstrained scale
    pub draws: Vec<Vec<Vec<f64>>>,
    /// theta[chain][kept iteration][domain]
    pub theta: Vec<Vec<Vec<f64>>>,
    /// loglik[chain][kept iteration][domain]
    pub loglik: Vec<Vec<Vec<f64>>>,
    pub warmup: usize,
    /// post-warm-up proposal acceptance rate per chain
    pub accept_rate: Vec<f64>,
}

impl PosteriorDraws {
    pub fn n_chains(&self) -> usize {
        self.draws.len()
    }

    pub fn kept(&self) -> usize {
        self.draws.first().map(|c| c.len()).unwrap_or(0)
    }

    pub fn dim(&self) -> usize {
        self.param_names.len()
    }

    pub fn n_domains(&self) -> usize {
        self.theta.first().and_then(|c| c.first()).map(|t| t.len()).unwrap_or(0)
    }

    /// Per-chain series of one parameter.
    pub fn parameter_chains(&self, j: usize) -> Vec<Vec<f64>> {
        self.draws.iter().map(|c| c.iter().map(|x| x[j]).collect()).collect()
    }

    /// All chains pooled, one parameter.
    pub fn parameter_pooled(&self, j: usize) -> Vec<f64> {
        self.draws.iter().flat_map(|c| c.iter().map(|x| x[j])).collect()
    }

    /// All chains pooled, one domain's θ draws.
    pub fn theta_pooled(&self, d: usize) -> Vec<f64> {
        self.theta.iter().flat_map(|c| c.iter().map(|t| t[d])).collect()
    }

    /// Pointwise log-likelihood matrix, draws × domains.
    pub fn loglik_matrix(&self) -> Vec<Vec<f64>> {
        self.loglik.iter().flat_map(|c| c.iter().cloned()).collect()
    }
}

/// Run the sampler. Chains execute in parallel on substreams of
/// `config.seed`; the result is identical for identical inputs regardless of
/// scheduling.
pub fn run_sampler<T: LogPosterior + ?Sized>(target: &T, config: &SamplerConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    let dim = target.dim();
    if dim == 0 {
        return Err(Error::InvalidConfig("target has no parameters".into()));
    }
    let chains: Vec<Result<ChainOut>> = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(target, config, c))
        .collect();
    let mut draws = Vec::with_capacity(config.chains);
    let mut theta = Vec::with_capacity(config.chains);
    let mut loglik = Vec::with_capacity(config.chains);
    let mut accept_rate = Vec::with_capacity(config.chains);
    for c in chains {
        let c = c?;
        draws.push(c.draws);
        theta.push(c.theta);
        loglik.push(c.loglik);
        accept_rate.push(c.accept_rate);
    }
    Ok(PosteriorDraws {
        param_names: target.param_names(),
        draws,
        theta,
        loglik,
        warmup: config.warmup,
        accept_rate,
    })
}

struct ChainOut {
    draws: Vec<Vec<f64>>,
    theta: Vec<Vec<f64>>,
    loglik: Vec<Vec<f64>>,
    accept_rate: f64,
}

fn run_chain<T: LogPosterior + ?Sized>(target: &T, config: &SamplerConfig, chain: usize) -> Result<ChainOut> {
    let dim = target.dim();
    let n_dom = target.n_domains();
    let mut rng = substream(config.seed, StreamTag::Chain, chain as u64);
    let scales = target.init_scales();
    if scales.len() != dim {
        return Err(Error::LengthMismatch("init_scales length != dim".into()));
    }

    // jittered start, scale-aware so concentrated posteriors stay reachable
    let base = target.init_point();
    if base.len() != dim {
        return Err(Error::LengthMismatch("init_point length != dim".into()));
    }
    let mut x = base.clone();
    let mut lp = f64::NEG_INFINITY;
    for _attempt in 0..100 {
        for j in 0..dim {
            x[j] = base[j] + (2.0 * rng.random::<f64>() - 1.0) * scales[j];
        }
        lp = target.log_posterior(&x);
        if lp.is_finite() {
            break;
        }
    }
    if !lp.is_finite() {
        return Err(Error::NonFiniteInit);
    }

    // Proposal sd for coordinate j is exp(eps_j)·√varhat_j: the running
    // variance preconditions the scale so adaptation only has to fine-tune
    // a multiplier, which converges much faster than acceptance feedback
    // alone when the initial scales are off.
    let mut eps: Vec<f64> = vec![1.0f64.ln(); dim];
    let mut mean_hat: Vec<f64> = x.clone();
    let mut var_hat: Vec<f64> = scales.iter().map(|s| s * s).collect();
    const FORGET: f64 = 0.02;
    let ridges = target.ridge_directions();
    let mut ridge_scale: Vec<f64> = vec![0.1f64.ln(); ridges.len()];
    let scale_moves = target.scale_moves();
    let mut scale_move_scale: Vec<f64> = vec![0.3f64.ln(); scale_moves.len()];
    let n_transformed = target.n_transformed();
    let mut transformed_scale: Vec<f64> = vec![0.3f64.ln(); n_transformed];
    let kept = config.iterations - config.warmup;
    let mut draws = Vec::with_capacity(kept);
    let mut theta = Vec::with_capacity(kept);
    let mut loglik = Vec::with_capacity(kept);
    let mut accepted = 0usize;
    let mut proposals = 0usize;
    let mut scratch = vec![0.0; dim];

    for iter in 0..config.iterations {
        // refresh the full value once per sweep
        lp = target.log_posterior(&x);
        let adapt = iter < config.warmup;
        let gain = if adapt { (iter as f64 + 1.0).powf(-0.6) } else { 0.0 };
        for j in 0..dim {
            // coordinates with a cheap delta path get two tries per sweep
            let mut tries = 1;
            while tries > 0 {
                let step = eps[j].exp() * var_hat[j].sqrt() * normal(&mut rng);
                let new = x[j] + step;
                let (acc_prob, lp_new, had_delta) = match target.log_posterior_delta(&x, j, new) {
                    Some(delta) => (delta.min(0.0).exp(), lp + delta, true),
                    None => {
                        let old = x[j];
                        x[j] = new;
                        let lpn = target.log_posterior(&x);
                        x[j] = old;
                        ((lpn - lp).min(0.0).exp(), lpn, false)
                    }
                };
                let accept = acc_prob > 0.0 && rng.random::<f64>() < acc_prob;
                if accept {
                    x[j] = new;
                    lp = lp_new;
                }
                if !adapt {
                    proposals += 1;
                    accepted += accept as usize;
                } else {
                    eps[j] = (eps[j] + gain * (acc_prob - config.target_accept)).clamp(-10.0, 10.0);
                    let dev = x[j] - mean_hat[j];
                    mean_hat[j] += FORGET * dev;
                    var_hat[j] = ((1.0 - FORGET) * (var_hat[j] + FORGET * dev * dev)).max(1e-24);
                }
                tries = if had_delta && tries == 1 { tries + 1 } else { 0 };
            }
        }
        let mut lp_stale = false;
        for (r, dir) in ridges.iter().enumerate() {
            if let Some((mean, sd)) = target.ridge_conditional(&x, r) {
                // likelihood-invariant direction: exact Gibbs step
                let delta = mean + sd * normal(&mut rng);
                for &(j, c) in dir {
                    x[j] += delta * c;
                }
                lp_stale = true;
                continue;
            }
            if lp_stale {
                lp = target.log_posterior(&x);
                lp_stale = false;
            }
            let delta = ridge_scale[r].exp() * normal(&mut rng);
            scratch.copy_from_slice(&x);
            for &(j, c) in dir {
                scratch[j] += delta * c;
            }
            let lpn = target.log_posterior(&scratch);
            let acc_prob = (lpn - lp).min(0.0).exp();
            let accept = acc_prob > 0.0 && rng.random::<f64>() < acc_prob;
            if accept {
                x.copy_from_slice(&scratch);
                lp = lpn;
            }
            if !adapt {
                proposals += 1;
                accepted += accept as usize;
            } else {
                ridge_scale[r] = (ridge_scale[r] + gain * (acc_prob - config.target_accept)).clamp(-40.0, 5.0);
            }
        }
        for (r, (jscale, block)) in scale_moves.iter().enumerate() {
            if lp_stale {
                lp = target.log_posterior(&x);
                lp_stale = false;
            }
            let delta = scale_move_scale[r].exp() * normal(&mut rng);
            scratch.copy_from_slice(&x);
            scratch[*jscale] += delta;
            let grow = delta.exp();
            for &j in block {
                scratch[j] *= grow;
            }
            let lpn = target.log_posterior(&scratch);
            // multiplicative proposal on the block: volume term |block|·δ
            let acc_prob = (lpn - lp + block.len() as f64 * delta).min(0.0).exp();
            let accept = acc_prob > 0.0 && rng.random::<f64>() < acc_prob;
            if accept {
                x.copy_from_slice(&scratch);
                lp = lpn;
            }
            if !adapt {
                proposals += 1;
                accepted += accept as usize;
            } else {
                scale_move_scale[r] =
                    (scale_move_scale[r] + gain * (acc_prob - config.target_accept)).clamp(-40.0, 5.0);
            }
        }
        for rep in 0..5 * n_transformed {
            let t = rep % n_transformed;
            if lp_stale {
                lp = target.log_posterior(&x);
                lp_stale = false;
            }
            // mixture proposal: mostly the adapted local scale, sometimes a
            // wide jump so weakly identified parameters traverse globally
            let wide = rng.random::<f64>() < 0.25;
            let scale = if wide { 3.0 } else { transformed_scale[t].exp() };
            let delta = scale * normal(&mut rng);
            let mut acc_prob = 0.0;
            let mut accept = false;
            if let Some(logj) = target.transformed(&x, t, delta, &mut scratch) {
                let lpn = target.log_posterior(&scratch);
                acc_prob = (lpn - lp + logj).min(0.0).exp();
                accept = acc_prob > 0.0 && rng.random::<f64>() < acc_prob;
                if accept {
                    x.copy_from_slice(&scratch);
                    lp = lpn;
                }
            }
            if !adapt {
                proposals += 1;
                accepted += accept as usize;
            } else if !wide {
                transformed_scale[t] =
                    (transformed_scale[t] + gain * (acc_prob - config.target_accept)).clamp(-40.0, 5.0);
            }
        }
        if iter >= config.warmup {
            draws.push(x.clone());
            if n_dom > 0 {
                let mut th = vec![0.0; n_dom];
                let mut ll = vec![0.0; n_dom];
                target.derived(&x, &mut th, &mut ll);
                theta.push(th);
                loglik.push(ll);
            }
        }
    }
    let accept_rate = accepted as f64 / proposals.max(1) as f64;
    if accept_rate < 1e-3 {
        return Err(Error::AllRejected(accept_rate));
    }
    Ok(ChainOut { draws, theta, loglik, accept_rate })
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

// ---------------------------------------------------------------------------
// Convergence diagnostics
// ---------------------------------------------------------------------------

/// Split each chain in half; at least two resulting sequences are required.
fn split_chains(chains: &[Vec<f64>]) -> Result<Vec<&[f64]>> {
    let mut seqs = Vec::new();
    for c in chains {
        let n = c.len();
        if n >= 4 {
            let half = n / 2;
            seqs.push(&c[..half]);
            seqs.push(&c[n - half..]);
        }
    }
    if seqs.len() < 2 {
        return Err(Error::TooFewChains);
    }
    Ok(seqs)
}

fn within_between(seqs: &[&[f64]]) -> (f64, f64, f64) {
    let n = seqs[0].len() as f64;
    let means: Vec<f64> = seqs.iter().map(|s| num::mean(s)).collect();
    let vars: Vec<f64> = seqs.iter().map(|s| num::sample_var(s)).collect();
    let w = num::mean(&vars);
    let b = n * num::sample_var(&means);
    let var_plus = (n - 1.0) / n * w + b / n;
    (w, b, var_plus)
}

/// Split-chain potential scale reduction factor on `chains` of equal length.
pub fn rhat_of(chains: &[Vec<f64>]) -> Result<f64> {
    let seqs = split_chains(chains)?;
    let (w, b, var_plus) = within_between(&seqs);
    if w == 0.0 {
        return Ok(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    Ok((var_plus / w).sqrt())
}

/// Effective sample size via the initial-positive-sequence (paired)
/// autocorrelation truncation over split chains.
pub fn ess_of(chains: &[Vec<f64>]) -> Result<f64> {
    let seqs = split_chains(chains)?;
    let n = seqs[0].len();
    let m = seqs.len();
    if m * n < 100 {
        return Err(Error::TooFewDraws(format!("{} draws, need >= 100", m * n)));
    }
    let (w, _, var_plus) = within_between(&seqs);
    if w == 0.0 || !var_plus.is_finite() || var_plus <= 0.0 {
        return Err(Error::TooFewDraws("constant chains have no effective size".into()));
    }
    let means: Vec<f64> = seqs.iter().map(|s| num::mean(s)).collect();
    // biased within-sequence autocovariance at lag t, averaged over sequences
    let acov = |t: usize| -> f64 {
        let mut total = 0.0;
        for (s, &mean) in seqs.iter().zip(&means) {
            let mut c = 0.0;
            for i in 0..n - t {
                c += (s[i] - mean) * (s[i + t] - mean);
            }
            total += c / n as f64;
        }
        total / m as f64
    };
    let rho = |t: usize| -> f64 { 1.0 - (w - acov(t)) / var_plus };

    // Geyer initial monotone positive sequence:
    //   tau = -1 + 2 Σ_k P_k, with P_0 = rho_0 + rho_1 = 1 + rho_1
    let mut prev = (1.0 + rho(1)).max(1e-12);
    let mut acc = prev;
    let mut lag = 2;
    while lag + 1 < n {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        prev = pair;
        acc += pair;
        lag += 2;
    }
    let tau = (-1.0 + 2.0 * acc).max(1.0 / (m * n) as f64);
    Ok((m * n) as f64 / tau)
}

/// R̂ for one parameter of a run.
pub fn rhat(draws: &PosteriorDraws, param: usize) -> Result<f64> {
    rhat_of(&draws.parameter_chains(param))
}

/// ESS for one parameter of a run.
pub fn ess(draws: &PosteriorDraws, param: usize) -> Result<f64> {
    ess_of(&draws.parameter_chains(param))
}

// ---------------------------------------------------------------------------
// Summaries
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q500: f64,
    pub q975: f64,
    pub rhat: f64,
    pub ess: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ThetaSummary {
    pub domain: usize,
    /// posterior mean: the point predictor under quadratic loss
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q500: f64,
    pub q975: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub params: Vec<ParamSummary>,
    pub theta: Vec<ThetaSummary>,
    pub max_rhat: f64,
    pub min_ess: f64,
    /// R̂ < 1.05 on every parameter
    pub converged: bool,
}

fn moments_and_quantiles(pooled: &[f64]) -> (f64, f64, f64, f64, f64) {
    let mean = num::mean(pooled);
    let sd = num::sample_var(pooled).sqrt();
    let mut sorted = pooled.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
    (
        mean,
        if sd.is_nan() { 0.0 } else { sd },
        num::quantile_sorted(&sorted, 0.025),
        num::quantile_sorted(&sorted, 0.5),
        num::quantile_sorted(&sorted, 0.975),
    )
}

/// Per-parameter and per-domain posterior summaries with convergence gates.
pub fn summarize(draws: &PosteriorDraws) -> Result<Summary> {
    if draws.kept() == 0 {
        return Err(Error::TooFewDraws("no post-warmup draws".into()));
    }
    let mut params = Vec::with_capacity(draws.dim());
    let mut max_rhat: f64 = 1.0;
    let mut min_ess = f64::INFINITY;
    for j in 0..draws.dim() {
        let (mean, sd, q025, q500, q975) = moments_and_quantiles(&draws.parameter_pooled(j));
        let r = rhat(draws, j).unwrap_or(f64::NAN);
        let e = ess(draws, j).unwrap_or(f64::NAN);
        if r.is_nan() || r > max_rhat {
            max_rhat = if r.is_nan() { f64::NAN } else { r.max(max_rhat) };
        }
        if e < min_ess {
            min_ess = e;
        }
        params.push(ParamSummary { name: draws.param_names[j].clone(), mean, sd, q025, q500, q975, rhat: r, ess: e });
    }
    let mut theta = Vec::with_capacity(draws.n_domains());
    for d in 0..draws.n_domains() {
        let (mean, sd, q025, q500, q975) = moments_and_quantiles(&draws.theta_pooled(d));
        theta.push(ThetaSummary { domain: d, mean, sd, q025, q500, q975 });
    }
    let converged = max_rhat.is_finite() && max_rhat < 1.05;
    if !converged {
        log::warn!("chains not converged: max rhat = {max_rhat}");
    }
    Ok(Summary { params, theta, max_rhat, min_ess, converged })
}

/// Columnar draws CSV: `chain,iter,param,value`, including derived θ rows.
pub fn write_draws_csv<W: Write>(mut w: W, draws: &PosteriorDraws) -> Result<()> {
    writeln!(w, "#ineq-sae/draws/v1")?;
    writeln!(w, "chain,iter,param,value")?;
    for (c, chain) in draws.draws.iter().enumerate() {
        for (k, x) in chain.iter().enumerate() {
            let iter = draws.warmup + k;
            for (j, v) in x.iter().enumerate() {
                writeln!(w, "{},{},{},{}", c, iter, draws.param_names[j], v)?;
            }
            if !draws.theta.is_empty() && !draws.theta[c].is_empty() {
                for (d, t) in draws.theta[c][k].iter().enumerate() {
                    writeln!(w, "{},{},theta[{}],{}", c, iter, d, t)?;
                }
            }
        }
    }
    Ok(())
}

/// JSON summary with a schema tag.
pub fn write_summary_json<W: Write>(w: W, summary: &Summary) -> Result<()> {
    #[derive(Serialize)]
    struct Tagged<'a> {
        schema: &'a str,
        #[serde(flatten)]
        summary: &'a Summary,
    }
    serde_json::to_writer_pretty(w, &Tagged { schema: "ineq-sae/fit-summary/v1", summary })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct StdNormal;

    impl LogPosterior for StdNormal {
        fn dim(&self) -> usize {
            1
        }
        fn log_posterior(&self, x: &[f64]) -> f64 {
            -0.5 * x[0] * x[0]
        }
        fn init_scales(&self) -> Vec<f64> {
            vec![1.0]
        }
    }

    fn default_cfg(seed: u64) -> SamplerConfig {
        SamplerConfig { seed, ..SamplerConfig::default() }
    }

    #[test]
    fn standard_normal_moments() {
        let draws = run_sampler(&StdNormal, &default_cfg(1)).unwrap();
        let pooled = draws.parameter_pooled(0);
        let mean = num::mean(&pooled);
        let sd = num::sample_var(&pooled).sqrt();
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!(sd > 0.95 && sd < 1.05, "sd {sd}");
        // self-calibrated bound: |mean| within 2 MC standard errors
        let e = ess(&draws, 0).unwrap();
        assert!(mean.abs() < 2.0 * sd / e.sqrt() + 0.02, "mean {mean}, ess {e}");
    }

    #[test]
    fn sampler_is_deterministic() {
        let a = run_sampler(&StdNormal, &default_cfg(7)).unwrap();
        let b = run_sampler(&StdNormal, &default_cfg(7)).unwrap();
        assert_eq!(a.draws, b.draws);
        let c = run_sampler(&StdNormal, &default_cfg(8)).unwrap();
        assert_ne!(a.draws, c.draws);
    }

    /// Binomial likelihood with a conjugate Beta(1,1) prior expressed on the
    /// logit scale with its Jacobian: posterior is Beta(3, 7), mean 0.3.
    struct LogitBetaBinomial;

    impl LogPosterior for LogitBetaBinomial {
        fn dim(&self) -> usize {
            1
        }
        fn log_posterior(&self, x: &[f64]) -> f64 {
            let p = num::inv_logit(x[0]);
            if p <= 0.0 || p >= 1.0 {
                return f64::NEG_INFINITY;
            }
            // k = 2 successes in n = 8 trials, uniform prior, logit Jacobian
            2.0 * p.ln() + 6.0 * (1.0 - p).ln() + p.ln() + (1.0 - p).ln()
        }
    }

    #[test]
    fn conjugate_beta_posterior_mean() {
        let draws = run_sampler(&LogitBetaBinomial, &default_cfg(3)).unwrap();
        let mean_p = num::mean(
            &draws.parameter_pooled(0).iter().map(|&x| num::inv_logit(x)).collect::<Vec<_>>(),
        );
        assert!((mean_p - 0.3).abs() < 0.02, "mean {mean_p}");
    }

    #[test]
    fn nonfinite_init_errors() {
        struct Bad;
        impl LogPosterior for Bad {
            fn dim(&self) -> usize {
                1
            }
            fn log_posterior(&self, _x: &[f64]) -> f64 {
                f64::NEG_INFINITY
            }
        }
        assert!(matches!(run_sampler(&Bad, &default_cfg(1)), Err(Error::NonFiniteInit)));
    }

    fn iid_chains(seed: u64, m: usize, n: usize, shift: f64) -> Vec<Vec<f64>> {
        (0..m)
            .map(|c| {
                let mut rng = substream(seed, StreamTag::Chain, c as u64);
                (0..n).map(|_| normal(&mut rng) + shift * c as f64).collect()
            })
            .collect()
    }

    #[test]
    fn rhat_iid_near_one() {
        let r = rhat_of(&iid_chains(5, 4, 2000, 0.0)).unwrap();
        assert!(r > 0.99 && r < 1.01, "rhat {r}");
    }

    #[test]
    fn rhat_detects_shifted_chains() {
        let r = rhat_of(&iid_chains(5, 4, 2000, 5.0)).unwrap();
        assert!(r > 1.5, "rhat {r}");
    }

    #[test]
    fn rhat_single_chain_splits() {
        let chains = iid_chains(9, 1, 4000, 0.0);
        let r = rhat_of(&chains).unwrap();
        assert!(r > 0.99 && r < 1.01, "rhat {r}");
        assert!(matches!(rhat_of(&[vec![1.0, 2.0]]), Err(Error::TooFewChains)));
    }

    #[test]
    fn ess_iid_close_to_sample_size() {
        let chains = iid_chains(11, 4, 2500, 0.0);
        let total = 4.0 * 2500.0;
        let e = ess_of(&chains).unwrap();
        assert!((e - total).abs() / total < 0.10, "ess {e}");
    }

    #[test]
    fn ess_ar1_matches_theory() {
        let rho: f64 = 0.9;
        let m = 4;
        let n = 20_000;
        let chains: Vec<Vec<f64>> = (0..m)
            .map(|c| {
                let mut rng = substream(13, StreamTag::Chain, c as u64);
                let mut x = 0.0;
                let innov_sd = (1.0 - rho * rho).sqrt();
                (0..n)
                    .map(|_| {
                        x = rho * x + innov_sd * normal(&mut rng);
                        x
                    })
                    .collect()
            })
            .collect();
        let e = ess_of(&chains).unwrap();
        let expect = (m * n) as f64 * (1.0 - rho) / (1.0 + rho);
        assert!((e - expect).abs() / expect < 0.25, "ess {e} vs {expect}");
    }

    #[test]
    fn ess_constant_chain_errors() {
        let chains = vec![vec![1.0; 500], vec![1.0; 500]];
        assert!(ess_of(&chains).is_err());
    }

    #[test]
    fn summary_quantiles_ordered() {
        let draws = run_sampler(&StdNormal, &default_cfg(17)).unwrap();
        let s = summarize(&draws).unwrap();
        for p in &s.params {
            assert!(p.q025 <= p.q500 && p.q500 <= p.q975);
            assert!((p.q500 - p.mean).abs() < 0.08); // symmetric target
        }
        assert!(s.converged);
    }

    #[test]
    fn quadrupling_draws_halves_mc_error() {
        let short = SamplerConfig { iterations: 1250, warmup: 500, chains: 1, ..default_cfg(0) };
        let long = SamplerConfig { iterations: 3500, warmup: 500, chains: 1, ..default_cfg(0) };
        let reps = 24;
        let spread = |cfg: &SamplerConfig| {
            let means: Vec<f64> = (0..reps)
                .map(|s| {
                    let cfg = SamplerConfig { seed: 1000 + s, ..cfg.clone() };
                    num::mean(&run_sampler(&StdNormal, &cfg).unwrap().parameter_pooled(0))
                })
                .collect();
            num::sample_var(&means).sqrt()
        };
        let ratio = spread(&short) / spread(&long);
        assert!(ratio > 1.4 && ratio < 2.6, "ratio {ratio}"); // 4x draws ≈ 2x precision
    }

    #[test]
    fn two_state_balance() {
        // two-well target; in stationarity the occupancy of the wells must
        // match their probabilities and cross-flows must balance
        struct TwoWell;
        impl LogPosterior for TwoWell {
            fn dim(&self) -> usize {
                1
            }
            fn log_posterior(&self, x: &[f64]) -> f64 {
                let a = -0.5 * ((x[0] + 3.0) / 0.5).powi(2) + 0.3f64.ln();
                let b = -0.5 * ((x[0] - 3.0) / 0.5).powi(2) + 0.7f64.ln();
                num::log_sum_exp2(a, b)
            }
            fn init_scales(&self) -> Vec<f64> {
                vec![4.0] // wide proposals so the wells communicate
            }
        }
        let cfg = SamplerConfig { iterations: 60_000, warmup: 5_000, chains: 1, ..default_cfg(23) };
        let draws = run_sampler(&TwoWell, &cfg).unwrap();
        let series: Vec<f64> = draws.parameter_pooled(0).iter().map(|&x| (x > 0.0) as u8 as f64).collect();
        let frac = num::mean(&series);
        let e = ess_of(&[series.clone()]).unwrap();
        let se = (0.7 * 0.3 / e).sqrt();
        assert!((frac - 0.7).abs() < 3.0 * se, "frac {frac}, se {se}");
        let f_up = series.windows(2).filter(|w| w[0] == 0.0 && w[1] == 1.0).count() as i64;
        let f_down = series.windows(2).filter(|w| w[0] == 1.0 && w[1] == 0.0).count() as i64;
        assert!((f_up - f_down).abs() <= 1, "flows {f_up} vs {f_down}");
    }
}
