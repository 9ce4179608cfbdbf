//! Area-level Beta and Flexible Beta hierarchical models with known sampling
//! variances.
//!
//! Both models take the smoothed variance V_d as known. The Beta model links
//! logit(θ_d) to the covariates and recovers the dispersion from
//! φ_d = θ_d(1−θ_d)/V_d − 1. The Flexible Beta model is a two-component Beta
//! mixture with ordered means λ₁ = w̃ + λ₂ > λ₂, common dispersion and fixed
//! mixing weight p: the linear predictor models the lower component mean
//! λ₂d, while p and the normalized distance w ∈ (0,1) absorb the skew of the
//! estimator distribution. The distance is expressed as the fraction w of
//! its admissible upper bound min{(1−λ₂)/p, √(V/(p(1−p)))}, which keeps the
//! parametrization variation independent and φ_d > 0 whenever θ_d stays
//! below the compatibility threshold.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::indices::IndexKind;
use crate::mcmc::LogPosterior;
use crate::num::{inv_logit, log_sum_exp2, logit, median};

const LN_2PI: f64 = 1.8378770664093453;

/// Per-domain inputs to the area-level models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaDataset {
    pub domains: Vec<String>,
    /// direct estimates, in (0, 1)
    pub y: Vec<f64>,
    /// known (smoothed) sampling variances
    pub var: Vec<f64>,
    /// covariate rows including the leading intercept column
    pub x: Vec<Vec<f64>>,
    /// effective domain sample sizes
    pub n_tilde: Vec<f64>,
}

impl AreaDataset {
    /// Validate shapes and per-domain compatibility. Rows with
    /// V_d ≥ y_d(1−y_d) leave both likelihoods undefined and are rejected
    /// with a diagnostic naming every offending domain.
    pub fn new(
        domains: Vec<String>,
        y: Vec<f64>,
        var: Vec<f64>,
        x: Vec<Vec<f64>>,
        n_tilde: Vec<f64>,
    ) -> Result<Self> {
        let d = domains.len();
        if y.len() != d || var.len() != d || x.len() != d || n_tilde.len() != d {
            return Err(Error::LengthMismatch(format!(
                "domains {d}, y {}, var {}, x {}, n_tilde {}",
                y.len(),
                var.len(),
                x.len(),
                n_tilde.len()
            )));
        }
        if d == 0 {
            return Err(Error::EmptyOrDegenerate("no domains".into()));
        }
        let p = x[0].len();
        if p == 0 || x.iter().any(|row| row.len() != p) {
            return Err(Error::LengthMismatch("ragged or empty covariate rows".into()));
        }
        if d < p + 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least P + 2 = {} domains, got {d}",
                p + 2
            )));
        }
        let mut bad = Vec::new();
        for i in 0..d {
            if !(y[i].is_finite() && y[i] > 0.0 && y[i] < 1.0) {
                return Err(Error::DomainError(format!("y[{}] = {} outside (0,1)", domains[i], y[i])));
            }
            if !(var[i].is_finite() && var[i] > 0.0) {
                return Err(Error::DomainError(format!("var[{}] = {}", domains[i], var[i])));
            }
            if x[i].iter().any(|v| !v.is_finite()) || !n_tilde[i].is_finite() {
                return Err(Error::NonFinite(format!("covariates or n_tilde in {}", domains[i])));
            }
            if var[i] >= y[i] * (1.0 - y[i]) {
                bad.push(format!("{} (y={}, var={})", domains[i], y[i], var[i]));
            }
        }
        if !bad.is_empty() {
            return Err(Error::NonPositivePhi(format!(
                "variance >= y(1-y) leaves the Beta dispersion non-positive in: {}",
                bad.join(", ")
            )));
        }
        Ok(Self { domains, y, var, x, n_tilde })
    }

    pub fn n_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.x[0].len()
    }
}

/// Prior over the mixing coefficient p.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PPrior {
    #[default]
    Uniform,
    /// Beta(2,2): close to uniform, but repelled from the support boundary.
    Beta22,
}

/// Weakly-informative prior settings; w always gets a Uniform(0,1) prior.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PriorSpec {
    pub beta_sd: f64,
    pub sigma_v_scale: f64,
    pub p_prior: PPrior,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { beta_sd: 10f64.sqrt(), sigma_v_scale: 1.0, p_prior: PPrior::Uniform }
    }
}

/// Model family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Beta,
    Fb,
}

/// Flexible Beta parameters on their constrained scales.
#[derive(Debug, Clone, PartialEq)]
pub struct FbParams {
    pub beta: Vec<f64>,
    pub sigma_v: f64,
    pub v: Vec<f64>,
    pub p: f64,
    pub w: f64,
}

/// Beta-model parameters on their constrained scales.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaParams {
    pub beta: Vec<f64>,
    pub sigma_v: f64,
    pub v: Vec<f64>,
}

/// Mixture quantities derived for one domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedArea {
    pub lambda2: f64,
    pub wtilde: f64,
    pub theta: f64,
    pub phi: f64,
    pub lambda1: f64,
}

/// Compatibility threshold c: the index value below which the variance
/// function stays under θ(1−θ), keeping the implied dispersion positive.
/// Closed forms exist for Relative Theil (n/(n+2)) and Gini
/// ((√(4n+1) − 1)/2); the Atkinson threshold is the numeric root of
/// 2θ²e^{−2θ} = n·θ(1−θ) on (0,1).
pub fn c_threshold(kind: IndexKind, n: f64) -> Result<f64> {
    if !(n.is_finite() && n > 1.0) {
        return Err(Error::DomainError(format!("n must exceed 1, got {n}")));
    }
    match kind {
        IndexKind::RelativeTheil => Ok(n / (n + 2.0)),
        IndexKind::Gini => Ok(((4.0 * n + 1.0).sqrt() - 1.0) / 2.0),
        IndexKind::Atkinson => {
            let g = |theta: f64| n * theta * (1.0 - theta) - 2.0 * theta * theta * (-2.0 * theta).exp();
            // g > 0 just above zero; find the sign change and bisect
            let grid = 4096;
            let mut lo = 1e-9;
            let mut hi = f64::NAN;
            for i in 1..=grid {
                let t = i as f64 / (grid + 1) as f64;
                if g(t) < 0.0 {
                    hi = t;
                    break;
                }
                lo = t;
            }
            if hi.is_nan() {
                return Err(Error::NoRoot(format!("no sign change of the Atkinson threshold at n = {n}")));
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if g(mid) >= 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(0.5 * (lo + hi))
        }
        IndexKind::GeneralizedEntropy | IndexKind::RelativeEntropy => Err(Error::UnsupportedIndex(
            "no compatibility threshold defined for the entropy family".into(),
        )),
    }
}

/// Check that every direct estimate sits below the compatibility threshold
/// for its sample size. Values at or above c are model-incompatible.
pub fn check_compatibility(data: &AreaDataset, kind: IndexKind) -> Result<()> {
    let mut bad = Vec::new();
    for i in 0..data.n_domains() {
        let c = c_threshold(kind, data.n_tilde[i].max(2.0))?;
        if data.y[i] >= c {
            bad.push(format!("{} (y={} >= c={c:.4})", data.domains[i], data.y[i]));
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::DomainError(format!("estimates above the admissible threshold: {}", bad.join(", "))))
    }
}

/// Upper bound of the mixture-component distance w̃:
/// min{(1−λ₂)/p, √(V/(p(1−p)))}.
pub fn wtilde_bound(lambda2: f64, p: f64, var: f64) -> f64 {
    ((1.0 - lambda2) / p).min((var / (p * (1.0 - p))).sqrt())
}

/// Derived mixture quantities from (λ₂, p, w, V).
pub fn derive_area_parts(lambda2: f64, p: f64, w: f64, var: f64) -> Result<DerivedArea> {
    let wtilde = w * wtilde_bound(lambda2, p, var);
    let theta = lambda2 + p * wtilde;
    let denom = var - p * (1.0 - p) * wtilde * wtilde;
    let phi = (theta * (1.0 - theta) - var) / denom;
    if !phi.is_finite() || phi <= 0.0 {
        return Err(Error::NonPositivePhi(format!(
            "phi = {phi} at lambda2 = {lambda2}, p = {p}, w = {w}, var = {var}"
        )));
    }
    Ok(DerivedArea { lambda2, wtilde, theta, phi, lambda1: lambda2 + wtilde })
}

/// Derived quantities for domain `d` under `params`.
pub fn derive_area(params: &FbParams, d: usize, data: &AreaDataset) -> Result<DerivedArea> {
    let eta: f64 = data.x[d].iter().zip(&params.beta).map(|(x, b)| x * b).sum::<f64>() + params.v[d];
    derive_area_parts(inv_logit(eta), params.p, params.w, data.var[d])
}

/// Log-density of Beta(μφ, (1−μ)φ) at y, mean-precision parametrization.
fn beta_lpdf(y: f64, mu: f64, phi: f64) -> f64 {
    if !(y > 0.0 && y < 1.0 && mu > 0.0 && mu < 1.0 && phi > 0.0) {
        return f64::NEG_INFINITY;
    }
    let a = mu * phi;
    let b = (1.0 - mu) * phi;
    ln_gamma(phi) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * y.ln() + (b - 1.0) * (1.0 - y).ln()
}

/// Beta-model log-likelihood of one domain with known variance:
/// φ = θ(1−θ)/V − 1 must be positive.
pub fn beta_log_likelihood(y: f64, theta: f64, var: f64) -> Result<f64> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::DomainError(format!("theta = {theta} outside (0,1)")));
    }
    let phi = theta * (1.0 - theta) / var - 1.0;
    if phi <= 0.0 {
        return Err(Error::NonPositivePhi(format!("phi = {phi} at theta = {theta}, var = {var}")));
    }
    Ok(beta_lpdf(y, theta, phi))
}

/// Flexible Beta log-likelihood
/// log[p·Beta(y; λ₁, φ) + (1−p)·Beta(y; λ₂, φ)] via log-sum-exp.
/// Returns −∞ outside the support (including λ₁ ≥ 1).
pub fn fb_log_likelihood(y: f64, area: &DerivedArea, p: f64) -> f64 {
    log_sum_exp2(
        p.ln() + beta_lpdf(y, area.lambda1, area.phi),
        (1.0 - p).ln() + beta_lpdf(y, area.lambda2, area.phi),
    )
}

// ---------------------------------------------------------------------------
// Unconstrained parametrization shared by both models:
// [beta (P), log sigma_v, v (D)] and, for FB, [logit p, logit w] appended.
// ---------------------------------------------------------------------------

fn check_finite(x: &[f64]) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("parameter vector".into()));
    }
    Ok(())
}

/// Normal(0, sd) log-density.
fn normal_lpdf(x: f64, sd: f64) -> f64 {
    -0.5 * (x / sd) * (x / sd) - sd.ln() - 0.5 * LN_2PI
}

/// Half-Normal(scale) log-density for x ≥ 0.
fn half_normal_lpdf(x: f64, scale: f64) -> f64 {
    0.5 * (2.0 / std::f64::consts::PI).ln() - scale.ln() - 0.5 * (x / scale) * (x / scale)
}

/// The Beta area-level model: y_d ~ Beta(θ_d φ_d, (1−θ_d)φ_d) with
/// logit(θ_d) = x_dᵀβ + v_d.
#[derive(Debug, Clone)]
pub struct BetaModel {
    pub data: AreaDataset,
    pub priors: PriorSpec,
}

/// The Flexible Beta area-level model: y_d ~ p·Beta(λ₁) + (1−p)·Beta(λ₂)
/// with logit(λ₂d) = x_dᵀβ + v_d.
#[derive(Debug, Clone)]
pub struct FbModel {
    pub data: AreaDataset,
    pub priors: PriorSpec,
}

impl BetaModel {
    pub fn new(data: AreaDataset, priors: PriorSpec) -> Self {
        Self { data, priors }
    }

    pub fn to_unconstrained(&self, params: &BetaParams) -> Result<Vec<f64>> {
        if params.sigma_v <= 0.0 {
            return Err(Error::DomainError(format!("sigma_v must be > 0, got {}", params.sigma_v)));
        }
        let mut x = params.beta.clone();
        x.push(params.sigma_v.ln());
        x.extend_from_slice(&params.v);
        check_finite(&x)?;
        Ok(x)
    }

    pub fn from_unconstrained(&self, x: &[f64]) -> Result<BetaParams> {
        check_finite(x)?;
        let p = self.data.n_covariates();
        let d = self.data.n_domains();
        if x.len() != p + 1 + d {
            return Err(Error::LengthMismatch(format!("expected {} parameters, got {}", p + 1 + d, x.len())));
        }
        Ok(BetaParams {
            beta: x[..p].to_vec(),
            sigma_v: x[p].exp(),
            v: x[p + 1..].to_vec(),
        })
    }

    /// Total log-likelihood over domains.
    pub fn log_likelihood(&self, params: &BetaParams) -> f64 {
        let mut ll = 0.0;
        for d in 0..self.data.n_domains() {
            let eta: f64 =
                self.data.x[d].iter().zip(&params.beta).map(|(x, b)| x * b).sum::<f64>() + params.v[d];
            let theta = inv_logit(eta);
            match beta_log_likelihood(self.data.y[d], theta, self.data.var[d]) {
                Ok(l) => ll += l,
                Err(_) => return f64::NEG_INFINITY,
            }
        }
        ll
    }

    fn log_prior_jacobian(&self, x: &[f64], params: &BetaParams) -> f64 {
        let p = self.data.n_covariates();
        let mut lp = 0.0;
        for b in &params.beta {
            lp += normal_lpdf(*b, self.priors.beta_sd);
        }
        // Half-Normal on sigma_v, plus the log-scale Jacobian x[p] = log sigma_v
        lp += half_normal_lpdf(params.sigma_v, self.priors.sigma_v_scale) + x[p];
        for v in &params.v {
            lp += normal_lpdf(*v, params.sigma_v);
        }
        lp
    }
}

impl FbModel {
    pub fn new(data: AreaDataset, priors: PriorSpec) -> Self {
        Self { data, priors }
    }

    pub fn to_unconstrained(&self, params: &FbParams) -> Result<Vec<f64>> {
        if params.sigma_v <= 0.0 {
            return Err(Error::DomainError(format!("sigma_v must be > 0, got {}", params.sigma_v)));
        }
        if !(params.p > 0.0 && params.p < 1.0 && params.w > 0.0 && params.w < 1.0) {
            return Err(Error::DomainError(format!("p = {}, w = {} must lie in (0,1)", params.p, params.w)));
        }
        let mut x = params.beta.clone();
        x.push(params.sigma_v.ln());
        x.extend_from_slice(&params.v);
        x.push(logit(params.p));
        x.push(logit(params.w));
        check_finite(&x)?;
        Ok(x)
    }

    pub fn from_unconstrained(&self, x: &[f64]) -> Result<FbParams> {
        check_finite(x)?;
        let p = self.data.n_covariates();
        let d = self.data.n_domains();
        if x.len() != p + 3 + d {
            return Err(Error::LengthMismatch(format!("expected {} parameters, got {}", p + 3 + d, x.len())));
        }
        Ok(FbParams {
            beta: x[..p].to_vec(),
            sigma_v: x[p].exp(),
            v: x[p + 1..p + 1 + d].to_vec(),
            p: inv_logit(x[p + 1 + d]),
            w: inv_logit(x[p + 2 + d]),
        })
    }

    /// Total log-likelihood over domains; −∞ on constraint violations.
    pub fn log_likelihood(&self, params: &FbParams) -> f64 {
        let mut ll = 0.0;
        for d in 0..self.data.n_domains() {
            match derive_area(params, d, &self.data) {
                Ok(area) => {
                    let l = fb_log_likelihood(self.data.y[d], &area, params.p);
                    if l == f64::NEG_INFINITY {
                        return f64::NEG_INFINITY;
                    }
                    ll += l;
                }
                Err(_) => return f64::NEG_INFINITY,
            }
        }
        ll
    }

    fn log_prior_jacobian(&self, x: &[f64], params: &FbParams) -> f64 {
        let np = self.data.n_covariates();
        let mut lp = 0.0;
        for b in &params.beta {
            lp += normal_lpdf(*b, self.priors.beta_sd);
        }
        lp += half_normal_lpdf(params.sigma_v, self.priors.sigma_v_scale) + x[np];
        for v in &params.v {
            lp += normal_lpdf(*v, params.sigma_v);
        }
        // p prior on the constrained scale plus logit Jacobians for p and w
        let (p, w) = (params.p, params.w);
        lp += match self.priors.p_prior {
            PPrior::Uniform => 0.0,
            PPrior::Beta22 => 6.0f64.ln() + p.ln() + (1.0 - p).ln(),
        };
        lp += p.ln() + (1.0 - p).ln(); // d p / d logit(p)
        lp += w.ln() + (1.0 - w).ln(); // d w / d logit(w)
        lp
    }
}

/// Shared data-informed initialization: the linear predictor starts at the
/// observed logits (v_d = logit y_d with β = 0) and per-coordinate proposal
/// scales come from the delta-method logit-scale standard deviations
/// √V_d /(y_d(1−y_d)), so the sampler starts inside, and scaled to, the
/// posterior bulk even when the variances are very small.
fn init_point_common(data: &AreaDataset, extra: usize) -> Vec<f64> {
    let p = data.n_covariates();
    let mut x = vec![0.0; p];
    x.push(0.5f64.ln()); // sigma_v = 0.5
    for d in 0..data.n_domains() {
        x.push(logit(data.y[d]));
    }
    for _ in 0..extra {
        x.push(0.0); // p = w = 0.5 on the logit scale
    }
    x
}

fn init_scales_common(data: &AreaDataset, extra: usize) -> Vec<f64> {
    let p = data.n_covariates();
    let d = data.n_domains();
    let s: Vec<f64> = (0..d)
        .map(|i| (data.var[i].sqrt() / (data.y[i] * (1.0 - data.y[i]))).clamp(1e-5, 1.5))
        .collect();
    let beta_scale = ((median(&s) + 0.3) / (d as f64).sqrt()).clamp(1e-3, 1.0);
    let mut out = vec![beta_scale; p];
    out.push(0.3);
    out.extend_from_slice(&s);
    for _ in 0..extra {
        out.push(0.4);
    }
    out
}

/// A ridge per regression coefficient: shifting β_k while moving every v_d
/// by −x_dk leaves the linear predictor (and hence the likelihood)
/// unchanged, so these translations let the sampler traverse the
/// intercept/random-effect trade-off that coordinate moves cross slowly.
fn beta_ridges(data: &AreaDataset) -> Vec<Vec<(usize, f64)>> {
    let p = data.n_covariates();
    (0..p)
        .map(|k| {
            let mut dir = vec![(k, 1.0)];
            for d in 0..data.n_domains() {
                dir.push((p + 1 + d, -data.x[d][k]));
            }
            dir
        })
        .collect()
}

/// Along the β_k translation ridge only the Gaussian priors move, so the
/// conditional of the step is Gaussian in closed form: a Gibbs step.
fn beta_ridge_conditional(
    data: &AreaDataset,
    priors: &PriorSpec,
    x: &[f64],
    k: usize,
) -> Option<(f64, f64)> {
    let p = data.n_covariates();
    if k >= p {
        return None;
    }
    let sigma_v = x[p].exp();
    let sv2 = sigma_v * sigma_v;
    let sb2 = priors.beta_sd * priors.beta_sd;
    let mut tau = 1.0 / sb2;
    let mut rhs = -x[k] / sb2;
    for d in 0..data.n_domains() {
        let xdk = data.x[d][k];
        tau += xdk * xdk / sv2;
        rhs += xdk * x[p + 1 + d] / sv2;
    }
    Some((rhs / tau, tau.sqrt().recip()))
}

impl LogPosterior for BetaModel {
    fn dim(&self) -> usize {
        self.data.n_covariates() + 1 + self.data.n_domains()
    }

    fn log_posterior(&self, x: &[f64]) -> f64 {
        let params = match self.from_unconstrained(x) {
            Ok(p) => p,
            Err(_) => return f64::NEG_INFINITY,
        };
        if !params.sigma_v.is_finite() || params.sigma_v <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let ll = self.log_likelihood(&params);
        if ll == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        ll + self.log_prior_jacobian(x, &params)
    }

    fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.data.n_covariates()).map(|k| format!("beta[{k}]")).collect();
        names.push("log_sigma_v".into());
        names.extend((0..self.data.n_domains()).map(|d| format!("v[{d}]")));
        names
    }

    fn n_domains(&self) -> usize {
        self.data.n_domains()
    }

    fn derived(&self, x: &[f64], theta: &mut [f64], loglik: &mut [f64]) {
        let params = self.from_unconstrained(x).expect("accepted draws are valid");
        for d in 0..self.data.n_domains() {
            let eta: f64 =
                self.data.x[d].iter().zip(&params.beta).map(|(x, b)| x * b).sum::<f64>() + params.v[d];
            theta[d] = inv_logit(eta);
            loglik[d] =
                beta_log_likelihood(self.data.y[d], theta[d], self.data.var[d]).unwrap_or(f64::NEG_INFINITY);
        }
    }

    fn init_point(&self) -> Vec<f64> {
        init_point_common(&self.data, 0)
    }

    fn init_scales(&self) -> Vec<f64> {
        init_scales_common(&self.data, 0)
    }

    /// Random-effect coordinates touch one domain's likelihood plus their own
    /// prior term, so a sweep move needs only that difference.
    fn log_posterior_delta(&self, x: &[f64], j: usize, new: f64) -> Option<f64> {
        let p = self.data.n_covariates();
        if j < p + 1 {
            return None;
        }
        let d = j - p - 1;
        let sigma_v = x[p].exp();
        let base: f64 = self.data.x[d].iter().zip(&x[..p]).map(|(xi, b)| xi * b).sum();
        let term = |v: f64| -> f64 {
            let ll = beta_log_likelihood(self.data.y[d], inv_logit(base + v), self.data.var[d])
                .unwrap_or(f64::NEG_INFINITY);
            ll + normal_lpdf(v, sigma_v)
        };
        if !new.is_finite() {
            return Some(f64::NEG_INFINITY);
        }
        Some(term(new) - term(x[j]))
    }

    fn ridge_directions(&self) -> Vec<Vec<(usize, f64)>> {
        beta_ridges(&self.data)
    }

    fn ridge_conditional(&self, x: &[f64], r: usize) -> Option<(f64, f64)> {
        beta_ridge_conditional(&self.data, &self.priors, x, r)
    }

    fn scale_moves(&self) -> Vec<(usize, Vec<usize>)> {
        let p = self.data.n_covariates();
        vec![(p, (p + 1..p + 1 + self.data.n_domains()).collect())]
    }
}

impl LogPosterior for FbModel {
    fn dim(&self) -> usize {
        self.data.n_covariates() + 3 + self.data.n_domains()
    }

    fn log_posterior(&self, x: &[f64]) -> f64 {
        let params = match self.from_unconstrained(x) {
            Ok(p) => p,
            Err(_) => return f64::NEG_INFINITY,
        };
        if !params.sigma_v.is_finite()
            || params.sigma_v <= 0.0
            || params.p <= 0.0
            || params.p >= 1.0
            || params.w <= 0.0
            || params.w >= 1.0
        {
            return f64::NEG_INFINITY;
        }
        let ll = self.log_likelihood(&params);
        if ll == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        ll + self.log_prior_jacobian(x, &params)
    }

    fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.data.n_covariates()).map(|k| format!("beta[{k}]")).collect();
        names.push("log_sigma_v".into());
        names.extend((0..self.data.n_domains()).map(|d| format!("v[{d}]")));
        names.push("logit_p".into());
        names.push("logit_w".into());
        names
    }

    fn n_domains(&self) -> usize {
        self.data.n_domains()
    }

    fn derived(&self, x: &[f64], theta: &mut [f64], loglik: &mut [f64]) {
        let params = self.from_unconstrained(x).expect("accepted draws are valid");
        for d in 0..self.data.n_domains() {
            match derive_area(&params, d, &self.data) {
                Ok(area) => {
                    theta[d] = area.theta;
                    loglik[d] = fb_log_likelihood(self.data.y[d], &area, params.p);
                }
                Err(_) => {
                    theta[d] = f64::NAN;
                    loglik[d] = f64::NEG_INFINITY;
                }
            }
        }
    }

    fn init_point(&self) -> Vec<f64> {
        init_point_common(&self.data, 2)
    }

    fn init_scales(&self) -> Vec<f64> {
        init_scales_common(&self.data, 2)
    }

    fn log_posterior_delta(&self, x: &[f64], j: usize, new: f64) -> Option<f64> {
        let np = self.data.n_covariates();
        let d_total = self.data.n_domains();
        if j < np + 1 || j >= np + 1 + d_total {
            return None;
        }
        let d = j - np - 1;
        let sigma_v = x[np].exp();
        let p = inv_logit(x[np + 1 + d_total]);
        let w = inv_logit(x[np + 2 + d_total]);
        let base: f64 = self.data.x[d].iter().zip(&x[..np]).map(|(xi, b)| xi * b).sum();
        let term = |v: f64| -> f64 {
            let ll = match derive_area_parts(inv_logit(base + v), p, w, self.data.var[d]) {
                Ok(area) => fb_log_likelihood(self.data.y[d], &area, p),
                Err(_) => f64::NEG_INFINITY,
            };
            ll + normal_lpdf(v, sigma_v)
        };
        if !new.is_finite() {
            return Some(f64::NEG_INFINITY);
        }
        Some(term(new) - term(x[j]))
    }

    fn ridge_directions(&self) -> Vec<Vec<(usize, f64)>> {
        beta_ridges(&self.data)
    }

    fn ridge_conditional(&self, x: &[f64], r: usize) -> Option<(f64, f64)> {
        beta_ridge_conditional(&self.data, &self.priors, x, r)
    }

    fn scale_moves(&self) -> Vec<(usize, Vec<usize>)> {
        let p = self.data.n_covariates();
        vec![(p, (p + 1..p + 1 + self.data.n_domains()).collect())]
    }

    /// The mixture parameters trade off against the location: raising w (or
    /// p) lifts every θ_d by p·w̃_d, which the random effects must absorb.
    /// Reparametrized moves shift logit(w) and/or logit(p) (singly and as
    /// diagonal pairs, so the weakly identified pair can travel its whole
    /// plane) while moving each λ₂d so that the skew contribution
    /// w·√(V_d)·√(p/(1−p)) of the second-vinculum regime is exactly
    /// transferred, with the per-domain logit Jacobians of the λ₂ shifts.
    fn n_transformed(&self) -> usize {
        4
    }

    fn transformed(&self, x: &[f64], t: usize, delta: f64, out: &mut [f64]) -> Option<f64> {
        let np = self.data.n_covariates();
        let d_total = self.data.n_domains();
        let (ip, iw) = (np + 1 + d_total, np + 2 + d_total);
        let p = inv_logit(x[ip]);
        let w = inv_logit(x[iw]);
        let (p_new, w_new) = match t {
            0 => (p, inv_logit(x[iw] + delta)),
            1 => (inv_logit(x[ip] + delta), w),
            2 => (inv_logit(x[ip] + delta), inv_logit(x[iw] + delta)),
            _ => (inv_logit(x[ip] + delta), inv_logit(x[iw] - delta)),
        };
        if !(p_new > 0.0 && p_new < 1.0 && w_new > 0.0 && w_new < 1.0) {
            return None;
        }
        out.copy_from_slice(x);
        out[ip] = logit(p_new);
        out[iw] = logit(w_new);
        // skew mass per unit of √V_d before and after
        let skew_old = w * (p / (1.0 - p)).sqrt();
        let skew_new = w_new * (p_new / (1.0 - p_new)).sqrt();
        let mut logj = 0.0;
        let mut shifts = vec![0.0; d_total];
        for d in 0..d_total {
            let base: f64 = self.data.x[d].iter().zip(&x[..np]).map(|(xi, b)| xi * b).sum();
            let lambda2 = inv_logit(base + x[np + 1 + d]);
            let shifted = lambda2 + (skew_old - skew_new) * self.data.var[d].sqrt();
            if !(shifted > 0.0 && shifted < 1.0) {
                return None;
            }
            shifts[d] = logit(shifted) - (base + x[np + 1 + d]);
            out[np + 1 + d] = x[np + 1 + d] + shifts[d];
            logj += (lambda2 * (1.0 - lambda2)).ln() - (shifted * (1.0 - shifted)).ln();
        }
        // project the common part of the linear-predictor shifts onto β so
        // the random effects stay centered; expressed in (β, η) coordinates
        // the projection adds nothing to the Jacobian
        if let Some(coef) = least_squares(&self.data.x, &shifts) {
            for (k, c) in coef.iter().enumerate() {
                out[k] += c;
            }
            for d in 0..d_total {
                let fitted: f64 = self.data.x[d].iter().zip(&coef).map(|(xi, c)| xi * c).sum();
                out[np + 1 + d] -= fitted;
            }
        }
        Some(logj)
    }
}

/// Ordinary least-squares coefficients of `y` on rows `x` via normal
/// equations; None when the design is singular.
fn least_squares(x: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let p = x[0].len();
    let mut a = vec![vec![0.0; p + 1]; p];
    for (row, &yd) in x.iter().zip(y) {
        for i in 0..p {
            for j in 0..p {
                a[i][j] += row[i] * row[j];
            }
            a[i][p] += row[i] * yd;
        }
    }
    // gaussian elimination with partial pivoting
    for col in 0..p {
        let piv = (col..p).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        for r in 0..p {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=p {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    Some((0..p).map(|i| a[i][p] / a[i][i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_data(d: usize) -> AreaDataset {
        let domains = (0..d).map(|i| format!("d{i}")).collect();
        let y: Vec<f64> = (0..d).map(|i| 0.15 + 0.4 * (i as f64 / d as f64)).collect();
        let var = vec![0.0016; d];
        let x = (0..d).map(|i| vec![1.0, (i as f64 / d as f64) - 0.5]).collect();
        let n_tilde = vec![60.0; d];
        AreaDataset::new(domains, y, var, x, n_tilde).unwrap()
    }

    #[test]
    fn thresholds_at_n2() {
        assert!((c_threshold(IndexKind::RelativeTheil, 2.0).unwrap() - 0.5).abs() < 1e-12);
        assert!((c_threshold(IndexKind::Gini, 2.0).unwrap() - 1.0).abs() < 1e-12);
        let atk = c_threshold(IndexKind::Atkinson, 2.0).unwrap();
        assert!((atk - 0.84).abs() <= 0.01, "atkinson threshold {atk}");
    }

    #[test]
    fn threshold_rejects_bad_n() {
        assert!(c_threshold(IndexKind::Gini, 1.0).is_err());
    }

    #[test]
    fn wtilde_bound_cases() {
        assert!((wtilde_bound(0.9, 0.5, 1.0) - 0.2).abs() < 1e-15);
        assert!((wtilde_bound(0.1, 0.5, 0.01) - 0.2).abs() < 1e-15);
        assert!(wtilde_bound(0.1, 0.5, 1e-12) < 1e-5);
    }

    #[test]
    fn derive_area_hand_case() {
        let a = derive_area_parts(0.2, 0.5, 0.5, 0.0016).unwrap();
        assert!((a.wtilde - 0.04).abs() < 1e-12);
        assert!((a.theta - 0.22).abs() < 1e-12);
        assert!((a.phi - 141.66666666666666).abs() < 1e-8);
        assert!((a.lambda1 - 0.24).abs() < 1e-12);
    }

    #[test]
    fn derive_area_degenerate_mixture_recovers_beta_mean() {
        let a = derive_area_parts(0.3, 0.5, 1e-12, 0.001).unwrap();
        assert!((a.theta - 0.3).abs() < 1e-9);
        // phi tends to the Beta-model dispersion theta(1-theta)/V - 1
        let beta_phi = 0.3 * 0.7 / 0.001 - 1.0;
        assert!((a.phi - beta_phi).abs() / beta_phi < 1e-6);
    }

    #[test]
    fn phi_positive_inside_threshold_region() {
        // V set by the variance function keeps phi > 0 whenever theta < c, w < 1
        let n = 40.0;
        for &(kind, y) in &[(IndexKind::RelativeTheil, 0.3), (IndexKind::Atkinson, 0.4), (IndexKind::Gini, 0.5)] {
            let c = c_threshold(kind, n).unwrap();
            assert!(y < c);
            let spec = match kind {
                IndexKind::Atkinson => crate::indices::IndexSpec::atkinson(1.0),
                IndexKind::RelativeTheil => crate::indices::IndexSpec::relative_theil(),
                _ => crate::indices::IndexSpec::gini(),
            };
            let var = crate::gvf::variance_function_value(&spec, y, n).unwrap();
            for &w in &[0.1, 0.5, 0.9] {
                let a = derive_area_parts(y, 0.7, w, var).unwrap();
                assert!(a.phi > 0.0);
            }
        }
    }

    #[test]
    fn fb_density_degenerates_to_beta() {
        let area = DerivedArea { lambda2: 0.3, wtilde: 0.2, theta: 0.44, phi: 25.0, lambda1: 0.5 };
        // p -> 1: single Beta at lambda1
        let l = fb_log_likelihood(0.4, &area, 1.0 - 1e-14);
        assert!((l - beta_lpdf(0.4, 0.5, 25.0)).abs() < 1e-9);
        // lambda1 == lambda2: single Beta regardless of p
        let eq = DerivedArea { lambda2: 0.3, wtilde: 0.0, theta: 0.3, phi: 25.0, lambda1: 0.3 };
        let l2 = fb_log_likelihood(0.4, &eq, 0.37);
        assert!((l2 - beta_lpdf(0.4, 0.3, 25.0)).abs() < 1e-12);
    }

    #[test]
    fn fb_density_integrates_to_one() {
        let area = DerivedArea { lambda2: 0.3, wtilde: 0.3, theta: 0.51, phi: 30.0, lambda1: 0.6 };
        let p = 0.7;
        // composite Simpson over (0,1); the density vanishes at both ends
        let m = 200_000;
        let h = 1.0 / m as f64;
        let f = |y: f64| if y <= 0.0 || y >= 1.0 { 0.0 } else { fb_log_likelihood(y, &area, p).exp() };
        let mut s = f(0.0) + f(1.0);
        for i in 1..m {
            let y = i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(y);
        }
        let integral = s * h / 3.0;
        assert!((integral - 1.0).abs() < 1e-6, "integral {integral}");
    }

    #[test]
    fn beta_loglik_rejects_excess_variance() {
        assert!(matches!(
            beta_log_likelihood(0.4, 0.5, 0.25),
            Err(Error::NonPositivePhi(_))
        ));
    }

    #[test]
    fn beta_implied_moments_match_sampling() {
        use rand_distr::{Beta, Distribution};
        let (theta, var) = (0.3, 0.002);
        let phi = theta * (1.0 - theta) / var - 1.0;
        let dist = Beta::new(theta * phi, (1.0 - theta) * phi).unwrap();
        let mut rng = crate::rng::substream(5, crate::rng::StreamTag::McValidate, 2);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
        let m = crate::num::mean(&draws);
        let v = crate::num::sample_var(&draws);
        let se_mean = (var / n as f64).sqrt();
        assert!((m - theta).abs() < 3.0 * se_mean, "mean {m}");
        // variance of the sample variance ~ 2V²/n for near-normal shapes
        let se_var = (2.0 * var * var / n as f64).sqrt();
        assert!((v - var).abs() < 5.0 * se_var, "var {v}");
    }

    #[test]
    fn dataset_rejects_incompatible_variance() {
        let err = AreaDataset::new(
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            vec![0.5, 0.3, 0.2, 0.4],
            vec![0.25, 0.001, 0.001, 0.001],
            vec![vec![1.0]; 4],
            vec![10.0; 4],
        );
        match err {
            Err(Error::NonPositivePhi(msg)) => assert!(msg.contains('a'), "{msg}"),
            other => panic!("expected NonPositivePhi, got {other:?}"),
        }
    }

    #[test]
    fn unconstrained_round_trip() {
        let data = toy_data(8);
        let fb = FbModel::new(data.clone(), PriorSpec::default());
        let params = FbParams {
            beta: vec![0.3, -1.2],
            sigma_v: 0.7,
            v: (0..8).map(|i| 0.1 * i as f64 - 0.4).collect(),
            p: 0.8,
            w: 0.25,
        };
        let x = fb.to_unconstrained(&params).unwrap();
        let back = fb.from_unconstrained(&x).unwrap();
        assert!((back.sigma_v - params.sigma_v).abs() < 1e-12);
        assert!((back.p - params.p).abs() < 1e-12);
        assert!((back.w - params.w).abs() < 1e-12);
        assert_eq!(back.beta, params.beta);
        assert_eq!(back.v, params.v);
        // named anchor points
        assert!((fb.to_unconstrained(&FbParams { sigma_v: 1.0, ..params.clone() }).unwrap()[2]).abs() < 1e-15);
        let mid = FbParams { p: 0.5, ..params };
        let xm = fb.to_unconstrained(&mid).unwrap();
        assert!(xm[xm.len() - 2].abs() < 1e-12);
    }

    #[test]
    fn log_posterior_additive_in_domains() {
        let data = toy_data(8);
        let beta_m = BetaModel::new(data.clone(), PriorSpec::default());
        let params = BetaParams { beta: vec![0.1, 0.4], sigma_v: 0.5, v: vec![0.05; 8] };

        // dropping the last domain removes exactly its likelihood term
        let mut small = data.clone();
        small.domains.pop();
        small.y.pop();
        small.var.pop();
        small.x.pop();
        small.n_tilde.pop();
        let beta_s = BetaModel::new(small, PriorSpec::default());
        let params_s = BetaParams { beta: params.beta.clone(), sigma_v: 0.5, v: vec![0.05; 7] };

        let eta: f64 = data.x[7].iter().zip(&params.beta).map(|(x, b)| x * b).sum::<f64>() + 0.05;
        let ll_last = beta_log_likelihood(data.y[7], inv_logit(eta), data.var[7]).unwrap();
        let diff = beta_m.log_likelihood(&params) - beta_s.log_likelihood(&params_s);
        assert!((diff - ll_last).abs() < 1e-10);
    }

    #[test]
    fn fb_likelihood_at_small_w_matches_beta_with_same_theta() {
        let data = toy_data(8);
        let fb = FbModel::new(data.clone(), PriorSpec::default());
        let v: Vec<f64> = (0..8).map(|i| 0.02 * i as f64).collect();
        let params = FbParams { beta: vec![-1.0, 0.3], sigma_v: 0.5, v: v.clone(), p: 0.6, w: 1e-9 };
        let fb_ll = fb.log_likelihood(&params);

        let beta_m = BetaModel::new(data.clone(), PriorSpec::default());
        let bparams = BetaParams { beta: params.beta.clone(), sigma_v: 0.5, v };
        let beta_ll = beta_m.log_likelihood(&bparams);
        assert!((fb_ll - beta_ll).abs() < 1e-5, "{fb_ll} vs {beta_ll}");
    }

    #[test]
    fn posterior_rejects_gracefully() {
        let data = toy_data(8);
        let fb = FbModel::new(data, PriorSpec::default());
        let dim = fb.dim();
        // huge intercept pushes lambda2 -> 1 and the likelihood out of support
        let mut x = vec![0.0; dim];
        x[0] = 60.0;
        assert_eq!(fb.log_posterior(&x), f64::NEG_INFINITY);
    }

    #[test]
    fn compatibility_check_flags_high_estimates() {
        let mut data = toy_data(8);
        data.y[3] = 0.98; // above the Theil threshold 60/62 for n_tilde = 60
        data.var[3] = 0.0016;
        assert!(check_compatibility(&data, IndexKind::RelativeTheil).is_err());
        assert!(check_compatibility(&data, IndexKind::Gini).is_ok());
    }
}
