//! Design-based simulation harness: repeatedly draw samples from a fixed
//! synthetic population, push them through the direct-estimation, bootstrap,
//! smoothing and model-fitting pipeline, and score every estimator against
//! the population index values.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{bootstrap_variance, draw_sample, DesignSpec, Population};
use crate::error::{Error, Result};
use crate::gvf::gvf_fit;
use crate::hb::{AreaDataset, BetaModel, FbModel, ModelKind, PriorSpec};
use crate::indices::{index_iid, IndexSpec};
use crate::mcmc::{run_sampler, summarize, SamplerConfig};
use crate::num;
use crate::rng::mix;
use crate::survey::{adjusted_index, ht_aggregates};

/// Simulation scenario: sampling rate, optionally with extreme-value
/// treatment (per-domain winsorization of the population tails).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Rate3,
    Rate5,
    Evt,
}

impl Scenario {
    pub fn sampling_rate(self) -> f64 {
        match self {
            Scenario::Rate3 => 0.03,
            Scenario::Rate5 | Scenario::Evt => 0.05,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Scenario::Rate3 => "3%",
            Scenario::Rate5 => "5%",
            Scenario::Evt => "evt",
        }
    }
}

/// Harness settings (the population is supplied separately).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    /// number of simulation replicates S
    pub replicates: usize,
    pub index: IndexSpec,
    pub models: Vec<ModelKind>,
    pub scenario: Scenario,
    pub seed: u64,
    pub bootstrap_b: usize,
    pub psus_per_stratum: usize,
    pub sampler: SamplerConfig,
    pub priors: PriorSpec,
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::InvalidConfig(format!("need S >= 2 replicates, got {}", self.replicates)));
        }
        if self.bootstrap_b < 2 {
            return Err(Error::InvalidConfig(format!("need B >= 2, got {}", self.bootstrap_b)));
        }
        self.index.validate()
    }
}

/// Frequentist metrics for one domain under one estimator.
#[derive(Debug, Clone, Serialize)]
pub struct DomainMetrics {
    pub domain: String,
    pub rb: f64,
    pub arb: f64,
    pub mse: f64,
    pub rmse: f64,
    /// frequentist coverage of the 95% credible interval; None when the
    /// estimator carries no intervals or no replicate produced one
    pub coverage: Option<f64>,
    pub reps_used: usize,
}

/// Aggregate metrics for one estimator.
#[derive(Debug, Clone, Serialize)]
pub struct EstimatorMetrics {
    pub estimator: String,
    pub per_domain: Vec<DomainMetrics>,
    pub avg_rb: f64,
    pub avg_arb: f64,
    pub avg_mse: f64,
    pub avg_rmse: f64,
    pub avg_coverage: Option<f64>,
    /// √(Σ MSE_direct / Σ MSE_est); 1 for the direct estimator by definition
    pub aeff: f64,
    /// share of replicates dropped for non-convergence (models only)
    pub nonconvergence_rate: f64,
}

/// Full simulation output.
#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub scenario: Scenario,
    pub index_label: String,
    pub domains: Vec<String>,
    pub theta_true: Vec<f64>,
    /// average realized domain sample size across replicates
    pub n_tilde_mean: Vec<f64>,
    pub estimators: Vec<EstimatorMetrics>,
    /// replicates where the sample itself could not be drawn or scored
    pub failed_replicates: usize,
    pub replicates: usize,
}

/// Exact per-domain metric formulas from aligned replicate arrays.
///
/// `estimates[s][d]` may be None when a replicate failed for that domain;
/// metrics average over the available replicates.
pub fn compute_metrics(
    domains: &[String],
    theta_true: &[f64],
    estimates: &[Vec<Option<f64>>],
    intervals: Option<&[Vec<Option<(f64, f64)>>]>,
) -> Result<Vec<DomainMetrics>> {
    let d = theta_true.len();
    if domains.len() != d {
        return Err(Error::LengthMismatch("domains vs theta_true".into()));
    }
    for row in estimates {
        if row.len() != d {
            return Err(Error::LengthMismatch("estimates row width".into()));
        }
    }
    if let Some(iv) = intervals {
        if iv.len() != estimates.len() || iv.iter().any(|row| row.len() != d) {
            return Err(Error::LengthMismatch("intervals shape".into()));
        }
    }
    let mut out = Vec::with_capacity(d);
    for j in 0..d {
        let th = theta_true[j];
        let vals: Vec<f64> = estimates.iter().filter_map(|row| row[j]).collect();
        let reps_used = vals.len();
        let (rb, mse) = if reps_used == 0 {
            (f64::NAN, f64::NAN)
        } else {
            let rb = vals.iter().map(|e| e / th - 1.0).sum::<f64>() / reps_used as f64;
            let mse = vals.iter().map(|e| (e - th) * (e - th)).sum::<f64>() / reps_used as f64;
            (rb, mse)
        };
        let coverage = intervals.and_then(|iv| {
            let hits: Vec<f64> = iv
                .iter()
                .filter_map(|row| row[j])
                .map(|(lo, hi)| (th >= lo && th <= hi) as u8 as f64)
                .collect();
            (!hits.is_empty()).then(|| num::mean(&hits))
        });
        out.push(DomainMetrics {
            domain: domains[j].clone(),
            rb,
            arb: rb.abs(),
            mse,
            rmse: mse / (th * th),
            coverage,
            reps_used,
        });
    }
    Ok(out)
}

fn aggregate(
    name: &str,
    per_domain: Vec<DomainMetrics>,
    mse_direct_sum: f64,
    nonconvergence_rate: f64,
) -> EstimatorMetrics {
    let ok: Vec<&DomainMetrics> = per_domain.iter().filter(|m| m.reps_used > 0).collect();
    let avg = |f: &dyn Fn(&DomainMetrics) -> f64| -> f64 {
        if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().map(|m| f(m)).sum::<f64>() / ok.len() as f64
        }
    };
    let covs: Vec<f64> = ok.iter().filter_map(|m| m.coverage).collect();
    let mse_sum: f64 = ok.iter().map(|m| m.mse).sum();
    EstimatorMetrics {
        estimator: name.to_string(),
        avg_rb: avg(&|m| m.rb),
        avg_arb: avg(&|m| m.arb),
        avg_mse: avg(&|m| m.mse),
        avg_rmse: avg(&|m| m.rmse),
        avg_coverage: (!covs.is_empty()).then(|| num::mean(&covs)),
        aeff: (mse_direct_sum / mse_sum).sqrt(),
        nonconvergence_rate,
        per_domain,
    }
}

/// Standardized covariate rows [1, coarsened-index] computed from the
/// population itself: incomes are collapsed onto `classes` pooled quantile
/// classes (class means as representative values) and the index recomputed
/// per domain on the coarsened data, mimicking register-based auxiliaries.
pub fn coarse_index_covariates(pop: &Population, spec: &IndexSpec, classes: usize) -> Result<Vec<Vec<f64>>> {
    let mut all: Vec<f64> = pop.units.iter().map(|u| u.income).collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = classes.max(2);
    let bounds: Vec<f64> = (1..k).map(|i| num::quantile_sorted(&all, i as f64 / k as f64)).collect();
    let class_of = |z: f64| bounds.partition_point(|b| *b < z);
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for &z in &all {
        let c = class_of(z);
        sums[c] += z;
        counts[c] += 1;
    }
    let reps: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
        .collect();
    let domains = pop.domains();
    let mut raw = Vec::with_capacity(domains.len());
    for d in &domains {
        let coarse: Vec<f64> = pop
            .units
            .iter()
            .filter(|u| &u.domain_id == d)
            .map(|u| reps[class_of(u.income)])
            .collect();
        raw.push(index_iid(spec, &coarse)?);
    }
    let mean = num::mean(&raw);
    let sd = num::sample_var(&raw).sqrt();
    if !(sd > 0.0) {
        return Err(Error::SingularFit("coarse covariate has zero variance".into()));
    }
    Ok(raw.iter().map(|x| vec![1.0, (x - mean) / sd]).collect())
}

struct ModelOutcome {
    estimates: Vec<Option<f64>>,
    intervals: Vec<Option<(f64, f64)>>,
    converged: bool,
}

struct ReplicateOutcome {
    direct: Vec<Option<f64>>,
    n_tilde: Vec<f64>,
    models: Vec<Option<ModelOutcome>>,
}

/// Run the design-based simulation: S samples from the (scenario-treated)
/// population, direct estimation with bias correction, bootstrap + GVF
/// variance smoothing and one MCMC fit per model per replicate. Population
/// index values are the iid estimators over each full domain population.
/// Replicate failures are counted and excluded, never silent.
pub fn run_design_simulation(pop: &Population, cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    let pop_used = match cfg.scenario {
        Scenario::Evt => pop.winsorized(0.005, 0.995),
        _ => pop.clone(),
    };
    let domains = pop_used.domains();
    let theta_true: Vec<f64> = domains
        .iter()
        .map(|d| index_iid(&cfg.index, &pop_used.domain_incomes(d)))
        .collect::<Result<_>>()?;
    let covariates = coarse_index_covariates(&pop_used, &cfg.index, 15)?;

    let outcomes: Vec<ReplicateOutcome> = (0..cfg.replicates)
        .into_par_iter()
        .map(|s| run_replicate(&pop_used, cfg, &domains, &covariates, s as u64))
        .collect();

    let failed_replicates = outcomes
        .iter()
        .filter(|o| o.direct.iter().all(|e| e.is_none()))
        .count();

    let n_tilde_mean: Vec<f64> = (0..domains.len())
        .map(|j| {
            let sizes: Vec<f64> =
                outcomes.iter().map(|o| o.n_tilde[j]).filter(|v| v.is_finite()).collect();
            if sizes.is_empty() {
                f64::NAN
            } else {
                num::mean(&sizes)
            }
        })
        .collect();

    let direct_est: Vec<Vec<Option<f64>>> = outcomes.iter().map(|o| o.direct.clone()).collect();
    let direct_metrics = compute_metrics(&domains, &theta_true, &direct_est, None)?;
    let mse_direct_sum: f64 =
        direct_metrics.iter().filter(|m| m.reps_used > 0).map(|m| m.mse).sum();

    let mut estimators = vec![aggregate("direct", direct_metrics, mse_direct_sum, 0.0)];
    for (mi, model) in cfg.models.iter().enumerate() {
        let mut est: Vec<Vec<Option<f64>>> = Vec::with_capacity(cfg.replicates);
        let mut ivs: Vec<Vec<Option<(f64, f64)>>> = Vec::with_capacity(cfg.replicates);
        let mut nonconverged = 0usize;
        let mut attempted = 0usize;
        for o in &outcomes {
            match &o.models[mi] {
                Some(m) => {
                    attempted += 1;
                    if m.converged {
                        est.push(m.estimates.clone());
                        ivs.push(m.intervals.clone());
                    } else {
                        nonconverged += 1;
                    }
                }
                None => {}
            }
        }
        let per_domain = compute_metrics(&domains, &theta_true, &est, Some(&ivs))?;
        let rate = if attempted == 0 { f64::NAN } else { nonconverged as f64 / attempted as f64 };
        let name = match model {
            ModelKind::Beta => "beta",
            ModelKind::Fb => "fb",
        };
        estimators.push(aggregate(name, per_domain, mse_direct_sum, rate));
    }

    Ok(SimReport {
        scenario: cfg.scenario,
        index_label: cfg.index.label(),
        domains,
        theta_true,
        n_tilde_mean,
        estimators,
        failed_replicates,
        replicates: cfg.replicates,
    })
}

fn run_replicate(
    pop: &Population,
    cfg: &SimConfig,
    domains: &[String],
    covariates: &[Vec<f64>],
    s: u64,
) -> ReplicateOutcome {
    let n_dom = domains.len();
    let empty = ReplicateOutcome {
        direct: vec![None; n_dom],
        n_tilde: vec![f64::NAN; n_dom],
        models: cfg.models.iter().map(|_| None).collect(),
    };
    let design = DesignSpec {
        sampling_rate: cfg.scenario.sampling_rate(),
        psus_per_stratum: cfg.psus_per_stratum,
        seed: mix(cfg.seed, 0x5a0000 + s),
    };
    let sample = match draw_sample(pop, &design) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("replicate {s}: sample draw failed: {e}");
            return empty;
        }
    };

    let mut direct = vec![None; n_dom];
    let mut n_tilde = vec![f64::NAN; n_dom];
    for (j, d) in domains.iter().enumerate() {
        if let Ok(a) = ht_aggregates(&sample, d) {
            n_tilde[j] = a.n_tilde as f64;
        }
        match adjusted_index(&sample, d, &cfg.index) {
            Ok(e) => direct[j] = Some(e.value),
            Err(e) => log::debug!("replicate {s}, domain {d}: direct estimate failed: {e}"),
        }
    }

    let boot = match bootstrap_variance(&sample, &cfg.index, cfg.bootstrap_b, mix(cfg.seed, 0xb0000 + s)) {
        Ok(b) => b,
        Err(e) => {
            log::warn!("replicate {s}: bootstrap failed: {e}");
            return ReplicateOutcome { direct, n_tilde, models: cfg.models.iter().map(|_| None).collect() };
        }
    };

    // smoothing over domains with usable inputs
    let mut fit_idx = Vec::new();
    let mut ys = Vec::new();
    let mut vb = Vec::new();
    let mut nt = Vec::new();
    for (j, d) in domains.iter().enumerate() {
        if let (Some(y), Some(v)) = (direct[j], boot.variances.get(d)) {
            if n_tilde[j].is_finite() && n_tilde[j] > 0.0 && *v > 0.0 {
                fit_idx.push(j);
                ys.push(y.clamp(1e-6, 1.0 - 1e-6));
                vb.push(*v);
                nt.push(n_tilde[j]);
            }
        }
    }
    let gvf = match gvf_fit(&ys, &vb, &nt, &cfg.index) {
        Ok(g) => g,
        Err(e) => {
            log::warn!("replicate {s}: gvf failed: {e}");
            return ReplicateOutcome { direct, n_tilde, models: cfg.models.iter().map(|_| None).collect() };
        }
    };

    // model rows: smoothed variance must stay below y(1-y)
    let mut rows = Vec::new();
    for (k, &j) in fit_idx.iter().enumerate() {
        if gvf.smoothed[k] > 0.0 && gvf.smoothed[k] < ys[k] * (1.0 - ys[k]) {
            rows.push((j, k));
        }
    }
    let models = cfg
        .models
        .iter()
        .enumerate()
        .map(|(mi, model)| {
            if rows.len() < covariates[0].len() + 2 {
                return None;
            }
            let data = AreaDataset::new(
                rows.iter().map(|&(j, _)| domains[j].clone()).collect(),
                rows.iter().map(|&(_, k)| ys[k]).collect(),
                rows.iter().map(|&(_, k)| gvf.smoothed[k]).collect(),
                rows.iter().map(|&(j, _)| covariates[j].clone()).collect(),
                rows.iter().map(|&(_, k)| nt[k]).collect(),
            )
            .ok()?;
            let sampler = SamplerConfig {
                seed: mix(cfg.seed, 0xf00000 + s * 8 + mi as u64),
                ..cfg.sampler.clone()
            };
            let draws = match *model {
                ModelKind::Beta => run_sampler(&BetaModel::new(data, cfg.priors), &sampler),
                ModelKind::Fb => run_sampler(&FbModel::new(data, cfg.priors), &sampler),
            }
            .ok()?;
            let summary = summarize(&draws).ok()?;
            let mut estimates = vec![None; n_dom];
            let mut intervals = vec![None; n_dom];
            for (r, &(j, _)) in rows.iter().enumerate() {
                let th = &summary.theta[r];
                estimates[j] = Some(th.mean);
                intervals[j] = Some((th.q025, th.q975));
            }
            Some(ModelOutcome { estimates, intervals, converged: summary.converged })
        })
        .collect();

    ReplicateOutcome { direct, n_tilde, models }
}

/// Results CSV, one row per estimator:
/// `measure,scenario,estimator,arb_pct,rb_pct,rmse_pct,aeff,coverage_pct`.
pub fn write_results_csv<W: Write>(mut w: W, report: &SimReport) -> Result<()> {
    writeln!(w, "#ineq-sae/sim-results/v1")?;
    writeln!(w, "measure,scenario,estimator,arb_pct,rb_pct,rmse_pct,aeff,coverage_pct")?;
    for e in &report.estimators {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            report.index_label,
            report.scenario.label(),
            e.estimator,
            100.0 * e.avg_arb,
            100.0 * e.avg_rb,
            100.0 * e.avg_rmse,
            e.aeff,
            e.avg_coverage.map(|c| (100.0 * c).to_string()).unwrap_or_default(),
        )?;
    }
    Ok(())
}

/// Per-domain results (inputs for error and coverage-versus-size figures):
/// `estimator,domain,theta_true,rb,mse,rmse,coverage,reps_used`.
pub fn write_domain_metrics_csv<W: Write>(mut w: W, report: &SimReport) -> Result<()> {
    writeln!(w, "#ineq-sae/sim-domains/v1")?;
    writeln!(w, "estimator,domain,theta_true,n_tilde_mean,rb,mse,rmse,coverage,reps_used")?;
    for e in &report.estimators {
        for ((m, th), nt) in e.per_domain.iter().zip(&report.theta_true).zip(&report.n_tilde_mean) {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                e.estimator,
                m.domain,
                th,
                nt,
                m.rb,
                m.mse,
                m.rmse,
                m.coverage.map(|c| c.to_string()).unwrap_or_default(),
                m.reps_used
            )?;
        }
    }
    Ok(())
}
