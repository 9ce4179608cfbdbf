//! Design-weighted inequality estimators and their bias-corrected versions,
//! together with the auxiliary moment variances/covariances the corrections
//! require.
//!
//! Moment terms (V[μ̂], Cov[μ̂, γ̂], ...) are estimated by a stratified
//! delete-one-PSU jackknife, which degenerates to the delete-one-unit
//! jackknife under a single-stage design where every unit is its own PSU.
//! Strata represented by a single PSU fall back to households as variance
//! units; failing that the jackknife is infeasible and an error is raised.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::indices::{IndexKind, IndexSpec};

/// One microdata record.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyUnit {
    pub unit_id: String,
    pub household_id: String,
    pub domain_id: String,
    pub stratum_id: String,
    pub psu_id: String,
    pub weight: f64,
    pub income: f64,
}

/// A validated complex-survey sample.
#[derive(Debug, Clone)]
pub struct SurveySample {
    units: Vec<SurveyUnit>,
    domain_index: BTreeMap<String, Vec<usize>>,
}

impl SurveySample {
    pub fn new(units: Vec<SurveyUnit>) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::EmptyOrDegenerate("sample has no units".into()));
        }
        let mut domain_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, u) in units.iter().enumerate() {
            if !u.weight.is_finite() || u.weight < 0.0 {
                return Err(Error::InvalidValue {
                    line: i + 1,
                    msg: format!("weight {} for unit {}", u.weight, u.unit_id),
                });
            }
            if !u.income.is_finite() || u.income < 0.0 {
                return Err(Error::InvalidValue {
                    line: i + 1,
                    msg: format!("income {} for unit {}", u.income, u.unit_id),
                });
            }
            if u.domain_id.is_empty() || u.stratum_id.is_empty() || u.psu_id.is_empty() {
                return Err(Error::InvalidValue {
                    line: i + 1,
                    msg: format!("empty identifier for unit {}", u.unit_id),
                });
            }
            domain_index.entry(u.domain_id.clone()).or_default().push(i);
        }
        Ok(Self { units, domain_index })
    }

    pub fn units(&self) -> &[SurveyUnit] {
        &self.units
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.domain_index.keys().map(|s| s.as_str())
    }

    pub fn domain_unit_indices(&self, domain: &str) -> Result<&[usize]> {
        self.domain_index
            .get(domain)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::EmptyDomain(domain.to_string()))
    }
}

/// Horvitz–Thompson style aggregates for one domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HtAggregates {
    /// N̂ = Σ w_k
    pub n_hat: f64,
    /// μ̂ = Σ w_k z_k / N̂
    pub mu_hat: f64,
    /// ñ = #{w_k ≠ 0}
    pub n_tilde: usize,
}

/// Jackknife variance/covariance estimates of the auxiliary moments entering
/// the bias corrections. The `varrho` entries refer to the ε the moments were
/// computed with; log-based entries are NaN when the domain contains zero
/// incomes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimates {
    pub var_mu: f64,
    pub var_gamma: f64,
    pub cov_mu_gamma: f64,
    pub var_varpi: f64,
    pub cov_mu_varpi: f64,
    pub var_varrho: f64,
    pub cov_varrho_mu: f64,
    pub var_iota: f64,
    pub cov_iota_mu: f64,
}

impl MomentEstimates {
    /// All-zero moments: corrections vanish.
    pub fn zero() -> Self {
        Self {
            var_mu: 0.0,
            var_gamma: 0.0,
            cov_mu_gamma: 0.0,
            var_varpi: 0.0,
            cov_mu_varpi: 0.0,
            var_varrho: 0.0,
            cov_varrho_mu: 0.0,
            var_iota: 0.0,
            cov_iota_mu: 0.0,
        }
    }
}

/// A bias-corrected estimate. Raw values are returned unclamped; values
/// escaping [0, 1] (possible in tiny samples) are flagged, not clipped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjustedEstimate {
    pub value: f64,
    pub out_of_range: bool,
}

impl AdjustedEstimate {
    fn from_value(value: f64) -> Self {
        Self { value, out_of_range: !(0.0..=1.0).contains(&value) }
    }
}

// ---------------------------------------------------------------------------
// Domain frame: per-domain numeric view, sorted by income, reused by the
// jackknife and by the bootstrap where only weights change per replicate.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub(crate) struct DomainFrame {
    /// incomes ascending
    pub z: Vec<f64>,
    /// ln z aligned with `z` (NaN at zeros)
    pub logz: Vec<f64>,
    /// base weights aligned with `z`
    pub w: Vec<f64>,
    /// variance group of each unit (ids from the sample-wide structure)
    pub group_of: Vec<u32>,
    /// stratum of each unit
    pub stratum_of: Vec<u32>,
    pub has_zero: bool,
}

/// Sample-wide variance-unit structure: groups are PSUs, except in strata
/// represented by a single PSU where households take over as variance units.
#[derive(Debug, Clone)]
pub(crate) struct SampleStructure {
    pub strata: Vec<String>,
    /// group -> stratum
    pub group_stratum: Vec<u32>,
    /// stratum -> its group ids
    pub stratum_groups: Vec<Vec<u32>>,
    /// unit index -> group id
    pub unit_group: Vec<u32>,
}

impl SampleStructure {
    pub(crate) fn build(s: &SurveySample) -> SampleStructure {
        let mut strata: Vec<String> =
            s.units.iter().map(|u| u.stratum_id.clone()).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        strata.sort();
        let stratum_idx: BTreeMap<&str, u32> =
            strata.iter().enumerate().map(|(i, s)| (s.as_str(), i as u32)).collect();

        // count PSUs per stratum to decide the variance-unit level
        let mut psus_per_stratum: Vec<std::collections::BTreeSet<&str>> = vec![Default::default(); strata.len()];
        for u in &s.units {
            psus_per_stratum[stratum_idx[u.stratum_id.as_str()] as usize].insert(u.psu_id.as_str());
        }
        let use_households: Vec<bool> = psus_per_stratum.iter().map(|p| p.len() < 2).collect();

        let mut group_ids: BTreeMap<(u32, &str), u32> = BTreeMap::new();
        let mut group_stratum: Vec<u32> = Vec::new();
        let mut unit_group = Vec::with_capacity(s.units.len());
        for u in &s.units {
            let h = stratum_idx[u.stratum_id.as_str()];
            let key: (u32, &str) = if use_households[h as usize] {
                (h, u.household_id.as_str())
            } else {
                (h, u.psu_id.as_str())
            };
            let next = group_ids.len() as u32;
            let gid = *group_ids.entry(key).or_insert_with(|| {
                group_stratum.push(h);
                next
            });
            unit_group.push(gid);
        }
        let mut stratum_groups = vec![Vec::new(); strata.len()];
        for (gid, &h) in group_stratum.iter().enumerate() {
            stratum_groups[h as usize].push(gid as u32);
        }
        SampleStructure { strata, group_stratum, stratum_groups, unit_group }
    }
}

impl DomainFrame {
    pub(crate) fn build(s: &SurveySample, structure: &SampleStructure, domain: &str) -> Result<DomainFrame> {
        let idx = s.domain_unit_indices(domain)?;
        let mut order: Vec<usize> = idx.to_vec();
        order.sort_by(|&a, &b| {
            s.units[a]
                .income
                .partial_cmp(&s.units[b].income)
                .expect("validated incomes are finite")
        });
        let mut frame = DomainFrame {
            z: Vec::with_capacity(order.len()),
            logz: Vec::with_capacity(order.len()),
            w: Vec::with_capacity(order.len()),
            group_of: Vec::with_capacity(order.len()),
            stratum_of: Vec::with_capacity(order.len()),
            has_zero: false,
        };
        for &i in &order {
            let u = &s.units[i];
            frame.z.push(u.income);
            frame.logz.push(u.income.ln());
            frame.w.push(u.weight);
            frame.group_of.push(structure.unit_group[i]);
            frame.stratum_of.push(structure.group_stratum[structure.unit_group[i] as usize]);
            if u.income == 0.0 {
                frame.has_zero = true;
            }
        }
        if frame.w.iter().all(|&w| w == 0.0) {
            return Err(Error::EmptyDomain(format!("{domain}: all weights zero")));
        }
        Ok(frame)
    }

    /// z^{1−ε} aligned with `z`.
    pub(crate) fn zpow(&self, epsilon: f64) -> Vec<f64> {
        self.z.iter().map(|&z| z.powf(1.0 - epsilon)).collect()
    }
}

/// All weighted aggregates of one (replicate-weighted) domain in one pass
/// over income-sorted units.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Aggregates {
    pub n_hat: f64,
    pub n_tilde: usize,
    pub mu: f64,
    /// γ̂ = Σ w z (N̂_i − w/2) / N̂² with N̂_i the running cumulated weight
    pub gamma: f64,
    /// ϖ̂ = Σ w z ln z / N̂
    pub varpi: f64,
    /// ϱ̂ = Σ w z^{1−ε} / N̂
    pub varrho: f64,
    /// ι̂ = Σ w ln z / N̂
    pub iota: f64,
}

pub(crate) fn aggregates(frame: &DomainFrame, w: &[f64], zpow: &[f64]) -> Result<Aggregates> {
    let mut n_hat = 0.0;
    let mut n_tilde = 0usize;
    let mut swz = 0.0;
    let mut sgamma = 0.0;
    let mut svarpi = 0.0;
    let mut svarrho = 0.0;
    let mut siota = 0.0;
    let mut cum = 0.0;
    for i in 0..frame.z.len() {
        let wi = w[i];
        if wi == 0.0 {
            continue;
        }
        let zi = frame.z[i];
        cum += wi;
        n_hat += wi;
        n_tilde += 1;
        swz += wi * zi;
        sgamma += wi * zi * (cum - wi / 2.0);
        if !frame.has_zero {
            svarpi += wi * zi * frame.logz[i];
            siota += wi * frame.logz[i];
        }
        svarrho += wi * zpow[i];
    }
    if n_hat <= 0.0 {
        return Err(Error::EmptyOrDegenerate("replicate domain has no weight".into()));
    }
    let mu = swz / n_hat;
    let nan_if_zero = if frame.has_zero { f64::NAN } else { 1.0 };
    Ok(Aggregates {
        n_hat,
        n_tilde,
        mu,
        gamma: sgamma / (n_hat * n_hat),
        varpi: svarpi / n_hat * nan_if_zero,
        varrho: svarrho / n_hat,
        iota: siota / n_hat * nan_if_zero,
    })
}

// Estimator formulas from aggregates ----------------------------------------

fn gini_from(agg: &Aggregates) -> Result<f64> {
    if agg.n_tilde < 2 {
        return Err(Error::EmptyOrDegenerate(format!("gini needs n_tilde >= 2, got {}", agg.n_tilde)));
    }
    if agg.mu <= 0.0 {
        return Err(Error::DegenerateMean(format!("mu_hat = {}", agg.mu)));
    }
    Ok(2.0 * agg.gamma / agg.mu - 1.0)
}

fn theil_weighted_from(agg: &Aggregates) -> f64 {
    // Σ w (z/μ̂) ln(z/μ̂) / N̂ = (ϖ̂ − μ̂ ln μ̂)/μ̂
    (agg.varpi - agg.mu * agg.mu.ln()) / agg.mu
}

fn atkinson_weighted_from(agg: &Aggregates, epsilon: f64) -> f64 {
    if epsilon == 0.0 {
        0.0
    } else if epsilon == 1.0 {
        1.0 - agg.iota.exp() / agg.mu
    } else {
        1.0 - agg.varrho.powf(1.0 / (1.0 - epsilon)) / agg.mu
    }
}

fn gini_adjusted_from(agg: &Aggregates, m: &MomentEstimates) -> Result<AdjustedEstimate> {
    if agg.n_tilde <= 2 {
        return Err(Error::TooFewEffectiveUnits(agg.n_tilde));
    }
    let gw = gini_from(agg)?;
    let nt = agg.n_tilde as f64;
    let mu = agg.mu;
    let corr = gw - 2.0 * agg.gamma / mu.powi(3) * m.var_mu + 2.0 / mu.powi(2) * m.cov_mu_gamma;
    Ok(AdjustedEstimate::from_value(nt / (nt - 2.0) * corr))
}

fn theil_adjusted_from(agg: &Aggregates, m: &MomentEstimates, pop_n: f64) -> Result<AdjustedEstimate> {
    if pop_n < 2.0 {
        return Err(Error::DomainError(format!("population size must be >= 2, got {pop_n}")));
    }
    let mu = agg.mu;
    let t_adj = theil_weighted_from(agg) + m.cov_mu_varpi / mu.powi(2)
        - (agg.varpi / mu.powi(3) + 1.0 / (2.0 * mu.powi(2))) * m.var_mu;
    Ok(AdjustedEstimate::from_value(t_adj / pop_n.ln()))
}

fn atkinson_adjusted_from(agg: &Aggregates, epsilon: f64, m: &MomentEstimates) -> Result<AdjustedEstimate> {
    let aw = atkinson_weighted_from(agg, epsilon);
    let mu = agg.mu;
    let value = if epsilon == 1.0 {
        aw + (1.0 - aw) * (m.var_iota / 2.0 + m.var_mu / mu.powi(2) - m.cov_iota_mu / mu)
    } else if epsilon == 0.0 {
        0.0
    } else {
        let one_m = 1.0 - aw;
        aw + one_m
            * (epsilon * m.var_varrho / (2.0 * (1.0 - epsilon).powi(2)) * (mu * one_m).powf(2.0 * epsilon - 2.0)
                + m.var_mu / mu.powi(2)
                - m.cov_varrho_mu / ((1.0 - epsilon) * mu.powf(2.0 - epsilon)) * one_m.powf(epsilon - 1.0))
    };
    Ok(AdjustedEstimate::from_value(value))
}

fn require_positive_incomes(frame: &DomainFrame) -> Result<()> {
    if frame.has_zero {
        return Err(Error::NonPositiveIncome("domain contains zero incomes".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Jackknife over variance groups
// ---------------------------------------------------------------------------

/// Delete-one-group replicate aggregates and the stratified jackknife
/// moment estimates.
///
/// `active` holds, per stratum, the variance groups carrying weight in the
/// full sample under the current weighting: deleting a group reweights its
/// whole stratum, so out-of-domain deletions still perturb the domain
/// estimate whenever the domain spans several strata. `strict` controls
/// whether degenerate strata raise errors (public entry point) or are
/// skipped (inside bootstrap replicates, where a resample can concentrate
/// weight on a single group).
pub(crate) fn jackknife_moments(
    frame: &DomainFrame,
    structure: &SampleStructure,
    w: &[f64],
    active: &[Vec<u32>],
    epsilon: f64,
    strict: bool,
) -> Result<MomentEstimates> {
    let zpow = frame.zpow(epsilon);
    let full = aggregates(frame, w, &zpow)?;
    if full.n_tilde < 2 {
        return Err(Error::EmptyOrDegenerate(format!("n_tilde = {} < 2", full.n_tilde)));
    }

    // strata intersecting the domain with nonzero weight
    let mut relevant: Vec<u32> = frame
        .stratum_of
        .iter()
        .zip(w)
        .filter(|(_, &wi)| wi != 0.0)
        .map(|(&h, _)| h)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    relevant.sort_unstable();

    let mut acc = [[0.0f64; 5]; 5]; // covariance accumulator over (mu, gamma, varpi, varrho, iota)
    let mut reps: Vec<[f64; 5]> = Vec::new();
    let mut w_rep = w.to_vec();

    for &h in &relevant {
        let groups = &active[h as usize];
        let g_total = groups.len();
        if g_total < 2 {
            if strict {
                return Err(Error::InsufficientPsus(structure.strata[h as usize].clone()));
            }
            continue;
        }
        let factor = g_total as f64 / (g_total as f64 - 1.0);
        reps.clear();
        for &del in groups {
            // reweight stratum h: deleted group to 0, siblings scaled up
            for i in 0..frame.z.len() {
                if frame.stratum_of[i] == h {
                    w_rep[i] = if frame.group_of[i] == del { 0.0 } else { w[i] * factor };
                }
            }
            match aggregates(frame, &w_rep, &zpow) {
                Ok(a) => reps.push([a.mu, a.gamma, a.varpi, a.varrho, a.iota]),
                Err(_) => {
                    // deletion emptied the domain
                    if strict {
                        return Err(Error::InsufficientPsus(format!(
                            "{}: removing a variance unit empties the domain",
                            structure.strata[h as usize]
                        )));
                    }
                }
            }
            for i in 0..frame.z.len() {
                if frame.stratum_of[i] == h {
                    w_rep[i] = w[i];
                }
            }
        }
        let v = reps.len();
        if v < 2 {
            continue;
        }
        let mut mean_h = [0.0f64; 5];
        for r in &reps {
            for k in 0..5 {
                mean_h[k] += r[k];
            }
        }
        for k in 0..5 {
            mean_h[k] /= v as f64;
        }
        let scale = (v as f64 - 1.0) / v as f64;
        for r in &reps {
            for a in 0..5 {
                for b in a..5 {
                    acc[a][b] += scale * (r[a] - mean_h[a]) * (r[b] - mean_h[b]);
                }
            }
        }
    }

    Ok(MomentEstimates {
        var_mu: acc[0][0],
        var_gamma: acc[1][1],
        cov_mu_gamma: acc[0][1],
        var_varpi: acc[2][2],
        cov_mu_varpi: acc[0][2],
        var_varrho: acc[3][3],
        cov_varrho_mu: acc[0][3],
        var_iota: acc[4][4],
        cov_iota_mu: acc[0][4],
    })
}

/// Variance groups carrying weight in the full sample under base weights,
/// listed per stratum.
pub(crate) fn active_groups(s: &SurveySample, structure: &SampleStructure) -> Vec<Vec<u32>> {
    let mut has_weight = vec![false; structure.group_stratum.len()];
    for (i, u) in s.units.iter().enumerate() {
        if u.weight != 0.0 {
            has_weight[structure.unit_group[i] as usize] = true;
        }
    }
    structure
        .stratum_groups
        .iter()
        .map(|gs| gs.iter().cloned().filter(|&g| has_weight[g as usize]).collect())
        .collect()
}

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

fn frame_for(s: &SurveySample, domain: &str) -> Result<(DomainFrame, SampleStructure)> {
    let structure = SampleStructure::build(s);
    let frame = DomainFrame::build(s, &structure, domain)?;
    Ok((frame, structure))
}

/// N̂, μ̂ and ñ for one domain.
pub fn ht_aggregates(s: &SurveySample, domain: &str) -> Result<HtAggregates> {
    let (frame, _) = frame_for(s, domain)?;
    let agg = aggregates(&frame, &frame.w, &frame.zpow(0.5))?;
    Ok(HtAggregates { n_hat: agg.n_hat, mu_hat: agg.mu, n_tilde: agg.n_tilde })
}

/// Design-weighted Gini: 2 Σ w z (N̂_i − w/2)/(N̂² μ̂) − 1 over income-sorted
/// units. The cumulated-weight form is invariant to the ordering of tied
/// incomes (the sum over a tie group is symmetric in its members) and equals
/// the average-rank iid estimator under unit weights.
pub fn gini_weighted(s: &SurveySample, domain: &str) -> Result<f64> {
    let (frame, _) = frame_for(s, domain)?;
    gini_from(&aggregates(&frame, &frame.w, &frame.zpow(0.5))?)
}

/// Bias-corrected Gini with the finite-sample factor ñ/(ñ−2).
pub fn gini_adjusted(s: &SurveySample, domain: &str, m: &MomentEstimates) -> Result<AdjustedEstimate> {
    let (frame, _) = frame_for(s, domain)?;
    gini_adjusted_from(&aggregates(&frame, &frame.w, &frame.zpow(0.5))?, m)
}

/// Design-weighted Relative Theil: the weighted Theil sum scaled by log of
/// the domain population size `pop_n`.
pub fn relative_theil_weighted(s: &SurveySample, domain: &str, pop_n: f64) -> Result<f64> {
    let (frame, _) = frame_for(s, domain)?;
    require_positive_incomes(&frame)?;
    if pop_n < 2.0 {
        return Err(Error::DomainError(format!("population size must be >= 2, got {pop_n}")));
    }
    let agg = aggregates(&frame, &frame.w, &frame.zpow(0.5))?;
    Ok(theil_weighted_from(&agg) / pop_n.ln())
}

/// Bias-corrected Relative Theil.
pub fn relative_theil_adjusted(
    s: &SurveySample,
    domain: &str,
    m: &MomentEstimates,
    pop_n: f64,
) -> Result<AdjustedEstimate> {
    let (frame, _) = frame_for(s, domain)?;
    require_positive_incomes(&frame)?;
    theil_adjusted_from(&aggregates(&frame, &frame.w, &frame.zpow(0.5))?, m, pop_n)
}

/// Design-weighted Atkinson index.
pub fn atkinson_weighted(s: &SurveySample, domain: &str, epsilon: f64) -> Result<f64> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::DomainError(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let (frame, _) = frame_for(s, domain)?;
    require_positive_incomes(&frame)?;
    let agg = aggregates(&frame, &frame.w, &frame.zpow(epsilon))?;
    Ok(atkinson_weighted_from(&agg, epsilon))
}

/// Bias-corrected Atkinson index; `m` must have been computed with the same ε.
pub fn atkinson_adjusted(
    s: &SurveySample,
    domain: &str,
    epsilon: f64,
    m: &MomentEstimates,
) -> Result<AdjustedEstimate> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::DomainError(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let (frame, _) = frame_for(s, domain)?;
    require_positive_incomes(&frame)?;
    atkinson_adjusted_from(&aggregates(&frame, &frame.w, &frame.zpow(epsilon))?, epsilon, m)
}

/// Delete-one-PSU jackknife estimates of every moment term used by the bias
/// corrections. ε enters through ϱ̂ = Σ w z^{1−ε}/N̂.
pub fn influence_moments(s: &SurveySample, domain: &str, epsilon: f64) -> Result<MomentEstimates> {
    let (frame, structure) = frame_for(s, domain)?;
    let active = active_groups(s, &structure);
    jackknife_moments(&frame, &structure, &frame.w.clone(), &active, epsilon, true)
}

/// Bias-corrected estimate for the index selected by `spec`, computing the
/// moment terms internally. Relative Theil scales by `spec.population_size`
/// when given, otherwise by round(N̂). Entropy-family indices have no
/// weighted estimator here.
pub fn adjusted_index(s: &SurveySample, domain: &str, spec: &IndexSpec) -> Result<AdjustedEstimate> {
    spec.validate()?;
    let (frame, structure) = frame_for(s, domain)?;
    let epsilon = match spec.kind {
        IndexKind::Atkinson => spec.epsilon.expect("validated"),
        _ => 0.5, // ϱ̂ moments unused by the other corrections
    };
    if matches!(spec.kind, IndexKind::RelativeTheil | IndexKind::Atkinson) {
        require_positive_incomes(&frame)?;
    }
    let active = active_groups(s, &structure);
    let w = frame.w.clone();
    let m = jackknife_moments(&frame, &structure, &w, &active, epsilon, true)?;
    let agg = aggregates(&frame, &w, &frame.zpow(epsilon))?;
    adjusted_from_aggregates(&agg, &m, spec)
}

pub(crate) fn adjusted_from_aggregates(
    agg: &Aggregates,
    m: &MomentEstimates,
    spec: &IndexSpec,
) -> Result<AdjustedEstimate> {
    match spec.kind {
        IndexKind::Gini => gini_adjusted_from(agg, m),
        IndexKind::RelativeTheil => {
            let pop_n = spec.population_size.map(|n| n as f64).unwrap_or_else(|| agg.n_hat.round());
            theil_adjusted_from(agg, m, pop_n)
        }
        IndexKind::Atkinson => atkinson_adjusted_from(agg, spec.epsilon.expect("validated"), m),
        IndexKind::GeneralizedEntropy | IndexKind::RelativeEntropy => Err(Error::UnsupportedIndex(
            "no complex-survey estimator for the entropy family beyond Relative Theil".into(),
        )),
    }
}

/// Uncorrected weighted estimate for `spec` (used for bias comparisons).
pub fn weighted_index(s: &SurveySample, domain: &str, spec: &IndexSpec) -> Result<f64> {
    spec.validate()?;
    match spec.kind {
        IndexKind::Gini => gini_weighted(s, domain),
        IndexKind::RelativeTheil => {
            let pop_n = spec
                .population_size
                .map(|n| n as f64)
                .unwrap_or_else(|| ht_aggregates(s, domain).map(|a| a.n_hat.round()).unwrap_or(f64::NAN));
            relative_theil_weighted(s, domain, pop_n)
        }
        IndexKind::Atkinson => atkinson_weighted(s, domain, spec.epsilon.expect("validated")),
        IndexKind::GeneralizedEntropy | IndexKind::RelativeEntropy => Err(Error::UnsupportedIndex(
            "no complex-survey estimator for the entropy family beyond Relative Theil".into(),
        )),
    }
}
