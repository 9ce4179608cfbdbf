//! Synthetic-population representation, stratified two-stage sampling and
//! rescaled bootstrap variance estimation.
//!
//! The sampler mirrors a stratified household survey: first-stage units
//! (PSUs) are drawn without replacement within strata, households within
//! selected PSUs at the second stage, and every member of a drawn household
//! enters the sample with the inverse-inclusion-probability weight. Take-all
//! strata are enumerated at stage one; their variance-bearing stage is the
//! household draw, so sampled units there carry household-level pseudo-PSU
//! ids and the bootstrap and jackknife treat all strata uniformly.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indices::{IndexKind, IndexSpec};
use crate::num;
use crate::rng::{substream, StreamTag};
use crate::survey::{
    active_groups, adjusted_from_aggregates, aggregates, jackknife_moments, DomainFrame,
    SampleStructure, SurveySample, SurveyUnit,
};

/// One population record.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationUnit {
    pub unit_id: String,
    pub household_id: String,
    pub domain_id: String,
    pub stratum_id: String,
    pub psu_id: String,
    pub income: f64,
}

/// A finite population with a designated set of take-all (self-representing)
/// strata.
#[derive(Debug, Clone)]
pub struct Population {
    pub units: Vec<PopulationUnit>,
    pub take_all_strata: BTreeSet<String>,
}

impl Population {
    pub fn new(units: Vec<PopulationUnit>, take_all_strata: BTreeSet<String>) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::EmptyOrDegenerate("population has no units".into()));
        }
        let mut psu_stratum: BTreeMap<&str, &str> = BTreeMap::new();
        let mut hh_psu: BTreeMap<&str, &str> = BTreeMap::new();
        for (i, u) in units.iter().enumerate() {
            if !u.income.is_finite() || u.income < 0.0 {
                return Err(Error::InvalidValue {
                    line: i + 1,
                    msg: format!("income {} for unit {}", u.income, u.unit_id),
                });
            }
            if u.unit_id.is_empty()
                || u.household_id.is_empty()
                || u.domain_id.is_empty()
                || u.stratum_id.is_empty()
                || u.psu_id.is_empty()
            {
                return Err(Error::InvalidValue { line: i + 1, msg: "empty identifier".into() });
            }
            if let Some(&s) = psu_stratum.get(u.psu_id.as_str()) {
                if s != u.stratum_id {
                    return Err(Error::InvalidValue {
                        line: i + 1,
                        msg: format!("psu {} appears in strata {} and {}", u.psu_id, s, u.stratum_id),
                    });
                }
            } else {
                psu_stratum.insert(&u.psu_id, &u.stratum_id);
            }
            if let Some(&p) = hh_psu.get(u.household_id.as_str()) {
                if p != u.psu_id {
                    return Err(Error::InvalidValue {
                        line: i + 1,
                        msg: format!("household {} appears in psus {} and {}", u.household_id, p, u.psu_id),
                    });
                }
            } else {
                hh_psu.insert(&u.household_id, &u.psu_id);
            }
        }
        Ok(Self { units, take_all_strata })
    }

    pub fn domains(&self) -> Vec<String> {
        self.units.iter().map(|u| u.domain_id.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Incomes of one domain.
    pub fn domain_incomes(&self, domain: &str) -> Vec<f64> {
        self.units.iter().filter(|u| u.domain_id == domain).map(|u| u.income).collect()
    }

    /// Parse from CSV with header
    /// `unit_id,household_id,domain,stratum,psu,income`. Lines starting with
    /// `#` are treated as comments (schema headers).
    pub fn from_csv<R: Read>(reader: R, take_all_strata: BTreeSet<String>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
        let expect = ["unit_id", "household_id", "domain", "stratum", "psu", "income"];
        let headers = rdr.headers()?.clone();
        let got: Vec<&str> = headers.iter().collect();
        if got != expect {
            return Err(Error::SchemaMismatch(format!(
                "population csv header {:?}, expected {:?}",
                got, expect
            )));
        }
        let mut units = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let income: f64 = rec[5]
                .parse()
                .map_err(|_| Error::InvalidValue { line, msg: format!("income `{}`", &rec[5]) })?;
            units.push(PopulationUnit {
                unit_id: rec[0].to_string(),
                household_id: rec[1].to_string(),
                domain_id: rec[2].to_string(),
                stratum_id: rec[3].to_string(),
                psu_id: rec[4].to_string(),
                income,
            });
        }
        Population::new(units, take_all_strata)
    }

    pub fn to_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "#ineq-sae/population/v1")?;
        writeln!(w, "unit_id,household_id,domain,stratum,psu,income")?;
        for u in &self.units {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                u.unit_id, u.household_id, u.domain_id, u.stratum_id, u.psu_id, u.income
            )?;
        }
        Ok(())
    }

    /// Cap incomes at per-domain quantiles (extreme-value treatment for the
    /// simulation scenarios).
    pub fn winsorized(&self, lower_q: f64, upper_q: f64) -> Population {
        let mut out = self.clone();
        for d in self.domains() {
            let mut z = self.domain_incomes(&d);
            z.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let lo = num::quantile_sorted(&z, lower_q);
            let hi = num::quantile_sorted(&z, upper_q);
            for u in out.units.iter_mut().filter(|u| u.domain_id == d) {
                u.income = u.income.clamp(lo, hi);
            }
        }
        out
    }
}

/// Two-stage stratified design parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignSpec {
    /// overall household sampling fraction, in (0, 1]
    pub sampling_rate: f64,
    /// PSUs drawn per non-take-all stratum
    pub psus_per_stratum: usize,
    pub seed: u64,
}

impl DesignSpec {
    fn validate(&self) -> Result<()> {
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "sampling_rate must lie in (0, 1], got {}",
                self.sampling_rate
            )));
        }
        if self.psus_per_stratum < 2 {
            return Err(Error::InvalidConfig(format!(
                "psus_per_stratum must be >= 2, got {}",
                self.psus_per_stratum
            )));
        }
        Ok(())
    }
}

fn srswor<'a, T, R: Rng>(items: &'a [T], m: usize, rng: &mut R) -> Vec<&'a T> {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    let (sel, _) = idx.partial_shuffle(rng, m);
    let mut sel: Vec<usize> = sel.to_vec();
    sel.sort_unstable();
    sel.into_iter().map(|i| &items[i]).collect()
}

/// Draw a stratified two-stage sample. Take-all strata are fully enumerated
/// at stage one and sampled at household level; elsewhere `psus_per_stratum`
/// PSUs are drawn without replacement and households within them at the rate
/// that yields the overall sampling fraction. Base weights are inverse
/// inclusion probabilities. Deterministic for a fixed `spec.seed`.
pub fn draw_sample(pop: &Population, spec: &DesignSpec) -> Result<SurveySample> {
    spec.validate()?;
    // stratum -> psu -> household -> unit indices, all ordered
    let mut tree: BTreeMap<&str, BTreeMap<&str, BTreeMap<&str, Vec<usize>>>> = BTreeMap::new();
    for (i, u) in pop.units.iter().enumerate() {
        tree.entry(&u.stratum_id)
            .or_default()
            .entry(&u.psu_id)
            .or_default()
            .entry(&u.household_id)
            .or_default()
            .push(i);
    }

    let mut rng = substream(spec.seed, StreamTag::SampleDraw, 0);
    let mut units = Vec::new();
    for (stratum, psus) in &tree {
        let take_all = pop.take_all_strata.contains(*stratum);
        let (selected, pi1): (Vec<&str>, f64) = if take_all {
            (psus.keys().cloned().collect(), 1.0)
        } else {
            if psus.len() < spec.psus_per_stratum {
                return Err(Error::InfeasibleDesign(format!(
                    "stratum {} has {} PSUs, {} requested",
                    stratum,
                    psus.len(),
                    spec.psus_per_stratum
                )));
            }
            let keys: Vec<&str> = psus.keys().cloned().collect();
            let sel = srswor(&keys, spec.psus_per_stratum, &mut rng).into_iter().cloned().collect();
            (sel, spec.psus_per_stratum as f64 / psus.len() as f64)
        };
        for psu in selected {
            let households = &psus[psu];
            let hh_rate = (spec.sampling_rate / pi1).min(1.0);
            let total = households.len();
            let n_hh = ((hh_rate * total as f64).round() as usize).clamp(1, total);
            let pi2 = n_hh as f64 / total as f64;
            let weight = 1.0 / (pi1 * pi2);
            let keys: Vec<&str> = households.keys().cloned().collect();
            for hh in srswor(&keys, n_hh, &mut rng) {
                for &i in &households[*hh] {
                    let u = &pop.units[i];
                    units.push(SurveyUnit {
                        unit_id: u.unit_id.clone(),
                        household_id: u.household_id.clone(),
                        domain_id: u.domain_id.clone(),
                        stratum_id: u.stratum_id.clone(),
                        // take-all strata: households carry the first-stage
                        // variance, so they become the variance PSUs
                        psu_id: if take_all { format!("hh:{}", u.household_id) } else { u.psu_id.clone() },
                        weight,
                        income: u.income,
                    });
                }
            }
        }
    }
    SurveySample::new(units)
}

/// Per-domain bootstrap variance of the bias-corrected estimator.
#[derive(Debug, Clone)]
pub struct BootstrapResult {
    /// domains with at least 2 usable replicates
    pub variances: BTreeMap<String, f64>,
    /// usable replicate count per domain
    pub used: BTreeMap<String, usize>,
    pub replicates: usize,
}

/// Rescaled (Rao–Wu) bootstrap: within each stratum resample n_h − 1 of its
/// n_h variance PSUs with replacement and rescale weights by t · n_h/(n_h−1);
/// recompute the bias-corrected index per domain per replicate and return
/// the replicate variance. Replicates use independent RNG substreams of
/// `seed` and are evaluated in parallel.
pub fn bootstrap_variance(
    s: &SurveySample,
    spec: &IndexSpec,
    b: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    spec.validate()?;
    if b < 2 {
        return Err(Error::InvalidConfig(format!("bootstrap needs B >= 2, got {b}")));
    }
    let structure = SampleStructure::build(s);
    let base_active = active_groups(s, &structure);
    for (h, groups) in base_active.iter().enumerate() {
        if groups.len() < 2 {
            return Err(Error::InsufficientPsus(structure.strata[h].clone()));
        }
    }

    let domains: Vec<String> = s.domains().map(|d| d.to_string()).collect();
    let mut frames = Vec::with_capacity(domains.len());
    let mut specs = Vec::with_capacity(domains.len());
    for d in &domains {
        let frame = DomainFrame::build(s, &structure, d)?;
        // pin the Relative Theil normalizer to the parent-sample size
        // estimate so every replicate scales by the same constant
        let mut ds = spec.clone();
        if ds.kind == IndexKind::RelativeTheil && ds.population_size.is_none() {
            let n_hat: f64 = frame.w.iter().sum();
            ds.population_size = Some(n_hat.round().max(2.0) as u64);
        }
        frames.push(frame);
        specs.push(ds);
    }
    let epsilon = spec.epsilon.unwrap_or(0.5);
    let n_groups = structure.group_stratum.len();

    let estimates: Vec<Vec<Option<f64>>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = substream(seed, StreamTag::Bootstrap, rep as u64);
            let mut mult = vec![0.0f64; n_groups];
            let mut active_rep: Vec<Vec<u32>> = Vec::with_capacity(base_active.len());
            for groups in &base_active {
                let n_h = groups.len();
                let scale = n_h as f64 / (n_h as f64 - 1.0);
                for _ in 0..(n_h - 1) {
                    let g = groups[rng.random_range(0..n_h)];
                    mult[g as usize] += scale;
                }
                active_rep.push(groups.iter().cloned().filter(|&g| mult[g as usize] > 0.0).collect());
            }
            frames
                .iter()
                .zip(&specs)
                .map(|(frame, dspec)| {
                    let w: Vec<f64> =
                        frame.w.iter().zip(&frame.group_of).map(|(&wi, &g)| wi * mult[g as usize]).collect();
                    replicate_estimate(frame, &structure, &w, &active_rep, dspec, epsilon)
                })
                .collect()
        })
        .collect();

    let mut variances = BTreeMap::new();
    let mut used = BTreeMap::new();
    for (j, d) in domains.iter().enumerate() {
        let vals: Vec<f64> = estimates.iter().filter_map(|row| row[j]).collect();
        used.insert(d.clone(), vals.len());
        if vals.len() >= 2 {
            variances.insert(d.clone(), num::sample_var(&vals));
        }
    }
    Ok(BootstrapResult { variances, used, replicates: b })
}

fn replicate_estimate(
    frame: &DomainFrame,
    structure: &SampleStructure,
    w: &[f64],
    active: &[Vec<u32>],
    spec: &IndexSpec,
    epsilon: f64,
) -> Option<f64> {
    let m = jackknife_moments(frame, structure, w, active, epsilon, false).ok()?;
    let agg = aggregates(frame, w, &frame.zpow(epsilon)).ok()?;
    adjusted_from_aggregates(&agg, &m, spec).ok().map(|e| e.value)
}

// ---------------------------------------------------------------------------
// Synthetic populations for simulation studies
// ---------------------------------------------------------------------------

/// Log-normal synthetic population: per domain one take-all "city" stratum
/// (a single large PSU sampled at household level) plus one stratum of
/// smaller PSUs, with incomes exp(N(mu_d, phi2_d)) drawn per person.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticPopSpec {
    pub domains: usize,
    pub households_per_domain: usize,
    pub seed: u64,
    pub mu_range: (f64, f64),
    pub phi2_range: (f64, f64),
}

impl Default for SyntheticPopSpec {
    fn default() -> Self {
        Self {
            domains: 30,
            households_per_domain: 400,
            seed: 20170401,
            mu_range: (9.2, 10.2),
            phi2_range: (0.12, 0.35),
        }
    }
}

pub fn synthetic_population(spec: &SyntheticPopSpec) -> Result<Population> {
    if spec.domains == 0 || spec.households_per_domain < 40 {
        return Err(Error::InvalidConfig(
            "need at least 1 domain and 40 households per domain".into(),
        ));
    }
    let mut rng = substream(spec.seed, StreamTag::Synthetic, 0);
    let mut units = Vec::new();
    let mut take_all = BTreeSet::new();
    let n_psus = 6;
    for d in 0..spec.domains {
        let dom = format!("d{d:03}");
        let mu = spec.mu_range.0 + (spec.mu_range.1 - spec.mu_range.0) * rng.random::<f64>();
        let phi2 = spec.phi2_range.0 + (spec.phi2_range.1 - spec.phi2_range.0) * rng.random::<f64>();
        let phi = phi2.sqrt();
        let city = format!("{dom}-city");
        take_all.insert(city.clone());
        let city_hh = (spec.households_per_domain as f64 * 0.3).round() as usize;
        let town_hh = spec.households_per_domain - city_hh;
        let mut unit_counter = 0usize;
        let emit = |stratum: &str, psu: &str, hh: usize, rng: &mut rand_chacha::ChaCha8Rng,
                        units: &mut Vec<PopulationUnit>,
                        counter: &mut usize| {
            let size = match rng.random::<f64>() {
                x if x < 0.30 => 1,
                x if x < 0.65 => 2,
                x if x < 0.85 => 3,
                _ => 4,
            };
            for _ in 0..size {
                let income = (mu + phi * normal_draw(rng)).exp();
                units.push(PopulationUnit {
                    unit_id: format!("{dom}-u{:05}", *counter),
                    household_id: format!("{dom}-h{hh:04}"),
                    domain_id: dom.clone(),
                    stratum_id: stratum.to_string(),
                    psu_id: psu.to_string(),
                    income,
                });
                *counter += 1;
            }
        };
        for hh in 0..city_hh {
            emit(&city, &format!("{dom}-c0"), hh, &mut rng, &mut units, &mut unit_counter);
        }
        let towns = format!("{dom}-towns");
        for hh in 0..town_hh {
            let psu = format!("{dom}-t{}", hh % n_psus);
            emit(&towns, &psu, city_hh + hh, &mut rng, &mut units, &mut unit_counter);
        }
    }
    Population::new(units, take_all)
}

fn normal_draw<R: Rng>(rng: &mut R) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_pop() -> Population {
        let spec = SyntheticPopSpec {
            domains: 3,
            households_per_domain: 60,
            seed: 42,
            ..SyntheticPopSpec::default()
        };
        synthetic_population(&spec).unwrap()
    }

    #[test]
    fn census_yields_unit_weights() {
        // everything take-all, full rate: weights are exactly 1
        let mut pop = small_pop();
        let all: BTreeSet<String> = pop.units.iter().map(|u| u.stratum_id.clone()).collect();
        pop.take_all_strata = all;
        let s = draw_sample(&pop, &DesignSpec { sampling_rate: 1.0, psus_per_stratum: 2, seed: 1 }).unwrap();
        assert_eq!(s.units().len(), pop.units.len());
        assert!(s.units().iter().all(|u| u.weight == 1.0));
    }

    #[test]
    fn weights_estimate_population_size() {
        let pop = small_pop();
        let n = pop.units.len() as f64;
        let mut total = 0.0;
        let reps = 60;
        for seed in 0..reps {
            let s = draw_sample(&pop, &DesignSpec { sampling_rate: 0.25, psus_per_stratum: 3, seed }).unwrap();
            total += s.units().iter().map(|u| u.weight).sum::<f64>();
        }
        let avg = total / reps as f64;
        assert!((avg - n).abs() / n < 0.02, "avg {avg} vs N {n}");
    }

    #[test]
    fn sample_is_deterministic() {
        let pop = small_pop();
        let spec = DesignSpec { sampling_rate: 0.2, psus_per_stratum: 3, seed: 99 };
        let a = draw_sample(&pop, &spec).unwrap();
        let b = draw_sample(&pop, &spec).unwrap();
        assert_eq!(a.units(), b.units());
    }

    #[test]
    fn infeasible_design_errors() {
        let pop = small_pop();
        let spec = DesignSpec { sampling_rate: 0.2, psus_per_stratum: 50, seed: 1 };
        assert!(matches!(draw_sample(&pop, &spec), Err(Error::InfeasibleDesign(_))));
    }

    #[test]
    fn takeall_sample_uses_household_pseudo_psus() {
        let pop = small_pop();
        let s = draw_sample(&pop, &DesignSpec { sampling_rate: 0.3, psus_per_stratum: 3, seed: 5 }).unwrap();
        assert!(s
            .units()
            .iter()
            .filter(|u| u.stratum_id.ends_with("city"))
            .all(|u| u.psu_id.starts_with("hh:")));
    }

    #[test]
    fn bootstrap_constant_incomes_zero_variance() {
        let units: Vec<SurveyUnit> = (0..24)
            .map(|i| SurveyUnit {
                unit_id: format!("u{i}"),
                household_id: format!("h{i}"),
                domain_id: format!("d{}", i % 2),
                stratum_id: "s".into(),
                psu_id: format!("p{}", i % 8),
                weight: 1.0 + (i % 3) as f64,
                income: 5.0,
            })
            .collect();
        let s = SurveySample::new(units).unwrap();
        let r = bootstrap_variance(&s, &IndexSpec::gini(), 40, 7).unwrap();
        for (_, v) in &r.variances {
            assert!(v.abs() < 1e-24);
        }
    }

    #[test]
    fn bootstrap_minimum_replicates() {
        let units: Vec<SurveyUnit> = (0..12)
            .map(|i| SurveyUnit {
                unit_id: format!("u{i}"),
                household_id: format!("h{i}"),
                domain_id: "d".into(),
                stratum_id: "s".into(),
                psu_id: format!("p{i}"),
                weight: 1.0,
                income: 1.0 + i as f64,
            })
            .collect();
        let s = SurveySample::new(units).unwrap();
        let r = bootstrap_variance(&s, &IndexSpec::gini(), 2, 3).unwrap();
        assert_eq!(r.replicates, 2);
        for (_, v) in &r.variances {
            assert!(*v >= 0.0);
        }
        assert!(bootstrap_variance(&s, &IndexSpec::gini(), 1, 3).is_err());
    }

    #[test]
    fn population_csv_round_trip() {
        let pop = small_pop();
        let mut buf = Vec::new();
        pop.to_csv(&mut buf).unwrap();
        let back = Population::from_csv(&buf[..], pop.take_all_strata.clone()).unwrap();
        assert_eq!(back.units, pop.units);
    }

    #[test]
    fn population_rejects_psu_in_two_strata() {
        let mk = |unit: &str, stratum: &str| PopulationUnit {
            unit_id: unit.into(),
            household_id: unit.into(),
            domain_id: "d".into(),
            stratum_id: stratum.into(),
            psu_id: "p1".into(),
            income: 1.0,
        };
        let err = Population::new(vec![mk("a", "s1"), mk("b", "s2")], BTreeSet::new());
        assert!(err.is_err());
    }

    #[test]
    fn winsorize_caps_tails() {
        let pop = small_pop();
        let w = pop.winsorized(0.005, 0.995);
        for d in pop.domains() {
            let orig = pop.domain_incomes(&d);
            let wz = w.domain_incomes(&d);
            let max_w = wz.iter().cloned().fold(0.0, f64::max);
            let max_o = orig.iter().cloned().fold(0.0, f64::max);
            assert!(max_w <= max_o);
        }
    }
}
