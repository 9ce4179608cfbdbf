//! scratch probe - deleted before finalizing
use ineq_sae::hb::*;
use ineq_sae::mcmc::*;
use ineq_sae::num;
use ineq_sae::rng::{mix, substream, StreamTag};
use rand::Rng;
use rand_distr::{Beta as BetaDist, Distribution, StandardNormal};
use std::time::Instant;

fn normal<R: Rng>(rng: &mut R) -> f64 {
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

fn simulate_fb_dataset(seed: u64, d: usize, beta: &[f64], sigma_v: f64, p: f64, w: f64) -> (AreaDataset, Vec<f64>) {
    let mut rng = substream(seed, StreamTag::Synthetic, 77);
    let mut domains = Vec::new();
    let mut y = Vec::new();
    let mut var = Vec::new();
    let mut x = Vec::new();
    let mut ntilde = Vec::new();
    let mut theta_true = Vec::new();
    let covs: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
    let cm = num::mean(&covs);
    let cs = num::sample_var(&covs).sqrt();
    for i in 0..d {
        let xi = vec![1.0, (covs[i] - cm) / cs];
        let v = sigma_v * normal(&mut rng);
        let eta: f64 = xi.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + v;
        let lambda2 = num::inv_logit(eta);
        let vd = 5e-4 + 2.5e-3 * rng.random::<f64>();
        let area = derive_area_parts(lambda2, p, w, vd).unwrap();
        // draw y from the FB mixture, rejecting rows violating var < y(1-y)
        let comp1 = BetaDist::new(area.lambda1 * area.phi, (1.0 - area.lambda1) * area.phi).unwrap();
        let comp2 = BetaDist::new(area.lambda2 * area.phi, (1.0 - area.lambda2) * area.phi).unwrap();
        let mut yi;
        loop {
            yi = if rng.random::<f64>() < p { comp1.sample(&mut rng) } else { comp2.sample(&mut rng) };
            if vd < yi * (1.0 - yi) {
                break;
            }
        }
        domains.push(format!("d{i}"));
        y.push(yi);
        var.push(vd);
        x.push(xi);
        ntilde.push(60.0);
        theta_true.push(area.theta);
    }
    (AreaDataset::new(domains, y, var, x, ntilde).unwrap(), theta_true)
}

#[test]
fn probe_fb_recovery_single() {
    let beta_true = [-2.0, 0.4];
    let (data, _) = simulate_fb_dataset(1, 40, &beta_true, 0.3, 0.8, 0.5);
    let model = FbModel::new(data, PriorSpec::default());
    let cfg = SamplerConfig { seed: 42, ..Default::default() };
    let t0 = Instant::now();
    let draws = run_sampler(&model, &cfg).unwrap();
    let el = t0.elapsed().as_secs_f64();
    let summary = summarize(&draws).unwrap();
    println!("fit took {el:.1}s; max_rhat {:.4}, min_ess {:.0}, accept {:?}", summary.max_rhat, summary.min_ess, draws.accept_rate);
    let mut worst: Vec<(String, f64, f64)> =
        summary.params.iter().map(|p| (p.name.clone(), p.rhat, p.ess)).collect();
    worst.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    for (n, r, e) in worst.iter().take(8) {
        println!("  {n}: rhat {r:.4} ess {e:.0}");
    }
    for k in 0..2 {
        let pooled = draws.parameter_pooled(k);
        let mut sorted = pooled.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let lo = num::quantile_sorted(&sorted, 0.05);
        let hi = num::quantile_sorted(&sorted, 0.95);
        println!(
            "beta[{k}] true {} mean {:.3} 90% CI ({:.3}, {:.3}) covered: {}",
            beta_true[k],
            num::mean(&pooled),
            lo,
            hi,
            lo <= beta_true[k] && beta_true[k] <= hi
        );
    }
    // p, w recovery
    let dim = draws.dim();
    let p_mean = num::mean(&draws.parameter_pooled(dim - 2).iter().map(|&x| num::inv_logit(x)).collect::<Vec<_>>());
    let w_mean = num::mean(&draws.parameter_pooled(dim - 1).iter().map(|&x| num::inv_logit(x)).collect::<Vec<_>>());
    println!("p mean {p_mean:.3} (true 0.8), w mean {w_mean:.3} (true 0.5)");
}

#[test]
fn probe_fb_recovery_20_seeds() {
    let beta_true = [-2.0, 0.4];
    let mut covered = [0usize; 2];
    let mut rhat_fail = 0;
    let t0 = Instant::now();
    for run in 0..20u64 {
        let (data, _) = simulate_fb_dataset(mix(100, run), 40, &beta_true, 0.3, 0.8, 0.5);
        let priors = PriorSpec { p_prior: PPrior::Beta22, ..PriorSpec::default() };
        let model = FbModel::new(data, priors);
        let cfg = SamplerConfig { seed: mix(200, run), ..Default::default() };
        let draws = run_sampler(&model, &cfg).unwrap();
        let summary = summarize(&draws).unwrap();
        if !(summary.max_rhat < 1.05) {
            rhat_fail += 1;
            let worst = summary
                .params
                .iter()
                .max_by(|a, b| a.rhat.partial_cmp(&b.rhat).unwrap())
                .unwrap();
            println!(
                "run {run}: max_rhat {:.4} at {} (ess {:.0})",
                summary.max_rhat, worst.name, worst.ess
            );
        }
        for k in 0..2 {
            let mut sorted = draws.parameter_pooled(k);
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let lo = num::quantile_sorted(&sorted, 0.05);
            let hi = num::quantile_sorted(&sorted, 0.95);
            if lo <= beta_true[k] && beta_true[k] <= hi {
                covered[k] += 1;
            }
        }
    }
    println!(
        "coverage beta0 {}/20, beta1 {}/20, rhat failures {rhat_fail}, total {:.0}s",
        covered[0],
        covered[1],
        t0.elapsed().as_secs_f64()
    );
}

#[test]
fn probe_run6_traces() {
    let beta_true = [-2.0, 0.4];
    let (data, _) = simulate_fb_dataset(mix(100, 6), 40, &beta_true, 0.3, 0.8, 0.5);
    let priors = PriorSpec { p_prior: PPrior::Beta22, ..PriorSpec::default() };
    let model = FbModel::new(data, priors);
    let cfg = SamplerConfig { seed: mix(200, 6), ..Default::default() };
    let draws = run_sampler(&model, &cfg).unwrap();
    let dim = draws.dim();
    for (name, j) in [("logit_p", dim - 2), ("logit_w", dim - 1), ("beta0", 0), ("log_sigma_v", 2)] {
        let per_chain: Vec<(f64, f64)> = draws
            .parameter_chains(j)
            .iter()
            .map(|c| {
                let m = num::mean(c);
                let thirds: Vec<f64> = c.chunks(c.len() / 3).map(num::mean).collect();
                (m, thirds[2] - thirds[0])
            })
            .collect();
        println!("{name}: per-chain (mean, drift): {per_chain:?}");
    }
}

#[test]
fn probe_design_consistency() {
    let (data, _) = simulate_fb_dataset(9, 25, &[-1.5, 0.3], 0.3, 0.8, 0.5);
    let mut tiny = data.clone();
    for v in tiny.var.iter_mut() {
        *v *= 1e-6;
    }
    for (name, is_fb) in [("beta", false), ("fb", true)] {
        let cfg = SamplerConfig { seed: mix(5, is_fb as u64), ..Default::default() };
        let t0 = Instant::now();
        let draws = if is_fb {
            run_sampler(&FbModel::new(tiny.clone(), PriorSpec::default()), &cfg).unwrap()
        } else {
            run_sampler(&BetaModel::new(tiny.clone(), PriorSpec::default()), &cfg).unwrap()
        };
        let summary = summarize(&draws).unwrap();
        let max_dev: f64 = summary
            .theta
            .iter()
            .zip(&tiny.y)
            .map(|(t, y)| (t.mean - y).abs())
            .fold(0.0, f64::max);
        println!(
            "{name}: {:.1}s max|theta-y| = {max_dev:.2e}, max_rhat {:.4}, accept {:?}",
            t0.elapsed().as_secs_f64(),
            summary.max_rhat,
            draws.accept_rate
        );
        assert!(max_dev < 1e-2, "{name} deviation {max_dev}");
    }
}
