//! Independent-oracle checks: every decision-making routine is compared
//! against a brute-force second route on small instances.

use nullstrap_core::prelude::*;
use nullstrap_core::rng::seeded_rng;
use rand::Rng;
use statrs::function::gamma::ln_gamma;
use std::collections::BTreeSet;

fn two_group(n_per: usize) -> DesignInfo {
    let mut labels = vec!["control".to_string(); n_per];
    labels.extend(vec!["treatment".to_string(); n_per]);
    DesignInfo::from_labels(&labels, Vec::new(), 0).unwrap()
}

/// NB log-likelihood for the two-group model, written from the density.
fn loglik_two_group(y: &[f64], n_per: usize, alpha: f64, beta: f64, phi: f64) -> f64 {
    let r = 1.0 / phi;
    y.iter()
        .enumerate()
        .map(|(i, &yi)| {
            let mu = if i < n_per {
                alpha.exp()
            } else {
                (alpha + beta).exp()
            };
            ln_gamma(yi + r) - ln_gamma(r) - ln_gamma(yi + 1.0) + r * (r / (r + mu)).ln()
                + yi * (mu / (r + mu)).ln()
        })
        .sum()
}

/// Two-stage dense 2-D grid maximization of the likelihood. The grid is
/// centered on the log group means but evaluates the surface directly, so
/// it shares no code with the IRLS path.
fn grid_search_mle(y: &[f64], n_per: usize, phi: f64) -> (f64, f64) {
    let mean_c: f64 = y[..n_per].iter().sum::<f64>() / n_per as f64;
    let mean_t: f64 = y[n_per..].iter().sum::<f64>() / n_per as f64;
    let mut center = (mean_c.ln(), (mean_t / mean_c).ln());
    let mut half_width = 0.35;
    for _stage in 0..2 {
        let steps = 70i64;
        let step = half_width / steps as f64;
        let mut best = (f64::NEG_INFINITY, center);
        for da in -steps..=steps {
            let alpha = center.0 + da as f64 * step;
            for db in -steps..=steps {
                let beta = center.1 + db as f64 * step;
                let ll = loglik_two_group(y, n_per, alpha, beta, phi);
                if ll > best.0 {
                    best = (ll, (alpha, beta));
                }
            }
        }
        center = best.1;
        half_width = 2.5 * step;
    }
    center
}

#[test]
fn irls_matches_grid_search_on_random_small_instances() {
    let mut rng = seeded_rng(61, &[]);
    let mut checked = 0;
    while checked < 20 {
        let n_per = rng.gen_range(3..=4usize);
        let mu_c: f64 = rng.gen_range(3.0..4.5f64).exp();
        let beta: f64 = rng.gen_range(-1.2..1.2);
        let phi: f64 = rng.gen_range(0.05..0.5);
        let y: Vec<f64> = (0..2 * n_per)
            .map(|i| {
                let mu = if i < n_per { mu_c } else { mu_c * beta.exp() };
                sample_nb(mu, phi, &mut rng).unwrap() as f64
            })
            .collect();
        if y[..n_per].iter().sum::<f64>() == 0.0 || y[n_per..].iter().sum::<f64>() == 0.0 {
            continue;
        }
        let design = two_group(n_per);
        let s = SizeFactors::new(vec![1.0; 2 * n_per]).unwrap();
        let fit = fit_nb_glm(&y, &design, &s, phi, false);
        assert_eq!(fit.status, FitStatus::Converged);
        let (alpha_grid, beta_grid) = grid_search_mle(&y, n_per, phi);
        assert!(
            (fit.alpha - alpha_grid).abs() < 1e-4,
            "alpha {} vs grid {alpha_grid}",
            fit.alpha
        );
        assert!(
            (fit.beta[0] - beta_grid).abs() < 1e-4,
            "beta {} vs grid {beta_grid}",
            fit.beta[0]
        );
        checked += 1;
    }
}

fn lattice_pair(rng: &mut impl Rng, m: usize) -> StatisticPair {
    // values on a 0.01 lattice so a 0.001-step scan resolves ties exactly
    let draw = |rng: &mut dyn rand::RngCore| (rand::Rng::gen_range(rng, 1..=500) as f64) / 100.0;
    StatisticPair {
        observed: (0..m).map(|_| Some(draw(rng))).collect(),
        null: (0..m).map(|_| Some(draw(rng))).collect(),
        mode: StatMode::ScaledWald,
        df: 1,
    }
}

#[test]
fn threshold_selection_matches_exhaustive_scan() {
    let mut rng = seeded_rng(62, &[]);
    for trial in 0..100 {
        let m = rng.gen_range(3..=12usize);
        let pair = lattice_pair(&mut rng, m);
        let q = rng.gen_range(0.05..0.6);

        let observed: Vec<f64> = pair.observed.iter().map(|v| v.unwrap()).collect();
        let null: Vec<f64> = pair.null.iter().map(|v| v.unwrap()).collect();
        let max_val = observed
            .iter()
            .chain(null.iter())
            .fold(0.0f64, |a, &b| a.max(b));
        let fdp_direct = |t: f64| -> f64 {
            let num = null.iter().filter(|v| **v >= t).count() as f64;
            let den = observed.iter().filter(|v| **v >= t).count().max(1) as f64;
            num / den
        };

        let curve = fdp_curve(&pair).unwrap();

        // 1. the FDP step function jumps only at statistic values: over a
        //    dense grid, direct counting equals the curve evaluated at the
        //    smallest candidate at or above the grid point
        let top = ((max_val + 1.0) * 1000.0) as i64;
        for k in 1..=top {
            let t = k as f64 / 1000.0;
            let curve_value = curve
                .thresholds
                .iter()
                .position(|&c| c >= t)
                .map(|i| curve.fdp[i])
                .unwrap_or(0.0);
            assert_eq!(
                fdp_direct(t),
                curve_value,
                "trial {trial}: curve misses the step function at t = {t}"
            );
        }

        // 2. tau is the smallest qualifying candidate, found by raw scanning
        //    over the (unsorted) statistic values plus the sentinel
        let mut tau_oracle = f64::INFINITY;
        for &u in observed
            .iter()
            .chain(null.iter())
            .chain(std::iter::once(&(max_val + 1.0)))
        {
            if fdp_direct(u) <= q && u < tau_oracle {
                tau_oracle = u;
            }
        }
        let oracle_set: BTreeSet<usize> = (0..m).filter(|&j| observed[j] > tau_oracle).collect();

        let tau = select_threshold(&curve, q);
        let set = declare_discoveries(&pair, tau);
        assert_eq!(tau, tau_oracle, "trial {trial}");
        assert_eq!(set, oracle_set, "trial {trial}: discovery sets differ");
    }
}

/// Count rank splits by direct subset enumeration (independent of the
/// library's subset-sum table).
fn enumerate_splits(n_total: usize, n_a: usize) -> Vec<(u64, u64)> {
    // returns, for each achievable rank sum w, (#subsets with sum == w)
    // encoded as (w, count)
    let mut counts = std::collections::BTreeMap::new();
    let mut subset: Vec<usize> = Vec::new();
    fn recurse(
        start: usize,
        n_total: usize,
        remaining: usize,
        subset: &mut Vec<usize>,
        counts: &mut std::collections::BTreeMap<u64, u64>,
    ) {
        if remaining == 0 {
            let w: usize = subset.iter().sum();
            *counts.entry(w as u64).or_insert(0) += 1;
            return;
        }
        for rank in start..=(n_total - remaining + 1) {
            subset.push(rank);
            recurse(rank + 1, n_total, remaining - 1, subset, counts);
            subset.pop();
        }
    }
    recurse(1, n_total, n_a, &mut subset, &mut counts);
    counts.into_iter().collect()
}

#[test]
fn exact_wilcoxon_matches_full_rank_split_enumeration() {
    for n_a in 1..=8usize {
        for n_b in n_a..=8usize {
            let n = n_a + n_b;
            let dist = enumerate_splits(n, n_a);
            let total: u64 = dist.iter().map(|(_, c)| c).sum();
            for &(w, _) in &dist {
                // realize an instance whose group-A ranks sum to w
                let ranks = ranks_with_sum(n, n_a, w as usize);
                let a: Vec<f64> = ranks.iter().map(|&r| r as f64).collect();
                let b: Vec<f64> = (1..=n)
                    .filter(|r| !ranks.contains(r))
                    .map(|r| r as f64)
                    .collect();
                let p_lib = wilcoxon_rank_sum(&a, &b).unwrap();

                let p_le: u64 = dist.iter().filter(|(x, _)| *x <= w).map(|(_, c)| c).sum();
                let p_ge: u64 = dist.iter().filter(|(x, _)| *x >= w).map(|(_, c)| c).sum();
                let p_oracle = (2.0 * (p_le.min(p_ge) as f64) / total as f64).min(1.0);
                assert!(
                    (p_lib - p_oracle).abs() < 1e-12,
                    "nA={n_a} nB={n_b} W={w}: {p_lib} vs {p_oracle}"
                );
            }
        }
    }
}

/// Greedy construction of a size-k subset of 1..=n with the given sum.
fn ranks_with_sum(n: usize, k: usize, target: usize) -> Vec<usize> {
    let mut ranks: Vec<usize> = (1..=k).collect(); // minimal sum
    let mut need = target - ranks.iter().sum::<usize>();
    for idx in (0..k).rev() {
        let max_here = n - (k - 1 - idx);
        let bump = need.min(max_here - ranks[idx]);
        ranks[idx] += bump;
        need -= bump;
    }
    assert_eq!(need, 0, "unreachable rank sum {target} for {k} of {n}");
    ranks
}

/// BH by scanning every cutoff, no sorting-based step-up.
fn bh_brute_force(p: &[f64], q: f64) -> BTreeSet<usize> {
    let m = p.len();
    let mut best_cutoff: Option<f64> = None;
    for &candidate in p {
        let count = p.iter().filter(|v| **v <= candidate).count();
        if candidate <= count as f64 * q / m as f64 {
            best_cutoff = Some(best_cutoff.map_or(candidate, |b: f64| b.max(candidate)));
        }
    }
    match best_cutoff {
        Some(c) => (0..m).filter(|&j| p[j] <= c).collect(),
        None => BTreeSet::new(),
    }
}

#[test]
fn bh_matches_worked_example_and_brute_force() {
    // the worked step-up enumeration
    let p = [0.01, 0.02, 0.03, 0.5];
    let got: BTreeSet<usize> = bh_discoveries(&p, 0.05).into_iter().collect();
    assert_eq!(got, BTreeSet::from([0, 1, 2]));
    assert_eq!(got, bh_brute_force(&p, 0.05));

    let mut rng = seeded_rng(63, &[]);
    for _ in 0..300 {
        let m = rng.gen_range(1..=10usize);
        let p: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0001..1.0f64)).collect();
        let q = rng.gen_range(0.01..0.5);
        let got: BTreeSet<usize> = bh_discoveries(&p, q).into_iter().collect();
        assert_eq!(got, bh_brute_force(&p, q), "p={p:?} q={q}");
    }
}

#[test]
fn adjusted_q_formula_oracle() {
    // direct formula evaluations, frozen
    assert!((adjust_q(0.1, 1000, 10) - 0.054611114934609184).abs() < 1e-12);
    for (q, m, n) in [(0.05, 20000, 34), (0.2, 500, 6), (0.1, 8, 2)] {
        let direct = q / (1.0 + ((m as f64).ln() / n as f64).sqrt());
        assert_eq!(adjust_q(q, m, n), direct);
    }
}
