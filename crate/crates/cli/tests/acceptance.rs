//! Acceptance suite.
//!
//! One test per criterion; each prints a single PASS/FAIL line with the
//! measured quantities and asserts the stated tolerance. Run with
//!
//!   cargo test -p nullstrap-cli --test acceptance -- --test-threads=1 --nocapture
//!
//! The Monte-Carlo criteria (1, 2, 4, 5) use 50-replicate cells at m = 1000
//! and finish in a few minutes on a laptop.

use nullstrap_core::prelude::*;
use nullstrap_core::rng::seeded_rng;
use nullstrap_core::sim::confusion;
use rand::Rng;
use statrs::function::gamma::ln_gamma;
use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;

const MASTER_SEED: u64 = 20240809;

fn report(id: &str, ok: bool, detail: &str) {
    println!(
        "acceptance criterion {id}: {} ({detail})",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {id} failed: {detail}");
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One benchmark cell: per-replicate (FDP, TPR) for the pipeline and, when
/// requested, the named baselines (run covariate-blind if the design has
/// covariates, mirroring methods that cannot adjust).
fn run_cell(
    config: &SimulationConfig,
    baselines: &[Method],
    blind_baselines: bool,
) -> (Vec<(f64, f64)>, Vec<Vec<(f64, f64)>>) {
    let mut pipeline = Vec::with_capacity(config.replicates);
    let mut others: Vec<Vec<(f64, f64)>> = vec![Vec::new(); baselines.len()];
    for rep in 0..config.replicates {
        let (counts, design, truth) = generate_dataset(config, rep).unwrap();
        let s = estimate_size_factors(&counts).unwrap();
        let out = run_nullstrap(
            &counts,
            &design,
            &NullstrapOptions {
                q: config.q,
                seed: nullstrap_core::rng::derive_seed(config.seed, &[0xACC, rep as u64]),
                size_factors: Some(s.clone()),
                ..Default::default()
            },
        )
        .unwrap();
        pipeline.push(confusion(&out.filter.discoveries, &truth));

        let blind = if blind_baselines {
            Some(design.without_covariates())
        } else {
            None
        };
        for (slot, &method) in baselines.iter().enumerate() {
            let d = blind.as_ref().unwrap_or(&design);
            let r = run_baseline(method, &counts, d, &s, config.q).unwrap();
            others[slot].push(confusion(&r.discoveries, &truth));
        }
    }
    (pipeline, others)
}

#[test]
fn criterion_1_fdr_control_setting_1() {
    let mut details = Vec::new();
    let mut ok = true;
    for &n in &[8usize, 16, 24] {
        let config = SimulationConfig {
            setting: 1,
            n,
            m: 1000,
            pi_de: 0.1,
            fc: 3.0,
            q: 0.1,
            replicates: 50,
            seed: nullstrap_core::rng::derive_seed(MASTER_SEED, &[1, n as u64]),
            ..Default::default()
        };
        let (pipeline, _) = run_cell(&config, &[], false);
        let fdps: Vec<f64> = pipeline.iter().map(|v| v.0).collect();
        let (fdr, se) = mean_se(&fdps);
        let bound = 0.1 + 2.0 * se;
        details.push(format!("n={n}: FDR {fdr:.4} <= {bound:.4}"));
        ok &= fdr <= bound;
    }
    report("1 (FDR control, setting 1)", ok, &details.join("; "));
}

#[test]
fn criterion_2_power_at_large_n() {
    let config = SimulationConfig {
        setting: 1,
        n: 24,
        m: 1000,
        pi_de: 0.1,
        fc: 3.0,
        q: 0.1,
        replicates: 50,
        seed: nullstrap_core::rng::derive_seed(MASTER_SEED, &[2]),
        ..Default::default()
    };
    let (pipeline, others) = run_cell(&config, &[Method::NbGlmBh], false);
    let (power, _) = mean_se(&pipeline.iter().map(|v| v.1).collect::<Vec<_>>());
    let (bh_power, _) = mean_se(&others[0].iter().map(|v| v.1).collect::<Vec<_>>());
    let ok = power >= 0.90 && power >= bh_power - 0.10;
    report(
        "2 (power at n=24)",
        ok,
        &format!("power {power:.4} >= 0.90, NBGLM_BH power {bh_power:.4}"),
    );
}

#[test]
fn criterion_3_wilcoxon_small_sample_collapse() {
    // the smallest achievable two-sided exact p with 3-vs-3 groups
    let p_min = wilcoxon_rank_sum(&[1.0, 2.0, 3.0], &[40.0, 50.0, 60.0]).unwrap();
    let floor_ok = (p_min - 0.1).abs() < 1e-12;

    // hence zero discoveries at q = 0.05 for any n = 6 data
    let mut zero_everywhere = true;
    for rep in 0..3 {
        let config = SimulationConfig {
            n: 6,
            m: 500,
            pi_de: 0.1,
            fc: 3.0,
            q: 0.05,
            seed: nullstrap_core::rng::derive_seed(MASTER_SEED, &[3]),
            ..Default::default()
        };
        let (counts, design, _) = generate_dataset(&config, rep).unwrap();
        let s = estimate_size_factors(&counts).unwrap();
        for method in [Method::WilcoxonRaw, Method::WilcoxonNorm] {
            let r = run_baseline(method, &counts, &design, &s, 0.05).unwrap();
            zero_everywhere &= r.discoveries.is_empty();
        }
    }
    report(
        "3 (Wilcoxon collapse at n=6)",
        floor_ok && zero_everywhere,
        &format!("min exact p = {p_min} > 0.05; zero discoveries at q=0.05: {zero_everywhere}"),
    );
}

#[test]
fn criterion_4_setting_2_confounding() {
    let config = SimulationConfig {
        setting: 2,
        n: 16,
        m: 1000,
        pi_de: 0.2,
        fc: 3.0,
        q: 0.1,
        replicates: 50,
        covariate_setting: true,
        seed: nullstrap_core::rng::derive_seed(MASTER_SEED, &[4]),
        ..Default::default()
    };
    let (pipeline, others) = run_cell(
        &config,
        &[Method::WilcoxonRaw, Method::WilcoxonNorm],
        true, // Wilcoxon cannot adjust: run it covariate-blind
    );
    let (fdr, _) = mean_se(&pipeline.iter().map(|v| v.0).collect::<Vec<_>>());
    let (wr_fdr, _) = mean_se(&others[0].iter().map(|v| v.0).collect::<Vec<_>>());
    let (wn_fdr, _) = mean_se(&others[1].iter().map(|v| v.0).collect::<Vec<_>>());
    let ok = fdr <= 0.13 && wr_fdr > 0.1 && wn_fdr > 0.1;
    report(
        "4 (setting-2 confounding)",
        ok,
        &format!(
            "nullstrap FDR {fdr:.4} <= 0.13; wilcoxon_raw {wr_fdr:.4} > 0.1; wilcoxon_norm {wn_fdr:.4} > 0.1"
        ),
    );
}

#[test]
fn criterion_5_permutation_negative_control() {
    let config = SimulationConfig {
        n: 34, // 17 vs 17
        m: 1000,
        pi_de: 0.0,
        fc: 2.0,
        seed: nullstrap_core::rng::derive_seed(MASTER_SEED, &[5]),
        ..Default::default()
    };
    let (counts, design, _) = generate_dataset(&config, 0).unwrap();
    let results = permutation_null_check(
        &counts,
        &design,
        100,
        0.05,
        &[Method::Nullstrap],
        nullstrap_core::rng::derive_seed(MASTER_SEED, &[5, 5]),
    )
    .unwrap();
    let mean = results[0].mean();
    let p95 = results[0].percentile(0.95);
    let ok = mean <= 1.0 && p95 <= 5;
    report(
        "5 (permutation negative control)",
        ok,
        &format!("mean discoveries {mean:.3} <= 1, p95 {p95} <= 5 over 100 permutations"),
    );
}

// --- criterion 6: oracle equivalences ---------------------------------------

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

fn grid_search_mle(y: &[f64], n_per: usize, phi: f64) -> (f64, f64) {
    let mean_c: f64 = y[..n_per].iter().sum::<f64>() / n_per as f64;
    let mean_t: f64 = y[n_per..].iter().sum::<f64>() / n_per as f64;
    let mut center = (mean_c.ln(), (mean_t / mean_c).ln());
    let mut half_width = 0.35;
    for _ in 0..2 {
        let steps = 70i64;
        let step = half_width / steps as f64;
        let mut best = (f64::NEG_INFINITY, center);
        for da in -steps..=steps {
            for db in -steps..=steps {
                let a = center.0 + da as f64 * step;
                let b = center.1 + db as f64 * step;
                let ll = loglik_two_group(y, n_per, a, b, phi);
                if ll > best.0 {
                    best = (ll, (a, b));
                }
            }
        }
        center = best.1;
        half_width = 2.5 * step;
    }
    center
}

fn two_group_design(n_per: usize) -> DesignInfo {
    let mut labels = vec!["control".to_string(); n_per];
    labels.extend(vec!["treatment".to_string(); n_per]);
    DesignInfo::from_labels(&labels, Vec::new(), 0).unwrap()
}

#[test]
fn criterion_6_oracle_equivalences() {
    // (a) IRLS vs 2-D grid-search likelihood maximization, 20 instances
    let mut rng = seeded_rng(MASTER_SEED, &[6, 1]);
    let mut worst: f64 = 0.0;
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
        let fit = fit_nb_glm(
            &y,
            &two_group_design(n_per),
            &SizeFactors::new(vec![1.0; 2 * n_per]).unwrap(),
            phi,
            false,
        );
        let (ga, gb) = grid_search_mle(&y, n_per, phi);
        worst = worst
            .max((fit.alpha - ga).abs())
            .max((fit.beta[0] - gb).abs());
        checked += 1;
    }
    let a_ok = worst < 1e-4;

    // (b) threshold selection vs exhaustive candidate scan, 100 pairs m <= 12
    let mut rng = seeded_rng(MASTER_SEED, &[6, 2]);
    let mut b_ok = true;
    for _ in 0..100 {
        let m = rng.gen_range(3..=12usize);
        let observed: Vec<f64> = (0..m).map(|_| rng.gen_range(1..=500) as f64 / 100.0).collect();
        let null: Vec<f64> = (0..m).map(|_| rng.gen_range(1..=500) as f64 / 100.0).collect();
        let q = rng.gen_range(0.05..0.6);
        let pair = StatisticPair {
            observed: observed.iter().copied().map(Some).collect(),
            null: null.iter().copied().map(Some).collect(),
            mode: StatMode::ScaledWald,
            df: 1,
        };
        let fdp_direct = |t: f64| {
            let num = null.iter().filter(|v| **v >= t).count() as f64;
            let den = observed.iter().filter(|v| **v >= t).count().max(1) as f64;
            num / den
        };
        let max_val = observed.iter().chain(&null).fold(0.0f64, |a, &b| a.max(b));
        let mut tau_oracle = f64::INFINITY;
        for &u in observed.iter().chain(&null).chain(std::iter::once(&(max_val + 1.0))) {
            if fdp_direct(u) <= q && u < tau_oracle {
                tau_oracle = u;
            }
        }
        let oracle_set: BTreeSet<usize> = (0..m).filter(|&j| observed[j] > tau_oracle).collect();
        let curve = fdp_curve(&pair).unwrap();
        let tau = select_threshold(&curve, q);
        b_ok &= tau == tau_oracle && declare_discoveries(&pair, tau) == oracle_set;
    }

    // (c) exact Wilcoxon vs full rank-split enumeration, n <= 8 per group
    let mut c_ok = true;
    for n_a in 1..=8usize {
        for n_b in n_a..=8usize {
            let n = n_a + n_b;
            // subset-sum distribution by explicit recursion over subsets
            let mut counts: std::collections::BTreeMap<usize, u64> = Default::default();
            let mut stack: Vec<usize> = Vec::new();
            fn rec(
                start: usize,
                n: usize,
                k: usize,
                stack: &mut Vec<usize>,
                counts: &mut std::collections::BTreeMap<usize, u64>,
            ) {
                if k == 0 {
                    *counts.entry(stack.iter().sum()).or_insert(0) += 1;
                    return;
                }
                for r in start..=(n - k + 1) {
                    stack.push(r);
                    rec(r + 1, n, k - 1, stack, counts);
                    stack.pop();
                }
            }
            rec(1, n, n_a, &mut stack, &mut counts);
            let total: u64 = counts.values().sum();
            for (&w, _) in &counts {
                // realize group-A ranks with this sum
                let mut ranks: Vec<usize> = (1..=n_a).collect();
                let mut need = w - ranks.iter().sum::<usize>();
                for idx in (0..n_a).rev() {
                    let cap = n - (n_a - 1 - idx);
                    let bump = need.min(cap - ranks[idx]);
                    ranks[idx] += bump;
                    need -= bump;
                }
                let a: Vec<f64> = ranks.iter().map(|&r| r as f64).collect();
                let b: Vec<f64> = (1..=n)
                    .filter(|r| !ranks.contains(r))
                    .map(|r| r as f64)
                    .collect();
                let p_lib = wilcoxon_rank_sum(&a, &b).unwrap();
                let le: u64 = counts.iter().filter(|(x, _)| **x <= w).map(|(_, c)| c).sum();
                let ge: u64 = counts.iter().filter(|(x, _)| **x >= w).map(|(_, c)| c).sum();
                let p_oracle = (2.0 * le.min(ge) as f64 / total as f64).min(1.0);
                c_ok &= (p_lib - p_oracle).abs() < 1e-12;
            }
        }
    }

    // (d) BH on the worked 4-value example
    let d_ok = bh_discoveries(&[0.01, 0.02, 0.03, 0.5], 0.05) == vec![0, 1, 2];

    report(
        "6 (oracle equivalences)",
        a_ok && b_ok && c_ok && d_ok,
        &format!(
            "(a) IRLS vs grid max |diff| {worst:.2e} < 1e-4: {a_ok}; (b) threshold scan: {b_ok}; (c) Wilcoxon enumeration: {c_ok}; (d) BH step-up: {d_ok}"
        ),
    );
}

// --- criterion 7: numerical invariants ---------------------------------------

#[test]
fn criterion_7_numerical_invariants() {
    // NB sampler moments within 3 MC standard errors over 1e6 draws
    let mut moments_ok = true;
    let mut detail = String::new();
    for (case, (mu, phi)) in [(5.0, 0.01), (10.0, 0.5), (100.0, 2.0)].iter().enumerate() {
        let mut rng = seeded_rng(MASTER_SEED, &[7, case as u64]);
        let n = 1_000_000usize;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        let mut sum4 = 0.0;
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            let v = sample_nb(*mu, *phi, &mut rng).unwrap() as f64;
            sum += v;
            draws.push(v);
        }
        let mean = sum / n as f64;
        for &v in &draws {
            let d = v - mean;
            sum2 += d * d;
            sum4 += d * d * d * d;
        }
        let var = sum2 / (n as f64 - 1.0);
        let m2 = sum2 / n as f64;
        let m4 = sum4 / n as f64;
        let target_var = mu + phi * mu * mu;
        let se_mean = (target_var / n as f64).sqrt();
        let se_var = ((m4 - m2 * m2) / n as f64).sqrt();
        let mean_ok = (mean - mu).abs() < 3.0 * se_mean;
        let var_ok = (var - target_var).abs() < 3.0 * se_var;
        moments_ok &= mean_ok && var_ok;
        detail.push_str(&format!(
            "(mu={mu},phi={phi}): mean dev {:.2} SE, var dev {:.2} SE; ",
            (mean - mu).abs() / se_mean,
            (var - target_var).abs() / se_var
        ));
    }

    // IRLS score-gradient by central finite differences < 1e-6
    let mut rng = seeded_rng(MASTER_SEED, &[7, 10]);
    let mut score_ok = true;
    let mut worst_grad: f64 = 0.0;
    for _ in 0..10 {
        let n_per = 5;
        let phi = rng.gen_range(0.05..0.4);
        let y: Vec<f64> = (0..2 * n_per)
            .map(|i| {
                let mu = if i < n_per { 60.0 } else { 110.0 };
                sample_nb(mu, phi, &mut rng).unwrap() as f64
            })
            .collect();
        let design = two_group_design(n_per);
        let s = SizeFactors::new(vec![1.0; 2 * n_per]).unwrap();
        let fit = fit_nb_glm(&y, &design, &s, phi, false);
        if fit.status != FitStatus::Converged {
            score_ok = false;
            continue;
        }
        let h = 1e-5;
        let ll = |a: f64, b: f64| loglik_two_group(&y, n_per, a, b, phi);
        let da = (ll(fit.alpha + h, fit.beta[0]) - ll(fit.alpha - h, fit.beta[0])) / (2.0 * h);
        let db = (ll(fit.alpha, fit.beta[0] + h) - ll(fit.alpha, fit.beta[0] - h)) / (2.0 * h);
        worst_grad = worst_grad.max(da.abs()).max(db.abs());
        score_ok &= da.abs() < 1e-6 && db.abs() < 1e-6;
    }

    // offset invariance of beta under global size-factor rescaling
    let mut rng = seeded_rng(MASTER_SEED, &[7, 20]);
    let y: Vec<f64> = (0..12)
        .map(|i| {
            let mu = if i < 6 { 50.0 } else { 90.0 };
            sample_nb(mu, 0.1, &mut rng).unwrap() as f64
        })
        .collect();
    let design = two_group_design(6);
    let fit1 = fit_nb_glm(
        &y,
        &design,
        &SizeFactors::new(vec![1.0; 12]).unwrap(),
        0.1,
        false,
    );
    let c = 7.3;
    let fit2 = fit_nb_glm(
        &y,
        &design,
        &SizeFactors::new(vec![c; 12]).unwrap(),
        0.1,
        false,
    );
    let offset_ok = (fit2.beta[0] - fit1.beta[0]).abs() <= 1e-8 * fit1.beta[0].abs()
        && (fit2.se_beta[0] - fit1.se_beta[0]).abs() <= 1e-8 * fit1.se_beta[0]
        && (fit2.alpha - (fit1.alpha - c.ln())).abs() <= 1e-8 * fit1.alpha.abs();

    report(
        "7 (numerical invariants)",
        moments_ok && score_ok && offset_ok,
        &format!(
            "{detail}max |finite-difference score| {worst_grad:.2e} < 1e-6: {score_ok}; offset invariance at 1e-8: {offset_ok}"
        ),
    );
}

// --- criterion 8: determinism -------------------------------------------------

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nullstrap"))
}

fn write_dataset(dir: &Path, config: &SimulationConfig) -> (String, String) {
    let (counts, design, _) = generate_dataset(config, 0).unwrap();
    let counts_path = dir.join("counts.tsv");
    write_counts_tsv(&counts_path, &counts).unwrap();
    let meta_path = dir.join("meta.tsv");
    let mut text = String::from("sample_id\tcondition\n");
    for (i, id) in counts.sample_ids().iter().enumerate() {
        text.push_str(&format!(
            "{id}\t{}\n",
            design.level_name(design.treatment()[i])
        ));
    }
    std::fs::write(&meta_path, text).unwrap();
    (
        counts_path.display().to_string(),
        meta_path.display().to_string(),
    )
}

#[test]
fn criterion_8_determinism() {
    let dir = tempfile::tempdir().unwrap();

    // simulate --reps 5 --seed 7, twice, byte-identical metrics.tsv
    let mut metrics = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("sim{i}"));
        let status = bin()
            .args([
                "simulate", "--n", "8", "--fc", "2.5", "--pi", "0.1", "--q", "0.1", "--m", "300",
                "--reps", "5", "--seed", "7", "--out",
                out.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
        metrics.push(std::fs::read(out.join("metrics.tsv")).unwrap());
    }
    let sim_ok = metrics[0] == metrics[1];

    // analyze with a fixed seed: byte-identical report.tsv at any --threads
    let config = SimulationConfig {
        n: 10,
        m: 200,
        pi_de: 0.1,
        fc: 3.0,
        seed: nullstrap_core::rng::derive_seed(MASTER_SEED, &[8]),
        ..Default::default()
    };
    let (counts, meta) = write_dataset(dir.path(), &config);
    let mut reports = Vec::new();
    for (i, threads) in ["1", "2", "4"].iter().enumerate() {
        let out = dir.path().join(format!("an{i}"));
        let status = bin()
            .args([
                "analyze",
                &counts,
                &meta,
                "--q",
                "0.1",
                "--seed",
                "7",
                "--threads",
                threads,
                "--out",
                out.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
        reports.push(std::fs::read(out.join("report.tsv")).unwrap());
    }
    let analyze_ok = reports[0] == reports[1] && reports[0] == reports[2];

    report(
        "8 (determinism)",
        sim_ok && analyze_ok,
        &format!("metrics.tsv identical across runs: {sim_ok}; report.tsv identical at threads 1/2/4: {analyze_ok}"),
    );
}

// --- criterion 9: ranking-mode equivalence ------------------------------------

#[test]
fn criterion_9_ranking_mode_equivalence() {
    let mut ok = true;
    let mut max_set = 0usize;
    for inst in 0..20u64 {
        let config = SimulationConfig {
            n: 12,
            m: 300,
            pi_de: 0.1,
            fc: 2.5,
            q: 0.1,
            seed: nullstrap_core::rng::derive_seed(MASTER_SEED, &[9, inst]),
            ..Default::default()
        };
        let (counts, design, _) = generate_dataset(&config, 0).unwrap();
        let run = |mode: StatMode| {
            run_nullstrap(
                &counts,
                &design,
                &NullstrapOptions {
                    q: 0.1,
                    seed: 1234 + inst,
                    stat_mode: Some(mode),
                    ..Default::default()
                },
            )
            .unwrap()
            .filter
            .discoveries
        };
        let scaled = run(StatMode::ScaledWald);
        let neglogp = run(StatMode::NegLogP);
        max_set = max_set.max(scaled.len());
        ok &= scaled == neglogp;
    }
    report(
        "9 (ranking-mode equivalence)",
        ok,
        &format!("20 instances, discovery sets identical under SCALED_WALD and NEG_LOG_P (largest set {max_set})"),
    );
}
