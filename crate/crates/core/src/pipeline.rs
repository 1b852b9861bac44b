//! End-to-end discovery pipeline.
//!
//! 1. fit per-gene NB-GLMs to the real data (sizes, dispersions, effects)
//! 2. generate a synthetic null matrix from the fitted null models
//! 3. refit the null matrix with the resampled sizes and dispersions fixed
//! 4. estimate the FDP curve from the paired statistics and pick the
//!    smallest threshold meeting the (possibly adjusted) target level
//! 5. declare genes above the threshold

use crate::data::{
    base_means, estimate_size_factors, validate_inputs, CountMatrix, DesignInfo, SizeFactors,
};
use crate::error::{Error, Result};
use crate::filter::{nullstrap_filter, NullstrapResult};
use crate::glm::{
    fit_all_genes, fit_all_genes_with, fit_nb_glm, statistic_pair, wald_p_value, FitAllOptions,
    FitStatus, GeneFit, StatMode, StatisticPair,
};
use crate::rng::{derive_seed, tags};
use crate::synthetic::{build_null_spec, build_null_spec_per_gene_sf, label_spec, SyntheticNullSpec};
use rayon::prelude::*;

const LN_2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone)]
pub struct NullstrapOptions {
    /// Target FDR level.
    pub q: f64,
    pub seed: u64,
    /// Apply the small-sample adjustment to q (on by default).
    pub adjust: bool,
    /// Statistic mode; None picks SCALED_WALD for K = 2 and NEG_LOG_P above.
    pub stat_mode: Option<StatMode>,
    /// Shrink per-gene dispersions toward a fitted mean-dispersion trend
    /// before the final fits. On by default: the unshrunk small-sample MLE
    /// collapses to the lower bound for genes that happen to look Poisson,
    /// which inflates their observed statistics relative to the synthetic
    /// null and breaks FDR calibration.
    pub shrink_dispersion: bool,
    /// Exploratory: resample size factors per gene instead of per dataset.
    pub per_gene_sf_resample: bool,
    /// Reuse precomputed size factors instead of re-estimating.
    pub size_factors: Option<SizeFactors>,
}

impl Default for NullstrapOptions {
    fn default() -> Self {
        NullstrapOptions {
            q: 0.05,
            seed: 0,
            adjust: true,
            stat_mode: None,
            shrink_dispersion: true,
            per_gene_sf_resample: false,
            size_factors: None,
        }
    }
}

/// One line of the per-gene report.
#[derive(Debug, Clone)]
pub struct GeneReportRow {
    pub gene_id: String,
    pub base_mean: f64,
    /// beta / log(2); None for flagged genes.
    pub log2_fold_change: Option<f64>,
    /// Standard error on the log2 scale.
    pub se: Option<f64>,
    /// Natural-log fold change.
    pub log_fold_change: Option<f64>,
    pub stat_observed: Option<f64>,
    pub p_value: Option<f64>,
    pub discovery: bool,
    pub status: FitStatus,
}

#[derive(Debug)]
pub struct NullstrapOutcome {
    pub size_factors: SizeFactors,
    pub fits: Vec<GeneFit>,
    pub null_fits: Vec<GeneFit>,
    pub null_spec: SyntheticNullSpec,
    pub null_matrix: CountMatrix,
    pub stats: StatisticPair,
    pub filter: NullstrapResult,
    pub rows: Vec<GeneReportRow>,
    pub mode: StatMode,
}

/// Default statistic flavor for a design.
pub fn default_stat_mode(design: &DesignInfo) -> StatMode {
    if design.k() == 2 {
        StatMode::ScaledWald
    } else {
        StatMode::NegLogP
    }
}

/// Run the full pipeline on one dataset.
pub fn run_nullstrap(
    counts: &CountMatrix,
    design: &DesignInfo,
    opts: &NullstrapOptions,
) -> Result<NullstrapOutcome> {
    if design.k() < 2 {
        return Err(Error::InvalidConfig {
            msg: "differential expression needs at least two conditions".into(),
        });
    }
    if !(opts.q > 0.0 && opts.q < 1.0) {
        return Err(Error::InvalidConfig {
            msg: format!("q must be in (0,1), got {}", opts.q),
        });
    }
    validate_inputs(counts, design)?;

    let mode = opts.stat_mode.unwrap_or_else(|| default_stat_mode(design));
    if mode == StatMode::ScaledWald && design.k() != 2 {
        return Err(Error::ScaledWaldRequiresTwoGroups { k: design.k() });
    }

    let s = match &opts.size_factors {
        Some(sf) => {
            if sf.len() != counts.n_samples() {
                return Err(Error::DimensionMismatch {
                    what: "size factors",
                    expected: counts.n_samples(),
                    found: sf.len(),
                });
            }
            sf.clone()
        }
        None => estimate_size_factors(counts)?,
    };

    // Step 1: fit the real data (dispersion estimated per gene)
    let fits = fit_all_genes_with(
        counts,
        design,
        &s,
        &FitAllOptions {
            dispersions: None,
            shrink_dispersion: opts.shrink_dispersion,
        },
    );

    // Step 2: synthetic null generation
    let spec_seed = derive_seed(opts.seed, &[tags::SF_RESAMPLE]);
    let mut spec = if opts.per_gene_sf_resample {
        build_null_spec_per_gene_sf(&fits, design, &s, spec_seed)
    } else {
        build_null_spec(&fits, design, &s, spec_seed)
    };
    label_spec(&mut spec, counts);
    let null_matrix = crate::synthetic::generate_null_matrix(&spec)?;

    // Step 3: refit the null data with resampled sizes and dispersions fixed
    let null_fits = if opts.per_gene_sf_resample {
        fit_null_per_gene_sf(&null_matrix, design, &spec)
    } else {
        let s_tilde = SizeFactors::new(spec.resampled_size_factors.clone())?;
        fit_all_genes(&null_matrix, design, &s_tilde, Some(&spec.dispersions))
    };

    // Steps 4-5: threshold and declare
    let stats = statistic_pair(&fits, &null_fits, mode)?;
    let filter = nullstrap_filter(&stats, opts.q, counts.n_samples(), opts.adjust)?;

    let means = base_means(counts, &s)?;
    let rows = (0..counts.n_genes())
        .map(|j| {
            let fit = &fits[j];
            let usable = fit.status.is_usable() && !fit.beta.is_empty();
            GeneReportRow {
                gene_id: counts.gene_ids()[j].clone(),
                base_mean: means[j],
                log2_fold_change: usable.then(|| fit.beta[0] / LN_2),
                se: usable.then(|| fit.se_beta[0] / LN_2),
                log_fold_change: usable.then(|| fit.beta[0]),
                stat_observed: stats.observed[j],
                p_value: if usable { wald_p_value(fit).ok() } else { None },
                discovery: filter.discoveries.contains(&j),
                status: fit.status,
            }
        })
        .collect();

    Ok(NullstrapOutcome {
        size_factors: s,
        fits,
        null_fits,
        null_spec: spec,
        null_matrix,
        stats,
        filter,
        rows,
        mode,
    })
}

/// Null refit for the exploratory per-gene size-factor mode: each gene uses
/// its own resampled offset vector.
fn fit_null_per_gene_sf(
    null_matrix: &CountMatrix,
    design: &DesignInfo,
    spec: &SyntheticNullSpec,
) -> Vec<GeneFit> {
    (0..null_matrix.n_genes())
        .into_par_iter()
        .map(|j| {
            let y = null_matrix.gene_counts(j);
            let phi = spec.dispersions[j];
            if y.iter().all(|&v| v == 0.0) || !(phi > 0.0 && phi.is_finite()) {
                let mut fit = GeneFit {
                    alpha: f64::NAN,
                    beta: vec![f64::NAN; design.k() - 1],
                    gamma: vec![f64::NAN; design.p()],
                    phi: f64::NAN,
                    beta_cov: vec![f64::NAN; (design.k() - 1).pow(2)],
                    se_beta: vec![f64::NAN; design.k() - 1],
                    fitted_means: vec![0.0; design.n()],
                    status: FitStatus::AllZero,
                    iterations: 0,
                    dispersion_fallback: false,
                };
                if !y.iter().all(|&v| v == 0.0) {
                    fit.status = FitStatus::Singular;
                }
                return fit;
            }
            let sf = SizeFactors::new(spec.size_factors_for_gene(j)).expect("positive resamples");
            fit_nb_glm(&y, design, &sf, phi, false)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use crate::synthetic::sample_nb;

    /// Two-group dataset with one strongly DE gene planted at index 0.
    fn planted_dataset(seed: u64) -> (CountMatrix, DesignInfo) {
        let n_per = 3;
        let n = 2 * n_per;
        let m = 20;
        let mut rng = seeded_rng(seed, &[1]);
        let mut grid = vec![0u64; n * m];
        for j in 0..m {
            let base = 60.0;
            let fc: f64 = if j == 0 { 8.0 } else { 1.0 };
            for i in 0..n {
                let mu = if i < n_per { base } else { base * fc };
                grid[i * m + j] = sample_nb(mu, 0.05, &mut rng).unwrap();
            }
        }
        let counts = CountMatrix::new(
            grid,
            (0..n).map(|i| format!("s{i}")).collect(),
            (0..m).map(|j| format!("g{j}")).collect(),
        )
        .unwrap();
        let mut labels = vec!["control".to_string(); n_per];
        labels.extend(vec!["treatment".to_string(); n_per]);
        let design = DesignInfo::from_labels(&labels, Vec::new(), 0).unwrap();
        (counts, design)
    }

    #[test]
    fn planted_gene_is_discovered() {
        let (counts, design) = planted_dataset(2024);
        let opts = NullstrapOptions {
            q: 0.1,
            seed: 7,
            ..Default::default()
        };
        let out = run_nullstrap(&counts, &design, &opts).unwrap();
        assert!(
            out.filter.discoveries.contains(&0),
            "planted gene missed; tau = {}, discoveries = {:?}",
            out.filter.tau,
            out.filter.discoveries
        );
        assert!(out.rows[0].discovery);
        assert!(out.rows[0].log2_fold_change.unwrap() > 2.0);
        assert_eq!(out.mode, StatMode::ScaledWald);
    }

    #[test]
    fn global_null_dataset_stays_quiet() {
        let n = 8;
        let m = 50;
        let mut rng = seeded_rng(5150, &[2]);
        let grid: Vec<u64> = (0..n * m)
            .map(|_| sample_nb(40.0, 0.1, &mut rng).unwrap())
            .collect();
        let counts = CountMatrix::new(
            grid,
            (0..n).map(|i| format!("s{i}")).collect(),
            (0..m).map(|j| format!("g{j}")).collect(),
        )
        .unwrap();
        let mut labels = vec!["control".to_string(); n / 2];
        labels.extend(vec!["treatment".to_string(); n / 2]);
        let design = DesignInfo::from_labels(&labels, Vec::new(), 0).unwrap();
        let out = run_nullstrap(
            &counts,
            &design,
            &NullstrapOptions {
                q: 0.05,
                seed: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(
            out.filter.discoveries.is_empty(),
            "null data produced {:?}",
            out.filter.discoveries
        );
    }

    #[test]
    fn adjusted_discoveries_are_a_subset_of_unadjusted() {
        let (counts, design) = planted_dataset(99);
        let base = NullstrapOptions {
            q: 0.2,
            seed: 11,
            ..Default::default()
        };
        let adjusted = run_nullstrap(&counts, &design, &base).unwrap();
        let unadjusted = run_nullstrap(
            &counts,
            &design,
            &NullstrapOptions {
                adjust: false,
                ..base
            },
        )
        .unwrap();
        assert!(adjusted.filter.effective_q < unadjusted.filter.effective_q);
        assert!(adjusted
            .filter
            .discoveries
            .is_subset(&unadjusted.filter.discoveries));
    }

    #[test]
    fn pipeline_is_seed_deterministic() {
        let (counts, design) = planted_dataset(4);
        let opts = NullstrapOptions {
            q: 0.1,
            seed: 42,
            ..Default::default()
        };
        let a = run_nullstrap(&counts, &design, &opts).unwrap();
        let b = run_nullstrap(&counts, &design, &opts).unwrap();
        assert_eq!(a.null_matrix, b.null_matrix);
        assert_eq!(a.filter.tau, b.filter.tau);
        assert_eq!(a.filter.discoveries, b.filter.discoveries);
    }

    #[test]
    fn all_zero_genes_are_reported_not_discovered() {
        let (counts, design) = planted_dataset(8);
        // zero out gene 5 entirely
        let mut grid = Vec::new();
        for i in 0..counts.n_samples() {
            for j in 0..counts.n_genes() {
                grid.push(if j == 5 { 0 } else { counts.count(i, j) });
            }
        }
        let counts = CountMatrix::new(
            grid,
            counts.sample_ids().to_vec(),
            counts.gene_ids().to_vec(),
        )
        .unwrap();
        let out = run_nullstrap(
            &counts,
            &design,
            &NullstrapOptions {
                q: 0.1,
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(out.rows[5].status, FitStatus::AllZero);
        assert!(!out.rows[5].discovery);
        assert!(out.rows[5].log2_fold_change.is_none());
        assert!(out.stats.observed[5].is_none());
    }

    #[test]
    fn per_gene_sf_mode_runs_end_to_end() {
        let (counts, design) = planted_dataset(21);
        let out = run_nullstrap(
            &counts,
            &design,
            &NullstrapOptions {
                q: 0.1,
                seed: 9,
                per_gene_sf_resample: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(out.null_spec.per_gene_size_factors.is_some());
        assert!(out.filter.discoveries.contains(&0));
    }
}
