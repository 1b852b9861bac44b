//! Synthetic benchmark harness: dataset generation under the two simulation
//! regimes (plain two-group, and two-group with a correlated binary
//! covariate), grid execution with empirical FDR/power, and the
//! label-permutation negative-control protocol.
//!
//! Determinism contract: every random quantity is drawn from a substream
//! keyed on (cell seed, replicate, purpose, gene), so tables are
//! byte-identical across runs and thread counts.

use crate::baselines::{run_baseline, Method};
use crate::data::{estimate_size_factors, CountMatrix, DesignInfo, SizeFactors};
use crate::error::{Error, Result};
use crate::glm::StatMode;
use crate::pipeline::{run_nullstrap, NullstrapOptions};
use crate::rng::{derive_seed, seeded_rng, tags};
use crate::synthetic::sample_nb;
use rand::distributions::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use std::collections::BTreeSet;
use std::path::PathBuf;

/// Where gene-level (base mean, dispersion) pairs come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamSource {
    /// Log base-means ~ Normal(log 50, 1) truncated to mean >= 1;
    /// dispersion = 0.05 + (2/mu) * LogNormal(0, 0.3^2) noise.
    Builtin,
    /// Two-column TSV (base_mean, dispersion) resampled with replacement.
    File(PathBuf),
}

/// One cell of the benchmark grid.
#[derive(Debug, Clone)]
pub struct SimulationConfig {
    /// Echoed into the metrics table (1, 2, or 0 for custom grids).
    pub setting: u8,
    pub n: usize,
    pub m: usize,
    pub pi_de: f64,
    pub fc: f64,
    pub q: f64,
    pub replicates: usize,
    pub covariate_setting: bool,
    pub covariate_gene_frac: f64,
    pub imbalance: f64,
    pub gamma_range: (f64, f64),
    pub sf_range: (f64, f64),
    pub seed: u64,
    pub param_source: ParamSource,
    /// Force one-sided effects instead of Rademacher signs.
    pub all_up: bool,
    pub adjust: bool,
    pub stat_mode: Option<StatMode>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            setting: 0,
            n: 16,
            m: 1000,
            pi_de: 0.1,
            fc: 2.0,
            q: 0.05,
            replicates: 50,
            covariate_setting: false,
            covariate_gene_frac: 0.2,
            imbalance: 0.8,
            gamma_range: (2.0, 3.0),
            sf_range: (0.9, 1.1),
            seed: 0,
            param_source: ParamSource::Builtin,
            all_up: false,
            adjust: true,
            stat_mode: None,
        }
    }
}

impl SimulationConfig {
    /// pi_de = 0 is allowed so the harness can emit global-null data for the
    /// negative-control protocol.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig { msg });
        if self.n < 4 || self.n % 2 != 0 {
            return fail(format!("n must be even and at least 4, got {}", self.n));
        }
        if self.m < 2 {
            return fail(format!("m must be at least 2, got {}", self.m));
        }
        if !(0.0..1.0).contains(&self.pi_de) {
            return fail(format!("pi_de must be in [0,1), got {}", self.pi_de));
        }
        if !(self.fc > 1.0) {
            return fail(format!("fold change must exceed 1, got {}", self.fc));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return fail(format!("q must be in (0,1), got {}", self.q));
        }
        if !(0.0..=1.0).contains(&self.covariate_gene_frac) {
            return fail("covariate gene fraction must be in [0,1]".into());
        }
        if !(0.0..=1.0).contains(&self.imbalance) {
            return fail("imbalance must be a probability".into());
        }
        if !(self.sf_range.0 > 0.0 && self.sf_range.1 >= self.sf_range.0) {
            return fail("size-factor range must be positive and ordered".into());
        }
        if self.gamma_range.1 < self.gamma_range.0 {
            return fail("gamma range must be ordered".into());
        }
        Ok(())
    }
}

/// Ground truth for one simulated dataset.
#[derive(Debug, Clone)]
pub struct TruthLabels {
    pub de_set: BTreeSet<usize>,
    pub null_set: BTreeSet<usize>,
    pub true_beta: Vec<f64>,
}

/// Aggregated metrics for one (cell, method) pair.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub setting: u8,
    pub n: usize,
    pub m: usize,
    pub pi_de: f64,
    pub fc: f64,
    pub q: f64,
    pub covariates: bool,
    pub method: String,
    pub fdr: f64,
    pub fdr_se: f64,
    pub power: f64,
    pub power_se: f64,
    pub replicates: usize,
    pub skipped: bool,
}

#[derive(Debug, Clone)]
pub struct GridFailure {
    pub cell: usize,
    pub rep: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct GridOutput {
    pub rows: Vec<MetricsRow>,
    pub failures: Vec<GridFailure>,
}

/// Draw m (alpha_j, phi_j) pairs from the configured source.
pub fn load_gene_params(source: &ParamSource, m: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    let mut rng = seeded_rng(seed, &[tags::GENE_PARAMS]);
    match source {
        ParamSource::Builtin => {
            let log_mean = rand_distr::Normal::new(50.0f64.ln(), 1.0).unwrap();
            let noise = rand_distr::LogNormal::new(0.0, 0.3).unwrap();
            Ok((0..m)
                .map(|_| {
                    let alpha = loop {
                        let a = log_mean.sample(&mut rng);
                        if a >= 0.0 {
                            break a; // mean >= 1
                        }
                    };
                    let mu = alpha.exp();
                    let phi = 0.05 + (2.0 / mu) * noise.sample(&mut rng);
                    (alpha, phi)
                })
                .collect())
        }
        ParamSource::File(path) => {
            let rows = crate::io::read_params_tsv(path)?;
            if rows.is_empty() {
                return Err(Error::InvalidConfig {
                    msg: format!("{}: no parameter rows", path.display()),
                });
            }
            Ok((0..m)
                .map(|_| {
                    let (mean, phi) = rows[rng.gen_range(0..rows.len())];
                    (mean.ln(), phi)
                })
                .collect())
        }
    }
}

/// Deterministic plan for one replicate: all latent quantities except the
/// count noise itself.
#[derive(Debug, Clone)]
pub struct DatasetPlan {
    pub alphas: Vec<f64>,
    pub phis: Vec<f64>,
    pub size_factors: Vec<f64>,
    /// Binary covariate per sample when the covariate regime is on.
    pub covariate: Option<Vec<f64>>,
    pub gammas: Vec<f64>,
    pub truth: TruthLabels,
}

impl DatasetPlan {
    /// Generating mean for (sample, gene) given the treatment indicator.
    pub fn mean(&self, sample: usize, gene: usize, treated: bool) -> f64 {
        let mut eta = self.size_factors[sample].ln() + self.alphas[gene];
        if treated {
            eta += self.truth.true_beta[gene];
        }
        if let Some(z) = &self.covariate {
            eta += z[sample] * self.gammas[gene];
        }
        eta.exp()
    }
}

/// Draw the latent plan for replicate `rep_index` of `config`.
pub fn plan_dataset(config: &SimulationConfig, rep_index: usize) -> Result<DatasetPlan> {
    config.validate()?;
    let rep = rep_index as u64;
    let params = load_gene_params(
        &config.param_source,
        config.m,
        derive_seed(config.seed, &[tags::REPLICATE, rep]),
    )?;
    let (alphas, phis): (Vec<f64>, Vec<f64>) = params.into_iter().unzip();

    let mut rng = seeded_rng(config.seed, &[tags::REPLICATE, rep, tags::SIM_META]);
    let n = config.n;
    let m = config.m;

    let size_factors: Vec<f64> = (0..n)
        .map(|_| rng.gen_range(config.sf_range.0..=config.sf_range.1))
        .collect();

    let de_count = (config.pi_de * m as f64).round() as usize;
    let de_set: BTreeSet<usize> = rand::seq::index::sample(&mut rng, m, de_count)
        .into_iter()
        .collect();
    let mut true_beta = vec![0.0; m];
    for &j in &de_set {
        let sign = if config.all_up || rng.gen_bool(0.5) {
            1.0
        } else {
            -1.0
        };
        true_beta[j] = sign * config.fc.ln();
    }

    let (covariate, gammas) = if config.covariate_setting {
        let z: Vec<f64> = (0..n)
            .map(|i| {
                let treated = i >= n / 2;
                let p = if treated {
                    config.imbalance
                } else {
                    1.0 - config.imbalance
                };
                if rng.gen_bool(p) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let affected_count = (config.covariate_gene_frac * m as f64).round() as usize;
        let affected: BTreeSet<usize> = rand::seq::index::sample(&mut rng, m, affected_count)
            .into_iter()
            .collect();
        let mut gammas = vec![0.0; m];
        for &j in &affected {
            gammas[j] = rng.gen_range(config.gamma_range.0..=config.gamma_range.1);
        }
        (Some(z), gammas)
    } else {
        (None, vec![0.0; m])
    };

    let null_set: BTreeSet<usize> = (0..m).filter(|j| !de_set.contains(j)).collect();
    Ok(DatasetPlan {
        alphas,
        phis,
        size_factors,
        covariate,
        gammas,
        truth: TruthLabels {
            de_set,
            null_set,
            true_beta,
        },
    })
}

/// Materialize counts from a plan with per-gene RNG substreams.
pub fn generate_from_plan(
    config: &SimulationConfig,
    rep_index: usize,
    plan: &DatasetPlan,
) -> Result<(CountMatrix, DesignInfo)> {
    let n = config.n;
    let m = config.m;
    let rep = rep_index as u64;
    let width = (m.max(2) - 1).to_string().len();

    let columns: Vec<Result<Vec<u64>>> = (0..m)
        .into_par_iter()
        .map(|j| {
            let mut rng = seeded_rng(
                config.seed,
                &[tags::REPLICATE, rep, tags::SIM_COUNTS, j as u64],
            );
            (0..n)
                .map(|i| {
                    let mu = plan.mean(i, j, i >= n / 2);
                    sample_nb(mu, plan.phis[j], &mut rng)
                })
                .collect()
        })
        .collect();

    let mut grid = vec![0u64; n * m];
    for (j, col) in columns.into_iter().enumerate() {
        for (i, v) in col?.into_iter().enumerate() {
            grid[i * m + j] = v;
        }
    }
    let counts = CountMatrix::new(
        grid,
        (0..n).map(|i| format!("sample_{i:02}")).collect(),
        (0..m).map(|j| format!("gene_{j:0width$}")).collect(),
    )?;

    let labels: Vec<String> = (0..n)
        .map(|i| {
            if i < n / 2 {
                "control".to_string()
            } else {
                "treatment".to_string()
            }
        })
        .collect();
    let (cov, p) = match &plan.covariate {
        Some(z) => (z.clone(), 1),
        None => (Vec::new(), 0),
    };
    let design = DesignInfo::from_labels(&labels, cov, p)?;
    Ok((counts, design))
}

/// Generate one replicate: evenly split control/treatment, uniforms for the
/// size factors, +/-log(FC) effects on a random DE subset, and optionally a
/// treatment-correlated binary covariate affecting a random gene subset.
pub fn generate_dataset(
    config: &SimulationConfig,
    rep_index: usize,
) -> Result<(CountMatrix, DesignInfo, TruthLabels)> {
    let plan = plan_dataset(config, rep_index)?;
    let (counts, design) = generate_from_plan(config, rep_index, &plan)?;
    Ok((counts, design, plan.truth))
}

/// Per-replicate confusion summary: (FDP, TPR).
/// FDP floors the denominator at 1; TPR is 0 when there are no DE genes.
pub fn confusion(discoveries: &BTreeSet<usize>, truth: &TruthLabels) -> (f64, f64) {
    let d = discoveries.len();
    let tp = discoveries.intersection(&truth.de_set).count();
    let fp = discoveries.intersection(&truth.null_set).count();
    debug_assert_eq!(tp + fp, d);
    let fdp = fp as f64 / d.max(1) as f64;
    let tpr = if truth.de_set.is_empty() {
        0.0
    } else {
        tp as f64 / truth.de_set.len() as f64
    };
    (fdp, tpr)
}

/// A pluggable method for the harness. `run` returns None when the method
/// does not apply to the dataset (recorded as SKIPPED).
pub trait MethodRunner: Sync {
    fn label(&self) -> String;
    fn run(
        &self,
        counts: &CountMatrix,
        design: &DesignInfo,
        s: &SizeFactors,
        truth: Option<&TruthLabels>,
        q: f64,
        seed: u64,
    ) -> Result<Option<BTreeSet<usize>>>;
}

/// The production methods.
pub struct StandardRunner {
    pub method: Method,
    pub adjust: bool,
    pub stat_mode: Option<StatMode>,
}

impl MethodRunner for StandardRunner {
    fn label(&self) -> String {
        self.method.to_string()
    }

    fn run(
        &self,
        counts: &CountMatrix,
        design: &DesignInfo,
        s: &SizeFactors,
        _truth: Option<&TruthLabels>,
        q: f64,
        seed: u64,
    ) -> Result<Option<BTreeSet<usize>>> {
        match self.method {
            Method::Nullstrap => {
                let out = run_nullstrap(
                    counts,
                    design,
                    &NullstrapOptions {
                        q,
                        seed,
                        adjust: self.adjust,
                        stat_mode: self.stat_mode,
                        size_factors: Some(s.clone()),
                        ..Default::default()
                    },
                )?;
                Ok(Some(out.filter.discoveries))
            }
            m if m.is_wilcoxon() && design.p() > 0 => Ok(None),
            m => Ok(Some(run_baseline(m, counts, design, s, q)?.discoveries)),
        }
    }
}

/// Run every (cell, replicate, method) combination and aggregate.
pub fn run_grid(cells: &[SimulationConfig], methods: &[Method]) -> GridOutput {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (cell_idx, cell) in cells.iter().enumerate() {
        let runners: Vec<StandardRunner> = methods
            .iter()
            .map(|&method| StandardRunner {
                method,
                adjust: cell.adjust,
                stat_mode: cell.stat_mode,
            })
            .collect();
        let refs: Vec<&dyn MethodRunner> = runners.iter().map(|r| r as &dyn MethodRunner).collect();
        run_cell(cell, cell_idx, &refs, &mut rows, &mut failures);
    }
    GridOutput { rows, failures }
}

/// Same as [`run_grid`] with caller-supplied runners (used for harness
/// self-tests with stub methods).
pub fn run_grid_with(cells: &[SimulationConfig], runners: &[&dyn MethodRunner]) -> GridOutput {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (cell_idx, cell) in cells.iter().enumerate() {
        run_cell(cell, cell_idx, runners, &mut rows, &mut failures);
    }
    GridOutput { rows, failures }
}

fn run_cell(
    cell: &SimulationConfig,
    cell_idx: usize,
    runners: &[&dyn MethodRunner],
    rows: &mut Vec<MetricsRow>,
    failures: &mut Vec<GridFailure>,
) {
    type RepOutcome = Vec<Option<(f64, f64)>>;
    let rep_results: Vec<std::result::Result<RepOutcome, String>> = (0..cell.replicates)
        .into_par_iter()
        .map(|rep| {
            let (counts, design, truth) =
                generate_dataset(cell, rep).map_err(|e| e.to_string())?;
            let s = estimate_size_factors(&counts).map_err(|e| e.to_string())?;
            let seed = derive_seed(cell.seed, &[tags::REPLICATE, rep as u64, tags::PIPELINE]);
            runners
                .iter()
                .map(|runner| {
                    let disc = runner
                        .run(&counts, &design, &s, Some(&truth), cell.q, seed)
                        .map_err(|e| format!("{}: {e}", runner.label()))?;
                    Ok(disc.map(|d| confusion(&d, &truth)))
                })
                .collect::<std::result::Result<RepOutcome, String>>()
        })
        .collect();

    let mut ok_reps: Vec<RepOutcome> = Vec::new();
    for (rep, r) in rep_results.into_iter().enumerate() {
        match r {
            Ok(v) => ok_reps.push(v),
            Err(message) => failures.push(GridFailure {
                cell: cell_idx,
                rep,
                message,
            }),
        }
    }

    for (mi, runner) in runners.iter().enumerate() {
        let values: Vec<(f64, f64)> = ok_reps.iter().filter_map(|rep| rep[mi]).collect();
        let skipped = values.is_empty();
        let (fdr, fdr_se) = mean_se(values.iter().map(|v| v.0));
        let (power, power_se) = mean_se(values.iter().map(|v| v.1));
        rows.push(MetricsRow {
            setting: cell.setting,
            n: cell.n,
            m: cell.m,
            pi_de: cell.pi_de,
            fc: cell.fc,
            q: cell.q,
            covariates: cell.covariate_setting,
            method: runner.label(),
            fdr,
            fdr_se,
            power,
            power_se,
            replicates: values.len(),
            skipped,
        });
    }
}

fn mean_se(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let r = v.len();
    if r == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / r as f64;
    if r == 1 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r - 1) as f64;
    (mean, (var / r as f64).sqrt())
}

/// Expand axis lists into grid cells, deriving one seed per cell from the
/// master seed so replicate streams never collide across cells.
pub fn expand_grid(
    base: &SimulationConfig,
    ns: &[usize],
    fcs: &[f64],
    pis: &[f64],
    qs: &[f64],
) -> Vec<SimulationConfig> {
    let mut cells = Vec::new();
    let mut cell_idx = 0u64;
    for &n in ns {
        for &fc in fcs {
            for &pi_de in pis {
                for &q in qs {
                    let mut c = base.clone();
                    c.n = n;
                    c.fc = fc;
                    c.pi_de = pi_de;
                    c.q = q;
                    c.seed = derive_seed(base.seed, &[tags::GRID_CELL, cell_idx]);
                    cells.push(c);
                    cell_idx += 1;
                }
            }
        }
    }
    cells
}

/// Discovery-count distribution for one method across permutations.
#[derive(Debug, Clone)]
pub struct NullCheckResult {
    pub method: String,
    pub counts: Vec<u64>,
}

impl NullCheckResult {
    pub fn mean(&self) -> f64 {
        if self.counts.is_empty() {
            return f64::NAN;
        }
        self.counts.iter().sum::<u64>() as f64 / self.counts.len() as f64
    }

    /// Nearest-rank percentile of the discovery counts.
    pub fn percentile(&self, frac: f64) -> u64 {
        if self.counts.is_empty() {
            return 0;
        }
        let mut sorted = self.counts.clone();
        sorted.sort_unstable();
        let rank = (frac * sorted.len() as f64).ceil() as usize;
        sorted[rank.clamp(1, sorted.len()) - 1]
    }

    pub fn max(&self) -> u64 {
        self.counts.iter().copied().max().unwrap_or(0)
    }
}

/// Permutation negative control: shuffle condition labels (group sizes
/// preserved), rerun each method at level q, record discovery counts.
pub fn permutation_null_check(
    counts: &CountMatrix,
    design: &DesignInfo,
    permutations: usize,
    q: f64,
    methods: &[Method],
    seed: u64,
) -> Result<Vec<NullCheckResult>> {
    let runners: Vec<StandardRunner> = methods
        .iter()
        .map(|&method| StandardRunner {
            method,
            adjust: true,
            stat_mode: None,
        })
        .collect();
    let refs: Vec<&dyn MethodRunner> = runners.iter().map(|r| r as &dyn MethodRunner).collect();
    permutation_null_check_with(counts, design, permutations, q, &refs, seed)
}

/// Generic variant taking caller-supplied runners.
pub fn permutation_null_check_with(
    counts: &CountMatrix,
    design: &DesignInfo,
    permutations: usize,
    q: f64,
    runners: &[&dyn MethodRunner],
    seed: u64,
) -> Result<Vec<NullCheckResult>> {
    if design.k() != 2 {
        return Err(Error::RequiresTwoGroups {
            what: "permutation null check".into(),
            k: design.k(),
        });
    }
    let s = estimate_size_factors(counts)?;

    let per_perm: Vec<Result<Vec<u64>>> = (0..permutations)
        .into_par_iter()
        .map(|r| {
            let mut rng = seeded_rng(seed, &[tags::PERMUTATION, r as u64]);
            let mut order: Vec<usize> = (0..design.n()).collect();
            order.shuffle(&mut rng);
            let permuted = design.with_permuted_treatment(&order);
            let run_seed = derive_seed(seed, &[tags::PERMUTATION, r as u64, tags::PIPELINE]);
            runners
                .iter()
                .map(|runner| {
                    let disc = runner.run(counts, &permuted, &s, None, q, run_seed)?;
                    Ok(disc.map_or(0, |d| d.len() as u64))
                })
                .collect()
        })
        .collect();

    let mut results: Vec<NullCheckResult> = runners
        .iter()
        .map(|r| NullCheckResult {
            method: r.label(),
            counts: Vec::with_capacity(permutations),
        })
        .collect();
    for perm in per_perm {
        for (mi, count) in perm?.into_iter().enumerate() {
            results[mi].counts.push(count);
        }
    }
    Ok(results)
}
