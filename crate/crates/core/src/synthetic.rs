//! Synthetic null data generation.
//!
//! Null counts are drawn from the fitted per-gene model with the treatment
//! effect removed: mu0_ij = exp(log(s~_i) + alpha_j + z_i'gamma_j), where
//! s~ is a with-replacement resample of the estimated size factors shared by
//! all genes, and the gene keeps its estimated dispersion. Draws use
//! per-gene RNG substreams keyed on (seed, gene), so the generated matrix is
//! identical under any parallel schedule.

use crate::data::{CountMatrix, DesignInfo, SizeFactors};
use crate::error::{Error, Result};
use crate::glm::GeneFit;
use crate::rng::{seeded_rng, tags};
use rand::distributions::Distribution;
use rand::Rng;
use rayon::prelude::*;

/// Dispersions below this are sampled as pure Poisson.
const POISSON_LIMIT: f64 = 1e-8;

/// Everything needed to materialize one synthetic null matrix.
#[derive(Debug, Clone)]
pub struct SyntheticNullSpec {
    /// Row-major n x m grid of null means; zero rows for flagged genes.
    pub null_means: Vec<f64>,
    /// Shared with-replacement resample of the estimated size factors.
    pub resampled_size_factors: Vec<f64>,
    /// Per-gene resamples, populated only in the exploratory per-gene mode
    /// (row-major n x m).
    pub per_gene_size_factors: Option<Vec<f64>>,
    /// Estimated dispersions; NaN for flagged genes.
    pub dispersions: Vec<f64>,
    /// Which genes carry a usable fit.
    pub analyzable: Vec<bool>,
    pub seed: u64,
    pub sample_ids: Vec<String>,
    pub gene_ids: Vec<String>,
}

impl SyntheticNullSpec {
    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_genes(&self) -> usize {
        self.gene_ids.len()
    }

    /// Size-factor vector used when refitting gene `j` on the null data.
    pub fn size_factors_for_gene(&self, j: usize) -> Vec<f64> {
        match &self.per_gene_size_factors {
            Some(grid) => {
                let n = self.n_samples();
                let m = self.n_genes();
                (0..n).map(|i| grid[i * m + j]).collect()
            }
            None => self.resampled_size_factors.clone(),
        }
    }
}

/// One draw from NB(mu, phi) with variance mu + phi*mu^2, via the
/// gamma-Poisson mixture; phi below 1e-8 short-circuits to Poisson.
pub fn sample_nb<R: Rng>(mu: f64, phi: f64, rng: &mut R) -> Result<u64> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidNbMean { mu });
    }
    if !(phi > 0.0 && phi.is_finite()) {
        return Err(Error::InvalidNbDispersion { phi });
    }
    let lambda = if phi < POISSON_LIMIT {
        mu
    } else {
        let shape = 1.0 / phi;
        let scale = phi * mu;
        rand_distr::Gamma::new(shape, scale)
            .map_err(|_| Error::InvalidNbDispersion { phi })?
            .sample(rng)
    };
    if lambda <= 0.0 || !lambda.is_finite() {
        return Ok(0);
    }
    let draw = rand_distr::Poisson::new(lambda)
        .map_err(|_| Error::InvalidNbMean { mu: lambda })?
        .sample(rng);
    Ok(draw as u64)
}

fn null_mean(fit: &GeneFit, design: &DesignInfo, log_sf: f64, sample: usize) -> f64 {
    let mut eta = log_sf + fit.alpha;
    for (c, g) in fit.gamma.iter().enumerate() {
        eta += design.covariate(sample, c) * g;
    }
    eta.exp()
}

/// Build the null-generation spec from full-model fits: resample one shared
/// size-factor vector, drop the treatment block, keep covariate effects and
/// dispersions.
pub fn build_null_spec(
    fits: &[GeneFit],
    design: &DesignInfo,
    s: &SizeFactors,
    seed: u64,
) -> SyntheticNullSpec {
    build_spec_inner(fits, design, s, seed, false)
}

/// Exploratory variant: each gene draws its own size-factor resample.
pub fn build_null_spec_per_gene_sf(
    fits: &[GeneFit],
    design: &DesignInfo,
    s: &SizeFactors,
    seed: u64,
) -> SyntheticNullSpec {
    build_spec_inner(fits, design, s, seed, true)
}

fn build_spec_inner(
    fits: &[GeneFit],
    design: &DesignInfo,
    s: &SizeFactors,
    seed: u64,
    per_gene: bool,
) -> SyntheticNullSpec {
    let n = design.n();
    let m = fits.len();

    let mut rng = seeded_rng(seed, &[tags::SF_RESAMPLE]);
    let shared: Vec<f64> = (0..n).map(|_| s.get(rng.gen_range(0..s.len()))).collect();

    let per_gene_grid: Option<Vec<f64>> = per_gene.then(|| {
        let mut grid = vec![0.0; n * m];
        for j in 0..m {
            let mut g_rng = seeded_rng(seed, &[tags::SF_RESAMPLE, j as u64]);
            for i in 0..n {
                grid[i * m + j] = s.get(g_rng.gen_range(0..s.len()));
            }
        }
        grid
    });

    let analyzable: Vec<bool> = fits.iter().map(|f| f.status.is_usable()).collect();
    let dispersions: Vec<f64> = fits
        .iter()
        .map(|f| if f.status.is_usable() { f.phi } else { f64::NAN })
        .collect();

    let mut null_means = vec![0.0; n * m];
    for j in 0..m {
        if !analyzable[j] {
            continue;
        }
        for i in 0..n {
            let sf = match &per_gene_grid {
                Some(grid) => grid[i * m + j],
                None => shared[i],
            };
            null_means[i * m + j] = null_mean(&fits[j], design, sf.ln(), i);
        }
    }

    SyntheticNullSpec {
        null_means,
        resampled_size_factors: shared,
        per_gene_size_factors: per_gene_grid,
        dispersions,
        analyzable,
        seed,
        sample_ids: (0..n).map(|i| format!("sample_{i}")).collect(),
        gene_ids: (0..m).map(|j| format!("gene_{j}")).collect(),
    }
}

/// Label the spec with the identifiers of the originating dataset.
pub fn label_spec(spec: &mut SyntheticNullSpec, counts: &CountMatrix) {
    spec.sample_ids = counts.sample_ids().to_vec();
    spec.gene_ids = counts.gene_ids().to_vec();
}

/// Draw the synthetic null matrix: Y~_ij ~ NB(mu0_ij, phi_j), independent
/// across cells, one RNG substream per gene. Flagged genes emit zero columns.
pub fn generate_null_matrix(spec: &SyntheticNullSpec) -> Result<CountMatrix> {
    let n = spec.n_samples();
    let m = spec.n_genes();

    let columns: Vec<Result<Vec<u64>>> = (0..m)
        .into_par_iter()
        .map(|j| {
            if !spec.analyzable[j] {
                return Ok(vec![0; n]);
            }
            let mut rng = seeded_rng(spec.seed, &[tags::NULL_DRAW, j as u64]);
            let phi = spec.dispersions[j];
            (0..n)
                .map(|i| sample_nb(spec.null_means[i * m + j], phi, &mut rng))
                .collect()
        })
        .collect();

    let mut counts = vec![0u64; n * m];
    for (j, col) in columns.into_iter().enumerate() {
        let col = col?;
        for (i, v) in col.into_iter().enumerate() {
            counts[i * m + j] = v;
        }
    }
    CountMatrix::new(counts, spec.sample_ids.clone(), spec.gene_ids.clone())
}
