//! Count matrices, experimental designs, and size-factor normalization.
//!
//! Counts are held samples x genes (row-major) to match the model notation;
//! on disk the orientation is genes x samples (see the `io` module).

use crate::error::{Error, Result};
use std::collections::HashSet;

/// An n x m grid of non-negative integer read counts with identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    counts: Vec<u64>,
    n_samples: usize,
    n_genes: usize,
    sample_ids: Vec<String>,
    gene_ids: Vec<String>,
}

impl CountMatrix {
    /// Build from a row-major samples x genes grid of integers.
    pub fn new(
        counts: Vec<u64>,
        sample_ids: Vec<String>,
        gene_ids: Vec<String>,
    ) -> Result<Self> {
        let n = sample_ids.len();
        let m = gene_ids.len();
        if counts.len() != n * m {
            return Err(Error::DimensionMismatch {
                what: "count grid",
                expected: n * m,
                found: counts.len(),
            });
        }
        check_unique(&sample_ids)?;
        check_unique(&gene_ids)?;
        Ok(CountMatrix {
            counts,
            n_samples: n,
            n_genes: m,
            sample_ids,
            gene_ids,
        })
    }

    /// Build from real-valued sample rows, rejecting negative or fractional
    /// entries with their (sample, gene) coordinates.
    pub fn from_real_rows(
        rows: &[Vec<f64>],
        sample_ids: Vec<String>,
        gene_ids: Vec<String>,
    ) -> Result<Self> {
        let m = gene_ids.len();
        let mut counts = Vec::with_capacity(rows.len() * m);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::DimensionMismatch {
                    what: "count row",
                    expected: m,
                    found: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                if v < 0.0 {
                    return Err(Error::NegativeCount { row: i, col: j });
                }
                if !v.is_finite() || v.fract() != 0.0 {
                    return Err(Error::NonIntegerCount { row: i, col: j });
                }
                counts.push(v as u64);
            }
        }
        CountMatrix::new(counts, sample_ids, gene_ids)
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_genes(&self) -> usize {
        self.n_genes
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn gene_ids(&self) -> &[String] {
        &self.gene_ids
    }

    #[inline]
    pub fn count(&self, sample: usize, gene: usize) -> u64 {
        self.counts[sample * self.n_genes + gene]
    }

    /// Counts of one gene across samples, as floats for model fitting.
    pub fn gene_counts(&self, gene: usize) -> Vec<f64> {
        (0..self.n_samples)
            .map(|i| self.count(i, gene) as f64)
            .collect()
    }

    pub fn is_gene_all_zero(&self, gene: usize) -> bool {
        (0..self.n_samples).all(|i| self.count(i, gene) == 0)
    }

    /// FNV-1a digest of dimensions and entries; used to assert that every
    /// method in a benchmark cell saw the identical dataset.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: u64| {
            for byte in v.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(self.n_samples as u64);
        eat(self.n_genes as u64);
        for &c in &self.counts {
            eat(c);
        }
        h
    }
}

fn check_unique(ids: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId { id: id.clone() });
        }
    }
    Ok(())
}

/// Per-sample treatment assignment plus optional covariates.
///
/// Conditions are indexed 1..=K with K the reference level. When built from
/// label strings, levels are sorted and the lexicographically first label
/// becomes the reference; the remaining labels map to conditions 1..K-1 in
/// sorted order, matching the usual factor convention.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignInfo {
    treatment: Vec<usize>,
    k: usize,
    covariates: Vec<f64>,
    p: usize,
    level_names: Vec<String>,
}

impl DesignInfo {
    pub fn new(
        treatment: Vec<usize>,
        k: usize,
        covariates: Vec<f64>,
        p: usize,
        level_names: Vec<String>,
    ) -> Result<Self> {
        let n = treatment.len();
        if k == 0 || level_names.len() != k {
            return Err(Error::InvalidConfig {
                msg: format!("{} level names for K = {k}", level_names.len()),
            });
        }
        if covariates.len() != n * p {
            return Err(Error::DimensionMismatch {
                what: "covariate grid",
                expected: n * p,
                found: covariates.len(),
            });
        }
        let mut group_sizes = vec![0usize; k];
        for (i, &label) in treatment.iter().enumerate() {
            if label < 1 || label > k {
                return Err(Error::UnknownCondition {
                    sample: i,
                    label,
                    k,
                });
            }
            group_sizes[label - 1] += 1;
        }
        for (idx, &size) in group_sizes.iter().enumerate() {
            if size < 2 {
                return Err(Error::TooFewSamples {
                    condition: level_names[idx].clone(),
                    count: size,
                });
            }
        }
        Ok(DesignInfo {
            treatment,
            k,
            covariates,
            p,
            level_names,
        })
    }

    /// Build from condition label strings and a row-major n x p covariate grid.
    pub fn from_labels(labels: &[String], covariates: Vec<f64>, p: usize) -> Result<Self> {
        let mut levels: Vec<String> = labels.to_vec();
        levels.sort();
        levels.dedup();
        let k = levels.len();
        // reference (sorted first) is condition K; the rest shift down by one
        let index_of = |label: &str| -> usize {
            let pos = levels.iter().position(|l| l == label).unwrap();
            if pos == 0 {
                k
            } else {
                pos
            }
        };
        let treatment: Vec<usize> = labels.iter().map(|l| index_of(l)).collect();
        let mut level_names = vec![String::new(); k];
        for (pos, name) in levels.iter().enumerate() {
            let idx = if pos == 0 { k } else { pos };
            level_names[idx - 1] = name.clone();
        }
        DesignInfo::new(treatment, k, covariates, p, level_names)
    }

    pub fn n(&self) -> usize {
        self.treatment.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn treatment(&self) -> &[usize] {
        &self.treatment
    }

    /// Name of condition `label` (1..=K).
    pub fn level_name(&self, label: usize) -> &str {
        &self.level_names[label - 1]
    }

    /// Dummy entry x_{i,c} for non-reference condition c+1 (c in 0..K-1).
    #[inline]
    pub fn dummy(&self, sample: usize, c: usize) -> f64 {
        if self.treatment[sample] == c + 1 {
            1.0
        } else {
            0.0
        }
    }

    #[inline]
    pub fn covariate(&self, sample: usize, c: usize) -> f64 {
        self.covariates[sample * self.p + c]
    }

    /// Number of mean-model coefficients: intercept + (K-1) dummies + p covariates.
    pub fn n_coefficients(&self) -> usize {
        1 + (self.k - 1) + self.p
    }

    /// Fill `row` with the full design row [1, x_i, z_i] for `sample`.
    pub fn design_row_into(&self, sample: usize, row: &mut [f64]) {
        row[0] = 1.0;
        for c in 0..self.k - 1 {
            row[1 + c] = self.dummy(sample, c);
        }
        for c in 0..self.p {
            row[self.k + c] = self.covariate(sample, c);
        }
    }

    /// Sample indices belonging to condition `label` (1..=K).
    pub fn group_indices(&self, label: usize) -> Vec<usize> {
        self.treatment
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == label)
            .map(|(i, _)| i)
            .collect()
    }

    /// Same samples with the covariate block dropped.
    pub fn without_covariates(&self) -> DesignInfo {
        DesignInfo {
            treatment: self.treatment.clone(),
            k: self.k,
            covariates: Vec::new(),
            p: 0,
            level_names: self.level_names.clone(),
        }
    }

    /// Reassign condition labels by `order`: sample i receives the label of
    /// sample order[i]. Covariates stay attached to their samples.
    pub fn with_permuted_treatment(&self, order: &[usize]) -> DesignInfo {
        let treatment = order.iter().map(|&src| self.treatment[src]).collect();
        DesignInfo {
            treatment,
            k: self.k,
            covariates: self.covariates.clone(),
            p: self.p,
            level_names: self.level_names.clone(),
        }
    }
}

/// Strictly positive per-sample scale factors.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeFactors {
    values: Vec<f64>,
}

impl SizeFactors {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for (i, &v) in values.iter().enumerate() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidSizeFactor { index: i, value: v });
            }
        }
        Ok(SizeFactors { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, sample: usize) -> f64 {
        self.values[sample]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Per-gene disposition after input validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneFlag {
    Analyzable,
    AllZero,
}

/// A dataset that passed validation, with all-zero genes flagged for
/// exclusion from fitting (they stay in reports with status ALL_ZERO).
#[derive(Debug, Clone)]
pub struct ValidatedDataset {
    pub counts: CountMatrix,
    pub design: DesignInfo,
    pub flags: Vec<GeneFlag>,
}

impl ValidatedDataset {
    pub fn analyzable_genes(&self) -> Vec<usize> {
        self.flags
            .iter()
            .enumerate()
            .filter(|(_, f)| **f == GeneFlag::Analyzable)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn flagged_genes(&self) -> Vec<usize> {
        self.flags
            .iter()
            .enumerate()
            .filter(|(_, f)| **f == GeneFlag::AllZero)
            .map(|(j, _)| j)
            .collect()
    }
}

/// Check counts/design agreement and flag all-zero genes.
pub fn validate_inputs(counts: &CountMatrix, design: &DesignInfo) -> Result<ValidatedDataset> {
    if design.n() != counts.n_samples() {
        return Err(Error::DimensionMismatch {
            what: "design rows",
            expected: counts.n_samples(),
            found: design.n(),
        });
    }
    let flags = (0..counts.n_genes())
        .map(|j| {
            if counts.is_gene_all_zero(j) {
                GeneFlag::AllZero
            } else {
                GeneFlag::Analyzable
            }
        })
        .collect();
    Ok(ValidatedDataset {
        counts: counts.clone(),
        design: design.clone(),
        flags,
    })
}

/// Median-of-ratios size factors.
///
/// The pseudo-reference for gene j is its geometric mean across samples;
/// only genes with strictly positive counts in every sample enter the
/// reference set. s_i is the median of the sample's ratios to the reference.
pub fn estimate_size_factors(counts: &CountMatrix) -> Result<SizeFactors> {
    let n = counts.n_samples();
    let m = counts.n_genes();

    let mut reference: Vec<(usize, f64)> = Vec::new();
    for j in 0..m {
        let mut log_sum = 0.0;
        let mut all_positive = true;
        for i in 0..n {
            let c = counts.count(i, j);
            if c == 0 {
                all_positive = false;
                break;
            }
            log_sum += (c as f64).ln();
        }
        if all_positive {
            reference.push((j, (log_sum / n as f64).exp()));
        }
    }
    if reference.is_empty() {
        return Err(Error::NoReferenceGene);
    }

    let mut values = Vec::with_capacity(n);
    let mut ratios = Vec::with_capacity(reference.len());
    for i in 0..n {
        ratios.clear();
        for &(j, gmean) in &reference {
            ratios.push(counts.count(i, j) as f64 / gmean);
        }
        values.push(median_in_place(&mut ratios));
    }
    SizeFactors::new(values)
}

/// Median of a scratch slice; even lengths average the middle pair.
fn median_in_place(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Depth-corrected counts: entry (i, j) is Y_ij / s_i, row-major n x m.
pub fn normalize_counts(counts: &CountMatrix, s: &SizeFactors) -> Result<Vec<f64>> {
    if s.len() != counts.n_samples() {
        return Err(Error::DimensionMismatch {
            what: "size factors",
            expected: counts.n_samples(),
            found: s.len(),
        });
    }
    let m = counts.n_genes();
    let mut out = Vec::with_capacity(counts.n_samples() * m);
    for i in 0..counts.n_samples() {
        let inv = 1.0 / s.get(i);
        for j in 0..m {
            out.push(counts.count(i, j) as f64 * inv);
        }
    }
    Ok(out)
}

/// Mean normalized count per gene (the `baseMean` column in reports).
pub fn base_means(counts: &CountMatrix, s: &SizeFactors) -> Result<Vec<f64>> {
    let normalized = normalize_counts(counts, s)?;
    let n = counts.n_samples();
    let m = counts.n_genes();
    let mut out = vec![0.0; m];
    for i in 0..n {
        for j in 0..m {
            out[j] += normalized[i * m + j];
        }
    }
    for v in &mut out {
        *v /= n as f64;
    }
    Ok(out)
}
