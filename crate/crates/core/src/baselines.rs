//! Comparison methods: BH-adjusted NB-GLM Wald testing and Wilcoxon
//! rank-sum tests on raw or normalized counts.

use crate::data::{normalize_counts, CountMatrix, DesignInfo, SizeFactors};
use crate::error::{Error, Result};
use crate::glm::{fit_all_genes_with, normal_sf, wald_p_value, FitAllOptions};
use rayon::prelude::*;
use std::collections::BTreeSet;

/// Total group size at or below which the rank-sum p-value is exact.
const WILCOXON_EXACT_LIMIT: usize = 16;

/// Benchmark method identities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Nullstrap,
    NbGlmBh,
    WilcoxonRaw,
    WilcoxonNorm,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Nullstrap,
        Method::NbGlmBh,
        Method::WilcoxonRaw,
        Method::WilcoxonNorm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Nullstrap => "NULLSTRAP",
            Method::NbGlmBh => "NBGLM_BH",
            Method::WilcoxonRaw => "WILCOXON_RAW",
            Method::WilcoxonNorm => "WILCOXON_NORM",
        }
    }

    pub fn is_wilcoxon(self) -> bool {
        matches!(self, Method::WilcoxonRaw | Method::WilcoxonNorm)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nullstrap" => Ok(Method::Nullstrap),
            "nbglm_bh" => Ok(Method::NbGlmBh),
            "wilcoxon_raw" => Ok(Method::WilcoxonRaw),
            "wilcoxon_norm" => Ok(Method::WilcoxonNorm),
            other => Err(Error::InvalidConfig {
                msg: format!("unknown method `{other}`"),
            }),
        }
    }
}

/// Per-method decision output at a target FDR level.
#[derive(Debug, Clone)]
pub struct MethodResult {
    pub method: Method,
    /// Per-gene p-values; None for genes without a usable test.
    pub p_values: Vec<Option<f64>>,
    /// Gene indices declared at level q.
    pub discoveries: BTreeSet<usize>,
}

/// Benjamini-Hochberg step-up over `p`, returning the rejected indices.
/// The denominator m is the length of `p`.
pub fn bh_discoveries(p: &[f64], q: f64) -> Vec<usize> {
    let m = p.len();
    if m == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap());
    let mut cutoff: Option<f64> = None;
    for (rank, &idx) in order.iter().enumerate().rev() {
        if p[idx] <= (rank + 1) as f64 * q / m as f64 {
            cutoff = Some(p[idx]);
            break;
        }
    }
    match cutoff {
        Some(c) => (0..m).filter(|&j| p[j] <= c).collect(),
        None => Vec::new(),
    }
}

/// Exact two-sided rank-sum p by counting rank splits, for integer ranks
/// 1..N without ties. Uses the classic subset-sum table.
fn exact_rank_sum_p(w_obs: f64, n_a: usize, n_total: usize) -> f64 {
    let max_w = n_total * (n_total + 1) / 2;
    // ways[k][w] = number of size-k subsets of {1..t} with rank sum w
    let mut ways = vec![vec![0.0f64; max_w + 1]; n_a + 1];
    ways[0][0] = 1.0;
    for t in 1..=n_total {
        for k in (1..=n_a.min(t)).rev() {
            for w in (t..=max_w).rev() {
                ways[k][w] += ways[k - 1][w - t];
            }
        }
    }
    let total: f64 = ways[n_a].iter().sum();
    let w = w_obs.round() as usize;
    let p_le: f64 = ways[n_a][..=w.min(max_w)].iter().sum::<f64>() / total;
    let p_ge: f64 = ways[n_a][w.min(max_w)..].iter().sum::<f64>() / total;
    (2.0 * p_le.min(p_ge)).min(1.0)
}

/// Two-sided Wilcoxon rank-sum test.
///
/// Exact by enumeration of rank splits when the pooled size is at most 16
/// and no ties are present; otherwise a normal approximation with midranks,
/// tie-corrected variance, and continuity correction. All-identical input
/// is degenerate and returns p = 1.
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let n_a = a.len();
    let n = n_a + b.len();

    let mut pooled: Vec<(f64, usize)> = a
        .iter()
        .chain(b.iter())
        .copied()
        .enumerate()
        .map(|(i, v)| (v, i))
        .collect();
    pooled.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());

    if pooled[0].0 == pooled[n - 1].0 {
        return Ok(1.0); // DEGENERATE: every value identical
    }

    // midranks and tie bookkeeping
    let mut ranks = vec![0.0f64; n];
    let mut tie_term = 0.0;
    let mut has_ties = false;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && pooled[end].0 == pooled[start].0 {
            end += 1;
        }
        let t = (end - start) as f64;
        if end - start > 1 {
            has_ties = true;
            tie_term += t * t * t - t;
        }
        let midrank = (start + 1 + end) as f64 / 2.0;
        for item in &pooled[start..end] {
            ranks[item.1] = midrank;
        }
        start = end;
    }

    let w: f64 = (0..n_a).map(|i| ranks[i]).sum();

    if n <= WILCOXON_EXACT_LIMIT && !has_ties {
        return Ok(exact_rank_sum_p(w, n_a, n));
    }

    let n_b = (n - n_a) as f64;
    let n_a_f = n_a as f64;
    let n_f = n as f64;
    let mean = n_a_f * (n_f + 1.0) / 2.0;
    let var = n_a_f * n_b / 12.0 * ((n_f + 1.0) - tie_term / (n_f * (n_f - 1.0)));
    if var <= 0.0 {
        return Ok(1.0);
    }
    let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
    Ok((2.0 * normal_sf(z)).min(1.0))
}

/// Run one baseline at level q. Wilcoxon variants require a two-condition
/// design without covariates; the NB-GLM route handles any design.
pub fn run_baseline(
    method: Method,
    counts: &CountMatrix,
    design: &DesignInfo,
    s: &SizeFactors,
    q: f64,
) -> Result<MethodResult> {
    let p_values = match method {
        Method::Nullstrap => {
            return Err(Error::InvalidConfig {
                msg: "NULLSTRAP is not a baseline; use the pipeline".into(),
            })
        }
        Method::NbGlmBh => {
            // same engine flavor as the pipeline: shrunken dispersions
            let fits = fit_all_genes_with(
                counts,
                design,
                s,
                &FitAllOptions {
                    dispersions: None,
                    shrink_dispersion: true,
                },
            );
            fits.iter()
                .map(|f| {
                    if f.status.is_usable() {
                        wald_p_value(f).ok()
                    } else {
                        None
                    }
                })
                .collect::<Vec<_>>()
        }
        Method::WilcoxonRaw | Method::WilcoxonNorm => {
            if design.k() != 2 {
                return Err(Error::RequiresTwoGroups {
                    what: method.to_string(),
                    k: design.k(),
                });
            }
            if design.p() > 0 {
                return Err(Error::CovariatesUnsupported {
                    method: method.to_string(),
                });
            }
            let m = counts.n_genes();
            let group_a = design.group_indices(1);
            let group_b = design.group_indices(2);
            let normalized = if method == Method::WilcoxonNorm {
                Some(normalize_counts(counts, s)?)
            } else {
                None
            };
            let value = |i: usize, j: usize| -> f64 {
                match &normalized {
                    Some(nm) => nm[i * m + j],
                    None => counts.count(i, j) as f64,
                }
            };
            (0..m)
                .into_par_iter()
                .map(|j| {
                    if counts.is_gene_all_zero(j) {
                        return Ok(None);
                    }
                    let a: Vec<f64> = group_a.iter().map(|&i| value(i, j)).collect();
                    let b: Vec<f64> = group_b.iter().map(|&i| value(i, j)).collect();
                    wilcoxon_rank_sum(&a, &b).map(Some)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };

    // BH over the analyzable genes only
    let present: Vec<usize> = (0..p_values.len())
        .filter(|&j| p_values[j].is_some())
        .collect();
    let p_compact: Vec<f64> = present.iter().map(|&j| p_values[j].unwrap()).collect();
    let discoveries = bh_discoveries(&p_compact, q)
        .into_iter()
        .map(|local| present[local])
        .collect();

    Ok(MethodResult {
        method,
        p_values,
        discoveries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bh_worked_example() {
        // 0.03 <= 3 * 0.05 / 4 = 0.0375, so the first three are rejected
        let p = [0.01, 0.02, 0.03, 0.5];
        assert_eq!(bh_discoveries(&p, 0.05), vec![0, 1, 2]);

        assert!(bh_discoveries(&[1.0, 1.0, 1.0], 0.05).is_empty());
        // single test reduces to a level-q test
        assert_eq!(bh_discoveries(&[0.04], 0.05), vec![0]);
        assert!(bh_discoveries(&[0.06], 0.05).is_empty());
    }

    #[test]
    fn bh_is_monotone_in_q() {
        let p = [0.001, 0.013, 0.04, 0.09, 0.2, 0.6, 0.9];
        let d1: BTreeSet<usize> = bh_discoveries(&p, 0.05).into_iter().collect();
        let d2: BTreeSet<usize> = bh_discoveries(&p, 0.2).into_iter().collect();
        assert!(d1.is_subset(&d2));
    }

    #[test]
    fn wilcoxon_separated_groups_exact() {
        // one-sided 1/20, two-sided 0.1
        let p = wilcoxon_rank_sum(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((p - 0.1).abs() < 1e-12);
        // symmetry in the group labels
        let q = wilcoxon_rank_sum(&[4.0, 5.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((p - q).abs() < 1e-12);
    }

    #[test]
    fn wilcoxon_degenerate_and_empty() {
        assert_eq!(wilcoxon_rank_sum(&[2.0, 2.0], &[2.0, 2.0]).unwrap(), 1.0);
        assert!(matches!(
            wilcoxon_rank_sum(&[], &[1.0]),
            Err(Error::EmptyGroup)
        ));
    }

    #[test]
    fn wilcoxon_interleaved_groups_is_one() {
        let p = wilcoxon_rank_sum(&[1.0, 4.0, 5.0], &[2.0, 3.0, 6.0]).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn three_vs_three_minimum_p_blocks_bh_at_five_percent() {
        // the smallest achievable two-sided exact p with 3-vs-3 groups is
        // 2/C(6,3) = 0.1, so BH at q = 0.05 can never reject
        let p_min = wilcoxon_rank_sum(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap();
        assert!((p_min - 0.1).abs() < 1e-12);
        let many = vec![p_min; 500];
        assert!(bh_discoveries(&many, 0.05).is_empty());
    }

    #[test]
    fn ties_fall_back_to_the_corrected_normal_approximation() {
        let a = [1.0, 2.0, 2.0, 3.0];
        let b = [2.0, 4.0, 5.0, 6.0];
        let p = wilcoxon_rank_sum(&a, &b).unwrap();
        assert!(p > 0.0 && p <= 1.0);

        // large samples route through the approximation as well
        let a: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..20).map(|i| (i as f64) + 6.0).collect();
        let p = wilcoxon_rank_sum(&a, &b).unwrap();
        assert!(p < 0.05);
    }

    #[test]
    fn covariates_are_rejected_for_wilcoxon() {
        let counts = CountMatrix::new(
            vec![5, 6, 7, 8, 9, 10, 11, 12],
            (0..4).map(|i| format!("s{i}")).collect(),
            vec!["g0".into(), "g1".into()],
        )
        .unwrap();
        let labels: Vec<String> = vec!["a".into(), "a".into(), "b".into(), "b".into()];
        let design = DesignInfo::from_labels(&labels, vec![0.0, 1.0, 0.0, 1.0], 1).unwrap();
        let s = SizeFactors::new(vec![1.0; 4]).unwrap();
        let err = run_baseline(Method::WilcoxonRaw, &counts, &design, &s, 0.1).unwrap_err();
        assert!(matches!(err, Error::CovariatesUnsupported { .. }));

        // the NB-GLM route accepts the same design
        let ok = run_baseline(Method::NbGlmBh, &counts, &design, &s, 0.1);
        assert!(ok.is_ok());
    }

    #[test]
    fn all_zero_genes_are_excluded_from_baselines() {
        let counts = CountMatrix::new(
            vec![5, 0, 7, 0, 9, 0, 11, 0],
            (0..4).map(|i| format!("s{i}")).collect(),
            vec!["g0".into(), "g1".into()],
        )
        .unwrap();
        let labels: Vec<String> = vec!["a".into(), "a".into(), "b".into(), "b".into()];
        let design = DesignInfo::from_labels(&labels, Vec::new(), 0).unwrap();
        let s = SizeFactors::new(vec![1.0; 4]).unwrap();
        for method in [Method::NbGlmBh, Method::WilcoxonRaw] {
            let r = run_baseline(method, &counts, &design, &s, 0.1).unwrap();
            assert!(r.p_values[1].is_none(), "{method}");
            assert!(!r.discoveries.contains(&1));
        }
    }
}
