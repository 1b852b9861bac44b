//! The synthetic-null threshold filter.
//!
//! Given parallel observed/null statistic vectors, the estimated false
//! discovery proportion at threshold t is
//!
//!   FDP(t) = #{j : |T~_j| >= t} / max(#{j : |T^_j| >= t}, 1)
//!
//! and the selected threshold is the smallest t with FDP(t) <= q, where q
//! may first be tightened by the small-sample adjustment
//! q / (1 + sqrt(log(m)/n)). Discoveries are the genes with |T^_j| strictly
//! above the threshold. FDP is a step function jumping only at observed
//! statistic values, so scanning the finite candidate set (plus a sentinel
//! above the maximum) evaluates the minimization exactly.

use crate::error::{Error, Result};
use crate::glm::StatisticPair;
use std::collections::BTreeSet;

/// The estimated FDP evaluated on the candidate threshold ladder.
#[derive(Debug, Clone)]
pub struct FdpCurve {
    /// Ascending unique |T^| and |T~| values plus one sentinel above the max.
    pub thresholds: Vec<f64>,
    pub fdp: Vec<f64>,
}

/// Outcome of threshold selection.
#[derive(Debug, Clone)]
pub struct NullstrapResult {
    pub tau: f64,
    pub effective_q: f64,
    pub adjusted: bool,
    /// Gene indices with |T^_j| > tau, strict.
    pub discoveries: BTreeSet<usize>,
    pub curve: FdpCurve,
}

fn abs_values(side: &[Option<f64>], pair: &StatisticPair) -> Vec<f64> {
    // only genes with BOTH statistics present enter the filter
    pair.analyzable()
        .map(|j| side[j].unwrap().abs())
        .collect()
}

/// Count of entries >= t in an ascending-sorted slice.
fn count_at_least(sorted: &[f64], t: f64) -> usize {
    sorted.len() - sorted.partition_point(|v| *v < t)
}

/// Evaluate the estimated FDP over the candidate threshold set.
pub fn fdp_curve(stats: &StatisticPair) -> Result<FdpCurve> {
    let mut observed = abs_values(&stats.observed, stats);
    let mut null = abs_values(&stats.null, stats);
    if observed.is_empty() {
        return Err(Error::EmptyStatistics);
    }
    observed.sort_by(|a, b| a.partial_cmp(b).unwrap());
    null.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut thresholds: Vec<f64> = observed.iter().chain(null.iter()).copied().collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();
    let sentinel = thresholds.last().unwrap() + 1.0;
    thresholds.push(sentinel);

    let fdp = thresholds
        .iter()
        .map(|&t| {
            let num = count_at_least(&null, t) as f64;
            let den = count_at_least(&observed, t).max(1) as f64;
            num / den
        })
        .collect();
    Ok(FdpCurve { thresholds, fdp })
}

/// Small-sample adjustment q / (1 + sqrt(log(m)/n)), natural log.
pub fn adjust_q(q: f64, m: usize, n: usize) -> f64 {
    debug_assert!(m >= 2 && n >= 2);
    q / (1.0 + ((m as f64).ln() / n as f64).sqrt())
}

/// Smallest candidate threshold whose FDP is at or below `effective_q`.
/// The sentinel always qualifies, so any nonempty curve yields a finite
/// value; infinity signals an empty scan and cannot occur here.
pub fn select_threshold(curve: &FdpCurve, effective_q: f64) -> f64 {
    for (t, f) in curve.thresholds.iter().zip(&curve.fdp) {
        if *f <= effective_q {
            return *t;
        }
    }
    f64::INFINITY
}

/// Genes with |T^_j| strictly above tau.
pub fn declare_discoveries(stats: &StatisticPair, tau: f64) -> BTreeSet<usize> {
    stats
        .analyzable()
        .filter(|&j| stats.observed[j].unwrap().abs() > tau)
        .collect()
}

/// Full filter: adjust the target level (optional), build the curve, select
/// the threshold, declare discoveries.
pub fn nullstrap_filter(
    stats: &StatisticPair,
    q: f64,
    n_samples: usize,
    adjust: bool,
) -> Result<NullstrapResult> {
    let m = stats.analyzable_count();
    if m == 0 {
        return Err(Error::EmptyStatistics);
    }
    let effective_q = if adjust && m >= 2 && n_samples >= 2 {
        adjust_q(q, m, n_samples)
    } else {
        q
    };
    let curve = fdp_curve(stats)?;
    let tau = select_threshold(&curve, effective_q);
    let discoveries = declare_discoveries(stats, tau);

    if tau.is_finite() {
        // selection guarantee, by construction of the candidate scan
        let idx = curve.thresholds.iter().position(|t| *t == tau).unwrap();
        assert!(
            curve.fdp[idx] <= effective_q,
            "estimated FDP {} above target {} at tau {}",
            curve.fdp[idx],
            effective_q,
            tau
        );
    }

    Ok(NullstrapResult {
        tau,
        effective_q,
        adjusted: adjust,
        discoveries,
        curve,
    })
}
