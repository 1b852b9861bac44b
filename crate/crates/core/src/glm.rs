//! Per-gene negative-binomial GLMs with log link and size-factor offsets.
//!
//! The mean model is log(mu_ij) = log(s_i) + alpha_j + x_i'beta_j + z_i'gamma_j
//! with NB variance mu + phi*mu^2. For fixed phi this is fit by Fisher
//! scoring (IRLS); the dispersion is estimated by profile likelihood,
//! alternating a 1-D search in log(phi) with IRLS refits of the mean model.

use crate::data::{CountMatrix, DesignInfo, SizeFactors};
use crate::error::{Error, Result};
use rayon::prelude::*;
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma_ur, ln_gamma};

const MAX_IRLS_ITER: usize = 50;
const DEV_REL_TOL: f64 = 1e-8;
const SCORE_TOL: f64 = 1e-6;
const MAX_HALVINGS: usize = 10;
// clamp on the full linear predictor, keeps exp() finite
const ETA_CLAMP: f64 = 300.0;
const CONDITION_LIMIT: f64 = 1e12;

/// Search range for the dispersion parameter.
pub const PHI_MIN: f64 = 1e-8;
pub const PHI_MAX: f64 = 1e4;
const DISP_COARSE_POINTS: usize = 25;
const DISP_GOLDEN_TOL: f64 = 1e-6;
const DISP_OUTER_ROUNDS: usize = 8;
const DISP_OUTER_TOL: f64 = 1e-3;
const DISP_MU_FLOOR: f64 = 1e-10;

/// p-values are floored here before -log transforms; keeps ranks, avoids inf.
pub const P_FLOOR: f64 = 1e-300;

const SHRINK_PRIOR_SD: f64 = 0.5;

/// Termination state of a per-gene fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitStatus {
    Converged,
    MaxIter,
    Singular,
    AllZero,
}

impl FitStatus {
    /// Converged and MaxIter fits carry estimates worth reporting;
    /// Singular and AllZero genes are excluded from thresholding.
    pub fn is_usable(self) -> bool {
        matches!(self, FitStatus::Converged | FitStatus::MaxIter)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FitStatus::Converged => "CONVERGED",
            FitStatus::MaxIter => "MAX_ITER",
            FitStatus::Singular => "SINGULAR",
            FitStatus::AllZero => "ALL_ZERO",
        }
    }
}

/// Fitted parameters for one gene.
#[derive(Debug, Clone)]
pub struct GeneFit {
    pub alpha: f64,
    /// Treatment log fold changes, length K-1 (zeros for a null-model fit).
    pub beta: Vec<f64>,
    /// Covariate effects, length p.
    pub gamma: Vec<f64>,
    pub phi: f64,
    /// Row-major (K-1) x (K-1) covariance of beta.
    pub beta_cov: Vec<f64>,
    pub se_beta: Vec<f64>,
    pub fitted_means: Vec<f64>,
    pub status: FitStatus,
    pub iterations: usize,
    /// Set when the dispersion profile search failed and the
    /// method-of-moments value was kept.
    pub dispersion_fallback: bool,
}

impl GeneFit {
    fn all_zero(k: usize, p: usize, n: usize) -> Self {
        GeneFit {
            alpha: f64::NAN,
            beta: vec![f64::NAN; k.saturating_sub(1)],
            gamma: vec![f64::NAN; p],
            phi: f64::NAN,
            beta_cov: vec![f64::NAN; (k.saturating_sub(1)).pow(2)],
            se_beta: vec![f64::NAN; k.saturating_sub(1)],
            fitted_means: vec![0.0; n],
            status: FitStatus::AllZero,
            iterations: 0,
            dispersion_fallback: false,
        }
    }
}

/// Statistic flavor fed to the threshold filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatMode {
    /// beta' Cov(beta)^-1 beta
    WaldQuad,
    /// |beta| / se(beta), two conditions only
    ScaledWald,
    /// -log(p) of the Wald test, natural log
    NegLogP,
}

impl StatMode {
    pub fn as_str(self) -> &'static str {
        match self {
            StatMode::WaldQuad => "wald_quad",
            StatMode::ScaledWald => "scaled_wald",
            StatMode::NegLogP => "neg_log_p",
        }
    }
}

impl std::str::FromStr for StatMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wald_quad" => Ok(StatMode::WaldQuad),
            "scaled_wald" => Ok(StatMode::ScaledWald),
            "neg_log_p" => Ok(StatMode::NegLogP),
            other => Err(Error::InvalidConfig {
                msg: format!("unknown statistic mode `{other}`"),
            }),
        }
    }
}

/// Parallel observed/null statistic vectors. Genes without a usable fit on
/// either side carry `None` and are excluded from thresholding.
#[derive(Debug, Clone)]
pub struct StatisticPair {
    pub observed: Vec<Option<f64>>,
    pub null: Vec<Option<f64>>,
    pub mode: StatMode,
    pub df: usize,
}

impl StatisticPair {
    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    /// Genes contributing to the filter: both statistics present.
    pub fn analyzable(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&j| self.observed[j].is_some() && self.null[j].is_some())
    }

    pub fn analyzable_count(&self) -> usize {
        self.analyzable().count()
    }
}

// ---------------------------------------------------------------------------
// small dense symmetric linear algebra (coefficient counts are tiny)
// ---------------------------------------------------------------------------

/// Lower-triangular Cholesky factor of a row-major symmetric matrix,
/// or None if a pivot is not strictly positive.
fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut sum = a[i * d + j];
            for k in 0..j {
                sum -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return None;
                }
                l[i * d + j] = sum.sqrt();
            } else {
                l[i * d + j] = sum / l[j * d + j];
            }
        }
    }
    Some(l)
}

fn chol_solve(l: &[f64], d: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in 0..d {
        for k in 0..i {
            x[i] -= l[i * d + k] * x[k];
        }
        x[i] /= l[i * d + i];
    }
    for i in (0..d).rev() {
        for k in i + 1..d {
            x[i] -= l[k * d + i] * x[k];
        }
        x[i] /= l[i * d + i];
    }
    x
}

fn chol_inverse(l: &[f64], d: usize) -> Vec<f64> {
    let mut inv = vec![0.0; d * d];
    let mut unit = vec![0.0; d];
    for c in 0..d {
        unit.iter_mut().for_each(|v| *v = 0.0);
        unit[c] = 1.0;
        let col = chol_solve(l, d, &unit);
        for r in 0..d {
            inv[r * d + c] = col[r];
        }
    }
    inv
}

fn one_norm(a: &[f64], d: usize) -> f64 {
    (0..d)
        .map(|j| (0..d).map(|i| a[i * d + j].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// NB likelihood pieces
// ---------------------------------------------------------------------------

/// Above this size parameter the likelihood switches to a cancellation-free
/// near-Poisson evaluation (the lnGamma differences lose ~1e-6 absolute
/// precision once r reaches 1e8, which swamps the profile curvature).
const LARGE_SIZE: f64 = 1e6;

/// ln Gamma(y + r) - ln Gamma(r) - y ln(r) via Stirling, stable for large r.
fn ln_gamma_ratio_large(y: f64, r: f64) -> f64 {
    (r + y - 0.5) * (y / r).ln_1p() - y + 1.0 / (12.0 * (r + y)) - 1.0 / (12.0 * r)
}

/// NB log-likelihood with the mean vector held fixed; constants in y dropped.
fn nb_loglik_fixed_mean(y: &[f64], mu: &[f64], phi: f64) -> f64 {
    let r = 1.0 / phi;
    let mut ll = 0.0;
    if r > LARGE_SIZE {
        for (&yi, &mi) in y.iter().zip(mu) {
            let m = mi.max(DISP_MU_FLOOR);
            ll += ln_gamma_ratio_large(yi, r) - (yi + r) * (m / r).ln_1p();
            if yi > 0.0 {
                ll += yi * m.ln();
            }
        }
    } else {
        let base = -ln_gamma(r) + r * r.ln();
        for (&yi, &mi) in y.iter().zip(mu) {
            let m = mi.max(DISP_MU_FLOOR);
            ll += ln_gamma(yi + r) + base - (yi + r) * (m + r).ln();
            if yi > 0.0 {
                ll += yi * m.ln();
            }
        }
    }
    ll
}

/// ln Gamma(y + r) - ln Gamma(r) - y ln(r), branch-stable in r.
fn ln_gamma_ratio(y: f64, r: f64) -> f64 {
    if r > LARGE_SIZE {
        ln_gamma_ratio_large(y, r)
    } else {
        ln_gamma(y + r) - ln_gamma(r) - y * r.ln()
    }
}

/// Conditional NB log-likelihood given the per-group count totals
/// (phi-dependent terms only). For a pure group design the totals are
/// sufficient for the group means, so conditioning removes the
/// mean-estimation bias that drags the plug-in profile toward small phi
/// at small n. Size-factor variation within a group is not conditioned
/// out; for near-unit factors the distortion is far below the estimation
/// noise. A group with an all-zero total contributes nothing, which is
/// exact: such a group carries no dispersion information.
fn nb_conditional_loglik_grouped(groups: &[Vec<f64>], phi: f64) -> f64 {
    let r = 1.0 / phi;
    groups
        .iter()
        .map(|g| {
            let total: f64 = g.iter().sum();
            let n_g = g.len() as f64;
            g.iter().map(|&yi| ln_gamma_ratio(yi, r)).sum::<f64>()
                - ln_gamma_ratio(total, n_g * r)
        })
        .sum()
}

/// NB deviance against the saturated model, fixed phi.
fn nb_deviance(y: &[f64], mu: &[f64], phi: f64) -> f64 {
    let r = 1.0 / phi;
    let mut dev = 0.0;
    for (&yi, &mi) in y.iter().zip(mu) {
        if yi > 0.0 {
            dev += yi * (yi / mi).ln();
        }
        dev -= (yi + r) * ((yi - mi) / (mi + r)).ln_1p();
    }
    2.0 * dev
}

// ---------------------------------------------------------------------------
// IRLS
// ---------------------------------------------------------------------------

struct DesignRows {
    rows: Vec<f64>,
    d: usize,
}

impl DesignRows {
    /// Cache [1, x_i, z_i] rows; the treatment block is dropped for null fits.
    fn build(design: &DesignInfo, null_model: bool) -> Self {
        let n = design.n();
        let tx = if null_model { 0 } else { design.k() - 1 };
        let p = design.p();
        let d = 1 + tx + p;
        let mut rows = vec![0.0; n * d];
        for i in 0..n {
            let r = &mut rows[i * d..(i + 1) * d];
            r[0] = 1.0;
            for c in 0..tx {
                r[1 + c] = design.dummy(i, c);
            }
            for c in 0..p {
                r[1 + tx + c] = design.covariate(i, c);
            }
        }
        DesignRows { rows, d }
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.d..(i + 1) * self.d]
    }
}

fn mu_at(theta: &[f64], rows: &DesignRows, offset: &[f64], i: usize) -> f64 {
    let row = rows.row(i);
    let mut eta = offset[i];
    for (t, x) in theta.iter().zip(row) {
        eta += t * x;
    }
    eta.clamp(-ETA_CLAMP, ETA_CLAMP).exp()
}

fn mean_vector(theta: &[f64], rows: &DesignRows, offset: &[f64], n: usize) -> Vec<f64> {
    (0..n).map(|i| mu_at(theta, rows, offset, i)).collect()
}

/// Fit the NB-GLM for one gene with phi held fixed.
///
/// Fisher scoring with working weights mu/(1 + phi*mu); coefficient
/// covariance is the inverse Fisher information at the final iterate.
/// Step-halving (up to 10 halvings) guards against deviance increases.
/// With `null_model` the treatment block is omitted and beta is reported
/// as the zero vector.
pub fn fit_nb_glm(
    y: &[f64],
    design: &DesignInfo,
    s: &SizeFactors,
    phi: f64,
    null_model: bool,
) -> GeneFit {
    let n = y.len();
    let k = design.k();
    let p = design.p();
    debug_assert_eq!(n, design.n());
    debug_assert_eq!(n, s.len());
    debug_assert!(phi > 0.0 && phi.is_finite());

    if y.iter().all(|&v| v == 0.0) {
        return GeneFit::all_zero(k, p, n);
    }

    let rows = DesignRows::build(design, null_model);
    let d = rows.d;
    let tx = if null_model { 0 } else { k - 1 };
    let offset: Vec<f64> = (0..n).map(|i| s.get(i).ln()).collect();

    let mut theta = vec![0.0; d];
    let sum_y: f64 = y.iter().sum();
    let sum_s: f64 = s.as_slice().iter().sum();
    theta[0] = (sum_y / sum_s).ln();

    let deviance = |theta: &[f64]| -> f64 {
        let mu = mean_vector(theta, &rows, &offset, n);
        nb_deviance(y, &mu, phi)
    };
    let score = |theta: &[f64], g: &mut [f64]| {
        g.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let mu = mu_at(theta, &rows, &offset, i);
            let resid = (y[i] - mu) / (1.0 + phi * mu);
            for (gj, &xj) in g.iter_mut().zip(rows.row(i)) {
                *gj += resid * xj;
            }
        }
    };

    let mut dev_old = deviance(&theta);
    let mut status = FitStatus::MaxIter;
    let mut iterations = 0;
    let mut g = vec![0.0; d];

    for it in 1..=MAX_IRLS_ITER {
        iterations = it;

        let mut a = vec![0.0; d * d];
        let mut b = vec![0.0; d];
        for i in 0..n {
            let mu = mu_at(&theta, &rows, &offset, i);
            let w = mu / (1.0 + phi * mu);
            let row = rows.row(i);
            let mut eta_lin = 0.0;
            for (t, x) in theta.iter().zip(row) {
                eta_lin += t * x;
            }
            // w*z assembled as w*eta + (y-mu)/(1+phi*mu): stays finite as mu -> 0
            let wz = w * eta_lin + (y[i] - mu) / (1.0 + phi * mu);
            for j in 0..d {
                b[j] += wz * row[j];
                for l in j..d {
                    a[j * d + l] += w * row[j] * row[l];
                }
            }
        }
        for j in 0..d {
            for l in 0..j {
                a[j * d + l] = a[l * d + j];
            }
        }

        let Some(lfac) = cholesky(&a, d) else {
            status = FitStatus::Singular;
            break;
        };
        let proposal = chol_solve(&lfac, d, &b);

        let mut theta_try = proposal;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let dev_try = deviance(&theta_try);
            if dev_try.is_finite() && dev_try <= dev_old * (1.0 + 1e-12) + 1e-12 {
                let rel = (dev_try - dev_old).abs() / (dev_old.abs() + 0.1);
                theta = theta_try;
                dev_old = dev_try;
                accepted = true;
                score(&theta, &mut g);
                if rel < DEV_REL_TOL && g.iter().all(|v| v.abs() < SCORE_TOL) {
                    status = FitStatus::Converged;
                }
                break;
            }
            for (t, cur) in theta_try.iter_mut().zip(&theta) {
                *t = 0.5 * (*t + *cur);
            }
        }
        if !accepted {
            status = FitStatus::MaxIter;
            break;
        }
        if status == FitStatus::Converged {
            break;
        }
    }

    // Fisher information and covariance at the final iterate
    let mut info = vec![0.0; d * d];
    for i in 0..n {
        let mu = mu_at(&theta, &rows, &offset, i);
        let w = mu / (1.0 + phi * mu);
        let row = rows.row(i);
        for j in 0..d {
            for l in j..d {
                info[j * d + l] += w * row[j] * row[l];
            }
        }
    }
    for j in 0..d {
        for l in 0..j {
            info[j * d + l] = info[l * d + j];
        }
    }

    let cov = match cholesky(&info, d) {
        Some(lfac) => {
            let inv = chol_inverse(&lfac, d);
            if one_norm(&info, d) * one_norm(&inv, d) > CONDITION_LIMIT {
                status = FitStatus::Singular;
            }
            inv
        }
        None => {
            status = FitStatus::Singular;
            vec![f64::NAN; d * d]
        }
    };

    let fitted_means = mean_vector(&theta, &rows, &offset, n);
    let kb = k - 1;
    let (beta, beta_cov, se_beta) = if null_model {
        (vec![0.0; kb], vec![0.0; kb * kb], vec![0.0; kb])
    } else {
        let beta = theta[1..1 + tx].to_vec();
        let mut bc = vec![0.0; tx * tx];
        let mut se = vec![0.0; tx];
        for a_i in 0..tx {
            for b_i in 0..tx {
                bc[a_i * tx + b_i] = cov[(1 + a_i) * d + (1 + b_i)];
            }
            se[a_i] = bc[a_i * tx + a_i].max(0.0).sqrt();
        }
        (beta, bc, se)
    };
    let gamma = theta[1 + tx..].to_vec();

    GeneFit {
        alpha: theta[0],
        beta,
        gamma,
        phi,
        beta_cov,
        se_beta,
        fitted_means,
        status,
        iterations,
        dispersion_fallback: false,
    }
}

// ---------------------------------------------------------------------------
// dispersion estimation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct DispersionEstimate {
    pub phi: f64,
    /// True when the profile search failed and the moments value was kept.
    pub fallback: bool,
}

/// Method-of-moments dispersion on normalized counts,
/// max((var - mean)/mean^2, PHI_MIN).
pub fn moments_dispersion(y: &[f64], s: &SizeFactors) -> f64 {
    let n = y.len() as f64;
    let normalized: Vec<f64> = y.iter().zip(s.as_slice()).map(|(&v, &si)| v / si).collect();
    let mean = normalized.iter().sum::<f64>() / n;
    if mean <= 0.0 || n < 2.0 {
        return PHI_MIN;
    }
    let var = normalized.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    ((var - mean) / (mean * mean)).max(PHI_MIN)
}

/// Golden-section maximization of a unimodal scalar function on [lo, hi].
fn golden_max(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        }
    }
    0.5 * (lo + hi)
}

/// Coarse scan plus golden refinement of `objective` over log-phi.
/// Returns None when no finite value was seen anywhere.
fn maximize_ln_phi(objective: &dyn Fn(f64) -> f64) -> Option<f64> {
    let lo = PHI_MIN.ln();
    let hi = PHI_MAX.ln();
    let step = (hi - lo) / (DISP_COARSE_POINTS - 1) as f64;
    let mut best: Option<(usize, f64)> = None;
    for idx in 0..DISP_COARSE_POINTS {
        let v = objective(lo + idx as f64 * step);
        if v.is_finite() && best.map_or(true, |(_, bv)| v > bv) {
            best = Some((idx, v));
        }
    }
    let (k, _) = best?;
    let a = lo + step * k.saturating_sub(1) as f64;
    let b = lo + step * (k + 1).min(DISP_COARSE_POINTS - 1) as f64;
    Some(golden_max(objective, a, b, DISP_GOLDEN_TOL))
}

/// Map a log-phi search result back to phi, snapping boundary solutions to
/// the exact bound constants.
fn phi_from_ln(ln_phi: f64) -> f64 {
    if ln_phi - PHI_MIN.ln() < 1e-4 {
        PHI_MIN
    } else if PHI_MAX.ln() - ln_phi < 1e-4 {
        PHI_MAX
    } else {
        ln_phi.exp()
    }
}

/// Profile-likelihood dispersion estimate over [PHI_MIN, PHI_MAX].
///
/// Starts at the method-of-moments value and alternates a 1-D search in
/// log(phi) (means fixed) with an IRLS refit of the mean model. Falls back
/// to the moments initializer when the search cannot evaluate the profile.
pub fn estimate_dispersion(y: &[f64], design: &DesignInfo, s: &SizeFactors) -> DispersionEstimate {
    let moments = moments_dispersion(y, s);
    let mut phi = moments.min(PHI_MAX);
    let mut last_ln = phi.ln();

    for round in 0..DISP_OUTER_ROUNDS {
        let fit = fit_nb_glm(y, design, s, phi, false);
        if !fit.status.is_usable() {
            return DispersionEstimate {
                phi: moments,
                fallback: true,
            };
        }
        let mu = fit.fitted_means;
        let objective = move |ln_phi: f64| nb_loglik_fixed_mean(y, &mu, ln_phi.exp());
        match maximize_ln_phi(&objective) {
            Some(ln_phi) => {
                phi = phi_from_ln(ln_phi);
                let done = (ln_phi - last_ln).abs() < DISP_OUTER_TOL;
                last_ln = ln_phi;
                if done && round > 0 {
                    break;
                }
            }
            None => {
                return DispersionEstimate {
                    phi: moments,
                    fallback: true,
                }
            }
        }
    }
    DispersionEstimate {
        phi,
        fallback: false,
    }
}

// ---------------------------------------------------------------------------
// Wald statistics and p-values
// ---------------------------------------------------------------------------

pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

pub fn chisq_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        gamma_ur(df / 2.0, x / 2.0)
    }
}

fn quad_form(fit: &GeneFit) -> Result<f64> {
    let kb = fit.beta.len();
    if fit.beta.iter().all(|&b| b == 0.0) {
        return Ok(0.0);
    }
    let l = cholesky(&fit.beta_cov, kb).ok_or(Error::FitNotUsable {
        status: "SINGULAR_COVARIANCE",
    })?;
    let x = chol_solve(&l, kb, &fit.beta);
    Ok(fit.beta.iter().zip(&x).map(|(b, v)| b * v).sum())
}

/// Two-sided Wald p-value: normal tail of beta/se for K = 2, chi-square
/// upper tail of the quadratic form with K-1 df otherwise. Floored at 1e-300.
pub fn wald_p_value(fit: &GeneFit) -> Result<f64> {
    if !fit.status.is_usable() {
        return Err(Error::FitNotUsable {
            status: fit.status.as_str(),
        });
    }
    let kb = fit.beta.len();
    let p = if kb == 1 {
        let b = fit.beta[0];
        let se = fit.se_beta[0];
        if b == 0.0 && se == 0.0 {
            1.0
        } else if !(se > 0.0) {
            return Err(Error::FitNotUsable {
                status: "ZERO_STANDARD_ERROR",
            });
        } else {
            2.0 * normal_sf((b / se).abs())
        }
    } else {
        chisq_sf(quad_form(fit)?, kb as f64)
    };
    Ok(p.clamp(P_FLOOR, 1.0))
}

/// Statistic for one fit under `mode`. SCALED_WALD is defined only for two
/// conditions; flagged fits are not usable.
pub fn wald_statistic(fit: &GeneFit, mode: StatMode) -> Result<f64> {
    if !fit.status.is_usable() {
        return Err(Error::FitNotUsable {
            status: fit.status.as_str(),
        });
    }
    let kb = fit.beta.len();
    if kb == 0 {
        return Err(Error::RequiresTwoGroups {
            what: "wald statistic".into(),
            k: 1,
        });
    }
    match mode {
        StatMode::WaldQuad => quad_form(fit),
        StatMode::ScaledWald => {
            if kb != 1 {
                return Err(Error::ScaledWaldRequiresTwoGroups { k: kb + 1 });
            }
            let b = fit.beta[0];
            let se = fit.se_beta[0];
            if b == 0.0 && se == 0.0 {
                Ok(0.0)
            } else if !(se > 0.0) {
                Err(Error::FitNotUsable {
                    status: "ZERO_STANDARD_ERROR",
                })
            } else {
                Ok(b.abs() / se)
            }
        }
        StatMode::NegLogP => Ok(-wald_p_value(fit)?.max(P_FLOOR).ln()),
    }
}

/// Assemble the observed/null statistic vectors, marking genes without a
/// usable fit on either side as missing.
pub fn statistic_pair(
    observed: &[GeneFit],
    null: &[GeneFit],
    mode: StatMode,
) -> Result<StatisticPair> {
    debug_assert_eq!(observed.len(), null.len());
    let df = observed
        .iter()
        .chain(null.iter())
        .find(|f| f.status.is_usable())
        .map(|f| f.beta.len())
        .unwrap_or(1);

    let stat_of = |fit: &GeneFit| -> Result<Option<f64>> {
        if !fit.status.is_usable() {
            return Ok(None);
        }
        match wald_statistic(fit, mode) {
            Ok(v) if v.is_finite() => Ok(Some(v)),
            Ok(_) => Ok(None),
            Err(e @ Error::ScaledWaldRequiresTwoGroups { .. }) => Err(e),
            Err(_) => Ok(None),
        }
    };

    let mut obs = Vec::with_capacity(observed.len());
    let mut nul = Vec::with_capacity(null.len());
    for (fo, fn_) in observed.iter().zip(null) {
        obs.push(stat_of(fo)?);
        nul.push(stat_of(fn_)?);
    }
    Ok(StatisticPair {
        observed: obs,
        null: nul,
        mode,
        df,
    })
}

// ---------------------------------------------------------------------------
// whole-matrix fitting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default)]
pub struct FitAllOptions<'a> {
    /// Fixed per-gene dispersions; when given, estimation is skipped entirely.
    pub dispersions: Option<&'a [f64]>,
    /// Re-estimate dispersions under a log-normal prior around a fitted
    /// trend a0 + a1/mu (prior sd 0.5). Off by default.
    pub shrink_dispersion: bool,
}

/// Fit every gene: estimate dispersion (unless supplied) then fit the full
/// model. Per-gene fits are independent and run in parallel; the output
/// order matches `gene_ids` regardless of schedule.
pub fn fit_all_genes(
    counts: &CountMatrix,
    design: &DesignInfo,
    s: &SizeFactors,
    dispersions: Option<&[f64]>,
) -> Vec<GeneFit> {
    fit_all_genes_with(
        counts,
        design,
        s,
        &FitAllOptions {
            dispersions,
            shrink_dispersion: false,
        },
    )
}

pub fn fit_all_genes_with(
    counts: &CountMatrix,
    design: &DesignInfo,
    s: &SizeFactors,
    opts: &FitAllOptions,
) -> Vec<GeneFit> {
    let m = counts.n_genes();
    let fit_one = |j: usize| -> GeneFit {
        let y = counts.gene_counts(j);
        if y.iter().all(|&v| v == 0.0) {
            return GeneFit::all_zero(design.k(), design.p(), design.n());
        }
        let (phi, fallback) = match opts.dispersions {
            Some(ds) => (ds[j], false),
            None => {
                let est = estimate_dispersion(&y, design, s);
                (est.phi, est.fallback)
            }
        };
        if !(phi > 0.0 && phi.is_finite()) {
            let mut fit = GeneFit::all_zero(design.k(), design.p(), design.n());
            fit.status = FitStatus::Singular;
            return fit;
        }
        let mut fit = fit_nb_glm(&y, design, s, phi, false);
        fit.dispersion_fallback = fallback;
        fit
    };

    let mut fits: Vec<GeneFit> = (0..m).into_par_iter().map(fit_one).collect();

    if opts.shrink_dispersion && opts.dispersions.is_none() {
        shrink_dispersions(counts, design, s, &mut fits);
    }
    fits
}

/// Group-aware moment estimate of the dispersion on normalized counts:
/// an OLS fit of the mean model soaks up the design, then
/// phi ~ sum((w - mu)^2 - xim*mu) / mu^2 / (n - d). Nearly unbiased in n,
/// unlike the small-sample profile MLE, which is what makes it the right
/// anchor for the shrinkage trend. Returns None when the design solve fails.
fn moments_dispersion_designed(
    y: &[f64],
    rows: &DesignRows,
    s: &SizeFactors,
    xim: f64,
) -> Option<f64> {
    let n = y.len();
    let d = rows.d;
    if n <= d {
        return None;
    }
    let w: Vec<f64> = y.iter().zip(s.as_slice()).map(|(&v, &si)| v / si).collect();
    let mut a = vec![0.0; d * d];
    let mut b = vec![0.0; d];
    for i in 0..n {
        let row = rows.row(i);
        for j in 0..d {
            b[j] += row[j] * w[i];
            for l in j..d {
                a[j * d + l] += row[j] * row[l];
            }
        }
    }
    for j in 0..d {
        for l in 0..j {
            a[j * d + l] = a[l * d + j];
        }
    }
    let lfac = cholesky(&a, d)?;
    let theta = chol_solve(&lfac, d, &b);
    let mut sum = 0.0;
    for i in 0..n {
        let mut mu = 0.0;
        for (t, x) in theta.iter().zip(rows.row(i)) {
            mu += t * x;
        }
        let mu = mu.max(1.0);
        sum += ((w[i] - mu).powi(2) - xim * mu) / (mu * mu);
    }
    Some(sum / (n - d) as f64)
}

/// Second pass for the shrinkage flag: fit the trend phi_tr(mu) = a0 + a1/mu
/// by least squares on group-aware moment estimates, then re-maximize each
/// gene's profile with a log-normal penalty toward the trend.
fn shrink_dispersions(
    counts: &CountMatrix,
    design: &DesignInfo,
    s: &SizeFactors,
    fits: &mut [GeneFit],
) {
    let base = match crate::data::base_means(counts, s) {
        Ok(b) => b,
        Err(_) => return,
    };
    let rows = DesignRows::build(design, false);
    let xim = s.as_slice().iter().map(|v| 1.0 / v).sum::<f64>() / s.len() as f64;

    // moment estimates keep their negative values: trimming them would bias
    // the trend upward
    let pts: Vec<(f64, f64)> = (0..fits.len())
        .filter(|&j| fits[j].status.is_usable() && base[j] > 0.0)
        .filter_map(|j| {
            let mom = moments_dispersion_designed(&counts.gene_counts(j), &rows, s, xim)?;
            (mom.is_finite() && mom.abs() <= PHI_MAX).then_some((1.0 / base[j], mom))
        })
        .collect();
    if pts.len() < 3 {
        return;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    let (a0, a1) = if denom.abs() > 1e-12 {
        let a1 = (n * sxy - sx * sy) / denom;
        let a0 = (sy - a1 * sx) / n;
        (a0.max(1e-4), a1.max(0.0))
    } else {
        ((sy / n).max(1e-4), 0.0)
    };

    // pure group designs get the conditional likelihood; covariate designs
    // fall back to the plug-in profile around the fitted means
    let group_index: Option<Vec<Vec<usize>>> = (design.p() == 0).then(|| {
        (1..=design.k())
            .map(|cond| design.group_indices(cond))
            .collect()
    });

    let updated: Vec<Option<GeneFit>> = (0..fits.len())
        .into_par_iter()
        .map(|j| {
            if !fits[j].status.is_usable() || base[j] <= 0.0 {
                return None;
            }
            let ln_trend = (a0 + a1 / base[j]).max(1e-4).ln();
            let inv_two_var = 1.0 / (2.0 * SHRINK_PRIOR_SD * SHRINK_PRIOR_SD);
            let penalty = move |ln_phi: f64| (ln_phi - ln_trend).powi(2) * inv_two_var;

            let ln_phi = match &group_index {
                Some(groups_idx) => {
                    let groups: Vec<Vec<f64>> = groups_idx
                        .iter()
                        .map(|idx| idx.iter().map(|&i| counts.count(i, j) as f64).collect())
                        .collect();
                    let objective = move |ln_phi: f64| {
                        nb_conditional_loglik_grouped(&groups, ln_phi.exp()) - penalty(ln_phi)
                    };
                    maximize_ln_phi(&objective)?
                }
                None => {
                    let y = counts.gene_counts(j);
                    let mu = fits[j].fitted_means.clone();
                    let objective = move |ln_phi: f64| {
                        nb_loglik_fixed_mean(&y, &mu, ln_phi.exp()) - penalty(ln_phi)
                    };
                    maximize_ln_phi(&objective)?
                }
            };
            let y = counts.gene_counts(j);
            let mut fit = fit_nb_glm(&y, design, s, phi_from_ln(ln_phi), false);
            fit.dispersion_fallback = fits[j].dispersion_fallback;
            Some(fit)
        })
        .collect();
    for (slot, new) in fits.iter_mut().zip(updated) {
        if let Some(f) = new {
            *slot = f;
        }
    }
}
