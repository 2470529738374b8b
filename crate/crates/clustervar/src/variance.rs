//! Variance estimators computable from a sample, exact design variances
//! computable from the full population, large-sample limits of the
//! normalized estimators, and an exhaustive enumeration oracle.
//!
//! Sample side: the homoskedastic OLS variance, the Kloek/Moulton-factor
//! adjustment, the heteroskedasticity-robust (EHW) sandwich, the
//! cluster-robust (Liang–Zeger) sandwich, and the cluster-adjusted variance
//! that subtracts the estimated between-cluster effect-heterogeneity mass
//! from the LZ estimate.
//!
//! Population side: the design variance of the normalized statistic
//! `eta = S + D`, where, with `a_i = eps1_i − eps0_i`, `s_i = eps1_i + eps0_i`,
//!
//! ```text
//! S = (Mp)^(-1/2) Σ_i R_i a_i,   D = (Mp)^(-1/2) Σ_i R_i (2W_i − 1) s_i,
//! ```
//!
//! and of its fixed-effects counterpart
//! `eta_fe = (m sqrt(Mp))^(-1) Σ_i R_i (W_i − q_c) eps_dot_i`, with
//! `m = E[q(1−q)]` and the adjusted deviation
//! `eps_dot_i = (W_i − q_c) a_i + q_c b_i + (1 − q_c) c_i`
//! (`b_i`, `c_i` the within-cluster deviations of `eps1`, `eps0`).
//!
//! Every population-side formula here is validated against the enumeration
//! oracle, which computes the same moments by exhaustive summation over all
//! design configurations of a tiny population and is therefore independent
//! of any algebra performed on the formulas.
//!
//! # References
//!
//! - Eicker, F. (1967); Huber, P. J. (1967); White, H. (1980) — the
//!   heteroskedasticity-robust sandwich.
//! - Liang, K.-Y. and Zeger, S. L. (1986). Longitudinal data analysis using
//!   generalized linear models. *Biometrika* 73(1), 13–22.
//! - Kloek, T. (1981). *Econometrica* 49(1), 205–207; Moulton, B. R. (1986).
//!   *Journal of Econometrics* 32(3), 385–397.
//! - Cameron, A. C. and Miller, D. L. (2015). A practitioner's guide to
//!   cluster-robust inference. *Journal of Human Resources* 50(2), 317–372.

use serde::Serialize;

use crate::design::{kappa_moments, AssignmentDesign, SamplingDesign};
use crate::diagnostics::full_diagnostics;
use crate::estimators::{cluster_effects, Dataset, FitResult, ModelKind};
use crate::numeric::Neumaier;
use crate::population::{Estimands, Population};

// ===== Errors =====

#[derive(Debug)]
pub enum VarianceError {
    /// The fixed-effects design variance is undefined at sigma2 = 1/4:
    /// assignment within clusters cannot be perfectly correlated.
    PerfectlyCorrelatedAssignment { sigma2: f64 },
}

impl std::fmt::Display for VarianceError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::PerfectlyCorrelatedAssignment { sigma2 } => write!(
                f,
                "fixed-effects variance undefined at sigma2 = {sigma2}: \
                 within-cluster assignment must not be perfectly correlated"
            ),
        }
    }
}

impl std::error::Error for VarianceError {}

#[derive(Debug)]
pub enum OracleError {
    /// Enumeration is restricted to tiny populations.
    TooManyUnits { units: usize, limit: usize },
    /// The assignment family must have finite support (beta does not).
    ContinuousFamily,
    /// The full statistic enumeration would visit too many configurations.
    TooManyConfigurations { estimate: f64, limit: f64 },
}

impl std::fmt::Display for OracleError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::TooManyUnits { units, limit } => {
                write!(f, "enumeration oracle supports at most {limit} units, got {units}")
            }
            Self::ContinuousFamily => {
                write!(f, "enumeration oracle needs a finite-support assignment family")
            }
            Self::TooManyConfigurations { estimate, limit } => write!(
                f,
                "statistic enumeration would visit about {estimate:.3e} configurations \
                 (limit {limit:.1e})"
            ),
        }
    }
}

impl std::error::Error for OracleError {}

// ===== Sample-side variance estimators =====

/// Outcome of the cluster-adjusted correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CcaOutcome {
    /// The adjusted variance, floored at zero.
    pub value: f64,
    /// True when the raw adjusted value was negative and the floor applied.
    pub floored: bool,
    /// Clusters excluded from the correction because one arm is missing.
    pub dropped_clusters: usize,
}

/// Every variance estimator applicable to a fit, with standard errors.
///
/// Invariants: all variances are nonnegative (`v_cca` by an explicit floor,
/// flagged); `v_cca <= v_lz` whenever applicable, since the correction
/// subtracts a nonnegative term. `v_kloek` and `v_cca` are defined for the
/// plain model only and are `None` for fixed effects (`cca_applicable`
/// false).
#[derive(Debug, Clone, Serialize)]
pub struct VarianceReport {
    pub v_ols: f64,
    pub v_ehw: f64,
    pub v_lz: f64,
    pub v_kloek: Option<f64>,
    pub v_cca: Option<f64>,
    pub cca_applicable: bool,
    pub cca_floored: bool,
    pub cca_dropped_clusters: usize,
    pub se_ols: f64,
    pub se_ehw: f64,
    pub se_lz: f64,
    pub se_kloek: Option<f64>,
    pub se_cca: Option<f64>,
}

/// Homoskedastic OLS variance of the slope, without degrees-of-freedom
/// correction: `sigma_hat^2 = sum(e^2)/N`.
pub fn v_ols(fit: &FitResult) -> f64 {
    let n = fit.n as f64;
    let sigma2 = crate::numeric::csum(fit.residuals.iter().map(|e| e * e)) / n;
    match fit.model {
        ModelKind::Plain => sigma2 * (1.0 / fit.n1 as f64 + 1.0 / fit.n0 as f64),
        ModelKind::FixedEffects => sigma2 / fit.wtilde_ssq,
    }
}

/// Heteroskedasticity-robust sandwich variance of the slope. For the plain
/// model this equals `Σ_{W=1} e²/N1² + Σ_{W=0} e²/N0²`; for fixed effects it
/// is computed on the within-demeaned regressor.
pub fn v_ehw(ds: &Dataset, fit: &FitResult) -> f64 {
    match fit.model {
        ModelKind::Plain => {
            let mut s1 = Neumaier::new();
            let mut s0 = Neumaier::new();
            for i in 0..fit.n {
                let e2 = fit.residuals[i] * fit.residuals[i];
                if ds.w()[i] == 1.0 {
                    s1.add(e2);
                } else {
                    s0.add(e2);
                }
            }
            let n1 = fit.n1 as f64;
            let n0 = fit.n0 as f64;
            s1.total() / (n1 * n1) + s0.total() / (n0 * n0)
        }
        ModelKind::FixedEffects => {
            let wt = fit.wtilde.as_ref().expect("fe fit carries wtilde");
            let meat = crate::numeric::csum(
                (0..fit.n).map(|i| fit.residuals[i] * fit.residuals[i] * wt[i] * wt[i]),
            );
            meat / (fit.wtilde_ssq * fit.wtilde_ssq)
        }
    }
}

/// Cluster-robust (Liang–Zeger) sandwich variance of the slope: the meat
/// replaces per-unit squares by squares of per-cluster score sums. No
/// degrees-of-freedom correction. With every sampled unit in its own
/// cluster this equals [`v_ehw`] identically.
pub fn v_lz(ds: &Dataset, fit: &FitResult) -> f64 {
    let g = ds.n_clusters();
    let mut sums = vec![Neumaier::new(); g];
    match fit.model {
        ModelKind::Plain => {
            let wbar = fit.n1 as f64 / fit.n as f64;
            for i in 0..fit.n {
                sums[ds.cluster()[i] as usize].add(fit.residuals[i] * (ds.w()[i] - wbar));
            }
            let den = fit.n1 as f64 * fit.n0 as f64 / fit.n as f64;
            let meat = crate::numeric::csum(sums.iter().map(|s| {
                let v = s.total();
                v * v
            }));
            meat / (den * den)
        }
        ModelKind::FixedEffects => {
            let wt = fit.wtilde.as_ref().expect("fe fit carries wtilde");
            for i in 0..fit.n {
                sums[ds.cluster()[i] as usize].add(fit.residuals[i] * wt[i]);
            }
            let meat = crate::numeric::csum(sums.iter().map(|s| {
                let v = s.total();
                v * v
            }));
            meat / (fit.wtilde_ssq * fit.wtilde_ssq)
        }
    }
}

/// Kloek/Moulton-factor adjustment of the OLS variance for the plain model:
/// `v_ols * (1 + rho_eps * rho_w * N/C)` with `C` the number of distinct
/// sampled clusters. `None` for the fixed-effects model.
pub fn v_kloek(ds: &Dataset, fit: &FitResult, rho_eps: f64, rho_w: f64) -> Option<f64> {
    if fit.model != ModelKind::Plain {
        return None;
    }
    let factor = 1.0 + rho_eps * rho_w * fit.n as f64 / ds.n_clusters() as f64;
    Some(v_ols(fit) * factor)
}

/// Cluster-adjusted variance for the plain model: LZ minus the plug-in
/// between-cluster effect-heterogeneity term
/// `(1/N²) Σ_c N_c² (tau_hat_c − tau_hat)²`, summed over clusters where both
/// arms are present. Clusters missing an arm are excluded and counted;
/// a negative raw value is floored at zero and flagged. Returns `None` when
/// no cluster has both arms (the correction is then undefined) or for the
/// fixed-effects model.
pub fn v_cca(ds: &Dataset, fit: &FitResult) -> Option<CcaOutcome> {
    if fit.model != ModelKind::Plain {
        return None;
    }
    let eff = cluster_effects(ds);
    let n = fit.n as f64;
    let mut corr = Neumaier::new();
    let mut dropped = 0usize;
    let mut usable = 0usize;
    for c in 0..ds.n_clusters() {
        match eff.tau_c[c] {
            Some(tc) => {
                let nc = eff.n_c[c] as f64;
                let d = tc - fit.tau_hat;
                corr.add(nc * nc * d * d);
                usable += 1;
            }
            None => dropped += 1,
        }
    }
    if usable == 0 {
        return None;
    }
    let raw = v_lz(ds, fit) - corr.total() / (n * n);
    Some(CcaOutcome {
        value: raw.max(0.0),
        floored: raw < 0.0,
        dropped_clusters: dropped,
    })
}

/// Compute every variance estimator applicable to `fit` in one pass,
/// deriving the Kloek factor's correlations from [`full_diagnostics`].
pub fn variance_report(ds: &Dataset, fit: &FitResult) -> VarianceReport {
    let ols = v_ols(fit);
    let ehw = v_ehw(ds, fit);
    let lz = v_lz(ds, fit);
    let kloek = match fit.model {
        ModelKind::Plain => {
            let d = full_diagnostics(ds, fit);
            match (d.rho_eps, d.rho_w) {
                (Some(re), Some(rw)) => v_kloek(ds, fit, re, rw),
                // a zero-variance ingredient leaves the factor undefined
                _ => None,
            }
        }
        ModelKind::FixedEffects => None,
    };
    let cca = v_cca(ds, fit);
    VarianceReport {
        v_ols: ols,
        v_ehw: ehw,
        v_lz: lz,
        v_kloek: kloek,
        v_cca: cca.map(|c| c.value),
        cca_applicable: cca.is_some(),
        cca_floored: cca.map(|c| c.floored).unwrap_or(false),
        cca_dropped_clusters: cca.map(|c| c.dropped_clusters).unwrap_or(0),
        se_ols: ols.sqrt(),
        se_ehw: ehw.sqrt(),
        se_lz: lz.sqrt(),
        se_kloek: kloek.map(f64::sqrt),
        se_cca: cca.map(|c| c.value.sqrt()),
    }
}

// ===== Exact design variances =====

/// Exact variance of the plain normalized statistic with its two
/// decompositions: by source (`s_part`/`d_part`, the variances of the `S`
/// and `D` components, which are uncorrelated) and by scale (`unit_term`,
/// sums of per-unit squares; `cluster_term`, sums weighted by squared
/// cluster size).
///
/// Invariant: `total = s_part + d_part = unit_term + cluster_term`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ExactVariance {
    pub total: f64,
    pub s_part: f64,
    pub d_part: f64,
    pub unit_term: f64,
    pub cluster_term: f64,
}

/// Exact variance of the fixed-effects normalized statistic.
///
/// `unit_term` collects everything scaling at most linearly with cluster
/// size; `cluster_term` is the squared-cluster-size sum. Invariant:
/// `total = unit_term + cluster_term`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ExactVarianceFe {
    pub total: f64,
    pub unit_term: f64,
    pub cluster_term: f64,
}

struct PopSums {
    sum_a2: f64,
    sum_s2: f64,
    sum_mc2_abar2: f64,
    sum_mc2_sbar2: f64,
}

fn pop_sums(pop: &Population, est: &Estimands) -> PopSums {
    let mut sum_a2 = Neumaier::new();
    let mut sum_s2 = Neumaier::new();
    let mut sum_mc2_abar2 = Neumaier::new();
    let mut sum_mc2_sbar2 = Neumaier::new();
    for c in 0..pop.n_clusters() {
        let mc = pop.sizes()[c] as f64;
        let abar = est.eps1_bar_c[c] - est.eps0_bar_c[c];
        let sbar = est.eps1_bar_c[c] + est.eps0_bar_c[c];
        sum_mc2_abar2.add(mc * mc * abar * abar);
        sum_mc2_sbar2.add(mc * mc * sbar * sbar);
        for i in pop.cluster_range(c) {
            let a = est.eps1[i] - est.eps0[i];
            let s = est.eps1[i] + est.eps0[i];
            sum_a2.add(a * a);
            sum_s2.add(s * s);
        }
    }
    PopSums {
        sum_a2: sum_a2.total(),
        sum_s2: sum_s2.total(),
        sum_mc2_abar2: sum_mc2_abar2.total(),
        sum_mc2_sbar2: sum_mc2_sbar2.total(),
    }
}

/// Exact variance of the plain normalized statistic `eta = S + D`:
///
/// ```text
/// E[S²] = (1−p_U)/M Σ_i a_i²  +  p_U(1−p_C)/M Σ_c M_c² abar_c²
/// E[D²] = (1−4σ²p_U)/M Σ_i s_i²  +  4σ²p_U/M Σ_c M_c² sbar_c²
/// ```
///
/// with `E[S·D] = 0`, so `total = E[S²] + E[D²]`.
pub fn exact_variance_plain(
    pop: &Population,
    est: &Estimands,
    sampling: &SamplingDesign,
    assignment: &AssignmentDesign,
) -> ExactVariance {
    let m = pop.n_units() as f64;
    let (pc, pu) = (sampling.p_c(), sampling.p_u());
    let s2 = assignment.sigma2();
    let sums = pop_sums(pop, est);
    let s_part = ((1.0 - pu) * sums.sum_a2 + pu * (1.0 - pc) * sums.sum_mc2_abar2) / m;
    let d_part = ((1.0 - 4.0 * s2 * pu) * sums.sum_s2 + 4.0 * s2 * pu * sums.sum_mc2_sbar2) / m;
    let unit_term = ((1.0 - pu) * sums.sum_a2 + (1.0 - 4.0 * s2 * pu) * sums.sum_s2) / m;
    let cluster_term =
        pu * ((1.0 - pc) * sums.sum_mc2_abar2 + 4.0 * s2 * sums.sum_mc2_sbar2) / m;
    let total = s_part + d_part;
    debug_assert!((total - (unit_term + cluster_term)).abs() <= 1e-10 * (1.0 + total.abs()));
    ExactVariance { total, s_part, d_part, unit_term, cluster_term }
}

/// Exact variance of the fixed-effects normalized statistic.
///
/// With `m = E[q(1−q)]`, `phi = 1/m²`, and `k_jk = E[q^j (1−q)^k]`, the
/// per-cluster contribution is
///
/// ```text
/// phi/M * { (k13+k22) Σ b²  +  (k31+k22) Σ c²  +  (k31+k13−k22) M_c abar²
///           − p_U k22 Σ a²  +  (p_U k22 − p_C p_U m²) M_c² abar² }
/// ```
///
/// where the sums run over the units of the cluster. The first four terms
/// form `unit_term`, the last `cluster_term`. At σ² = 0 this reduces to
/// `(1/M) Σ_i [(1−p_U) a_i² + (b_i+c_i)²]` plus
/// `(p_U(1−p_C)/M) Σ_c M_c² abar²`.
///
/// # Errors
///
/// At σ² = 1/4 the within-cluster assignment is perfectly correlated and the
/// fixed-effects statistic is undefined (`m = 0`).
pub fn exact_variance_fe(
    pop: &Population,
    est: &Estimands,
    sampling: &SamplingDesign,
    assignment: &AssignmentDesign,
) -> Result<ExactVarianceFe, VarianceError> {
    if assignment.sigma2() >= 0.25 {
        return Err(VarianceError::PerfectlyCorrelatedAssignment { sigma2: assignment.sigma2() });
    }
    let m = pop.n_units() as f64;
    let (pc, pu) = (sampling.p_c(), sampling.p_u());
    let k = kappa_moments(assignment);
    let (k31, k13, k22, eq1q) = (k.kappa_31, k.kappa_13, k.kappa_22(), k.eq1q);
    let phi = 1.0 / (eq1q * eq1q);
    let mut unit = Neumaier::new();
    let mut cluster = Neumaier::new();
    for c in 0..pop.n_clusters() {
        let mc = pop.sizes()[c] as f64;
        let abar = est.eps1_bar_c[c] - est.eps0_bar_c[c];
        let mut sum_b2 = Neumaier::new();
        let mut sum_c2 = Neumaier::new();
        let mut sum_a2 = Neumaier::new();
        for i in pop.cluster_range(c) {
            let b = est.eps1[i] - est.eps1_bar_c[c];
            let cc = est.eps0[i] - est.eps0_bar_c[c];
            let a = est.eps1[i] - est.eps0[i];
            sum_b2.add(b * b);
            sum_c2.add(cc * cc);
            sum_a2.add(a * a);
        }
        unit.add(
            (k13 + k22) * sum_b2.total() + (k31 + k22) * sum_c2.total()
                + (k31 + k13 - k22) * mc * abar * abar
                - pu * k22 * sum_a2.total(),
        );
        cluster.add((pu * k22 - pc * pu * eq1q * eq1q) * mc * mc * abar * abar);
    }
    let unit_term = phi * unit.total() / m;
    let cluster_term = phi * cluster.total() / m;
    Ok(ExactVarianceFe { total: unit_term + cluster_term, unit_term, cluster_term })
}

/// The fixed-effects design-variance variant that drops the within-cluster
/// cross terms: per unit
/// `(1−p_U)(1+phi*kappa) a² + phi k31 b² + phi k13 c²` averaged over units,
/// plus `(p_U/M) Σ_c M_c² [(1−p_C) + phi*kappa] abar²`.
///
/// This variant is **not** equal to the exact variance in general. Relative
/// to [`exact_variance_fe`] it omits the `b·c` products and the covariance
/// between the `(W−q) a` and `q b + (1−q) c` parts of the adjusted
/// deviation, and it weights the pure treatment-deviation term by `kappa_22`
/// where the exact algebra produces `kappa_31 + kappa_13 − kappa_22` — a
/// difference that survives even singleton clusters once the treatment
/// share is random. The two formulas coincide exactly when the assignment
/// is unclustered (`sigma2 = 0`) **and** every unit equals its within-
/// cluster arm means (`b = c = 0`); everywhere else the enumeration oracle
/// sides with [`exact_variance_fe`]. It is exposed so reports can print
/// both values side by side.
pub fn fe_variance_dropped_cross_term(
    pop: &Population,
    est: &Estimands,
    sampling: &SamplingDesign,
    assignment: &AssignmentDesign,
) -> Result<ExactVarianceFe, VarianceError> {
    if assignment.sigma2() >= 0.25 {
        return Err(VarianceError::PerfectlyCorrelatedAssignment { sigma2: assignment.sigma2() });
    }
    let m = pop.n_units() as f64;
    let (pc, pu) = (sampling.p_c(), sampling.p_u());
    let k = kappa_moments(assignment);
    let phi = 1.0 / (k.eq1q * k.eq1q);
    let mut unit = Neumaier::new();
    let mut cluster = Neumaier::new();
    for c in 0..pop.n_clusters() {
        let mc = pop.sizes()[c] as f64;
        let abar = est.eps1_bar_c[c] - est.eps0_bar_c[c];
        for i in pop.cluster_range(c) {
            let b = est.eps1[i] - est.eps1_bar_c[c];
            let cc = est.eps0[i] - est.eps0_bar_c[c];
            let a = est.eps1[i] - est.eps0[i];
            unit.add(
                (1.0 - pu) * (1.0 + phi * k.kappa) * a * a
                    + phi * k.kappa_31 * b * b
                    + phi * k.kappa_13 * cc * cc,
            );
        }
        cluster.add(pu * ((1.0 - pc) + phi * k.kappa) * mc * mc * abar * abar);
    }
    let unit_term = unit.total() / m;
    let cluster_term = cluster.total() / m;
    Ok(ExactVarianceFe { total: unit_term + cluster_term, unit_term, cluster_term })
}

// ===== Limit functionals =====

/// Large-sample limits of the normalized (times N) EHW and LZ variance
/// estimators for the plain model, and the two gaps of interest.
///
/// Invariants: `lz_minus_true = v_lz_limit − exact_variance_plain().total`
/// exactly (an algebraic identity), and `lz_minus_true >= 0`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LimitFunctionals {
    pub v_ehw_limit: f64,
    pub v_lz_limit: f64,
    /// `(p_C p_U / M) Σ_c M_c² abar_c²`: the LZ overshoot over the true
    /// design variance.
    pub lz_minus_true: f64,
    pub lz_minus_ehw: f64,
}

/// Large-sample limit of the normalized LZ estimator for the fixed-effects
/// model, and its overshoot over [`exact_variance_fe`], which is the same
/// `(p_C p_U / M) Σ_c M_c² abar_c²` as in the plain case.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LimitFunctionalsFe {
    pub v_lz_limit: f64,
    pub lz_minus_true: f64,
}

pub fn limit_functionals(
    pop: &Population,
    est: &Estimands,
    sampling: &SamplingDesign,
    assignment: &AssignmentDesign,
) -> LimitFunctionals {
    let m = pop.n_units() as f64;
    let (pc, pu) = (sampling.p_c(), sampling.p_u());
    let s2 = assignment.sigma2();
    let sums = pop_sums(pop, est);
    let mut ehw = Neumaier::new();
    let mut lz_unit = Neumaier::new();
    for i in 0..pop.n_units() {
        let (e1, e0) = (est.eps1[i], est.eps0[i]);
        ehw.add(2.0 * (e1 * e1 + e0 * e0));
        lz_unit.add(
            (2.0 - pu * (1.0 + 4.0 * s2)) * (e1 * e1 + e0 * e0)
                + pu * (2.0 - 8.0 * s2) * e1 * e0,
        );
    }
    let v_ehw_limit = ehw.total() / m;
    let v_lz_limit = lz_unit.total() / m
        + pu * (sums.sum_mc2_abar2 + 4.0 * s2 * sums.sum_mc2_sbar2) / m;
    let lz_minus_true = pc * pu * sums.sum_mc2_abar2 / m;
    LimitFunctionals {
        v_ehw_limit,
        v_lz_limit,
        lz_minus_true,
        lz_minus_ehw: v_lz_limit - v_ehw_limit,
    }
}

/// Large-sample limit of the normalized LZ estimator under fixed effects:
///
/// ```text
/// phi/M * { Σ_i E[(W−q)² eps_dot²]_i + p_U k22 ( Σ_c M_c² abar² − Σ_i a² ) }
/// ```
///
/// where the per-unit expectation expands to
/// `(m − 3 k22) a² + k31 b² + k13 c² + 2 k22 b c + 2(k21 − 2 k31) a b +
/// 2(k12 − 2 k22) a c` with `k21 = k31 + k22`, `k12 = k13 + k22`.
pub fn limit_functionals_fe(
    pop: &Population,
    est: &Estimands,
    sampling: &SamplingDesign,
    assignment: &AssignmentDesign,
) -> Result<LimitFunctionalsFe, VarianceError> {
    if assignment.sigma2() >= 0.25 {
        return Err(VarianceError::PerfectlyCorrelatedAssignment { sigma2: assignment.sigma2() });
    }
    let m = pop.n_units() as f64;
    let (pc, pu) = (sampling.p_c(), sampling.p_u());
    let k = kappa_moments(assignment);
    let (k31, k13, k22, eq1q) = (k.kappa_31, k.kappa_13, k.kappa_22(), k.eq1q);
    let (k21, k12) = (k31 + k22, k13 + k22);
    let phi = 1.0 / (eq1q * eq1q);
    let mut acc = Neumaier::new();
    let mut sum_a2 = Neumaier::new();
    let mut sum_mc2_abar2 = Neumaier::new();
    for c in 0..pop.n_clusters() {
        let mc = pop.sizes()[c] as f64;
        let abar = est.eps1_bar_c[c] - est.eps0_bar_c[c];
        sum_mc2_abar2.add(mc * mc * abar * abar);
        for i in pop.cluster_range(c) {
            let b = est.eps1[i] - est.eps1_bar_c[c];
            let cc = est.eps0[i] - est.eps0_bar_c[c];
            let a = est.eps1[i] - est.eps0[i];
            acc.add(
                (eq1q - 3.0 * k22) * a * a
                    + k31 * b * b
                    + k13 * cc * cc
                    + 2.0 * k22 * b * cc
                    + 2.0 * (k21 - 2.0 * k31) * a * b
                    + 2.0 * (k12 - 2.0 * k22) * a * cc,
            );
            sum_a2.add(a * a);
        }
    }
    let v_lz_limit =
        phi * (acc.total() + pu * k22 * (sum_mc2_abar2.total() - sum_a2.total())) / m;
    Ok(LimitFunctionalsFe {
        v_lz_limit,
        lz_minus_true: pc * pu * sum_mc2_abar2.total() / m,
    })
}

// ===== Enumeration oracle =====

/// Exact design moments of the normalized statistics, computed by exhaustive
/// enumeration; the independent check of every formula above.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OracleResult {
    pub mean_eta: f64,
    pub var_eta: f64,
    /// Variance contributed by the `S` component.
    pub var_s: f64,
    /// Variance contributed by the `D` component.
    pub var_d: f64,
    /// Covariance of the components (zero in theory; enumeration verifies).
    pub cov_sd: f64,
    /// Fixed-effects statistic moments; `None` at sigma2 = 1/4 where the
    /// statistic is undefined.
    pub mean_eta_fe: Option<f64>,
    pub var_eta_fe: Option<f64>,
}

/// Largest population the enumeration oracle accepts.
pub const ORACLE_MAX_UNITS: usize = 14;

fn oracle_guard(pop: &Population, assignment: &AssignmentDesign) -> Result<Vec<(f64, f64)>, OracleError> {
    if pop.n_units() > ORACLE_MAX_UNITS {
        return Err(OracleError::TooManyUnits { units: pop.n_units(), limit: ORACLE_MAX_UNITS });
    }
    assignment.finite_support().ok_or(OracleError::ContinuousFamily)
}

/// Exhaustively enumerate the design moments of `eta` (and `eta_fe`).
///
/// Clusters are independent under the design, and both statistics are sums
/// of per-cluster terms, so the oracle enumerates each cluster's
/// `(q_c, W-pattern)` configurations exactly and accumulates per-cluster
/// means and variances; the unit-sampling indicators enter through exact
/// Bernoulli moments conditional on each configuration. Nothing here reuses
/// the closed-form variance algebra: only the definition of the statistics.
///
/// # Errors
///
/// Refuses populations with more than [`ORACLE_MAX_UNITS`] units and
/// assignment families without finite support.
pub fn enumeration_oracle(
    pop: &Population,
    sampling: &SamplingDesign,
    assignment: &AssignmentDesign,
) -> Result<OracleResult, OracleError> {
    let support = oracle_guard(pop, assignment)?;
    let est = Estimands::compute(pop);
    let (pc, pu) = (sampling.p_c(), sampling.p_u());
    let m = pop.n_units() as f64;
    let p = pc * pu;
    let fe_defined = assignment.sigma2() < 0.25;
    let eq1q = 0.25 - assignment.sigma2();

    // accumulated over clusters: E and Var/Cov of the per-cluster sums
    let mut mean_s = Neumaier::new();
    let mut mean_d = Neumaier::new();
    let mut var_s = Neumaier::new();
    let mut var_d = Neumaier::new();
    let mut cov_sd = Neumaier::new();
    let mut mean_f = Neumaier::new();
    let mut var_f = Neumaier::new();

    for c in 0..pop.n_clusters() {
        let range = pop.cluster_range(c);
        let mc = range.len();
        let a: Vec<f64> = range.clone().map(|i| est.eps1[i] - est.eps0[i]).collect();
        let s: Vec<f64> = range.clone().map(|i| est.eps1[i] + est.eps0[i]).collect();
        let b: Vec<f64> = range.clone().map(|i| est.eps1[i] - est.eps1_bar_c[c]).collect();
        let cv: Vec<f64> = range.clone().map(|i| est.eps0[i] - est.eps0_bar_c[c]).collect();
        // per-cluster moments: E[S_c], E[S_c^2], ..., over (q, W, C, U)
        let (mut es, mut ed, mut ess, mut edd, mut esd) =
            (Neumaier::new(), Neumaier::new(), Neumaier::new(), Neumaier::new(), Neumaier::new());
        let (mut ef, mut eff) = (Neumaier::new(), Neumaier::new());
        for &(q, pq) in &support {
            for pattern in 0u32..(1 << mc) {
                // P(W pattern | q); exact product, no combinatorics shortcuts
                let mut pw = pq * pc;
                for j in 0..mc {
                    pw *= if pattern >> j & 1 == 1 { q } else { 1.0 - q };
                }
                if pw == 0.0 {
                    continue;
                }
                // conditional per-unit terms
                let (mut sa, mut sd_, mut saa, mut sdd, mut sad) = (0.0, 0.0, 0.0, 0.0, 0.0);
                let (mut sf, mut sff) = (0.0, 0.0);
                for j in 0..mc {
                    let w = (pattern >> j & 1) as f64;
                    let d_j = (2.0 * w - 1.0) * s[j];
                    sa += a[j];
                    sd_ += d_j;
                    saa += a[j] * a[j];
                    sdd += d_j * d_j;
                    sad += a[j] * d_j;
                    if fe_defined {
                        let eps_dot = (w - q) * a[j] + q * b[j] + (1.0 - q) * cv[j];
                        let f_j = (w - q) * eps_dot;
                        sf += f_j;
                        sff += f_j * f_j;
                    }
                }
                // collapse the unit-sampling Bernoullis analytically:
                // for X = sum_j U_j x_j, E[X] = pu*sum x, and
                // E[X Y] = pu(1-pu) sum x_j y_j + pu^2 (sum x)(sum y)
                let cross = pu * (1.0 - pu);
                es.add(pw * pu * sa);
                ed.add(pw * pu * sd_);
                ess.add(pw * (cross * saa + pu * pu * sa * sa));
                edd.add(pw * (cross * sdd + pu * pu * sd_ * sd_));
                esd.add(pw * (cross * sad + pu * pu * sa * sd_));
                if fe_defined {
                    ef.add(pw * pu * sf);
                    eff.add(pw * (cross * sff + pu * pu * sf * sf));
                }
            }
        }
        // the C_c = 0 branch contributes zeros with weight (1 - p_c), which
        // is already reflected by the p_c factor in every weight above
        let (es, ed) = (es.total(), ed.total());
        mean_s.add(es);
        mean_d.add(ed);
        var_s.add(ess.total() - es * es);
        var_d.add(edd.total() - ed * ed);
        cov_sd.add(esd.total() - es * ed);
        if fe_defined {
            let ef = ef.total();
            mean_f.add(ef);
            var_f.add(eff.total() - ef * ef);
        }
    }

    let norm = 1.0 / (m * p);
    let var_s = var_s.total() * norm;
    let var_d = var_d.total() * norm;
    let cov_sd = cov_sd.total() * norm;
    let (mean_eta_fe, var_eta_fe) = if fe_defined {
        (
            Some(mean_f.total() / (eq1q * (m * p).sqrt())),
            Some(var_f.total() * norm / (eq1q * eq1q)),
        )
    } else {
        (None, None)
    };
    Ok(OracleResult {
        mean_eta: (mean_s.total() + mean_d.total()) / (m * p).sqrt(),
        var_eta: var_s + var_d + 2.0 * cov_sd,
        var_s,
        var_d,
        cov_sd,
        mean_eta_fe,
        var_eta_fe,
    })
}

/// The same moments as [`enumeration_oracle`], but with the unit-sampling
/// indicators enumerated bit by bit instead of collapsed through Bernoulli
/// moments. Exponentially slower (`4^max_cluster_size` per cluster);
/// exists purely as a cross-check of the collapsed oracle.
pub fn enumeration_oracle_exhaustive(
    pop: &Population,
    sampling: &SamplingDesign,
    assignment: &AssignmentDesign,
) -> Result<OracleResult, OracleError> {
    let support = oracle_guard(pop, assignment)?;
    let est = Estimands::compute(pop);
    let (pc, pu) = (sampling.p_c(), sampling.p_u());
    let m = pop.n_units() as f64;
    let p = pc * pu;
    let fe_defined = assignment.sigma2() < 0.25;
    let eq1q = 0.25 - assignment.sigma2();

    let mut mean_s = Neumaier::new();
    let mut mean_d = Neumaier::new();
    let mut var_s = Neumaier::new();
    let mut var_d = Neumaier::new();
    let mut cov_sd = Neumaier::new();
    let mut mean_f = Neumaier::new();
    let mut var_f = Neumaier::new();

    for c in 0..pop.n_clusters() {
        let range = pop.cluster_range(c);
        let mc = range.len();
        let a: Vec<f64> = range.clone().map(|i| est.eps1[i] - est.eps0[i]).collect();
        let s: Vec<f64> = range.clone().map(|i| est.eps1[i] + est.eps0[i]).collect();
        let b: Vec<f64> = range.clone().map(|i| est.eps1[i] - est.eps1_bar_c[c]).collect();
        let cv: Vec<f64> = range.clone().map(|i| est.eps0[i] - est.eps0_bar_c[c]).collect();
        let (mut es, mut ed, mut ess, mut edd, mut esd) =
            (Neumaier::new(), Neumaier::new(), Neumaier::new(), Neumaier::new(), Neumaier::new());
        let (mut ef, mut eff) = (Neumaier::new(), Neumaier::new());
        for &(q, pq) in &support {
            for pattern in 0u32..(1 << mc) {
                let mut pw = pq;
                for j in 0..mc {
                    pw *= if pattern >> j & 1 == 1 { q } else { 1.0 - q };
                }
                if pw == 0.0 {
                    continue;
                }
                // cluster not sampled: S_c = D_c = F_c = 0, weight (1-p_c);
                // contributes nothing to sums but is part of the measure
                for units in 0u32..(1 << mc) {
                    let mut pr = pw * pc;
                    for j in 0..mc {
                        pr *= if units >> j & 1 == 1 { pu } else { 1.0 - pu };
                    }
                    if pr == 0.0 {
                        continue;
                    }
                    let (mut sc, mut dc, mut fc) = (0.0, 0.0, 0.0);
                    for j in 0..mc {
                        if units >> j & 1 == 1 {
                            let w = (pattern >> j & 1) as f64;
                            sc += a[j];
                            dc += (2.0 * w - 1.0) * s[j];
                            if fe_defined {
                                let eps_dot = (w - q) * a[j] + q * b[j] + (1.0 - q) * cv[j];
                                fc += (w - q) * eps_dot;
                            }
                        }
                    }
                    es.add(pr * sc);
                    ed.add(pr * dc);
                    ess.add(pr * sc * sc);
                    edd.add(pr * dc * dc);
                    esd.add(pr * sc * dc);
                    if fe_defined {
                        ef.add(pr * fc);
                        eff.add(pr * fc * fc);
                    }
                }
            }
        }
        let (es, ed) = (es.total(), ed.total());
        mean_s.add(es);
        mean_d.add(ed);
        var_s.add(ess.total() - es * es);
        var_d.add(edd.total() - ed * ed);
        cov_sd.add(esd.total() - es * ed);
        if fe_defined {
            let ef = ef.total();
            mean_f.add(ef);
            var_f.add(eff.total() - ef * ef);
        }
    }

    let norm = 1.0 / (m * p);
    let var_s = var_s.total() * norm;
    let var_d = var_d.total() * norm;
    let cov_sd = cov_sd.total() * norm;
    let (mean_eta_fe, var_eta_fe) = if fe_defined {
        (
            Some(mean_f.total() / (eq1q * (m * p).sqrt())),
            Some(var_f.total() * norm / (eq1q * eq1q)),
        )
    } else {
        (None, None)
    };
    Ok(OracleResult {
        mean_eta: (mean_s.total() + mean_d.total()) / (m * p).sqrt(),
        var_eta: var_s + var_d + 2.0 * cov_sd,
        var_s,
        var_d,
        cov_sd,
        mean_eta_fe,
        var_eta_fe,
    })
}

/// Exact moments of `sqrt(N)(tau_hat − tau)` by full enumeration of the
/// joint design (no per-cluster factorization is possible: the estimator is
/// a nonlinear function of the whole sample).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TauStatOracle {
    /// Probability that a draw is degenerate (some arm empty, estimator
    /// undefined).
    pub degenerate_prob: f64,
    /// Moments conditional on a non-degenerate draw — the quantities a
    /// Monte Carlo harness that skips degenerate replications estimates.
    pub conditional_mean: f64,
    pub conditional_var: f64,
    /// Unconditional moments; populated only when no configuration is
    /// degenerate.
    pub mean: Option<f64>,
    pub var: Option<f64>,
}

/// Per-cluster outcome for the statistic enumeration: probability and the
/// sufficient statistics `(n1, n0, sum of treated y, sum of control y)`.
type ClusterOutcome = (f64, u32, u32, f64, f64);

/// Enumerate the exact distribution of `sqrt(N)(tau_hat − tau)` over the
/// design. Refuses instances whose configuration-product is too large.
pub fn enumerate_tau_statistic(
    pop: &Population,
    sampling: &SamplingDesign,
    assignment: &AssignmentDesign,
) -> Result<TauStatOracle, OracleError> {
    let support = oracle_guard(pop, assignment)?;
    let (pc, pu) = (sampling.p_c(), sampling.p_u());
    const LIMIT: f64 = 5e7;
    let mut estimate = 1.0;
    for c in 0..pop.n_clusters() {
        let mc = pop.sizes()[c] as f64;
        estimate *= support.len() as f64 * 3f64.powf(mc);
        if estimate > LIMIT {
            return Err(OracleError::TooManyConfigurations { estimate, limit: LIMIT });
        }
    }

    // build each cluster's outcome list
    let mut outcomes: Vec<Vec<ClusterOutcome>> = Vec::with_capacity(pop.n_clusters());
    for c in 0..pop.n_clusters() {
        let range = pop.cluster_range(c);
        let mc = range.len();
        let y0 = &pop.y0()[range.clone()];
        let y1 = &pop.y1()[range];
        let mut list: Vec<ClusterOutcome> = Vec::new();
        // nothing sampled: either the cluster is out, or all units missed
        let p_empty = (1.0 - pc) + pc * (1.0 - pu).powi(mc as i32);
        list.push((p_empty, 0, 0, 0.0, 0.0));
        for subset in 1u32..(1 << mc) {
            let k = subset.count_ones();
            let p_subset =
                pc * pu.powi(k as i32) * (1.0 - pu).powi(mc as i32 - k as i32);
            if p_subset == 0.0 {
                continue;
            }
            // treated sub-pattern ranges over the sampled subset only;
            // unsampled units' W values integrate out of the statistic
            for &(q, pq) in &support {
                let mut t = subset;
                // iterate all sub-masks w of `subset`, including 0
                loop {
                    let w = t & subset;
                    let mut prob = pq * p_subset;
                    let (mut n1, mut n0, mut s1, mut s0) = (0u32, 0u32, 0.0, 0.0);
                    for j in 0..mc {
                        if subset >> j & 1 == 1 {
                            if w >> j & 1 == 1 {
                                prob *= q;
                                n1 += 1;
                                s1 += y1[j];
                            } else {
                                prob *= 1.0 - q;
                                n0 += 1;
                                s0 += y0[j];
                            }
                        }
                    }
                    if prob > 0.0 {
                        list.push((prob, n1, n0, s1, s0));
                    }
                    if t == 0 {
                        break;
                    }
                    t = (t - 1) & subset;
                }
            }
        }
        outcomes.push(list);
    }

    // depth-first product across clusters
    let tau = Estimands::compute(pop).tau;
    let mut degenerate = Neumaier::new();
    let mut p_ok = Neumaier::new();
    let mut e1 = Neumaier::new();
    let mut e2 = Neumaier::new();
    fn dfs(
        outcomes: &[Vec<ClusterOutcome>],
        depth: usize,
        acc: ClusterOutcome,
        tau: f64,
        degenerate: &mut Neumaier,
        p_ok: &mut Neumaier,
        e1: &mut Neumaier,
        e2: &mut Neumaier,
    ) {
        if depth == outcomes.len() {
            let (prob, n1, n0, s1, s0) = acc;
            if n1 == 0 || n0 == 0 {
                degenerate.add(prob);
            } else {
                let n = (n1 + n0) as f64;
                let x = n.sqrt() * (s1 / n1 as f64 - s0 / n0 as f64 - tau);
                p_ok.add(prob);
                e1.add(prob * x);
                e2.add(prob * x * x);
            }
            return;
        }
        for &(p, n1, n0, s1, s0) in &outcomes[depth] {
            dfs(
                outcomes,
                depth + 1,
                (acc.0 * p, acc.1 + n1, acc.2 + n0, acc.3 + s1, acc.4 + s0),
                tau,
                degenerate,
                p_ok,
                e1,
                e2,
            );
        }
    }
    dfs(
        &outcomes,
        0,
        (1.0, 0, 0, 0.0, 0.0),
        tau,
        &mut degenerate,
        &mut p_ok,
        &mut e1,
        &mut e2,
    );
    let degenerate_prob = degenerate.total();
    let p_ok = p_ok.total();
    debug_assert!((degenerate_prob + p_ok - 1.0).abs() < 1e-10);
    let conditional_mean = e1.total() / p_ok;
    let conditional_var = e2.total() / p_ok - conditional_mean * conditional_mean;
    let unconditional = degenerate_prob == 0.0;
    Ok(TauStatOracle {
        degenerate_prob,
        conditional_mean,
        conditional_var,
        mean: unconditional.then_some(conditional_mean),
        var: unconditional.then_some(conditional_var),
    })
}

// ===== Oracle fixtures =====

/// One formula-versus-oracle comparison, serialized to the fixture CSV
/// (`fixture_id,p_c,p_u,sigma2,model,formula_value,oracle_value`).
#[derive(Debug, Clone, Serialize)]
pub struct FixtureRow {
    pub fixture_id: String,
    pub p_c: f64,
    pub p_u: f64,
    pub sigma2: f64,
    pub model: String,
    pub formula_value: f64,
    pub oracle_value: f64,
}

impl FixtureRow {
    /// Discrepancy measure used for the pass threshold:
    /// `|formula − oracle| / max(1, |oracle|)`.
    pub fn discrepancy(&self) -> f64 {
        (self.formula_value - self.oracle_value).abs() / self.oracle_value.abs().max(1.0)
    }
}

/// Standard verification grid: `p_C ∈ {0.25, 0.5, 1}`, `p_U ∈ {0.5, 1}`,
/// `σ² ∈ {0, 0.09, 0.25}` for the plain statistic and `σ² ∈ {0, 0.09}` for
/// fixed effects (which is undefined at 1/4).
pub fn verification_grid() -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    (vec![0.25, 0.5, 1.0], vec![0.5, 1.0], vec![0.0, 0.09, 0.25])
}

/// Assignment design for a grid sigma2: degenerate at zero, two-point
/// otherwise.
pub fn grid_assignment(sigma2: f64) -> AssignmentDesign {
    if sigma2 == 0.0 {
        AssignmentDesign::degenerate()
    } else {
        AssignmentDesign::two_point(sigma2).expect("grid sigma2 valid")
    }
}

/// Compare the exact-variance formulas against the enumeration oracle over
/// the full verification grid for one population.
pub fn oracle_fixture_rows(
    pop: &Population,
    label: &str,
) -> Result<Vec<FixtureRow>, OracleError> {
    let est = Estimands::compute(pop);
    let (pcs, pus, s2s) = verification_grid();
    let mut rows = Vec::new();
    for &pc in &pcs {
        for &pu in &pus {
            for &s2 in &s2s {
                let sampling = SamplingDesign::new(pc, pu).expect("grid p valid");
                let assignment = grid_assignment(s2);
                let oracle = enumeration_oracle(pop, &sampling, &assignment)?;
                let id = format!("{label}-pc{pc}-pu{pu}-s2{s2}");
                rows.push(FixtureRow {
                    fixture_id: format!("{id}-plain"),
                    p_c: pc,
                    p_u: pu,
                    sigma2: s2,
                    model: "plain".to_string(),
                    formula_value: exact_variance_plain(pop, &est, &sampling, &assignment).total,
                    oracle_value: oracle.var_eta,
                });
                if let Some(var_fe) = oracle.var_eta_fe {
                    let formula = exact_variance_fe(pop, &est, &sampling, &assignment)
                        .expect("fe defined on this grid point")
                        .total;
                    rows.push(FixtureRow {
                        fixture_id: format!("{id}-fe"),
                        p_c: pc,
                        p_u: pu,
                        sigma2: s2,
                        model: "fe".to_string(),
                        formula_value: formula,
                        oracle_value: var_fe,
                    });
                }
            }
        }
    }
    Ok(rows)
}
