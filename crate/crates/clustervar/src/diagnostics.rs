//! Within-cluster correlation diagnostics for residuals, regressors, and
//! their product (the regression score).
//!
//! The measure is a variance decomposition, not a mixed-model ICC: with `v`
//! first demeaned by its grand mean,
//!
//! ```text
//! rho(v) = [Var(v) - Var(v after within-cluster demeaning)] / Var(v)
//! ```
//!
//! with uncorrected (divide-by-N) variances. It is the between-cluster share
//! of the total variance: exactly 1 for inputs constant within every cluster
//! (including the degenerate all-singletons case, where within-cluster
//! demeaning zeroes the vector), exactly 0 when all cluster means coincide,
//! and in `[0, 1]` always.
//!
//! The practical point of these diagnostics is cautionary: a sample can have
//! `rho_eps` and `rho_w` both near zero — so a Kloek/Moulton-style
//! correction factor near one — while the cluster-robust variance differs
//! from the heteroskedasticity-robust one by a large factor, because the
//! *product* of residual and regressor is strongly clustered. `rho_epsw`
//! measures exactly that product.
//!
//! # References
//!
//! - Kloek, T. (1981). OLS estimation in a model where a microvariable is
//!   explained by aggregates. *Econometrica* 49(1), 205–207.
//! - Moulton, B. R. (1986). Random group effects and the precision of
//!   regression estimates. *Journal of Econometrics* 32(3), 385–397.

use serde::Serialize;

use crate::estimators::{Dataset, FitResult};
use crate::numeric::Neumaier;

/// Within-cluster correlation diagnostics. Each entry is `None` when the
/// underlying vector has zero variance, where the ratio is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    /// rho of the fitted residuals.
    pub rho_eps: Option<f64>,
    /// rho of the treatment indicator.
    pub rho_w: Option<f64>,
    /// rho of the score: residual times grand-demeaned treatment.
    pub rho_epsw: Option<f64>,
}

/// Between-cluster share of the variance of `values`.
///
/// `cluster[i] < n_clusters` are compact cluster ids. Returns `None` when
/// the overall (grand-demeaned, divide-by-N) variance is zero.
///
/// Invariant: the result lies in `[0, 1]`; it is scale-invariant; it equals
/// 1 whenever `values` is constant within every cluster and 0 whenever all
/// cluster means are equal.
pub fn within_cluster_correlation(
    values: &[f64],
    cluster: &[u32],
    n_clusters: usize,
) -> Option<f64> {
    let n = values.len();
    assert!(n >= 1);
    assert_eq!(n, cluster.len());
    let grand = crate::numeric::csum(values.iter().copied()) / n as f64;
    let mut cluster_sum = vec![Neumaier::new(); n_clusters];
    let mut cluster_n = vec![0usize; n_clusters];
    let mut total = Neumaier::new();
    for i in 0..n {
        let v = values[i] - grand;
        total.add(v * v);
        cluster_sum[cluster[i] as usize].add(v);
        cluster_n[cluster[i] as usize] += 1;
    }
    let total = total.total();
    if total <= 0.0 {
        return None;
    }
    // Var(within-demeaned) = Var(v) - sum_c n_c * mean_c^2 / N, so the
    // between share is sum_c n_c mean_c^2 / sum_i v_i^2.
    let mut between = Neumaier::new();
    for c in 0..n_clusters {
        if cluster_n[c] > 0 {
            let m = cluster_sum[c].total() / cluster_n[c] as f64;
            between.add(cluster_n[c] as f64 * m * m);
        }
    }
    Some((between.total() / total).clamp(0.0, 1.0))
}

/// Apply [`within_cluster_correlation`] to the residuals, the treatment, and
/// the score (residual times grand-demeaned treatment) of a fit.
pub fn full_diagnostics(ds: &Dataset, fit: &FitResult) -> DiagnosticsReport {
    let n = ds.n();
    let wbar = crate::numeric::csum(ds.w().iter().copied()) / n as f64;
    let score: Vec<f64> = (0..n)
        .map(|i| fit.residuals[i] * (ds.w()[i] - wbar))
        .collect();
    DiagnosticsReport {
        rho_eps: within_cluster_correlation(&fit.residuals, ds.cluster(), ds.n_clusters()),
        rho_w: within_cluster_correlation(ds.w(), ds.cluster(), ds.n_clusters()),
        rho_epsw: within_cluster_correlation(&score, ds.cluster(), ds.n_clusters()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::stream_rng;
    use rand::Rng;

    #[test]
    fn constant_within_cluster_gives_one() {
        let v = [2.0, 2.0, 5.0, 5.0, -1.0, -1.0];
        let c = [0, 0, 1, 1, 2, 2];
        let rho = within_cluster_correlation(&v, &c, 3).unwrap();
        assert!((rho - 1.0).abs() < 1e-15);
    }

    #[test]
    fn equal_cluster_means_give_zero() {
        let v = [1.0, -1.0, 2.0, -2.0];
        let c = [0, 0, 1, 1];
        let rho = within_cluster_correlation(&v, &c, 2).unwrap();
        assert!(rho.abs() < 1e-15);
    }

    #[test]
    fn singleton_clusters_give_one() {
        // within-singleton demeaning zeroes the vector, so the between
        // share is literally 1
        let v = [1.0, 4.0, -2.0];
        let c = [0, 1, 2];
        let rho = within_cluster_correlation(&v, &c, 3).unwrap();
        assert_eq!(rho, 1.0);
    }

    #[test]
    fn zero_variance_is_undefined() {
        let v = [3.0, 3.0, 3.0];
        let c = [0, 0, 1];
        assert_eq!(within_cluster_correlation(&v, &c, 2), None);
    }

    #[test]
    fn scale_and_shift_invariance() {
        let v = [0.3, -1.2, 2.0, 0.7, -0.4];
        let c = [0, 0, 1, 1, 1];
        let base = within_cluster_correlation(&v, &c, 2).unwrap();
        let scaled: Vec<f64> = v.iter().map(|x| -7.5 * x + 3.0).collect();
        let other = within_cluster_correlation(&scaled, &c, 2).unwrap();
        assert!((base - other).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn random_labels_on_iid_data_are_uncorrelated() {
        // permutation baseline: E[rho] ~ (C-1)/N for iid data
        let n = 100_000;
        let g = 100;
        let mut rng = stream_rng(31, 0);
        let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let c: Vec<u32> = (0..n).map(|i| (i % g) as u32).collect();
        let rho = within_cluster_correlation(&v, &c, g as usize).unwrap();
        assert!(rho < 0.01, "rho = {rho}");
    }

    #[test]
    fn fe_residuals_have_zero_rho() {
        use crate::estimators::{fit_fe, Dataset};
        let ds = Dataset::from_parts(
            vec![1.0, 3.0, 2.5, 2.0, 4.0, -1.0],
            vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0],
            vec![0, 0, 0, 1, 1, 1],
            2,
        )
        .unwrap();
        let fit = fit_fe(&ds).unwrap();
        let d = full_diagnostics(&ds, &fit);
        // per-cluster residual sums are exactly zero, so the between share is 0
        assert!(d.rho_eps.unwrap() < 1e-12);
    }
}
