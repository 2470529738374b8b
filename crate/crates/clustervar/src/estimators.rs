//! Point estimators of the average treatment effect on sampled data.
//!
//! Two regression models are supported: the plain regression of the realized
//! outcome on a constant and the treatment indicator, whose slope is the
//! difference in arm means, and the cluster fixed-effects regression, whose
//! slope is computed by within-cluster demeaning of both outcome and
//! treatment (Frisch–Waugh–Lovell). Both produce the residual vector that
//! the variance estimators consume.
//!
//! # References
//!
//! - Frisch, R. and Waugh, F. V. (1933). Partial time regressions as
//!   compared with individual trends. *Econometrica* 1(4), 387–401.
//! - Angrist, J. D. and Pischke, J.-S. (2009). *Mostly Harmless
//!   Econometrics*, §3.1 (regression anatomy).

use std::collections::HashMap;
use std::fmt;
use std::io;
use std::path::Path;

use crate::design::SampleDraw;
use crate::numeric::Neumaier;

// ===== Errors =====

#[derive(Debug)]
pub enum EstimatorError {
    /// The dataset has no rows.
    Empty,
    /// The plain model needs at least one unit in each arm.
    EmptyArm { treated: usize, control: usize },
    /// The fixed-effects model needs treatment variation inside at least one
    /// cluster (every cluster single-armed makes the slope undefined).
    NoWithinClusterVariation,
    /// Treatment values must be exactly 0 or 1.
    BadTreatment { line: usize, value: String },
    /// A required CSV column is missing.
    MissingColumn { name: &'static str },
    /// Malformed CSV content.
    Csv { line: usize, message: String },
    Io(io::Error),
}

impl fmt::Display for EstimatorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Empty => write!(f, "dataset has no rows"),
            Self::EmptyArm { treated, control } => write!(
                f,
                "plain model needs both arms occupied (treated = {treated}, control = {control})"
            ),
            Self::NoWithinClusterVariation => write!(
                f,
                "fixed-effects model needs within-cluster treatment variation"
            ),
            Self::BadTreatment { line, value } => {
                write!(f, "line {line}: treatment must be 0 or 1, got {value:?}")
            }
            Self::MissingColumn { name } => write!(f, "missing required column {name:?}"),
            Self::Csv { line, message } => write!(f, "line {line}: {message}"),
            Self::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for EstimatorError {}

impl From<io::Error> for EstimatorError {
    fn from(e: io::Error) -> Self {
        Self::Io(e)
    }
}

// ===== Dataset =====

/// Sampled data as the estimators see it: realized outcome, treatment
/// indicator, and a compact cluster id per row. Rows keep input order;
/// cluster ids are remapped to `0..n_clusters` in order of first appearance,
/// with the original labels retained when they came from a file.
#[derive(Debug, Clone)]
pub struct Dataset {
    y: Vec<f64>,
    w: Vec<f64>,
    cluster: Vec<u32>,
    n_clusters: usize,
    labels: Option<Vec<String>>,
}

impl Dataset {
    /// Build from parallel vectors with already-compact cluster ids
    /// (`cluster[i] < n_clusters`); `w` entries must be 0 or 1.
    pub fn from_parts(
        y: Vec<f64>,
        w: Vec<f64>,
        cluster: Vec<u32>,
        n_clusters: usize,
    ) -> Result<Self, EstimatorError> {
        if y.is_empty() {
            return Err(EstimatorError::Empty);
        }
        assert_eq!(y.len(), w.len());
        assert_eq!(y.len(), cluster.len());
        for (i, &wi) in w.iter().enumerate() {
            if wi != 0.0 && wi != 1.0 {
                return Err(EstimatorError::BadTreatment { line: i + 1, value: wi.to_string() });
            }
        }
        debug_assert!(cluster.iter().all(|&g| (g as usize) < n_clusters));
        Ok(Self { y, w, cluster, n_clusters, labels: None })
    }

    /// Estimator-facing view of a realized draw: the sampled records only.
    pub fn from_draw(draw: &SampleDraw) -> Result<Self, EstimatorError> {
        if draw.records.is_empty() {
            return Err(EstimatorError::Empty);
        }
        let mut y = Vec::with_capacity(draw.n);
        let mut w = Vec::with_capacity(draw.n);
        let mut cluster = Vec::with_capacity(draw.n);
        let mut labels = Vec::new();
        let mut last: Option<u32> = None;
        for rec in &draw.records {
            // records are cluster-contiguous, so first appearances are runs
            if last != Some(rec.cluster) {
                labels.push(rec.cluster.to_string());
                last = Some(rec.cluster);
            }
            y.push(rec.y);
            w.push(if rec.w { 1.0 } else { 0.0 });
            cluster.push(labels.len() as u32 - 1);
        }
        let n_clusters = labels.len();
        Ok(Self { y, w, cluster, n_clusters, labels: Some(labels) })
    }

    /// Read a `y,w,cluster` CSV (header required, columns in any order).
    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Self, EstimatorError> {
        let mut reader = csv::Reader::from_path(path.as_ref()).map_err(csv_err)?;
        let headers = reader.headers().map_err(csv_err)?.clone();
        let col = |name: &'static str| -> Result<usize, EstimatorError> {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or(EstimatorError::MissingColumn { name })
        };
        let (yc, wc, cc) = (col("y")?, col("w")?, col("cluster")?);
        let mut y = Vec::new();
        let mut w = Vec::new();
        let mut cluster = Vec::new();
        let mut labels: Vec<String> = Vec::new();
        let mut index: HashMap<String, u32> = HashMap::new();
        for (k, record) in reader.records().enumerate() {
            let line = k + 2; // header is line 1
            let record = record.map_err(csv_err)?;
            let field = |i: usize| -> Result<&str, EstimatorError> {
                record.get(i).map(str::trim).ok_or(EstimatorError::Csv {
                    line,
                    message: "short record".to_string(),
                })
            };
            let raw_y = field(yc)?;
            let yi: f64 = raw_y.parse().map_err(|e| EstimatorError::Csv {
                line,
                message: format!("bad y: {e}"),
            })?;
            // f64::from_str accepts "nan"/"inf"; those are malformed outcomes here,
            // not data, and would otherwise flow through to a null report.
            if !yi.is_finite() {
                return Err(EstimatorError::Csv {
                    line,
                    message: format!("bad y: non-finite value \"{raw_y}\""),
                });
            }
            let ws = field(wc)?;
            let wi = match ws {
                "0" => 0.0,
                "1" => 1.0,
                other => {
                    let v: f64 = other.parse().map_err(|_| EstimatorError::BadTreatment {
                        line,
                        value: other.to_string(),
                    })?;
                    if v != 0.0 && v != 1.0 {
                        return Err(EstimatorError::BadTreatment {
                            line,
                            value: other.to_string(),
                        });
                    }
                    v
                }
            };
            let label = field(cc)?.to_string();
            let next = labels.len() as u32;
            let g = *index.entry(label.clone()).or_insert_with(|| {
                labels.push(label);
                next
            });
            y.push(yi);
            w.push(wi);
            cluster.push(g);
        }
        if y.is_empty() {
            return Err(EstimatorError::Empty);
        }
        let n_clusters = labels.len();
        Ok(Self { y, w, cluster, n_clusters, labels: Some(labels) })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn cluster(&self) -> &[u32] {
        &self.cluster
    }

    /// Original label of a compact cluster id (falls back to the id itself
    /// when the dataset was built without labels).
    pub fn label(&self, g: usize) -> String {
        match &self.labels {
            Some(l) => l[g].clone(),
            None => g.to_string(),
        }
    }
}

fn csv_err(e: csv::Error) -> EstimatorError {
    let line = e
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(0);
    EstimatorError::Csv { line, message: e.to_string() }
}

// ===== Fits =====

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ModelKind {
    Plain,
    FixedEffects,
}

use serde::Serialize;

/// A fitted regression: the slope on treatment, the residual vector, and the
/// pieces the variance estimators need.
///
/// Invariants (enforced in debug builds): for the plain fit the residuals
/// sum to zero within each arm; for the fixed-effects fit they sum to zero
/// within each cluster and are orthogonal to the demeaned treatment.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: ModelKind,
    pub tau_hat: f64,
    /// Intercept of the plain model (the control-arm mean); `None` for the
    /// fixed-effects model, whose per-cluster intercepts are implicit.
    pub alpha: Option<f64>,
    pub residuals: Vec<f64>,
    pub n: usize,
    pub n1: usize,
    pub n0: usize,
    /// Within-cluster demeaned treatment (fixed-effects model only).
    pub wtilde: Option<Vec<f64>>,
    /// `sum(wtilde^2)`, the denominator of the fixed-effects slope; 0 for
    /// the plain model.
    pub wtilde_ssq: f64,
}

/// Fit `y = alpha + tau * w + e` by least squares.
pub fn fit_plain(ds: &Dataset) -> Result<FitResult, EstimatorError> {
    let n = ds.n();
    let mut s1 = Neumaier::new();
    let mut s0 = Neumaier::new();
    let mut n1 = 0usize;
    for i in 0..n {
        if ds.w[i] == 1.0 {
            s1.add(ds.y[i]);
            n1 += 1;
        } else {
            s0.add(ds.y[i]);
        }
    }
    let n0 = n - n1;
    if n1 == 0 || n0 == 0 {
        return Err(EstimatorError::EmptyArm { treated: n1, control: n0 });
    }
    let ybar1 = s1.total() / n1 as f64;
    let ybar0 = s0.total() / n0 as f64;
    let tau_hat = ybar1 - ybar0;
    let alpha = ybar0;
    let residuals: Vec<f64> = (0..n)
        .map(|i| ds.y[i] - alpha - tau_hat * ds.w[i])
        .collect();
    debug_assert!({
        let r1: f64 = (0..n).filter(|&i| ds.w[i] == 1.0).map(|i| residuals[i]).sum();
        let r0: f64 = (0..n).filter(|&i| ds.w[i] == 0.0).map(|i| residuals[i]).sum();
        r1.abs() < 1e-8 * (1.0 + ybar1.abs()) * n as f64
            && r0.abs() < 1e-8 * (1.0 + ybar0.abs()) * n as f64
    });
    Ok(FitResult {
        model: ModelKind::Plain,
        tau_hat,
        alpha: Some(alpha),
        residuals,
        n,
        n1,
        n0,
        wtilde: None,
        wtilde_ssq: 0.0,
    })
}

/// Fit the cluster fixed-effects regression by within-cluster demeaning.
pub fn fit_fe(ds: &Dataset) -> Result<FitResult, EstimatorError> {
    let n = ds.n();
    let g = ds.n_clusters();
    let mut sum_w = vec![Neumaier::new(); g];
    let mut sum_y = vec![Neumaier::new(); g];
    let mut count = vec![0usize; g];
    for i in 0..n {
        let c = ds.cluster[i] as usize;
        sum_w[c].add(ds.w[i]);
        sum_y[c].add(ds.y[i]);
        count[c] += 1;
    }
    let wbar: Vec<f64> = (0..g).map(|c| sum_w[c].total() / count[c] as f64).collect();
    let ybar: Vec<f64> = (0..g).map(|c| sum_y[c].total() / count[c] as f64).collect();
    let mut num = Neumaier::new();
    let mut den = Neumaier::new();
    let mut wtilde = Vec::with_capacity(n);
    for i in 0..n {
        let c = ds.cluster[i] as usize;
        let wt = ds.w[i] - wbar[c];
        let yt = ds.y[i] - ybar[c];
        num.add(wt * yt);
        den.add(wt * wt);
        wtilde.push(wt);
    }
    let den = den.total();
    if den <= 0.0 {
        return Err(EstimatorError::NoWithinClusterVariation);
    }
    let tau_hat = num.total() / den;
    let residuals: Vec<f64> = (0..n)
        .map(|i| {
            let c = ds.cluster[i] as usize;
            (ds.y[i] - ybar[c]) - tau_hat * wtilde[i]
        })
        .collect();
    let n1 = ds.w.iter().filter(|&&w| w == 1.0).count();
    debug_assert!({
        // residuals sum to zero within each cluster and against wtilde
        let mut per = vec![0.0f64; g];
        let mut dot = 0.0f64;
        for i in 0..n {
            per[ds.cluster[i] as usize] += residuals[i];
            dot += residuals[i] * wtilde[i];
        }
        per.iter().all(|v| v.abs() < 1e-7 * n as f64) && dot.abs() < 1e-7 * n as f64
    });
    Ok(FitResult {
        model: ModelKind::FixedEffects,
        tau_hat,
        alpha: None,
        residuals,
        n,
        n1,
        n0: n - n1,
        wtilde: Some(wtilde),
        wtilde_ssq: den,
    })
}

// ===== Per-cluster effects =====

/// Per-cluster sample composition and effect estimates, used by the
/// cluster-adjusted variance correction and the `analyze` report.
#[derive(Debug, Clone, Serialize)]
pub struct ClusterEffects {
    /// Sampled units per cluster.
    pub n_c: Vec<usize>,
    /// Sampled treated units per cluster.
    pub n_c1: Vec<usize>,
    /// Within-cluster difference in arm means; `None` for single-armed
    /// clusters, where it is undefined.
    pub tau_c: Vec<Option<f64>>,
}

pub fn cluster_effects(ds: &Dataset) -> ClusterEffects {
    let g = ds.n_clusters();
    let mut n_c = vec![0usize; g];
    let mut n_c1 = vec![0usize; g];
    let mut s1 = vec![Neumaier::new(); g];
    let mut s0 = vec![Neumaier::new(); g];
    for i in 0..ds.n() {
        let c = ds.cluster[i] as usize;
        n_c[c] += 1;
        if ds.w()[i] == 1.0 {
            n_c1[c] += 1;
            s1[c].add(ds.y()[i]);
        } else {
            s0[c].add(ds.y()[i]);
        }
    }
    let tau_c = (0..g)
        .map(|c| {
            let n1 = n_c1[c];
            let n0 = n_c[c] - n1;
            if n1 > 0 && n0 > 0 {
                Some(s1[c].total() / n1 as f64 - s0[c].total() / n0 as f64)
            } else {
                None
            }
        })
        .collect();
    ClusterEffects { n_c, n_c1, tau_c }
}
