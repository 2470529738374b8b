//! Replication harness: draw repeated samples from a fixed population, fit
//! the estimators, and aggregate confidence-interval coverage, mean standard
//! errors, and empirical variances against the exact design variances.
//!
//! Reproducibility contract: every replication derives its own RNG stream
//! from `(master seed, replication index)`, replications run as independent
//! parallel work items, and aggregation walks the outcomes in replication
//! order with compensated summation — so a report depends only on the
//! config, never on the thread count.
//!
//! Confidence intervals use the normal critical value for the configured
//! level (1.959963985 at 95%); coverage is measured against the
//! finite-population average treatment effect of the constructed population.

use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{AssignmentDesign, AssignmentFamily, SamplingDesign};
use crate::estimators::{fit_fe, fit_plain, Dataset};
use crate::numeric::{inverse_normal_cdf, stream_rng, Neumaier};
use crate::population::{Estimands, Population, PopulationSpec};
use crate::variance::{
    exact_variance_fe, exact_variance_plain, limit_functionals, variance_report,
};

// ===== Errors =====

#[derive(Debug)]
pub enum ExperimentError {
    Population(crate::population::PopulationError),
    Design(crate::design::DesignError),
    BadConfig { message: String },
    Io(std::io::Error),
}

impl std::fmt::Display for ExperimentError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Population(e) => write!(f, "population: {e}"),
            Self::Design(e) => write!(f, "design: {e}"),
            Self::BadConfig { message } => write!(f, "config: {message}"),
            Self::Io(e) => write!(f, "io: {e}"),
        }
    }
}

impl std::error::Error for ExperimentError {}

impl From<crate::population::PopulationError> for ExperimentError {
    fn from(e: crate::population::PopulationError) -> Self {
        Self::Population(e)
    }
}

impl From<crate::design::DesignError> for ExperimentError {
    fn from(e: crate::design::DesignError) -> Self {
        Self::Design(e)
    }
}

impl From<std::io::Error> for ExperimentError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

// ===== Config =====

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelSet {
    Plain,
    FixedEffects,
    #[default]
    Both,
}

impl ModelSet {
    pub fn includes_plain(&self) -> bool {
        matches!(self, Self::Plain | Self::Both)
    }

    pub fn includes_fe(&self) -> bool {
        matches!(self, Self::FixedEffects | Self::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Ols,
    Ehw,
    Lz,
    Kloek,
    Cca,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Ols => "ols",
            Self::Ehw => "ehw",
            Self::Lz => "lz",
            Self::Kloek => "kloek",
            Self::Cca => "cca",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ols" => Some(Self::Ols),
            "ehw" => Some(Self::Ehw),
            "lz" => Some(Self::Lz),
            "kloek" => Some(Self::Kloek),
            "cca" => Some(Self::Cca),
            _ => None,
        }
    }
}

pub fn all_estimators() -> Vec<EstimatorKind> {
    vec![
        EstimatorKind::Ols,
        EstimatorKind::Ehw,
        EstimatorKind::Lz,
        EstimatorKind::Kloek,
        EstimatorKind::Cca,
    ]
}

fn default_confidence() -> f64 {
    0.95
}

fn default_models() -> ModelSet {
    ModelSet::Both
}

/// Full description of one coverage experiment. Serializable, and hashable
/// through [`ExperimentConfig::provenance_hash`] so reports can state
/// exactly what produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub population: PopulationSpec,
    pub p_c: f64,
    pub p_u: f64,
    pub sigma2: f64,
    pub assignment_family: AssignmentFamily,
    pub replications: u64,
    pub seed: u64,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    #[serde(default = "default_models")]
    pub models: ModelSet,
    #[serde(default = "all_estimators")]
    pub estimators: Vec<EstimatorKind>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.replications < 1 {
            return Err(ExperimentError::BadConfig {
                message: "replications must be >= 1".to_string(),
            });
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(ExperimentError::BadConfig {
                message: format!("confidence must be in (0,1), got {}", self.confidence),
            });
        }
        if self.estimators.is_empty() {
            return Err(ExperimentError::BadConfig {
                message: "estimator set must not be empty".to_string(),
            });
        }
        self.designs()?;
        Ok(())
    }

    pub fn designs(&self) -> Result<(SamplingDesign, AssignmentDesign), ExperimentError> {
        let s = SamplingDesign::new(self.p_c, self.p_u)?;
        let a = AssignmentDesign::new(self.assignment_family, self.sigma2)?;
        Ok((s, a))
    }

    /// Normal critical value for the configured confidence level.
    pub fn critical_value(&self) -> f64 {
        inverse_normal_cdf(0.5 + self.confidence / 2.0)
    }

    /// FNV-1a hash of the canonical JSON encoding, as a hex string.
    pub fn provenance_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in json.as_bytes() {
            h ^= *byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

// ===== Efficient sampling =====

/// Draw the estimator-facing part of one replication without materializing
/// per-unit indicators for the whole population: per cluster, draw `q_c` and
/// the cluster indicator, then a Binomial(M_c, p_U) count of sampled units,
/// the unit indices without replacement, and finally `W ~ Bern(q_c)` for the
/// sampled units only. The unobserved `W` values of unsampled units
/// integrate out, so the sampled-data distribution is identical to the
/// full-vector draw in [`crate::design::draw_sample`].
pub fn draw_dataset_efficient<R: Rng + ?Sized>(
    pop: &Population,
    sampling: &SamplingDesign,
    assignment: &AssignmentDesign,
    rng: &mut R,
) -> Option<Dataset> {
    let mut y = Vec::new();
    let mut w = Vec::new();
    let mut cluster = Vec::new();
    let mut next_id: u32 = 0;
    for c in 0..pop.n_clusters() {
        let qc = assignment.sample_q(rng);
        let cluster_in = rng.random::<f64>() < sampling.p_c();
        if !cluster_in {
            continue;
        }
        let range = pop.cluster_range(c);
        let mc = range.len();
        let n_c = if sampling.p_u() >= 1.0 {
            mc as u64
        } else {
            rand_distr::Binomial::new(mc as u64, sampling.p_u())
                .expect("valid binomial")
                .sample(rng)
        };
        if n_c == 0 {
            continue;
        }
        let picked: Vec<usize> = if n_c as usize == mc {
            (0..mc).collect()
        } else {
            rand::seq::index::sample(rng, mc, n_c as usize).into_vec()
        };
        for offset in picked {
            let i = range.start + offset;
            let wi = rng.random::<f64>() < qc;
            y.push(if wi { pop.y1()[i] } else { pop.y0()[i] });
            w.push(if wi { 1.0 } else { 0.0 });
            cluster.push(next_id);
        }
        next_id += 1;
    }
    if y.is_empty() {
        return None;
    }
    Some(Dataset::from_parts(y, w, cluster, next_id as usize).expect("valid by construction"))
}

// ===== Report =====

/// Aggregates for one estimator under one model.
#[derive(Debug, Clone, Serialize)]
pub struct EstimatorRow {
    pub model: String,
    pub estimator: String,
    /// Fraction of usable replications whose CI covered the population ATE.
    pub coverage: f64,
    /// Binomial MC standard error `sqrt(p(1-p)/n)` of the coverage.
    pub coverage_se: f64,
    pub mean_se: f64,
    pub mean_se_mc_se: f64,
    /// Replications where this estimator was undefined (e.g. the
    /// cluster-adjusted correction with no two-arm cluster).
    pub na_count: u64,
}

/// Per-model aggregates across replications.
#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub model: String,
    pub valid_replications: u64,
    pub degenerate_count: u64,
    pub mean_tau_hat: f64,
    pub mean_tau_hat_mc_se: f64,
    pub sd_tau_hat: f64,
    /// Empirical variance of `sqrt(N)(tau_hat - tau)` across replications.
    pub empirical_var_scaled: f64,
    pub empirical_var_scaled_mc_se: f64,
    /// Exact design variance of the corresponding normalized statistic.
    pub exact_variance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageReport {
    pub config_hash: String,
    /// Finite-population average treatment effect (the coverage target).
    pub tau: f64,
    /// Normal critical value used for every confidence interval; Table-style
    /// coverage tables do not state one, so the normal quantile is an
    /// explicit assumption of this report.
    pub critical_value: f64,
    pub replications: u64,
    pub models: Vec<ModelSummary>,
    pub rows: Vec<EstimatorRow>,
}

/// One replication's estimator-level outcomes.
struct RepOutcome {
    plain: Option<RepFit>,
    fe: Option<RepFit>,
}

struct RepFit {
    tau_hat: f64,
    n: usize,
    // (variance, defined) per estimator in `all_estimators()` order
    variances: [Option<f64>; 5],
}

fn replicate(
    pop: &Population,
    sampling: &SamplingDesign,
    assignment: &AssignmentDesign,
    models: ModelSet,
    seed: u64,
    index: u64,
) -> RepOutcome {
    let mut rng = stream_rng(seed, index + 1);
    let ds = match draw_dataset_efficient(pop, sampling, assignment, &mut rng) {
        Some(ds) => ds,
        None => return RepOutcome { plain: None, fe: None },
    };
    let plain = if models.includes_plain() {
        fit_plain(&ds).ok().map(|fit| {
            let rep = variance_report(&ds, &fit);
            RepFit {
                tau_hat: fit.tau_hat,
                n: fit.n,
                variances: [
                    Some(rep.v_ols),
                    Some(rep.v_ehw),
                    Some(rep.v_lz),
                    rep.v_kloek,
                    rep.v_cca,
                ],
            }
        })
    } else {
        None
    };
    let fe = if models.includes_fe() {
        fit_fe(&ds).ok().map(|fit| {
            let rep = variance_report(&ds, &fit);
            RepFit {
                tau_hat: fit.tau_hat,
                n: fit.n,
                variances: [Some(rep.v_ols), Some(rep.v_ehw), Some(rep.v_lz), None, None],
            }
        })
    } else {
        None
    };
    RepOutcome { plain, fe }
}

struct ModelAccumulator {
    valid: u64,
    sum_tau: Neumaier,
    sum_tau2: Neumaier,
    // power sums of x = sqrt(n)(tau_hat - tau)
    sum_x: Neumaier,
    sum_x2: Neumaier,
    sum_x3: Neumaier,
    sum_x4: Neumaier,
    // per estimator: covered count, usable count, sum se, sum se^2
    covered: [u64; 5],
    usable: [u64; 5],
    sum_se: [Neumaier; 5],
    sum_se2: [Neumaier; 5],
}

impl ModelAccumulator {
    fn new() -> Self {
        Self {
            valid: 0,
            sum_tau: Neumaier::new(),
            sum_tau2: Neumaier::new(),
            sum_x: Neumaier::new(),
            sum_x2: Neumaier::new(),
            sum_x3: Neumaier::new(),
            sum_x4: Neumaier::new(),
            covered: [0; 5],
            usable: [0; 5],
            sum_se: [Neumaier::new(); 5],
            sum_se2: [Neumaier::new(); 5],
        }
    }

    fn add(&mut self, rep: &RepFit, tau: f64, z: f64) {
        self.valid += 1;
        self.sum_tau.add(rep.tau_hat);
        self.sum_tau2.add(rep.tau_hat * rep.tau_hat);
        let x = (rep.n as f64).sqrt() * (rep.tau_hat - tau);
        self.sum_x.add(x);
        self.sum_x2.add(x * x);
        self.sum_x3.add(x * x * x);
        self.sum_x4.add(x * x * x * x);
        for (k, v) in rep.variances.iter().enumerate() {
            if let Some(v) = v {
                let se = v.sqrt();
                self.usable[k] += 1;
                self.sum_se[k].add(se);
                self.sum_se2[k].add(se * se);
                if (rep.tau_hat - tau).abs() <= z * se {
                    self.covered[k] += 1;
                }
            }
        }
    }

    fn summarize(
        &self,
        model: &str,
        degenerate: u64,
        exact_variance: f64,
        estimators: &[EstimatorKind],
    ) -> (ModelSummary, Vec<EstimatorRow>) {
        let n = self.valid as f64;
        let mean_tau = self.sum_tau.total() / n;
        let var_tau = (self.sum_tau2.total() / n - mean_tau * mean_tau).max(0.0);
        let m1 = self.sum_x.total() / n;
        let m2 = self.sum_x2.total() / n;
        let m3 = self.sum_x3.total() / n;
        let m4 = self.sum_x4.total() / n;
        let var_x = (m2 - m1 * m1).max(0.0);
        // central fourth moment for the MC SE of the variance estimate
        let c4 = m4 - 4.0 * m1 * m3 + 6.0 * m1 * m1 * m2 - 3.0 * m1.powi(4);
        let var_of_var = ((c4 - var_x * var_x) / n).max(0.0);
        let summary = ModelSummary {
            model: model.to_string(),
            valid_replications: self.valid,
            degenerate_count: degenerate,
            mean_tau_hat: mean_tau,
            mean_tau_hat_mc_se: (var_tau / n).sqrt(),
            sd_tau_hat: var_tau.sqrt(),
            empirical_var_scaled: var_x,
            empirical_var_scaled_mc_se: var_of_var.sqrt(),
            exact_variance,
        };
        let mut rows = Vec::new();
        for kind in estimators {
            let k = *kind as usize;
            if model == "fe" && matches!(kind, EstimatorKind::Kloek | EstimatorKind::Cca) {
                continue; // plain-model-only estimators
            }
            let u = self.usable[k] as f64;
            let (coverage, coverage_se, mean_se, mean_se_mc_se) = if self.usable[k] > 0 {
                let p = self.covered[k] as f64 / u;
                let mean_se = self.sum_se[k].total() / u;
                let var_se = (self.sum_se2[k].total() / u - mean_se * mean_se).max(0.0);
                (p, (p * (1.0 - p) / u).sqrt(), mean_se, (var_se / u).sqrt())
            } else {
                (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
            };
            rows.push(EstimatorRow {
                model: model.to_string(),
                estimator: kind.name().to_string(),
                coverage,
                coverage_se,
                mean_se,
                mean_se_mc_se,
                na_count: self.valid - self.usable[k],
            });
        }
        (summary, rows)
    }
}

/// Run a coverage experiment. Deterministic for a fixed config at any
/// thread count: replication `r` uses RNG stream `r + 1` of the master seed
/// (stream 0 generates the population), and aggregation is an ordered pass.
pub fn run_experiment(config: &ExperimentConfig) -> Result<CoverageReport, ExperimentError> {
    config.validate()?;
    let (sampling, assignment) = config.designs()?;
    let pop = Population::generate(&config.population, config.seed)?;
    let est = Estimands::compute(&pop);
    let z = config.critical_value();
    let outcomes: Vec<RepOutcome> = (0..config.replications)
        .into_par_iter()
        .map(|r| replicate(&pop, &sampling, &assignment, config.models, config.seed, r))
        .collect();

    let mut models = Vec::new();
    let mut rows = Vec::new();
    if config.models.includes_plain() {
        let mut acc = ModelAccumulator::new();
        for o in &outcomes {
            if let Some(rep) = &o.plain {
                acc.add(rep, est.tau, z);
            }
        }
        let exact = exact_variance_plain(&pop, &est, &sampling, &assignment).total;
        let degenerate = config.replications - acc.valid;
        let (summary, mut r) = acc.summarize("plain", degenerate, exact, &config.estimators);
        models.push(summary);
        rows.append(&mut r);
    }
    if config.models.includes_fe() {
        let mut acc = ModelAccumulator::new();
        for o in &outcomes {
            if let Some(rep) = &o.fe {
                acc.add(rep, est.tau, z);
            }
        }
        let exact = exact_variance_fe(&pop, &est, &sampling, &assignment)
            .map(|v| v.total)
            .unwrap_or(f64::NAN);
        let degenerate = config.replications - acc.valid;
        let (summary, mut r) = acc.summarize("fe", degenerate, exact, &config.estimators);
        models.push(summary);
        rows.append(&mut r);
    }
    Ok(CoverageReport {
        config_hash: config.provenance_hash(),
        tau: est.tau,
        critical_value: z,
        replications: config.replications,
        models,
        rows,
    })
}

// ===== Variance validation =====

/// One grid point of [`variance_validation`]: empirical moments of the plain
/// estimator versus the exact formulas.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationRow {
    pub p_c: f64,
    pub p_u: f64,
    pub sigma2: f64,
    pub replications: u64,
    pub valid_replications: u64,
    pub empirical_var_scaled: f64,
    pub empirical_var_scaled_mc_se: f64,
    pub exact_variance: f64,
    /// Agreement of the empirical variance with the formula at 3 MC SEs.
    pub agree_3se: bool,
    /// Mean of `N * v_lz` with its MC SE, against the LZ limit functional.
    pub mean_n_v_lz: f64,
    pub mean_n_v_lz_mc_se: f64,
    pub v_lz_limit: f64,
    /// Mean of `N * v_cca` (when ever defined) against the exact variance;
    /// the comparison is meaningful when p_C = 1.
    pub mean_n_v_cca: Option<f64>,
    pub mean_n_v_cca_mc_se: Option<f64>,
}

/// Empirically validate the exact-variance and limit formulas for the plain
/// model over a grid of designs on one fixed population.
pub fn variance_validation(
    pop: &Population,
    grid: &[(SamplingDesign, AssignmentDesign)],
    replications: u64,
    seed: u64,
) -> Vec<ValidationRow> {
    let est = Estimands::compute(pop);
    let mut out = Vec::with_capacity(grid.len());
    for (gi, (sampling, assignment)) in grid.iter().enumerate() {
        // decorrelate grid points by offsetting the stream index block
        let base = seed.wrapping_add(gi as u64);
        let reps: Vec<Option<(f64, usize, f64, Option<f64>)>> = (0..replications)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream_rng(base, r + 1);
                let ds = draw_dataset_efficient(pop, sampling, assignment, &mut rng)?;
                let fit = fit_plain(&ds).ok()?;
                let lz = crate::variance::v_lz(&ds, &fit);
                let cca = crate::variance::v_cca(&ds, &fit).map(|c| c.value);
                Some((fit.tau_hat, fit.n, lz, cca))
            })
            .collect();
        let mut sum_x = Neumaier::new();
        let mut sum_x2 = Neumaier::new();
        let mut sum_x3 = Neumaier::new();
        let mut sum_x4 = Neumaier::new();
        let mut sum_lz = Neumaier::new();
        let mut sum_lz2 = Neumaier::new();
        let mut sum_cca = Neumaier::new();
        let mut sum_cca2 = Neumaier::new();
        let mut valid = 0u64;
        let mut cca_n = 0u64;
        for rep in reps.iter().flatten() {
            let (tau_hat, n, lz, cca) = *rep;
            let x = (n as f64).sqrt() * (tau_hat - est.tau);
            valid += 1;
            sum_x.add(x);
            sum_x2.add(x * x);
            sum_x3.add(x * x * x);
            sum_x4.add(x * x * x * x);
            let nlz = n as f64 * lz;
            sum_lz.add(nlz);
            sum_lz2.add(nlz * nlz);
            if let Some(c) = cca {
                let nc = n as f64 * c;
                cca_n += 1;
                sum_cca.add(nc);
                sum_cca2.add(nc * nc);
            }
        }
        let n = valid as f64;
        let m1 = sum_x.total() / n;
        let m2 = sum_x2.total() / n;
        let m3 = sum_x3.total() / n;
        let m4 = sum_x4.total() / n;
        let var_x = (m2 - m1 * m1).max(0.0);
        let c4 = m4 - 4.0 * m1 * m3 + 6.0 * m1 * m1 * m2 - 3.0 * m1.powi(4);
        let var_se = (((c4 - var_x * var_x) / n).max(0.0)).sqrt();
        let exact = exact_variance_plain(pop, &est, sampling, assignment).total;
        let lim = limit_functionals(pop, &est, sampling, assignment);
        let mean_lz = sum_lz.total() / n;
        let lz_se = (((sum_lz2.total() / n - mean_lz * mean_lz).max(0.0)) / n).sqrt();
        let (mean_cca, cca_se) = if cca_n > 0 {
            let m = sum_cca.total() / cca_n as f64;
            let v = (sum_cca2.total() / cca_n as f64 - m * m).max(0.0);
            (Some(m), Some((v / cca_n as f64).sqrt()))
        } else {
            (None, None)
        };
        out.push(ValidationRow {
            p_c: sampling.p_c(),
            p_u: sampling.p_u(),
            sigma2: assignment.sigma2(),
            replications,
            valid_replications: valid,
            empirical_var_scaled: var_x,
            empirical_var_scaled_mc_se: var_se,
            exact_variance: exact,
            agree_3se: (var_x - exact).abs() <= 3.0 * var_se,
            mean_n_v_lz: mean_lz,
            mean_n_v_lz_mc_se: lz_se,
            v_lz_limit: lim.v_lz_limit,
            mean_n_v_cca: mean_cca,
            mean_n_v_cca_mc_se: cca_se,
        });
    }
    out
}

// ===== Writers =====

/// Write the report as pretty JSON.
pub fn write_report_json<P: AsRef<Path>>(
    report: &CoverageReport,
    path: P,
) -> Result<(), ExperimentError> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    let mut f = std::fs::File::create(path)?;
    f.write_all(json.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Write the flat CSV: one row per estimator x model, with the per-model
/// aggregates repeated on each row.
pub fn write_report_csv<P: AsRef<Path>>(
    report: &CoverageReport,
    path: P,
) -> Result<(), ExperimentError> {
    let mut wtr = csv::Writer::from_path(path.as_ref()).map_err(io_from_csv)?;
    wtr.write_record([
        "model",
        "estimator",
        "coverage",
        "coverage_se",
        "mean_se",
        "mean_se_mc_se",
        "na_count",
        "valid_replications",
        "degenerate_count",
        "mean_tau_hat",
        "sd_tau_hat",
        "empirical_var_scaled",
        "exact_variance",
    ])
    .map_err(io_from_csv)?;
    for row in &report.rows {
        let summary = report
            .models
            .iter()
            .find(|m| m.model == row.model)
            .expect("summary exists for every row");
        wtr.write_record([
            row.model.clone(),
            row.estimator.clone(),
            row.coverage.to_string(),
            row.coverage_se.to_string(),
            row.mean_se.to_string(),
            row.mean_se_mc_se.to_string(),
            row.na_count.to_string(),
            summary.valid_replications.to_string(),
            summary.degenerate_count.to_string(),
            summary.mean_tau_hat.to_string(),
            summary.sd_tau_hat.to_string(),
            summary.empirical_var_scaled.to_string(),
            summary.exact_variance.to_string(),
        ])
        .map_err(io_from_csv)?;
    }
    wtr.flush()?;
    Ok(())
}

fn io_from_csv(e: csv::Error) -> ExperimentError {
    ExperimentError::Io(std::io::Error::other(e))
}
