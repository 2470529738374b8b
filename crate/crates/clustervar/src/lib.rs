//! Design-based variance estimation under clustered sampling and clustered
//! assignment.
//!
//! This crate studies a finite population of `M` units partitioned into `C`
//! clusters, with fixed potential outcomes `Y_i(0)`, `Y_i(1)`. All randomness
//! comes from the *design*:
//!
//! * **Sampling** `R`: clusters are kept with probability `p_C`, then units
//!   within kept clusters with probability `p_U` (two-stage Bernoulli).
//! * **Assignment** `W`: each cluster draws a treatment probability `q_c`
//!   from a distribution with mean 1/2 and variance `sigma2`, then every unit
//!   is assigned treatment independently with probability `q_c`. Sampling and
//!   assignment are independent.
//!
//! On a realized sample one fits either the bivariate regression of the
//! outcome on treatment ("plain") or the same regression with cluster fixed
//! effects, and asks: what is the true design variance of the estimator, and
//! which of the usual variance estimators (homoskedastic OLS,
//! Eicker–Huber–White, Liang–Zeger cluster-robust, Moulton/Kloek inflation,
//! and a cluster-correlation-adjusted refinement of Liang–Zeger) is right?
//! The crate provides exact finite-sample variance formulas for the
//! linearized estimators, the asymptotic limits of the estimators above, an
//! exhaustive enumeration oracle that verifies every formula by brute force,
//! and a Monte Carlo harness that measures confidence-interval coverage.
//!
//! # Examples directory
//!
//! The primary interface is the `examples/` directory; each file is a
//! self-contained, runnable demonstration of one capability:
//!
//! ```text
//! examples/
//! ├── population_and_estimands.rs   build populations, inspect estimands
//! ├── sampling_and_assignment.rs    designs, draws, analytic vs empirical moments
//! ├── fit_and_standard_errors.rs    fit plain/FE models, all variance estimators
//! ├── exact_variance_decomposition.rs   exact design variances and their parts
//! ├── enumeration_oracle.rs         brute-force verification of the formulas
//! ├── fe_variance_cross_term.rs     why the FE variance needs its cross term
//! ├── cca_adjustment.rs             what the CCA estimator corrects, and what not
//! └── coverage_experiment.rs        Monte Carlo coverage study, desk scale
//! ```
//!
//! Run one with `cargo run --release --example coverage_experiment`.
//!
//! A thin binary (`clustervar`) exposes the same functionality as `simulate`,
//! `analyze`, and `oracle` subcommands for scripted use; see the README.
//!
//! # References
//!
//! * Eicker (1967); Huber (1967); White (1980): heteroskedasticity-robust
//!   ("sandwich") variance estimation.
//! * Liang & Zeger (1986). Longitudinal data analysis using generalized
//!   linear models. *Biometrika* 73(1).
//! * Kloek (1981); Moulton (1986): variance inflation with grouped data.
//! * Cameron & Miller (2015). A practitioner's guide to cluster-robust
//!   inference. *Journal of Human Resources* 50(2).
//! * Wichura (1988). Algorithm AS 241: the percentage points of the normal
//!   distribution. *Applied Statistics* 37(3).
//! * Neumaier (1974). Rundungsfehleranalyse einiger Verfahren zur Summation
//!   endlicher Summen. *ZAMM* 54.

// ===== Modules =====

pub mod cli;
pub mod design;
pub mod diagnostics;
pub mod estimators;
pub mod montecarlo;
pub mod numeric;
pub mod population;
pub mod variance;

// ===== Re-exports of the core vocabulary =====

pub use design::{AssignmentDesign, AssignmentFamily, KappaMoments, SampleDraw, SamplingDesign};
pub use diagnostics::DiagnosticsReport;
pub use estimators::{ClusterEffects, Dataset, FitResult, ModelKind};
pub use montecarlo::{CoverageReport, EstimatorKind, ExperimentConfig, ModelSet};
pub use population::{Estimands, Population, PopulationSpec};
pub use variance::{
    CcaOutcome, ExactVariance, ExactVarianceFe, FixtureRow, LimitFunctionals,
    LimitFunctionalsFe, OracleResult, TauStatOracle, VarianceReport,
};
