//! Command-line surface: run simulations, validate the variance formulas
//! against the enumeration oracle, and analyze user-supplied CSV datasets.
//!
//! Configuration is a flat `key = value` file plus `--set` flag overrides —
//! language-neutral, diffable, and hashable for provenance. Exit-code
//! contract: 0 success, 1 runtime failure, 2 usage/config error.
//!
//! The `analyze` command's decision guidance is driven by the user-declared
//! design facts (`--sampling-clustered`, `--assignment-clustered`), never
//! inferred from the data alone: whether standard errors need a clustering
//! adjustment depends on how the sample was drawn and how treatment was
//! assigned, which the realized dataset does not reveal.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::design::{AssignmentFamily, SampleDraw};
use crate::diagnostics::{full_diagnostics, DiagnosticsReport};
use crate::estimators::{fit_fe, fit_plain, Dataset};
use crate::montecarlo::{
    all_estimators, run_experiment, write_report_csv, write_report_json, EstimatorKind,
    ExperimentConfig, ModelSet,
};
use crate::population::{ClusterSizes, Population, PopulationSpec, TauPattern};
use crate::variance::{oracle_fixture_rows, variance_report, FixtureRow, ORACLE_MAX_UNITS};

// ===== Argument declarations =====

#[derive(Debug, Parser)]
#[command(
    name = "clustervar",
    version,
    about = "Design-based cluster variance toolkit: simulate, analyze, validate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a coverage experiment and write JSON + CSV reports.
    Simulate(SimulateArgs),
    /// Estimate treatment effects and standard errors from a CSV dataset.
    Analyze(AnalyzeArgs),
    /// Check the exact-variance formulas against exhaustive enumeration.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Flat `key = value` config file (defaults apply when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set replications=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Override the master seed (applied after --set).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the replication loop (default: all cores).
    /// Results are identical at any thread count.
    #[arg(long)]
    threads: Option<usize>,
    /// Directory for report.json and report.csv.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// CSV file with header `y,w,cluster`.
    input: PathBuf,
    /// Also fit the cluster fixed-effects model.
    #[arg(long)]
    fixed_effects: bool,
    /// Comma-separated estimators to report (ols,ehw,lz,kloek,cca).
    #[arg(long, value_delimiter = ',')]
    estimators: Vec<String>,
    /// Declare that the sample was drawn by clusters.
    #[arg(long)]
    sampling_clustered: bool,
    /// Declare that treatment was assigned by clusters (correlated within).
    #[arg(long)]
    assignment_clustered: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Largest population (in units) to enumerate; hard limit 14.
    #[arg(long, default_value_t = ORACLE_MAX_UNITS)]
    max_units: usize,
    /// Directory for oracle_fixtures.csv.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

/// Parse `std::env::args` and dispatch. Returns the process exit code.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Testable entry point: dispatch on an explicit argument vector.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Analyze(args) => cmd_analyze(&args),
        Command::Oracle(args) => cmd_oracle(&args),
    }
}

// ===== Config file =====

/// The documented config keys, with their defaults. `build` assembles the
/// [`ExperimentConfig`]; populations are equal-cluster designs with the
/// half/half ±1 effect pattern and unit-variance noise.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub clusters: u32,
    pub units_per_cluster: u32,
    pub p_c: f64,
    pub p_u: f64,
    pub sigma2: f64,
    pub assignment_family: AssignmentFamily,
    pub replications: u64,
    pub seed: u64,
    pub confidence: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            clusters: 10,
            units_per_cluster: 100,
            p_c: 1.0,
            p_u: 0.1,
            sigma2: 0.0,
            assignment_family: AssignmentFamily::Degenerate,
            replications: 100,
            seed: 20_260_819,
            confidence: 0.95,
        }
    }
}

#[derive(Debug)]
pub enum ConfigError {
    UnknownKey { key: String },
    BadValue { key: String, message: String },
    MalformedLine { line: usize, text: String },
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::UnknownKey { key } => write!(f, "unknown config key `{key}`"),
            Self::BadValue { key, message } => {
                write!(f, "bad value for config key `{key}`: {message}")
            }
            Self::MalformedLine { line, text } => {
                write!(f, "malformed config line {line} (expected `key = value`): {text}")
            }
        }
    }
}

impl std::error::Error for ConfigError {}

impl SimConfig {
    /// Apply one `key = value` setting. Unknown keys are errors that name
    /// the offending key.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn bad<E: std::fmt::Display>(key: &str) -> impl FnOnce(E) -> ConfigError + '_ {
            move |e| ConfigError::BadValue {
                key: key.to_string(),
                message: e.to_string(),
            }
        }
        match key {
            "population.clusters" => self.clusters = value.parse().map_err(bad(key))?,
            "population.units_per_cluster" => {
                self.units_per_cluster = value.parse().map_err(bad(key))?
            }
            "p_c" => self.p_c = value.parse().map_err(bad(key))?,
            "p_u" => self.p_u = value.parse().map_err(bad(key))?,
            "sigma2" => self.sigma2 = value.parse().map_err(bad(key))?,
            "assignment_family" => {
                self.assignment_family = match value {
                    "degenerate" => AssignmentFamily::Degenerate,
                    "two_point" => AssignmentFamily::TwoPoint,
                    "beta" => AssignmentFamily::Beta,
                    other => {
                        return Err(ConfigError::BadValue {
                            key: key.to_string(),
                            message: format!(
                                "`{other}` is not one of degenerate, two_point, beta"
                            ),
                        })
                    }
                }
            }
            "replications" => self.replications = value.parse().map_err(bad(key))?,
            "seed" => self.seed = value.parse().map_err(bad(key))?,
            "confidence" => self.confidence = value.parse().map_err(bad(key))?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Parse a flat config file: `key = value` lines, `#` comments, blank
    /// lines ignored.
    pub fn apply_file_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::MalformedLine {
                    line: i + 1,
                    text: line.to_string(),
                });
            };
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Apply one `--set KEY=VALUE` override.
    pub fn apply_override(&mut self, setting: &str) -> Result<(), ConfigError> {
        let Some((key, value)) = setting.split_once('=') else {
            return Err(ConfigError::MalformedLine {
                line: 0,
                text: setting.to_string(),
            });
        };
        self.apply(key.trim(), value.trim())
    }

    pub fn build(&self) -> ExperimentConfig {
        ExperimentConfig {
            population: PopulationSpec::Design {
                clusters: self.clusters,
                units_per_cluster: ClusterSizes::Fixed(self.units_per_cluster),
                tau_pattern: TauPattern::HalfHalf,
                noise_sd: 1.0,
            },
            p_c: self.p_c,
            p_u: self.p_u,
            sigma2: self.sigma2,
            assignment_family: self.assignment_family,
            replications: self.replications,
            seed: self.seed,
            confidence: self.confidence,
            models: ModelSet::Both,
            estimators: all_estimators(),
        }
    }

    fn family_name(&self) -> &'static str {
        match self.assignment_family {
            AssignmentFamily::Degenerate => "degenerate",
            AssignmentFamily::TwoPoint => "two_point",
            AssignmentFamily::Beta => "beta",
        }
    }

    /// Echo the resolved configuration in config-file syntax.
    pub fn echo(&self) -> String {
        format!(
            "population.clusters = {}\npopulation.units_per_cluster = {}\n\
             p_c = {}\np_u = {}\nsigma2 = {}\nassignment_family = {}\n\
             replications = {}\nseed = {}\nconfidence = {}\n",
            self.clusters,
            self.units_per_cluster,
            self.p_c,
            self.p_u,
            self.sigma2,
            self.family_name(),
            self.replications,
            self.seed,
            self.confidence
        )
    }
}

// ===== simulate =====

pub fn cmd_simulate(args: &SimulateArgs) -> i32 {
    let mut cfg = SimConfig::default();
    if let Some(path) = &args.config {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: cannot read config {}: {e}", path.display());
                return 2;
            }
        };
        if let Err(e) = cfg.apply_file_text(&text) {
            eprintln!("error: {e}");
            return 2;
        }
    }
    for setting in &args.set {
        if let Err(e) = cfg.apply_override(setting) {
            eprintln!("error: {e}");
            return 2;
        }
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let config = cfg.build();
    if let Err(e) = config.validate() {
        eprintln!("error: {e}");
        return 2;
    }
    if let Some(threads) = args.threads {
        // Build the global pool once; a second call (e.g. in tests) is a
        // no-op because results do not depend on the pool size.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    println!("resolved configuration:");
    print!("{}", indent(&cfg.echo()));
    println!("master seed: {}", cfg.seed);
    let report = match run_experiment(&config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    if let Err(e) = std::fs::create_dir_all(&args.out_dir) {
        eprintln!("error: cannot create {}: {e}", args.out_dir.display());
        return 1;
    }
    let json_path = args.out_dir.join("report.json");
    let csv_path = args.out_dir.join("report.csv");
    if let Err(e) = write_report_json(&report, &json_path) {
        eprintln!("error: {e}");
        return 1;
    }
    if let Err(e) = write_report_csv(&report, &csv_path) {
        eprintln!("error: {e}");
        return 1;
    }
    println!(
        "tau = {:.6}; critical value {:.9} (normal quantile, an assumption of the report)",
        report.tau + 0.0, // normalizes the sign of a zero for display
        report.critical_value
    );
    for row in &report.rows {
        println!(
            "  {:5} {:5}  coverage {:.4} (se {:.4})  mean se {:.6}",
            row.model, row.estimator, row.coverage, row.coverage_se, row.mean_se
        );
    }
    for m in &report.models {
        println!(
            "  {:5} valid {} degenerate {}  sd(tau_hat) {:.6}  empirical var(scaled) {:.6} vs exact {:.6}",
            m.model,
            m.valid_replications,
            m.degenerate_count,
            m.sd_tau_hat,
            m.empirical_var_scaled,
            m.exact_variance
        );
    }
    println!("wrote {}", json_path.display());
    println!("wrote {}", csv_path.display());
    0
}

fn indent(text: &str) -> String {
    text.lines()
        .map(|l| format!("  {l}\n"))
        .collect::<String>()
}

// ===== analyze =====

/// Parsed analysis input with its provenance.
#[derive(Debug)]
pub struct AnalysisInput {
    pub dataset: Dataset,
    pub source: PathBuf,
    pub row_count: usize,
    /// Rows discarded during parsing. Malformed rows are hard errors, so
    /// this is zero on success; it is reported for auditability.
    pub dropped_rows: usize,
}

impl AnalysisInput {
    pub fn read<P: AsRef<Path>>(path: P) -> Result<Self, crate::estimators::EstimatorError> {
        let dataset = Dataset::read_csv(&path)?;
        let row_count = dataset.n();
        Ok(Self {
            dataset,
            source: path.as_ref().to_path_buf(),
            row_count,
            dropped_rows: 0,
        })
    }
}

#[derive(Debug, Serialize)]
pub struct SeEntry {
    pub estimator: String,
    /// `None` when the estimator is undefined on this dataset (e.g. the
    /// cluster-adjusted variant with no cluster observed in both arms).
    pub se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct FeSection {
    pub tau_hat: f64,
    pub se_ols: f64,
    pub se_ehw: f64,
    pub se_lz: f64,
    pub diagnostics: DiagnosticsReport,
}

#[derive(Debug, Serialize)]
pub struct DeclaredDesign {
    pub sampling_clustered: bool,
    pub assignment_clustered: bool,
}

#[derive(Debug, Serialize)]
pub struct EstimateReport {
    pub source: String,
    pub rows: usize,
    pub dropped_rows: usize,
    pub n: usize,
    pub n1: usize,
    pub n0: usize,
    pub clusters: usize,
    pub tau_hat: f64,
    pub standard_errors: Vec<SeEntry>,
    pub cca_applicable: bool,
    pub cca_floored: bool,
    pub cca_dropped_clusters: usize,
    pub diagnostics: DiagnosticsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_effects: Option<FeSection>,
    pub declared: DeclaredDesign,
    pub guidance: Vec<String>,
}

/// Decision guidance keyed to the declared design, never to the data: the
/// within-sample correlations cannot reveal whether sampling or assignment
/// was clustered, so the recommendation must come from the user's answers.
pub fn decision_guidance(sampling_clustered: bool, assignment_clustered: bool) -> Vec<String> {
    let mut out = Vec::new();
    match (sampling_clustered, assignment_clustered) {
        (false, false) => {
            out.push(
                "Neither sampling nor assignment was declared clustered: no clustering \
                 adjustment is needed, and the heteroskedasticity-robust (EHW) standard \
                 error is the appropriate one. Clustering on a grouping that played no \
                 role in the design only widens the interval."
                    .to_string(),
            );
        }
        (_, true) => {
            out.push(
                "Assignment was declared clustered: cluster-robust (Liang-Zeger) standard \
                 errors are required. Correlated assignment within clusters invalidates \
                 unit-level robust standard errors regardless of how the sample was drawn."
                    .to_string(),
            );
        }
        (true, false) => {
            out.push(
                "Sampling was declared clustered with unit-level assignment: clustering \
                 matters only through cluster-level treatment-effect heterogeneity, and \
                 the Liang-Zeger adjustment is generally conservative for the sampled \
                 population. The cluster-adjusted (CCA) standard error removes the part \
                 of the adjustment that is unnecessary when the sampled clusters are most \
                 of the population of clusters; if only a small share of clusters was \
                 sampled, keep Liang-Zeger."
                    .to_string(),
            );
        }
    }
    out.push(
        "This recommendation follows from the declared design. The need to adjust for \
         clustering cannot be determined from the realized data alone."
            .to_string(),
    );
    out
}

fn parse_estimator_list(raw: &[String]) -> Result<Vec<EstimatorKind>, String> {
    if raw.is_empty() {
        return Ok(all_estimators());
    }
    let mut out = Vec::new();
    for name in raw {
        match EstimatorKind::parse(name) {
            Some(kind) => out.push(kind),
            None => return Err(name.clone()),
        }
    }
    Ok(out)
}

/// Build the analysis report for a parsed dataset. Shared by the CLI
/// command and the round-trip tests.
pub fn analyze_dataset(
    input: &AnalysisInput,
    estimators: &[EstimatorKind],
    fixed_effects: bool,
    sampling_clustered: bool,
    assignment_clustered: bool,
) -> Result<EstimateReport, crate::estimators::EstimatorError> {
    let ds = &input.dataset;
    let fit = fit_plain(ds)?;
    let rep = variance_report(ds, &fit);
    let diagnostics = full_diagnostics(ds, &fit);
    let mut standard_errors = Vec::new();
    for kind in estimators {
        let (se, note) = match kind {
            EstimatorKind::Ols => (Some(rep.se_ols), None),
            EstimatorKind::Ehw => (Some(rep.se_ehw), None),
            EstimatorKind::Lz => (Some(rep.se_lz), None),
            EstimatorKind::Kloek => (
                rep.se_kloek,
                rep.se_kloek
                    .is_none()
                    .then(|| "undefined: a within-cluster correlation is undefined".to_string()),
            ),
            EstimatorKind::Cca => (
                rep.se_cca,
                rep.se_cca.is_none().then(|| {
                    "not applicable: no cluster observed in both arms".to_string()
                }),
            ),
        };
        standard_errors.push(SeEntry {
            estimator: kind.name().to_string(),
            se,
            note,
        });
    }
    let fixed_effects = if fixed_effects {
        let fe_fit = fit_fe(ds)?;
        let fe_rep = variance_report(ds, &fe_fit);
        Some(FeSection {
            tau_hat: fe_fit.tau_hat,
            se_ols: fe_rep.se_ols,
            se_ehw: fe_rep.se_ehw,
            se_lz: fe_rep.se_lz,
            diagnostics: full_diagnostics(ds, &fe_fit),
        })
    } else {
        None
    };
    Ok(EstimateReport {
        source: input.source.display().to_string(),
        rows: input.row_count,
        dropped_rows: input.dropped_rows,
        n: fit.n,
        n1: fit.n1,
        n0: fit.n0,
        clusters: ds.n_clusters(),
        tau_hat: fit.tau_hat,
        standard_errors,
        cca_applicable: rep.cca_applicable,
        cca_floored: rep.cca_floored,
        cca_dropped_clusters: rep.cca_dropped_clusters,
        diagnostics,
        fixed_effects,
        declared: DeclaredDesign {
            sampling_clustered,
            assignment_clustered,
        },
        guidance: decision_guidance(sampling_clustered, assignment_clustered),
    })
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> i32 {
    let estimators = match parse_estimator_list(&args.estimators) {
        Ok(list) => list,
        Err(bad) => {
            eprintln!(
                "error: unknown estimator `{bad}` (expected ols, ehw, lz, kloek, cca)"
            );
            return 2;
        }
    };
    let input = match AnalysisInput::read(&args.input) {
        Ok(i) => i,
        Err(e) => {
            eprintln!("error: {}: {e}", args.input.display());
            return 2;
        }
    };
    let report = match analyze_dataset(
        &input,
        &estimators,
        args.fixed_effects,
        args.sampling_clustered,
        args.assignment_clustered,
    ) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {}: {e}", args.input.display());
            return 2;
        }
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    match &args.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, format!("{json}\n")) {
                eprintln!("error: cannot write {}: {e}", path.display());
                return 1;
            }
            println!("wrote {}", path.display());
        }
        None => println!("{json}"),
    }
    0
}

/// Export a realized draw to the `y,w,cluster` CSV format that `analyze`
/// reads back. Round-trip invariant: analyzing the export reproduces the
/// draw's estimates and standard errors to 1e-12 relative.
pub fn export_draw_csv<P: AsRef<Path>>(draw: &SampleDraw, path: P) -> std::io::Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(csv_to_io)?;
    wtr.write_record(["y", "w", "cluster"]).map_err(csv_to_io)?;
    for rec in &draw.records {
        wtr.write_record([
            rec.y.to_string(),
            if rec.w { "1" } else { "0" }.to_string(),
            rec.cluster.to_string(),
        ])
        .map_err(csv_to_io)?;
    }
    wtr.flush()
}

fn csv_to_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

// ===== oracle =====

/// Deterministic small populations exercised by `oracle`, largest first so
/// `--max-units` filters them naturally. Sizes 4, 6, 9, and 13 cover equal
/// clusters, unequal clusters, a singleton cluster, and the size cap.
fn oracle_populations(max_units: usize) -> Vec<(String, Population)> {
    let mut pops: Vec<(String, Population)> = Vec::new();
    if max_units >= 4 {
        pops.push(("ref4".to_string(), Population::four_unit_reference()));
    }
    if max_units >= 6 {
        let pop = Population::from_table(
            &[0, 1, 1, 2, 2, 2],
            &[0.5, 2.0, 1.0, 3.0, -1.0, 0.25],
            &[1.5, 0.0, 2.0, 1.0, 4.0, -0.5],
        )
        .expect("valid table");
        pops.push(("mixed6".to_string(), pop));
    }
    if max_units >= 9 {
        let pop = Population::from_table(
            &[0, 0, 1, 1, 1, 2, 2, 2, 2],
            &[1.0, -2.0, 0.5, 3.0, 1.5, -1.0, 2.0, 0.0, 4.0],
            &[2.0, 1.0, -0.5, 2.0, 3.5, 0.0, 1.0, 2.5, -1.0],
        )
        .expect("valid table");
        pops.push(("mixed9".to_string(), pop));
    }
    if max_units >= 13 {
        let pop = Population::from_table(
            &[0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 2],
            &[
                0.0, 1.0, -1.0, 2.0, 3.0, 0.5, -0.5, 1.5, 2.5, -2.0, 0.25, 1.25, -0.75,
            ],
            &[
                1.0, 0.0, 2.0, -1.0, 1.5, 2.5, 0.0, -0.5, 3.0, 1.0, -1.25, 0.75, 2.25,
            ],
        )
        .expect("valid table");
        pops.push(("wide13".to_string(), pop));
    }
    pops
}

pub fn cmd_oracle(args: &OracleArgs) -> i32 {
    if args.max_units > ORACLE_MAX_UNITS {
        eprintln!(
            "error: --max-units {} exceeds the enumeration limit {} \
             (2^M assignment patterns per cluster grow too fast beyond it)",
            args.max_units, ORACLE_MAX_UNITS
        );
        return 2;
    }
    if args.max_units < 4 {
        eprintln!("error: --max-units must be at least 4 (smallest fixture population)");
        return 2;
    }
    let mut rows: Vec<FixtureRow> = Vec::new();
    for (label, pop) in oracle_populations(args.max_units) {
        match oracle_fixture_rows(&pop, &label) {
            Ok(mut r) => rows.append(&mut r),
            Err(e) => {
                eprintln!("error: {e}");
                return 1;
            }
        }
    }
    if let Err(e) = std::fs::create_dir_all(&args.out_dir) {
        eprintln!("error: cannot create {}: {e}", args.out_dir.display());
        return 1;
    }
    let path = args.out_dir.join("oracle_fixtures.csv");
    let mut wtr = match csv::Writer::from_path(&path) {
        Ok(w) => w,
        Err(e) => {
            eprintln!("error: cannot write {}: {e}", path.display());
            return 1;
        }
    };
    let mut max_disc = 0.0f64;
    let mut worst = String::new();
    for row in &rows {
        if wtr.serialize(row).is_err() {
            eprintln!("error: cannot write {}", path.display());
            return 1;
        }
        if row.discrepancy() > max_disc {
            max_disc = row.discrepancy();
            worst = row.fixture_id.clone();
        }
    }
    if let Err(e) = wtr.flush() {
        eprintln!("error: {e}");
        return 1;
    }
    println!("wrote {} ({} fixture rows)", path.display(), rows.len());
    let threshold = 1e-10;
    println!(
        "max discrepancy {max_disc:.3e} at `{worst}` (threshold {threshold:.0e})"
    );
    if max_disc > threshold {
        eprintln!("error: formula/oracle discrepancy exceeds threshold");
        1
    } else {
        println!("all formulas agree with enumeration");
        0
    }
}

// ===== Tests =====

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{draw_sample, AssignmentDesign, SamplingDesign};

    #[test]
    fn config_parsing_applies_keys_and_rejects_unknown() {
        let mut cfg = SimConfig::default();
        cfg.apply_file_text(
            "# comment\n\
             population.clusters = 100\n\
             population.units_per_cluster = 10000\n\
             \n\
             p_c = 1.0\n\
             p_u = 0.01\n\
             sigma2 = 0\n\
             assignment_family = degenerate\n\
             replications = 2000\n\
             seed = 7\n\
             confidence = 0.95\n",
        )
        .unwrap();
        assert_eq!(cfg.clusters, 100);
        assert_eq!(cfg.units_per_cluster, 10_000);
        assert_eq!(cfg.replications, 2000);
        assert_eq!(cfg.seed, 7);

        let err = cfg.apply("population.size", "3").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("population.size"), "{msg}");

        let err = cfg.apply("sigma2", "lots").unwrap_err();
        assert!(err.to_string().contains("sigma2"));

        let err = cfg.apply_file_text("p_c 0.5\n").unwrap_err();
        assert!(matches!(err, ConfigError::MalformedLine { line: 1, .. }));
    }

    #[test]
    fn echo_round_trips_through_parser() {
        let mut cfg = SimConfig::default();
        cfg.apply("p_u", "0.25").unwrap();
        cfg.apply("assignment_family", "two_point").unwrap();
        cfg.apply("sigma2", "0.09").unwrap();
        let echo = cfg.echo();
        let mut reparsed = SimConfig::default();
        reparsed.apply_file_text(&echo).unwrap();
        assert_eq!(format!("{reparsed:?}"), format!("{cfg:?}"));
    }

    #[test]
    fn guidance_depends_only_on_declared_design() {
        let none = decision_guidance(false, false);
        assert!(none[0].contains("EHW"));
        let assign = decision_guidance(false, true);
        assert!(assign[0].contains("Liang-Zeger"));
        let both = decision_guidance(true, true);
        assert_eq!(assign[0], both[0]);
        let sampling_only = decision_guidance(true, false);
        assert!(sampling_only[0].contains("cluster-adjusted"));
        for g in [&none, &assign, &both, &sampling_only] {
            assert!(g.last().unwrap().contains("cannot be determined from the realized data"));
        }
    }

    #[test]
    fn analyze_hand_example_matches_known_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hand.csv");
        std::fs::write(&path, "y,w,cluster\n1,1,1\n3,1,1\n2,0,2\n4,0,2\n").unwrap();
        let input = AnalysisInput::read(&path).unwrap();
        let report =
            analyze_dataset(&input, &all_estimators(), false, false, false).unwrap();
        assert!((report.tau_hat - (-1.0)).abs() < 1e-12);
        let se = |name: &str| {
            report
                .standard_errors
                .iter()
                .find(|e| e.estimator == name)
                .unwrap()
                .se
        };
        assert!((se("ehw").unwrap() - 1.0).abs() < 1e-12);
        assert!(se("lz").unwrap().abs() < 1e-12);
        // no cluster is observed in both arms, so CCA is not applicable
        assert!(!report.cca_applicable);
        assert!(se("cca").is_none());
    }

    #[test]
    fn analyze_constant_outcomes_has_zero_ses_and_undefined_rho() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("const.csv");
        std::fs::write(&path, "y,w,cluster\n2,1,1\n2,0,1\n2,1,2\n2,0,2\n").unwrap();
        let input = AnalysisInput::read(&path).unwrap();
        let report =
            analyze_dataset(&input, &all_estimators(), false, false, false).unwrap();
        assert_eq!(report.tau_hat, 0.0);
        for entry in &report.standard_errors {
            if let Some(se) = entry.se {
                assert_eq!(se, 0.0, "{}", entry.estimator);
            }
        }
        assert!(report.diagnostics.rho_eps.is_none());
    }

    #[test]
    fn round_trip_draw_export_analyze() {
        let pop = Population::generate(&PopulationSpec::default_design(12), 3).unwrap();
        let s = SamplingDesign::new(0.8, 0.5).unwrap();
        let a = AssignmentDesign::two_point(0.09).unwrap();
        let draw = draw_sample(&pop, &s, &a, 99);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("draw.csv");
        export_draw_csv(&draw, &path).unwrap();

        // reference values straight from the draw
        let ds = Dataset::from_draw(&draw).unwrap();
        let fit = fit_plain(&ds).unwrap();
        let rep = variance_report(&ds, &fit);

        let input = AnalysisInput::read(&path).unwrap();
        let report = analyze_dataset(&input, &all_estimators(), true, true, true).unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
        assert!(rel(report.tau_hat, fit.tau_hat) < 1e-12);
        let se = |name: &str| {
            report
                .standard_errors
                .iter()
                .find(|e| e.estimator == name)
                .unwrap()
                .se
                .unwrap()
        };
        assert!(rel(se("ols"), rep.se_ols) < 1e-12);
        assert!(rel(se("ehw"), rep.se_ehw) < 1e-12);
        assert!(rel(se("lz"), rep.se_lz) < 1e-12);
        let fe_fit = fit_fe(&ds).unwrap();
        let fe = report.fixed_effects.as_ref().unwrap();
        assert!(rel(fe.tau_hat, fe_fit.tau_hat) < 1e-12);
    }

    #[test]
    fn cli_exit_codes() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        // success: tiny simulation
        let code = run_from([
            "clustervar",
            "simulate",
            "--set",
            "replications=2",
            "--set",
            "population.units_per_cluster=20",
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        assert!(out.join("report.json").exists());
        assert!(out.join("report.csv").exists());
        // bad config key → 2
        let code = run_from(["clustervar", "simulate", "--set", "reps=2"]);
        assert_eq!(code, 2);
        // bad config value → 2
        let code = run_from(["clustervar", "simulate", "--set", "sigma2=0.3"]);
        assert_eq!(code, 2);
        // analyze on a missing file → 2
        let code = run_from(["clustervar", "analyze", "/nonexistent/x.csv"]);
        assert_eq!(code, 2);
        // single-arm data → 2
        let path = dir.path().join("onearm.csv");
        std::fs::write(&path, "y,w,cluster\n1,1,1\n2,1,1\n").unwrap();
        let code = run_from(["clustervar", "analyze", path.to_str().unwrap()]);
        assert_eq!(code, 2);
        // usage error (unknown flag) → 2
        let code = run_from(["clustervar", "simulate", "--bogus"]);
        assert_eq!(code, 2);
        // unknown estimator → 2
        let good = dir.path().join("ok.csv");
        std::fs::write(&good, "y,w,cluster\n1,1,1\n3,1,1\n2,0,2\n4,0,2\n").unwrap();
        let code = run_from([
            "clustervar",
            "analyze",
            good.to_str().unwrap(),
            "--estimators",
            "ehw,bogus",
        ]);
        assert_eq!(code, 2);
    }

    #[test]
    fn oracle_command_passes_on_small_grid() {
        let dir = tempfile::tempdir().unwrap();
        let code = run_from([
            "clustervar",
            "oracle",
            "--max-units",
            "6",
            "--out-dir",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let text = std::fs::read_to_string(dir.path().join("oracle_fixtures.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "fixture_id,p_c,p_u,sigma2,model,formula_value,oracle_value"
        );
        // two populations x 30 rows
        assert_eq!(text.lines().count(), 61);
        // oversize refusal
        let code = run_from(["clustervar", "oracle", "--max-units", "15"]);
        assert_eq!(code, 2);
    }
}
