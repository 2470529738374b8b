//! Monte Carlo coverage study: which standard errors deliver their nominal
//! confidence level under a clustered design?
//!
//! The experiment draws many samples from one fixed population, fits the
//! plain and fixed-effects models on each, builds the normal-critical-value
//! confidence interval from every variance estimator, and reports the
//! fraction of intervals covering the true population effect. The design
//! here combines the two clustering channels — heterogeneous cluster
//! effects (tau_c = ±1) and clustered assignment (two-point treatment
//! shares, sigma2 = 0.09) — so the estimators separate sharply:
//!
//! * homoskedastic OLS and EHW ignore the assignment clustering and
//!   under-cover badly on the plain model;
//! * Kloek/Moulton inflation repairs most of that from two summary
//!   diagnostics;
//! * Liang–Zeger over-covers, paying its structural conservatism (the
//!   cluster-effect spread);
//! * the CCA refinement subtracts an estimate of that spread and lands
//!   closest to the nominal level on the plain model.
//!
//! This runs a reduced-size study tuned to finish in seconds. The CLI runs
//! the same machinery from a config file — see `configs/table1_desk.cfg`
//! (and `configs/table1_full.cfg` for the full-scale version):
//!
//! ```text
//! cargo run --release -- simulate --config configs/table1_desk.cfg --out-dir out
//! ```
//!
//! Run this example with:
//! ```text
//! cargo run --release --example coverage_experiment
//! ```

use clustervar::montecarlo::{all_estimators, run_experiment, write_report_csv};
use clustervar::population::{ClusterSizes, TauPattern};
use clustervar::{AssignmentFamily, ExperimentConfig, ModelSet, PopulationSpec};

fn main() {
    // 100 clusters x 1,000 units, tau_c = ±1 so the population effect is 0,
    // every cluster sampled, 10% of units within each cluster, two-point
    // assignment shares q_c in {0.2, 0.8}.
    let config = ExperimentConfig {
        population: PopulationSpec::Design {
            clusters: 100,
            units_per_cluster: ClusterSizes::Fixed(1_000),
            tau_pattern: TauPattern::HalfHalf,
            noise_sd: 1.0,
        },
        p_c: 1.0,
        p_u: 0.1,
        sigma2: 0.09,
        assignment_family: AssignmentFamily::TwoPoint,
        replications: 500,
        seed: 20_260_819,
        confidence: 0.95,
        models: ModelSet::Both,
        estimators: all_estimators(),
    };

    println!(
        "running {} replications (expected n per draw ~{:.0}) ...",
        config.replications,
        100.0 * 1_000.0 * config.p_c * config.p_u
    );
    let report = run_experiment(&config).expect("configuration is valid");

    println!(
        "\ntarget tau = {:.4}, critical value {:.4}, config hash {}",
        report.tau, report.critical_value, report.config_hash
    );

    println!("\n== sampling distribution vs exact design variance ==");
    for m in &report.models {
        println!(
            "  {:<6} mean tau_hat = {:+.4} ± {:.4}   Var(sqrt(N)(tau_hat - tau)) = {:.3} ± {:.3}   exact {:.3}",
            m.model,
            m.mean_tau_hat,
            m.mean_tau_hat_mc_se,
            m.empirical_var_scaled,
            m.empirical_var_scaled_mc_se,
            m.exact_variance
        );
        if m.degenerate_count > 0 {
            println!("         ({} degenerate replications skipped)", m.degenerate_count);
        }
    }

    println!("\n== coverage of nominal 95% intervals ==");
    println!(
        "  {:<6} {:<6} {:>9} {:>8} {:>10} {:>6}",
        "model", "se", "coverage", "(MC se)", "mean se", "n/a"
    );
    for row in &report.rows {
        println!(
            "  {:<6} {:<6} {:>9.4} {:>8.4} {:>10.5} {:>6}",
            row.model, row.estimator, row.coverage, row.coverage_se, row.mean_se, row.na_count
        );
    }
    println!("\nreading the table (plain model): `ols` and `ehw` miss both clustering");
    println!("channels and under-cover severely; `kloek` recovers by inflating OLS");
    println!("with the Moulton factor; `lz` over-covers — its intervals absorb the");
    println!("cluster-effect spread that the design averages out of the estimand;");
    println!("`cca` subtracts an estimate of exactly that spread and lands nearest");
    println!("the nominal level, leaning slightly anticonservative (the");
    println!("`cca_adjustment` example shows why). The fixed-effects model absorbs");
    println!("tau_c entirely, so its `ols`/`ehw` rows return near nominal while its");
    println!("`lz` row keeps paying the same structural conservatism.");

    let out = std::env::temp_dir().join("coverage_report.csv");
    write_report_csv(&report, &out).expect("temp dir is writable");
    println!("\nfull table written to {}", out.display());
}
