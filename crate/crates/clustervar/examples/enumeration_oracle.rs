//! Brute-force verification of the variance formulas by exhaustive
//! enumeration.
//!
//! On a small population the design has finitely many outcomes: each unit is
//! unsampled, sampled-and-treated, or sampled-and-control, and each cluster's
//! treatment share takes finitely many values (for the degenerate and
//! two-point families). The oracle walks this space exactly — no simulation,
//! no tolerance — and computes the true mean and variance of:
//!
//! * the linearized statistics (cluster-by-cluster closed enumeration), and
//! * the actual `sqrt(N) * (tau_hat - tau)` estimator distribution,
//!   including the probability that a draw is degenerate (an arm empty).
//!
//! Every closed-form variance in this crate is checked against this oracle;
//! `oracle_fixture_rows` materializes that check over a fixed design grid.
//!
//! Run with:
//! ```text
//! cargo run --example enumeration_oracle
//! ```

use clustervar::variance::{
    enumerate_tau_statistic, enumeration_oracle, exact_variance_fe, exact_variance_plain,
    oracle_fixture_rows, ORACLE_MAX_UNITS,
};
use clustervar::{AssignmentDesign, Estimands, Population, SamplingDesign};

fn main() {
    // ===== 1. Formula vs oracle on one design =====
    let pop = Population::from_table(
        &[0, 1, 1, 2, 2, 2],
        &[0.5, 2.0, 1.0, 3.0, -1.0, 0.25],
        &[1.5, 0.0, 2.0, 1.0, 4.0, -0.5],
    )
    .expect("table is valid");
    let est = Estimands::compute(&pop);
    let sampling = SamplingDesign::new(0.5, 0.5).expect("probabilities valid");
    let assignment = AssignmentDesign::two_point(0.09).expect("sigma2 < 1/4");

    println!(
        "population: M = {} units in clusters of sizes {:?} (oracle cap: {} units)",
        pop.n_units(),
        pop.sizes(),
        ORACLE_MAX_UNITS
    );
    let oracle = enumeration_oracle(&pop, &sampling, &assignment).expect("population is small");
    let plain = exact_variance_plain(&pop, &est, &sampling, &assignment);
    let fe = exact_variance_fe(&pop, &est, &sampling, &assignment).expect("sigma2 < 1/4");

    println!("\n== linearized statistics at p_C = 0.5, p_U = 0.5, sigma2 = 0.09 ==");
    println!("  plain: formula {:.12}  oracle {:.12}", plain.total, oracle.var_eta);
    println!(
        "         |difference| = {:.2e}",
        (plain.total - oracle.var_eta).abs()
    );
    let var_fe = oracle.var_eta_fe.expect("fe statistic defined below sigma2 = 1/4");
    println!("  fe:    formula {:.12}  oracle {:.12}", fe.total, var_fe);
    println!("         |difference| = {:.2e}", (fe.total - var_fe).abs());
    println!(
        "  oracle cross-check: mean of the statistic = {:.2e} (zero in theory),",
        oracle.mean_eta
    );
    println!(
        "  S/D covariance = {:.2e} (zero in theory; the two parts are orthogonal)",
        oracle.cov_sd
    );

    // ===== 2. The fixture grid =====
    //
    // 30 rows: every (p_C, p_U, sigma2) combination on the verification grid,
    // plain and fixed-effects. This is the same material the `oracle` CLI
    // subcommand writes to CSV.
    let rows = oracle_fixture_rows(&pop, "demo").expect("population within oracle cap");
    let worst = rows
        .iter()
        .max_by(|a, b| a.discrepancy().total_cmp(&b.discrepancy()))
        .expect("grid is non-empty");
    println!("\n== fixture grid ==");
    println!("  {} rows checked; worst relative discrepancy {:.2e} at `{}`", rows.len(), worst.discrepancy(), worst.fixture_id);
    for row in rows.iter().take(4) {
        println!(
            "    {:<32} formula {:>12.6}  oracle {:>12.6}",
            row.fixture_id, row.formula_value, row.oracle_value
        );
    }
    println!("    ...");

    // ===== 3. The estimator itself, not its linearization =====
    //
    // `enumerate_tau_statistic` enumerates the exact distribution of
    // sqrt(N)(tau_hat - tau) — the realized estimator with its random
    // denominator, not the linearized proxy. It also reports the probability
    // that a draw is degenerate (some arm empty), which is exactly the event
    // a Monte Carlo harness must skip.
    let four = Population::four_unit_reference();
    let full = SamplingDesign::new(1.0, 1.0).expect("census sampling");
    let fair = AssignmentDesign::degenerate();
    let stat = enumerate_tau_statistic(&four, &full, &fair).expect("tiny instance");
    println!("\n== exact distribution of the plain estimator (four-unit census) ==");
    println!("  P(degenerate draw)        = {:.6}", stat.degenerate_prob);
    println!("  conditional mean          = {:.6}", stat.conditional_mean);
    println!("  conditional variance      = {:.6}", stat.conditional_var);
    match (stat.mean, stat.var) {
        (Some(m), Some(v)) => println!("  unconditional mean / var  = {m:.6} / {v:.6}"),
        _ => println!("  unconditional moments undefined: some draws leave an arm empty"),
    }
    println!("  (with 4 units and q = 1/2, the all-treated draw happens with");
    println!("   probability 1/16 — the estimator is undefined there, so only");
    println!("   conditional moments exist; the linearized statistic has no such");
    println!("   event, which is why the exact-variance formulas target it)");

    // ===== 4. The cap is real =====
    let big = Population::from_table(
        &vec![0u32; ORACLE_MAX_UNITS + 1],
        &vec![0.0; ORACLE_MAX_UNITS + 1],
        &vec![1.0; ORACLE_MAX_UNITS + 1],
    )
    .expect("table is valid");
    let err = enumeration_oracle(&big, &sampling, &assignment)
        .expect_err("instance above the cap must be refused");
    println!("\n== guard ==\n  {err}");
}
