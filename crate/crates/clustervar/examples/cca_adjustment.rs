//! What the cluster-correlation-adjusted (CCA) estimator corrects — and the
//! price its plug-in pays on real samples.
//!
//! Liang–Zeger is conservative by a precise amount: its large-sample limit
//! exceeds the true design variance by `(p_C p_U / M) sum_c M_c^2 abar_c^2`,
//! a term driven by the spread of cluster-level effects. When (nearly) all
//! clusters are sampled that spread is estimable from the realized data, and
//! the CCA estimator subtracts a plug-in of it from the LZ variance:
//!
//! ```text
//! v_cca = v_lz - (1/N^2) sum_c N_c^2 (tau_hat_c - tau_hat)^2
//! ```
//!
//! floored at zero, with single-armed clusters excluded. This example shows
//! both sides honestly. The subtracted squares are noisy in two distinct
//! ways, and the `N_c^2 / N` weighting keeps both biases alive at *every*
//! cluster size:
//!
//! * estimation noise in the cluster effects — `Var(tau_hat_c)` is roughly
//!   `4 sigma_nu^2 / N_c` (unit noise variance `sigma_nu^2`), which the
//!   weighting turns into a bias of about `4 sigma_nu^2`;
//! * sampling noise in the cluster sizes — `E[N_c^2]` exceeds `(p M_c)^2`
//!   by `M_c p (1 - p)`, which adds about `(1 - p_U)` times the squared
//!   cluster-effect spread whenever units are subsampled.
//!
//! The three Monte Carlo runs below switch the two components off one at a
//! time. The third run, with both off, exposes the deepest property: the
//! adjusted value is a small difference of two large estimates, so even a
//! per-mille finite-sample bias in `v_lz` itself surfaces as a double-digit
//! relative error on the difference. A conservative estimator can afford
//! small biases; a sharp correction of this form cannot.
//!
//! Run with:
//! ```text
//! cargo run --release --example cca_adjustment
//! ```

use clustervar::design::draw_sample;
use clustervar::estimators::fit_plain;
use clustervar::montecarlo::variance_validation;
use clustervar::population::{ClusterSizes, TauPattern};
use clustervar::variance::{exact_variance_plain, limit_functionals, variance_report};
use clustervar::{AssignmentDesign, Dataset, Estimands, Population, PopulationSpec, SamplingDesign};

fn make_population(noise_sd: f64) -> Population {
    let spec = PopulationSpec::Design {
        clusters: 40,
        units_per_cluster: ClusterSizes::Fixed(100),
        tau_pattern: TauPattern::HalfHalf,
        noise_sd,
    };
    Population::generate(&spec, 5).expect("design spec is valid")
}

fn main() {
    // Heterogeneous cluster effects, every cluster sampled (p_C = 1): the
    // regime the CCA correction is built for.
    let sampling = SamplingDesign::new(1.0, 0.5).expect("probabilities valid");
    let assignment = AssignmentDesign::degenerate();
    let grid = [(sampling, assignment)];

    // ===== 1. One draw =====
    let pop = make_population(1.0);
    let est = Estimands::compute(&pop);
    let exact = exact_variance_plain(&pop, &est, &sampling, &assignment);
    let lim = limit_functionals(&pop, &est, &sampling, &assignment);
    println!("population: 40 clusters x 100 units, tau_c = ±1, unit noise sd 1.0");
    println!("design: p_C = 1, p_U = 0.5, unclustered assignment");
    println!("  exact design variance (normalized) {:>8.3}", exact.total);
    println!("  LZ limit                           {:>8.3}", lim.v_lz_limit);
    println!("  structural LZ overshoot            {:>8.3}\n", lim.lz_minus_true);

    let draw = draw_sample(&pop, &sampling, &assignment, 77);
    let ds = Dataset::from_draw(&draw).expect("draw has both arms");
    let fit = fit_plain(&ds).expect("both arms present");
    let report = variance_report(&ds, &fit);
    let n = ds.n() as f64;
    println!("== one draw (n = {}) ==", ds.n());
    println!("  N * v_ehw = {:>8.3}   (EHW limit {:.3})", n * report.v_ehw, lim.v_ehw_limit);
    println!("  N * v_lz  = {:>8.3}   (LZ limit {:.3})", n * report.v_lz, lim.v_lz_limit);
    let v_cca = report.v_cca.expect("p_C = 1: clusters have both arms with high probability");
    println!("  N * v_cca = {:>8.3}   (exact variance {:.3})", n * v_cca, exact.total);
    if report.cca_floored {
        println!("  (the correction exceeded v_lz on this draw; floored at zero)");
    }

    // ===== 2. Many draws, three regimes =====
    //
    // Same clusters, same tau_c = ±1 spread throughout (so abar_c = tau_c
    // exactly and the structural overshoot is identical); the unit noise and
    // the within-cluster sampling rate switch the two bias components off
    // one at a time.
    for (noise_sd, p_u, label) in [
        (1.0, 0.5, "noise sd 1.0, p_U = 0.5 — both noise components active"),
        (0.1, 0.5, "noise sd 0.1, p_U = 0.5 — size-randomness remains"),
        (0.1, 1.0, "noise sd 0.1, p_U = 1.0 — plug-in noise off"),
    ] {
        let pop = make_population(noise_sd);
        let grid = [(
            SamplingDesign::new(1.0, p_u).expect("probabilities valid"),
            assignment,
        )];
        let rows = variance_validation(&pop, &grid, 2000, 424_242);
        let row = &rows[0];
        println!("\n== {} ({} replications) ==", label, row.replications);
        println!(
            "  exact variance {:.3}   LZ limit {:.3}   overshoot {:.3}",
            row.exact_variance,
            row.v_lz_limit,
            row.v_lz_limit - row.exact_variance
        );
        println!(
            "  empirical Var(sqrt(N)(tau_hat - tau)) = {:.3} ± {:.3}   (agree at 3 MC se: {})",
            row.empirical_var_scaled, row.empirical_var_scaled_mc_se, row.agree_3se
        );
        println!(
            "  mean N * v_lz  = {:>8.3} ± {:.3}   target: LZ limit {:.3}",
            row.mean_n_v_lz, row.mean_n_v_lz_mc_se, row.v_lz_limit
        );
        let mean_cca = row.mean_n_v_cca.expect("cca defined at p_C = 1");
        let se_cca = row.mean_n_v_cca_mc_se.expect("cca defined at p_C = 1");
        println!(
            "  mean N * v_cca = {:>8.3} ± {:.3}   target: exact variance {:.3}",
            mean_cca, se_cca, row.exact_variance
        );
    }

    println!("\nreading the numbers:");
    println!("  * v_lz concentrates at its limit in every regime — conservative by");
    println!("    exactly the structural overshoot, as the theory says;");
    println!("  * rows 1-2: v_cca subtracts too much when either noise source feeds");
    println!("    the squared plug-in effects — ~4 x (unit variance) from estimating");
    println!("    the cluster effects, plus ~(1 - p_U) x (effect spread) from the");
    println!("    random cluster sizes (per-draw values are floored at zero);");
    println!("  * row 3: with both sources off the subtraction is nearly clean, yet");
    println!("    the mean still sits well below the target — v_cca is a ~1-sized");
    println!("    difference of two ~100-sized estimates, so the small finite-sample");
    println!("    deficit visible in mean N*v_lz (a fraction of a percent of its");
    println!("    limit) translates into a double-digit share of the difference.");
    println!("  the N_c^2 weighting amplifies per-cluster noise in exact proportion");
    println!("  as clusters grow, so none of this fades with cluster size: sharp");
    println!("  corrections built as big-minus-big differences stay fragile.");
}
