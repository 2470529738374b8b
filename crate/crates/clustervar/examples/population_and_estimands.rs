//! Build finite populations and inspect their estimands.
//!
//! A population is a fixed table of potential outcomes `(Y_i(0), Y_i(1))`
//! partitioned into clusters. Nothing about it is random: the estimand
//! `tau = mean(Y(1)) - mean(Y(0))` and all the centered quantities derived
//! from the table are deterministic functions of it. This example builds
//! populations three ways — the four-unit hand-checkable reference, an
//! explicit table, and a generated design with cluster-level treatment
//! effects — and prints the estimands each time.
//!
//! Run with:
//! ```text
//! cargo run --example population_and_estimands
//! ```

use clustervar::population::{ClusterSizes, TauPattern};
use clustervar::{Estimands, Population, PopulationSpec};

fn describe(name: &str, pop: &Population) {
    let est = Estimands::compute(pop);
    println!("== {name} ==");
    println!(
        "  units M = {}, clusters C = {}, sizes = {:?}",
        pop.n_units(),
        pop.n_clusters(),
        pop.sizes()
    );
    println!(
        "  mean Y(0) = {:.4}   mean Y(1) = {:.4}   tau = {:.4}",
        est.ybar0, est.ybar1, est.tau
    );
    let shown = est.tau_c.len().min(8);
    print!("  per-cluster effects tau_c = [");
    for (c, t) in est.tau_c.iter().take(shown).enumerate() {
        if c > 0 {
            print!(", ");
        }
        print!("{t:.3}");
    }
    if est.tau_c.len() > shown {
        print!(", ...");
    }
    println!("]");
    // The centered outcomes eps_i(w) = Y_i(w) - mean(Y(w)) are the raw
    // material of every variance formula; their grand means are zero by
    // construction.
    let m = pop.n_units() as f64;
    let mean_e0: f64 = est.eps0.iter().sum::<f64>() / m;
    let mean_e1: f64 = est.eps1.iter().sum::<f64>() / m;
    println!(
        "  centered outcomes: mean eps(0) = {mean_e0:.2e}, mean eps(1) = {mean_e1:.2e} (zero by construction)"
    );
    println!();
}

fn main() {
    // ===== 1. The four-unit reference =====
    //
    // Two clusters of two units, chosen so every estimator and variance can
    // be verified with pencil and paper. tau is exactly zero.
    let reference = Population::four_unit_reference();
    describe("four-unit reference", &reference);

    // ===== 2. An explicit table =====
    //
    // Clusters need not be contiguous or equally sized; `from_table` accepts
    // any id-per-unit vector and compacts the ids internally.
    let table = Population::from_table(
        &[0, 1, 1, 2, 2, 2],
        &[0.5, 2.0, 1.0, 3.0, -1.0, 0.25],
        &[1.5, 0.0, 2.0, 1.0, 4.0, -0.5],
    )
    .expect("table is rectangular and non-empty");
    describe("six-unit mixed-size table", &table);

    // ===== 3. A generated design =====
    //
    // `Design` draws Y_i(0) = nu_i ~ N(0, noise_sd^2) and adds a constant
    // per-cluster effect tau_c on top: Y_i(1) = tau_c + nu_i. With the
    // half/half pattern the first half of the clusters get -1 and the second
    // half +1, so the population effect is exactly 0 while the *cluster*
    // effects are strongly heterogeneous — the configuration under which
    // cluster-robust variance questions become interesting.
    let spec = PopulationSpec::Design {
        clusters: 10,
        units_per_cluster: ClusterSizes::Fixed(50),
        tau_pattern: TauPattern::HalfHalf,
        noise_sd: 1.0,
    };
    let generated = Population::generate(&spec, 42).expect("design spec is valid");
    describe("generated design, 10 clusters x 50 units, tau_c = ±1", &generated);

    // Generation is deterministic in the seed.
    let again = Population::generate(&spec, 42).expect("design spec is valid");
    println!(
        "same seed regenerates the identical table: {}",
        generated.y0() == again.y0() && generated.y1() == again.y1()
    );

    // Unequal cluster sizes weight the cluster-level terms of the variance
    // by M_c^2, so the per-cluster size vector is part of the estimand story.
    let uneven = PopulationSpec::Design {
        clusters: 4,
        units_per_cluster: ClusterSizes::PerCluster(vec![5, 10, 20, 40]),
        tau_pattern: TauPattern::Explicit(vec![-1.0, -0.5, 0.5, 1.0]),
        noise_sd: 0.5,
    };
    let pop = Population::generate(&uneven, 7).expect("design spec is valid");
    describe("generated design, uneven sizes 5/10/20/40", &pop);
}
