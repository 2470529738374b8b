//! Finite populations with fixed potential outcomes, grouped into clusters,
//! plus the derived estimands (average treatment effects and grand-mean
//! residuals) that every exact variance formula in this crate consumes.
//!
//! The population is the non-random object of design-based inference: both
//! potential outcomes `Y_i(0)`, `Y_i(1)` of every unit are fixed numbers, and
//! all probability statements refer to the sampling and assignment design
//! (see [`crate::design`]).

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numeric::{csum, inverse_normal_cdf, stream_rng, Neumaier};

// ===== Errors =====

#[derive(Debug)]
pub enum PopulationError {
    /// A population must contain at least one unit.
    Empty,
    /// Per-cluster input lengths disagree with the declared cluster count.
    ClusterCountMismatch { expected: usize, got: usize },
    /// The half/half effect pattern needs an even number of clusters.
    OddClusterCount { clusters: usize },
    /// noise_sd must be nonnegative and finite.
    BadNoiseSd { value: f64 },
    /// A cluster must contain at least one unit.
    EmptyCluster { cluster: usize },
    /// Malformed CSV input.
    Csv { line: usize, message: String },
    /// Underlying I/O failure.
    Io(String),
}

impl fmt::Display for PopulationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Empty => write!(f, "population has no units"),
            Self::ClusterCountMismatch { expected, got } => {
                write!(f, "expected {expected} per-cluster values, got {got}")
            }
            Self::OddClusterCount { clusters } => write!(
                f,
                "half/half effect pattern needs an even cluster count, got {clusters}"
            ),
            Self::BadNoiseSd { value } => write!(f, "noise_sd must be finite and >= 0, got {value}"),
            Self::EmptyCluster { cluster } => write!(f, "cluster {cluster} has no units"),
            Self::Csv { line, message } => write!(f, "population CSV line {line}: {message}"),
            Self::Io(msg) => write!(f, "population I/O: {msg}"),
        }
    }
}

impl std::error::Error for PopulationError {}

impl From<std::io::Error> for PopulationError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

// ===== Specification =====

/// Cluster sizes: either one size for all clusters or an explicit list.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum ClusterSizes {
    Fixed(u32),
    PerCluster(Vec<u32>),
}

/// Per-cluster treatment effects.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum TauPattern {
    /// The first half of the clusters get effect −1, the second half +1.
    HalfHalf,
    /// One effect per cluster.
    Explicit(Vec<f64>),
}

/// Recipe for constructing a population.
///
/// `Design` draws potential outcomes as `Y_i(0) = ν_i`,
/// `Y_i(1) = τ_{c(i)} + ν_i` with `ν_i ~ N(0, noise_sd²)`; the treatment
/// effect is constant within each cluster, so the population average effect
/// is an exact (noise-free) average of the `τ_c`. `Explicit` carries a full
/// outcome table.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum PopulationSpec {
    Design {
        clusters: u32,
        units_per_cluster: ClusterSizes,
        tau_pattern: TauPattern,
        noise_sd: f64,
    },
    Explicit {
        /// Cluster id per unit; units of a cluster need not be contiguous.
        cluster: Vec<u32>,
        y0: Vec<f64>,
        y1: Vec<f64>,
    },
}

impl PopulationSpec {
    /// The default design used throughout the examples: 100 equal clusters,
    /// half with effect −1 and half with +1, unit-variance noise. At
    /// `units_per_cluster = 10_000` this is the desk-scale population
    /// (M = 10^6) used by the coverage experiment.
    pub fn default_design(units_per_cluster: u32) -> Self {
        Self::Design {
            clusters: 100,
            units_per_cluster: ClusterSizes::Fixed(units_per_cluster),
            tau_pattern: TauPattern::HalfHalf,
            noise_sd: 1.0,
        }
    }
}

// ===== Population =====

/// A finite population: cluster sizes and both potential outcomes per unit.
///
/// Invariant: units are stored cluster-contiguously; `offsets[c]..offsets[c+1]`
/// are the units of cluster `c`, and `y0.len() == y1.len() == offsets[C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    sizes: Vec<u32>,
    offsets: Vec<usize>,
    y0: Vec<f64>,
    y1: Vec<f64>,
}

impl Population {
    /// Build a population from an explicit per-unit table. Units are grouped
    /// by cluster id in order of first appearance; within a cluster the input
    /// order is preserved.
    pub fn from_table(cluster: &[u32], y0: &[f64], y1: &[f64]) -> Result<Self, PopulationError> {
        if cluster.is_empty() {
            return Err(PopulationError::Empty);
        }
        if cluster.len() != y0.len() || cluster.len() != y1.len() {
            return Err(PopulationError::ClusterCountMismatch {
                expected: cluster.len(),
                got: y0.len().min(y1.len()),
            });
        }
        let mut order: Vec<u32> = Vec::new();
        let mut index: HashMap<u32, usize> = HashMap::new();
        for &c in cluster {
            index.entry(c).or_insert_with(|| {
                order.push(c);
                order.len() - 1
            });
        }
        let n_clusters = order.len();
        let mut grouped: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); n_clusters];
        for (i, &c) in cluster.iter().enumerate() {
            let k = index[&c];
            grouped[k].0.push(y0[i]);
            grouped[k].1.push(y1[i]);
        }
        let mut sizes = Vec::with_capacity(n_clusters);
        let mut oy0 = Vec::with_capacity(cluster.len());
        let mut oy1 = Vec::with_capacity(cluster.len());
        for (g0, g1) in grouped {
            sizes.push(g0.len() as u32);
            oy0.extend(g0);
            oy1.extend(g1);
        }
        Self::from_parts(sizes, oy0, oy1)
    }

    fn from_parts(sizes: Vec<u32>, y0: Vec<f64>, y1: Vec<f64>) -> Result<Self, PopulationError> {
        if y0.is_empty() {
            return Err(PopulationError::Empty);
        }
        for (c, &s) in sizes.iter().enumerate() {
            if s == 0 {
                return Err(PopulationError::EmptyCluster { cluster: c });
            }
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        let mut acc = 0usize;
        offsets.push(0);
        for &s in &sizes {
            acc += s as usize;
            offsets.push(acc);
        }
        debug_assert_eq!(acc, y0.len());
        debug_assert_eq!(acc, y1.len());
        Ok(Self { sizes, offsets, y0, y1 })
    }

    /// Generate a population from a design spec, deterministically per seed.
    ///
    /// Noise is produced by mapping uniform ChaCha draws through the AS 241
    /// inverse normal CDF, so the exact values depend only on `(spec, seed)`.
    pub fn generate(spec: &PopulationSpec, seed: u64) -> Result<Self, PopulationError> {
        match spec {
            PopulationSpec::Explicit { cluster, y0, y1 } => Self::from_table(cluster, y0, y1),
            PopulationSpec::Design {
                clusters,
                units_per_cluster,
                tau_pattern,
                noise_sd,
            } => {
                let c = *clusters as usize;
                if c == 0 {
                    return Err(PopulationError::Empty);
                }
                if !noise_sd.is_finite() || *noise_sd < 0.0 {
                    return Err(PopulationError::BadNoiseSd { value: *noise_sd });
                }
                let sizes: Vec<u32> = match units_per_cluster {
                    ClusterSizes::Fixed(m) => vec![*m; c],
                    ClusterSizes::PerCluster(v) => {
                        if v.len() != c {
                            return Err(PopulationError::ClusterCountMismatch {
                                expected: c,
                                got: v.len(),
                            });
                        }
                        v.clone()
                    }
                };
                let tau_c: Vec<f64> = match tau_pattern {
                    TauPattern::HalfHalf => {
                        if c % 2 != 0 {
                            return Err(PopulationError::OddClusterCount { clusters: c });
                        }
                        (0..c).map(|i| if i < c / 2 { -1.0 } else { 1.0 }).collect()
                    }
                    TauPattern::Explicit(v) => {
                        if v.len() != c {
                            return Err(PopulationError::ClusterCountMismatch {
                                expected: c,
                                got: v.len(),
                            });
                        }
                        v.clone()
                    }
                };
                let m_total: usize = sizes.iter().map(|&s| s as usize).sum();
                let mut rng = stream_rng(seed, 0);
                let mut y0 = Vec::with_capacity(m_total);
                let mut y1 = Vec::with_capacity(m_total);
                use rand::RngCore;
                for (cl, &size) in sizes.iter().enumerate() {
                    for _ in 0..size {
                        // uniform in (0,1): 53 mantissa bits plus a half-ulp
                        // offset so 0 is never produced
                        let u = (rng.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
                            + 1.0 / 18_014_398_509_481_984.0;
                        let nu = noise_sd * inverse_normal_cdf(u);
                        y0.push(nu);
                        y1.push(tau_c[cl] + nu);
                    }
                }
                Self::from_parts(sizes, y0, y1)
            }
        }
    }

    /// Convenience constructor for the 4-unit reference population used in
    /// the tests and examples: two clusters of two units with potential
    /// outcomes chosen so the population ATE is 0 while the cluster ATEs are
    /// +1 and −1.
    pub fn four_unit_reference() -> Self {
        Self::from_table(&[1, 1, 2, 2], &[0.0, 2.0, 1.0, 3.0], &[1.0, 3.0, 0.0, 2.0])
            .expect("reference population is valid")
    }

    pub fn n_units(&self) -> usize {
        self.y0.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[u32] {
        &self.sizes
    }

    /// Unit index range of one cluster.
    pub fn cluster_range(&self, c: usize) -> std::ops::Range<usize> {
        self.offsets[c]..self.offsets[c + 1]
    }

    /// Cluster index of one unit (units are cluster-contiguous).
    pub fn cluster_of(&self, unit: usize) -> usize {
        debug_assert!(unit < self.n_units());
        match self.offsets.binary_search(&unit) {
            Ok(c) => c,
            Err(c) => c - 1,
        }
    }

    pub fn y0(&self) -> &[f64] {
        &self.y0
    }

    pub fn y1(&self) -> &[f64] {
        &self.y1
    }

    /// Write the population as CSV with header `cluster,y0,y1`. Values are
    /// printed in shortest round-trip form, so a read-back is bit-exact.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<(), PopulationError> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "cluster,y0,y1")?;
        for c in 0..self.n_clusters() {
            for i in self.cluster_range(c) {
                writeln!(out, "{},{},{}", c, self.y0[i], self.y1[i])?;
            }
        }
        Ok(())
    }

    /// Read a population from CSV with header `cluster,y0,y1`.
    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Self, PopulationError> {
        let reader = BufReader::new(File::open(path)?);
        let mut cluster = Vec::new();
        let mut y0 = Vec::new();
        let mut y1 = Vec::new();
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or(PopulationError::Csv { line: 1, message: "empty file".into() })??;
        if header.trim() != "cluster,y0,y1" {
            return Err(PopulationError::Csv {
                line: 1,
                message: format!("expected header 'cluster,y0,y1', got '{header}'"),
            });
        }
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(PopulationError::Csv {
                    line: lineno + 2,
                    message: format!("expected 3 fields, got {}", parts.len()),
                });
            }
            let parse = |s: &str, what: &str| -> Result<f64, PopulationError> {
                s.trim().parse().map_err(|_| PopulationError::Csv {
                    line: lineno + 2,
                    message: format!("bad {what}: '{s}'"),
                })
            };
            let c: u32 = parts[0].trim().parse().map_err(|_| PopulationError::Csv {
                line: lineno + 2,
                message: format!("bad cluster id: '{}'", parts[0]),
            })?;
            cluster.push(c);
            y0.push(parse(parts[1], "y0")?);
            y1.push(parse(parts[2], "y1")?);
        }
        Self::from_table(&cluster, &y0, &y1)
    }
}

// ===== Estimands =====

/// Population-level estimands and residuals.
///
/// `eps0`/`eps1` are grand-mean residuals `ε_i(w) = Y_i(w) − Ȳ(w)`; they sum
/// to zero by construction. `tau` is the finite-population average treatment
/// effect; `tau_c` its within-cluster counterparts.
#[derive(Debug, Clone, Serialize)]
pub struct Estimands {
    pub tau: f64,
    pub tau_c: Vec<f64>,
    pub ybar0: f64,
    pub ybar1: f64,
    pub eps0: Vec<f64>,
    pub eps1: Vec<f64>,
    pub eps0_bar_c: Vec<f64>,
    pub eps1_bar_c: Vec<f64>,
}

impl Estimands {
    pub fn compute(pop: &Population) -> Self {
        let m = pop.n_units() as f64;
        let ybar0 = csum(pop.y0.iter().copied()) / m;
        let ybar1 = csum(pop.y1.iter().copied()) / m;
        let eps0: Vec<f64> = pop.y0.iter().map(|&y| y - ybar0).collect();
        let eps1: Vec<f64> = pop.y1.iter().map(|&y| y - ybar1).collect();
        let n_cl = pop.n_clusters();
        let mut eps0_bar_c = Vec::with_capacity(n_cl);
        let mut eps1_bar_c = Vec::with_capacity(n_cl);
        let mut tau_c = Vec::with_capacity(n_cl);
        for c in 0..n_cl {
            let r = pop.cluster_range(c);
            let mc = (r.end - r.start) as f64;
            let mut s0 = Neumaier::new();
            let mut s1 = Neumaier::new();
            let mut st = Neumaier::new();
            for i in r {
                s0.add(eps0[i]);
                s1.add(eps1[i]);
                st.add(pop.y1[i] - pop.y0[i]);
            }
            eps0_bar_c.push(s0.total() / mc);
            eps1_bar_c.push(s1.total() / mc);
            tau_c.push(st.total() / mc);
        }
        Estimands {
            tau: ybar1 - ybar0,
            tau_c,
            ybar0,
            ybar1,
            eps0,
            eps1,
            eps0_bar_c,
            eps1_bar_c,
        }
    }
}
