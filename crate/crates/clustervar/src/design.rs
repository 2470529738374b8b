//! Two-stage sampling and two-stage assignment designs, their realized
//! draws, and their analytic moments.
//!
//! Sampling: cluster `c` is kept with probability `p_C`; units inside kept
//! clusters are kept independently with probability `p_U`. Assignment: every
//! cluster draws a treatment probability `q_c` from a mean-1/2 family with
//! variance `sigma2`, and every unit of the population is assigned treatment
//! independently with probability `q_{c(i)}`, whether sampled or not.
//! Sampling and assignment are independent of each other.
//!
//! The module also exposes the analytic first/second moments and
//! within-cluster covariances of the indicators `R`, `W`, and `RW`, and the
//! κ-moments `κ_{j,k} = E[q^j (1−q)^k]` of the assignment family that the
//! fixed-effects variance formulas consume.

use std::fmt;

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::numeric::{stream_rng, Neumaier};
use crate::population::Population;

// ===== Errors =====

#[derive(Debug)]
pub enum DesignError {
    /// Sampling probabilities must lie in (0, 1].
    BadSamplingProbability { name: &'static str, value: f64 },
    /// sigma2 must lie in [0, 1/4] (two-point) or (0, 1/4) (beta).
    BadSigma2 { family: AssignmentFamily, value: f64 },
    /// The degenerate family is exactly the sigma2 = 0 case.
    DegenerateMismatch { value: f64 },
}

impl fmt::Display for DesignError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BadSamplingProbability { name, value } => {
                write!(f, "{name} must be in (0, 1], got {value}")
            }
            Self::BadSigma2 { family, value } => {
                write!(f, "sigma2 = {value} invalid for the {family:?} family")
            }
            Self::DegenerateMismatch { value } => {
                write!(f, "degenerate family requires sigma2 = 0, got {value}")
            }
        }
    }
}

impl std::error::Error for DesignError {}

// ===== Sampling design =====

/// Two-stage Bernoulli sampling probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingDesign {
    p_c: f64,
    p_u: f64,
}

impl SamplingDesign {
    pub fn new(p_c: f64, p_u: f64) -> Result<Self, DesignError> {
        if !(p_c > 0.0 && p_c <= 1.0) {
            return Err(DesignError::BadSamplingProbability { name: "p_c", value: p_c });
        }
        if !(p_u > 0.0 && p_u <= 1.0) {
            return Err(DesignError::BadSamplingProbability { name: "p_u", value: p_u });
        }
        Ok(Self { p_c, p_u })
    }

    pub fn p_c(&self) -> f64 {
        self.p_c
    }

    pub fn p_u(&self) -> f64 {
        self.p_u
    }
}

// ===== Assignment design =====

/// Distribution family of the cluster assignment probability `q_c`.
///
/// All families have mean 1/2. `TwoPoint` puts mass 1/2 on each of
/// `1/2 ± sigma`; at `sigma2 = 1/4` this is all-or-nothing assignment within
/// clusters. `Beta` is the symmetric Beta(α, α) with
/// `α = (1 − 4σ²)/(8σ²)`; unlike the two-point family it has `Var(q(1−q)) > 0`,
/// which exercises every κ-term of the fixed-effects variance. `Degenerate`
/// is the no-clustering case `q ≡ 1/2`, used exactly when `sigma2 = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentFamily {
    Degenerate,
    TwoPoint,
    Beta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssignmentDesign {
    family: AssignmentFamily,
    sigma2: f64,
}

impl AssignmentDesign {
    pub fn new(family: AssignmentFamily, sigma2: f64) -> Result<Self, DesignError> {
        match family {
            AssignmentFamily::Degenerate => {
                if sigma2 != 0.0 {
                    return Err(DesignError::DegenerateMismatch { value: sigma2 });
                }
            }
            AssignmentFamily::TwoPoint => {
                if !(sigma2 > 0.0 && sigma2 <= 0.25) {
                    return Err(DesignError::BadSigma2 { family, value: sigma2 });
                }
            }
            AssignmentFamily::Beta => {
                // shape alpha = (1-4s2)/(8s2) is undefined at 0 and degenerate at 1/4
                if !(sigma2 > 0.0 && sigma2 < 0.25) {
                    return Err(DesignError::BadSigma2 { family, value: sigma2 });
                }
            }
        }
        Ok(Self { family, sigma2 })
    }

    /// `q ≡ 1/2` (no clustering in assignment).
    pub fn degenerate() -> Self {
        Self { family: AssignmentFamily::Degenerate, sigma2: 0.0 }
    }

    pub fn two_point(sigma2: f64) -> Result<Self, DesignError> {
        Self::new(AssignmentFamily::TwoPoint, sigma2)
    }

    pub fn beta(sigma2: f64) -> Result<Self, DesignError> {
        Self::new(AssignmentFamily::Beta, sigma2)
    }

    pub fn family(&self) -> AssignmentFamily {
        self.family
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Beta shape parameter α of the symmetric Beta(α, α) family.
    pub fn beta_shape(&self) -> Option<f64> {
        match self.family {
            AssignmentFamily::Beta => Some((1.0 - 4.0 * self.sigma2) / (8.0 * self.sigma2)),
            _ => None,
        }
    }

    /// Finite support `(q, probability)` for enumerable families; `None` for
    /// the continuous beta family.
    pub fn finite_support(&self) -> Option<Vec<(f64, f64)>> {
        match self.family {
            AssignmentFamily::Degenerate => Some(vec![(0.5, 1.0)]),
            AssignmentFamily::TwoPoint => {
                let s = self.sigma2.sqrt();
                Some(vec![(0.5 - s, 0.5), (0.5 + s, 0.5)])
            }
            AssignmentFamily::Beta => None,
        }
    }

    /// Draw one cluster assignment probability.
    pub fn sample_q<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.family {
            AssignmentFamily::Degenerate => 0.5,
            AssignmentFamily::TwoPoint => {
                let s = self.sigma2.sqrt();
                if rng.random::<f64>() < 0.5 {
                    0.5 - s
                } else {
                    0.5 + s
                }
            }
            AssignmentFamily::Beta => {
                let a = self.beta_shape().expect("beta family");
                rand_distr::Beta::new(a, a)
                    .expect("valid shape by construction")
                    .sample(rng)
            }
        }
    }
}

// ===== Kappa moments =====

/// Moments of the assignment family used by the fixed-effects formulas:
/// `kappa_jk = E[q^j (1−q)^k]`, `eq1q = κ_{1,1} = E[q(1−q)] = (1−4σ²)/4`,
/// and `kappa = Var(q(1−q)) = κ_{2,2} − κ_{1,1}²`.
///
/// Invariants: `eq1q = (1−4σ²)/4` exactly for every mean-1/2 family with
/// variance σ²; `kappa = 0` whenever σ² = 0, and also for the two-point
/// family (where `q(1−q)` is constant).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KappaMoments {
    pub kappa: f64,
    pub kappa_31: f64,
    pub kappa_13: f64,
    pub eq1q: f64,
}

impl KappaMoments {
    /// `κ_{2,2} = E[q²(1−q)²]`, recovered from `kappa + eq1q²`.
    pub fn kappa_22(&self) -> f64 {
        self.kappa + self.eq1q * self.eq1q
    }
}

/// Exact analytic κ-moments of an assignment design.
pub fn kappa_moments(assignment: &AssignmentDesign) -> KappaMoments {
    let s2 = assignment.sigma2();
    let m = 0.25 - s2; // E[q(1-q)] for any mean-1/2, variance-s2 family
    match assignment.family() {
        AssignmentFamily::Degenerate | AssignmentFamily::TwoPoint => {
            // q(1-q) = 1/4 - s2 with probability one
            let e_q2 = 0.25 + s2; // E[q^2]
            KappaMoments {
                kappa: 0.0,
                kappa_31: m * e_q2,
                kappa_13: m * e_q2,
                eq1q: m,
            }
        }
        AssignmentFamily::Beta => {
            let a = assignment.beta_shape().expect("beta family");
            // kappa_jk = B(a+j, a+k)/B(a, a) via rising factorials:
            //   prod_{i<j}(a+i) * prod_{i<k}(a+i) / prod_{i<j+k}(2a+i)
            let kjk = |j: u32, k: u32| -> f64 {
                let mut num = 1.0;
                for i in 0..j {
                    num *= a + i as f64;
                }
                for i in 0..k {
                    num *= a + i as f64;
                }
                let mut den = 1.0;
                for i in 0..(j + k) {
                    den *= 2.0 * a + i as f64;
                }
                num / den
            };
            let k22 = kjk(2, 2);
            let k11 = kjk(1, 1);
            debug_assert!((k11 - m).abs() < 1e-14);
            KappaMoments {
                kappa: k22 - k11 * k11,
                kappa_31: kjk(3, 1),
                kappa_13: kjk(1, 3),
                eq1q: k11,
            }
        }
    }
}

// ===== Sample draws =====

/// One sampled unit as the estimators see it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleRecord {
    pub unit: u32,
    pub cluster: u32,
    pub w: bool,
    /// Realized outcome: `y1` if treated, `y0` otherwise.
    pub y: f64,
}

/// A realized draw of the design over a fixed population.
///
/// `records` is the estimator-facing view. The full indicator vectors and the
/// realized per-cluster `q_c` are oracle metadata: the assignment `W` exists
/// for every population unit (sampled or not), which is what makes the
/// moment checks and the enumeration oracle exact.
///
/// Invariants: `n == n1 + n0`; `records` agrees with `r`/`w`; every record's
/// `y` follows the realized-outcome rule.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDraw {
    pub records: Vec<SampleRecord>,
    pub n: usize,
    pub n1: usize,
    pub n0: usize,
    pub r: Vec<bool>,
    pub w: Vec<bool>,
    pub q: Vec<f64>,
}

/// Draw a sample with an explicit RNG. Draw order (documented for
/// reproducibility): per cluster — `q_c`, then the cluster indicator
/// `Bern(p_C)`, then per unit — `W_i ~ Bern(q_c)` always, and the unit
/// indicator `Bern(p_U)` only inside sampled clusters.
pub fn draw_sample_with_rng<R: Rng + ?Sized>(
    pop: &Population,
    sampling: &SamplingDesign,
    assignment: &AssignmentDesign,
    rng: &mut R,
) -> SampleDraw {
    let m = pop.n_units();
    let mut r = vec![false; m];
    let mut w = vec![false; m];
    let mut q = Vec::with_capacity(pop.n_clusters());
    let mut records = Vec::new();
    let (y0, y1) = (pop.y0(), pop.y1());
    for c in 0..pop.n_clusters() {
        let qc = assignment.sample_q(rng);
        q.push(qc);
        let cluster_in = rng.random::<f64>() < sampling.p_c();
        for i in pop.cluster_range(c) {
            let wi = rng.random::<f64>() < qc;
            w[i] = wi;
            if cluster_in && rng.random::<f64>() < sampling.p_u() {
                r[i] = true;
                records.push(SampleRecord {
                    unit: i as u32,
                    cluster: c as u32,
                    w: wi,
                    y: if wi { y1[i] } else { y0[i] },
                });
            }
        }
    }
    let n = records.len();
    let n1 = records.iter().filter(|rec| rec.w).count();
    let draw = SampleDraw { records, n, n1, n0: n - n1, r, w, q };
    debug_assert_eq!(draw.n, draw.n1 + draw.n0);
    draw
}

/// Draw a sample deterministically from a seed (stream index 1 of the seed;
/// index 0 is reserved for population generation, so passing the same seed to
/// both does not replay a stream).
pub fn draw_sample(
    pop: &Population,
    sampling: &SamplingDesign,
    assignment: &AssignmentDesign,
    seed: u64,
) -> SampleDraw {
    let mut rng = stream_rng(seed, 1);
    draw_sample_with_rng(pop, sampling, assignment, &mut rng)
}

// ===== Analytic moments =====

/// Mean, variance, and within-cluster covariance of one indicator process.
/// Between-cluster covariances are identically zero for all three processes
/// (clusters draw independently), recorded explicitly for the moment checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentRow {
    pub mean: f64,
    pub var: f64,
    pub within_cov: f64,
    pub between_cov: f64,
}

/// Analytic moments of the sampling indicator `R`, assignment indicator `W`,
/// and their product `RW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentTable {
    pub r: MomentRow,
    pub w: MomentRow,
    pub rw: MomentRow,
}

pub fn analytic_moments(sampling: &SamplingDesign, assignment: &AssignmentDesign) -> MomentTable {
    let (pc, pu) = (sampling.p_c(), sampling.p_u());
    let p = pc * pu;
    let s2 = assignment.sigma2();
    MomentTable {
        r: MomentRow {
            mean: p,
            var: p * (1.0 - p),
            within_cov: pc * (1.0 - pc) * pu * pu,
            between_cov: 0.0,
        },
        w: MomentRow {
            mean: 0.5,
            var: 0.25,
            within_cov: s2,
            between_cov: 0.0,
        },
        rw: MomentRow {
            mean: 0.5 * p,
            var: p * (2.0 - p) / 4.0,
            within_cov: pc * pu * pu * (1.0 - pc) / 4.0 + s2 * pc * pu * pu,
            between_cov: 0.0,
        },
    }
}

// ===== Empirical moments =====

/// Empirical counterpart of [`MomentTable`] over repeated draws, with Monte
/// Carlo standard errors; used to validate the analytic formulas.
#[derive(Debug, Clone, Copy)]
pub struct EmpiricalRow {
    pub mean: f64,
    pub var: f64,
    pub within_cov: f64,
    pub se_mean: f64,
    pub se_var: f64,
    pub se_cov: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct EmpiricalMoments {
    pub r: EmpiricalRow,
    pub w: EmpiricalRow,
    pub rw: EmpiricalRow,
    /// Empirical Cov(R_i, W_i) and its MC standard error; zero under the
    /// independence of sampling and assignment.
    pub rw_independence: (f64, f64),
}

/// Estimate the moment table empirically over `draws` independent draws.
///
/// Each draw contributes one unbiased per-draw statistic per target moment
/// (variances and covariances are centered at the analytic means, which are
/// elementary, so single-draw statistics stay unbiased); the MC standard
/// error is the standard deviation of the per-draw statistics over `sqrt(T)`.
pub fn empirical_moments(
    pop: &Population,
    sampling: &SamplingDesign,
    assignment: &AssignmentDesign,
    draws: u64,
    seed: u64,
) -> EmpiricalMoments {
    let table = analytic_moments(sampling, assignment);
    let m = pop.n_units() as f64;
    // per-draw statistic accumulators: mean and mean of squares
    const K: usize = 10; // r/w/rw x (mean, var, cov) + independence
    let mut acc = [(Neumaier::new(), Neumaier::new()); K];
    let push = |k: usize, x: f64, acc: &mut [(Neumaier, Neumaier); K]| {
        acc[k].0.add(x);
        acc[k].1.add(x * x);
    };
    // same-cluster ordered pair count
    let pairs: f64 = pop
        .sizes()
        .iter()
        .map(|&s| (s as f64) * (s as f64 - 1.0))
        .sum();
    assert!(pairs > 0.0, "moment checks need at least one cluster with two units");
    for t in 0..draws {
        let mut rng = stream_rng(seed, t + 1);
        let draw = draw_sample_with_rng(pop, sampling, assignment, &mut rng);
        let (mut sr, mut sw, mut srw, mut vr, mut vw, mut vrw, mut ind) =
            (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let (mut cr, mut cw, mut crw) = (0.0, 0.0, 0.0);
        for c in 0..pop.n_clusters() {
            let range = pop.cluster_range(c);
            // single-unit terms
            let (mut dr, mut dw, mut drw) = (0.0, 0.0, 0.0);
            for i in range.clone() {
                let ri = draw.r[i] as u8 as f64;
                let wi = draw.w[i] as u8 as f64;
                let rwi = ri * wi;
                sr += ri;
                sw += wi;
                srw += rwi;
                vr += (ri - table.r.mean) * (ri - table.r.mean);
                vw += (wi - table.w.mean) * (wi - table.w.mean);
                vrw += (rwi - table.rw.mean) * (rwi - table.rw.mean);
                ind += (ri - table.r.mean) * (wi - table.w.mean);
                dr += ri - table.r.mean;
                dw += wi - table.w.mean;
                drw += rwi - table.rw.mean;
            }
            // sum over ordered same-cluster pairs i != j of centered products:
            // (sum_i d_i)^2 - sum_i d_i^2
            let (mut qr, mut qw, mut qrw) = (0.0, 0.0, 0.0);
            for i in range {
                let ri = draw.r[i] as u8 as f64 - table.r.mean;
                let wi = draw.w[i] as u8 as f64 - table.w.mean;
                let rwi =
                    (draw.r[i] && draw.w[i]) as u8 as f64 - table.rw.mean;
                qr += ri * ri;
                qw += wi * wi;
                qrw += rwi * rwi;
            }
            cr += dr * dr - qr;
            cw += dw * dw - qw;
            crw += drw * drw - qrw;
        }
        push(0, sr / m, &mut acc);
        push(1, vr / m, &mut acc);
        push(2, cr / pairs, &mut acc);
        push(3, sw / m, &mut acc);
        push(4, vw / m, &mut acc);
        push(5, cw / pairs, &mut acc);
        push(6, srw / m, &mut acc);
        push(7, vrw / m, &mut acc);
        push(8, crw / pairs, &mut acc);
        push(9, ind / m, &mut acc);
    }
    let t = draws as f64;
    let finish = |k: usize| -> (f64, f64) {
        let mean = acc[k].0.total() / t;
        let var = (acc[k].1.total() / t - mean * mean).max(0.0);
        (mean, (var / t).sqrt())
    };
    let row = |a: usize, b: usize, c: usize| -> EmpiricalRow {
        let (mean, se_mean) = finish(a);
        let (var, se_var) = finish(b);
        let (cov, se_cov) = finish(c);
        EmpiricalRow { mean, var, within_cov: cov, se_mean, se_var, se_cov }
    };
    EmpiricalMoments {
        r: row(0, 1, 2),
        w: row(3, 4, 5),
        rw: row(6, 7, 8),
        rw_independence: finish(9),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{ClusterSizes, PopulationSpec, TauPattern};

    fn small_pop() -> Population {
        let spec = PopulationSpec::Design {
            clusters: 3,
            units_per_cluster: ClusterSizes::PerCluster(vec![3, 2, 4]),
            tau_pattern: TauPattern::Explicit(vec![1.0, -1.0, 0.5]),
            noise_sd: 1.0,
        };
        Population::generate(&spec, 12).unwrap()
    }

    #[test]
    fn design_validation() {
        assert!(SamplingDesign::new(0.0, 1.0).is_err());
        assert!(SamplingDesign::new(0.5, 1.5).is_err());
        assert!(SamplingDesign::new(1.0, 1.0).is_ok());
        assert!(AssignmentDesign::new(AssignmentFamily::Degenerate, 0.1).is_err());
        assert!(AssignmentDesign::two_point(0.0).is_err());
        assert!(AssignmentDesign::two_point(0.25).is_ok());
        assert!(AssignmentDesign::beta(0.25).is_err());
        assert!(AssignmentDesign::beta(0.0).is_err());
        assert!(AssignmentDesign::beta(0.08).is_ok());
    }

    #[test]
    fn kappa_closed_forms() {
        // degenerate: point mass at 1/2
        let k = kappa_moments(&AssignmentDesign::degenerate());
        assert_eq!(k.eq1q, 0.25);
        assert_eq!(k.kappa, 0.0);
        assert!((k.kappa_31 - 0.0625).abs() < 1e-15);
        assert!((k.kappa_13 - 0.0625).abs() < 1e-15);
        // two-point sigma2 = 0.09: q(1-q) constant at 0.16
        let k = kappa_moments(&AssignmentDesign::two_point(0.09).unwrap());
        assert_eq!(k.kappa, 0.0);
        assert!((k.eq1q - 0.16).abs() < 1e-15);
        assert!((k.kappa_31 - 0.16 * 0.34).abs() < 1e-15);
        // uniform = Beta(1,1) <=> sigma2 = 1/12: kappa_31 = B(4,2)/B(1,1) = 1/20
        let u = AssignmentDesign::beta(1.0 / 12.0).unwrap();
        assert!((u.beta_shape().unwrap() - 1.0).abs() < 1e-12);
        let k = kappa_moments(&u);
        assert!((k.kappa_31 - 0.05).abs() < 1e-14);
        assert!((k.kappa_13 - 0.05).abs() < 1e-14);
        assert!((k.eq1q - (0.25 - 1.0 / 12.0)).abs() < 1e-14);
        // kappa = k22 - m^2 = 1/30 - 1/36 = 1/180 for the uniform
        assert!((k.kappa - 1.0 / 180.0).abs() < 1e-14);
        // sigma2 = 0.05 <=> alpha = 2: kappa_31 = B(5,3)/B(2,2) = 2/35
        let b = AssignmentDesign::beta(0.05).unwrap();
        assert!((b.beta_shape().unwrap() - 2.0).abs() < 1e-12);
        let k = kappa_moments(&b);
        assert!((k.kappa_31 - 2.0 / 35.0).abs() < 1e-14);
    }

    #[test]
    fn beta_kappas_match_sampling() {
        // Monte Carlo cross-check of the rising-factorial closed form.
        use rand::SeedableRng;
        let design = AssignmentDesign::beta(0.08).unwrap();
        let k = kappa_moments(&design);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(17);
        let draws = 400_000;
        let (mut m11, mut m31, mut m22) = (0.0, 0.0, 0.0);
        for _ in 0..draws {
            let q = design.sample_q(&mut rng);
            m11 += q * (1.0 - q);
            m31 += q * q * q * (1.0 - q);
            m22 += q * q * (1.0 - q) * (1.0 - q);
        }
        let t = draws as f64;
        assert!((m11 / t - k.eq1q).abs() < 4.0 * 0.1 / t.sqrt());
        assert!((m31 / t - k.kappa_31).abs() < 4.0 * 0.1 / t.sqrt());
        assert!(((m22 / t - (m11 / t) * (m11 / t)) - k.kappa).abs() < 4.0 * 0.1 / t.sqrt());
    }

    #[test]
    fn draw_is_deterministic_and_consistent() {
        let pop = small_pop();
        let s = SamplingDesign::new(0.5, 0.8).unwrap();
        let a = AssignmentDesign::two_point(0.09).unwrap();
        let d1 = draw_sample(&pop, &s, &a, 42);
        let d2 = draw_sample(&pop, &s, &a, 42);
        assert_eq!(d1, d2);
        assert_eq!(d1.n, d1.n1 + d1.n0);
        for rec in &d1.records {
            let i = rec.unit as usize;
            assert!(d1.r[i]);
            assert_eq!(d1.w[i], rec.w);
            let want = if rec.w { pop.y1()[i] } else { pop.y0()[i] };
            assert_eq!(rec.y, want);
            assert_eq!(pop.cluster_of(i), rec.cluster as usize);
        }
        // W exists for all units regardless of R
        assert_eq!(d1.w.len(), pop.n_units());
        assert_eq!(d1.q.len(), pop.n_clusters());
    }

    #[test]
    fn full_sampling_takes_every_unit() {
        let pop = small_pop();
        let s = SamplingDesign::new(1.0, 1.0).unwrap();
        let a = AssignmentDesign::degenerate();
        let d = draw_sample(&pop, &s, &a, 1);
        assert_eq!(d.n, pop.n_units());
    }

    #[test]
    fn all_or_nothing_assignment_at_quarter() {
        let pop = small_pop();
        let s = SamplingDesign::new(1.0, 1.0).unwrap();
        let a = AssignmentDesign::two_point(0.25).unwrap();
        for seed in 0..50 {
            let d = draw_sample(&pop, &s, &a, seed);
            for c in 0..pop.n_clusters() {
                let r = pop.cluster_range(c);
                let first = d.w[r.start];
                assert!(r.clone().all(|i| d.w[i] == first), "cluster {c} mixed");
                assert!(d.q[c] == 0.0 || d.q[c] == 1.0);
            }
        }
    }

    #[test]
    fn cluster_inclusion_frequency_matches_p_c() {
        // two-cluster population, p_c = 0.5, p_u = 1: over many seeds the
        // fraction of draws with cluster 0 fully present is ~0.5
        let pop = Population::four_unit_reference();
        let s = SamplingDesign::new(0.5, 1.0).unwrap();
        let a = AssignmentDesign::degenerate();
        let draws = 100_000u64;
        let mut hits = 0u64;
        for t in 0..draws {
            let mut rng = stream_rng(99, t);
            let d = draw_sample_with_rng(&pop, &s, &a, &mut rng);
            if d.r[0] && d.r[1] {
                hits += 1;
            }
        }
        let frac = hits as f64 / draws as f64;
        assert!((frac - 0.5).abs() < 0.005, "got {frac}");
    }

    #[test]
    fn empirical_moments_match_analytic_at_one_grid_point() {
        let pop = small_pop();
        let s = SamplingDesign::new(0.5, 0.5).unwrap();
        let a = AssignmentDesign::two_point(0.09).unwrap();
        let table = analytic_moments(&s, &a);
        let emp = empirical_moments(&pop, &s, &a, 30_000, 5);
        for (an, em) in [(table.r, emp.r), (table.w, emp.w), (table.rw, emp.rw)] {
            assert!((em.mean - an.mean).abs() <= 4.0 * em.se_mean);
            assert!((em.var - an.var).abs() <= 4.0 * em.se_var);
            assert!((em.within_cov - an.within_cov).abs() <= 4.0 * em.se_cov);
        }
        let (ind, se) = emp.rw_independence;
        assert!(ind.abs() <= 4.0 * se);
    }

    #[test]
    fn table3_spot_value() {
        // p_c=0.5, p_u=1, sigma2=0.25: within-cluster Cov(RW) = 0.1875
        let s = SamplingDesign::new(0.5, 1.0).unwrap();
        let a = AssignmentDesign::two_point(0.25).unwrap();
        let t = analytic_moments(&s, &a);
        assert!((t.rw.within_cov - 0.1875).abs() < 1e-15);
        // p_c=1 kills the R within-cluster covariance
        let s1 = SamplingDesign::new(1.0, 0.7).unwrap();
        assert_eq!(analytic_moments(&s1, &a).r.within_cov, 0.0);
        // sigma2=0 kills the W within-cluster covariance
        let a0 = AssignmentDesign::degenerate();
        assert_eq!(analytic_moments(&s, &a0).w.within_cov, 0.0);
    }
}
