//! Simulation harness: correlated z-test p-values, empirical CDFs of merged
//! p-values, the adversarial permutation model, discretization and the
//! borderline-ε experiment.
//!
//! Every replication `i` draws from its own ChaCha8 stream `(seed, i)`, so
//! results do not depend on how replications are scheduled.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discovery::{discovery_matrix, DiscoveryMatrix};
use crate::error::{MergeError, Result};
use crate::method::{MergeMethod, MethodSpec};
use crate::numeric::norm_cdf;
use crate::pvec::{sorted_copy, PVector};

pub const DEFAULT_MU_ALT: f64 = -5.0;
pub const DEFAULT_CDF_POINTS: usize = 512;
pub const DEFAULT_DISCRETIZATION: u64 = 10_000;
const EPSILON_ITERATIONS: usize = 80;

fn substream(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Single-factor Gaussian model: `K1` alternatives with mean `mu_alt` first,
/// then nulls; pairwise correlation `rho`, or `-rho` against the last
/// observation when `flip_last` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZTestModel {
    pub k: usize,
    pub k1: usize,
    pub mu_alt: f64,
    pub rho: f64,
    pub flip_last: bool,
    pub seed: u64,
    /// Replace each p-value by `⌈Dp⌉/D` before merging.
    pub discretize: Option<u64>,
}

impl ZTestModel {
    pub fn new(k: usize, k1: usize, rho: f64, seed: u64) -> Result<Self> {
        let m = Self { k, k1, mu_alt: DEFAULT_MU_ALT, rho, flip_last: false, seed, discretize: None };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k1 > self.k {
            return Err(MergeError::Range(format!("need 0 <= K1 <= K and K >= 1, got K={} K1={}", self.k, self.k1)));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(MergeError::Range(format!("rho = {} outside [0, 1)", self.rho)));
        }
        if !self.mu_alt.is_finite() {
            return Err(MergeError::Range("mu_alt must be finite".into()));
        }
        if self.discretize == Some(0) {
            return Err(MergeError::Range("discretization D must be positive".into()));
        }
        Ok(())
    }

    /// The `rep`-th replication, unsorted.
    pub fn draw(&self, rep: u64) -> Vec<f64> {
        let mut rng = substream(self.seed, rep);
        let z: f64 = rng.sample(StandardNormal);
        let (a, b) = (self.rho.sqrt(), (1.0 - self.rho).sqrt());
        (0..self.k)
            .map(|i| {
                let mu = if i < self.k1 { self.mu_alt } else { 0.0 };
                let e: f64 = rng.sample(StandardNormal);
                let common = if self.flip_last && i + 1 == self.k { -a * z } else { a * z };
                let p = norm_cdf(mu + common + b * e);
                match self.discretize {
                    Some(d) => discretize_value(p, d),
                    None => p,
                }
            })
            .collect()
    }
}

/// Replication zero of the model.
pub fn draw_pvalues(model: &ZTestModel) -> Result<PVector> {
    model.validate()?;
    PVector::new(model.draw(0))
}

/// Equispaced thresholds `0, u/(n-1), …, u`.
pub fn threshold_grid(n: usize, upper: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![upper],
        _ => (0..n).map(|i| upper * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Merged p-values per replication, `out[m][rep]`, with every method applied
/// to the same draws.
pub fn simulate_merged<D>(draw: D, methods: &[MergeMethod], reps: usize) -> Vec<Vec<f64>>
where
    D: Fn(u64) -> Vec<f64> + Sync,
{
    let per_rep: Vec<Vec<f64>> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let sorted: Vec<f64> = sorted_copy(&draw(rep)).into_iter().map(|x| x.min(1.0)).collect();
            methods.iter().map(|m| m.merge_sorted(&sorted)).collect()
        })
        .collect();
    (0..methods.len()).map(|m| per_rep.iter().map(|row| row[m]).collect()).collect()
}

/// Fraction of `values` at or below each threshold.
pub fn cdf_at(values: &[f64], grid: &[f64]) -> Vec<(f64, f64)> {
    let sorted = sorted_copy(values);
    let n = sorted.len().max(1) as f64;
    grid.iter().map(|&t| (t, sorted.partition_point(|&v| v <= t) as f64 / n)).collect()
}

/// Empirical CDF of each method's merged p-value over `reps` replications.
pub fn empirical_cdfs(model: &ZTestModel, methods: &[MergeMethod], reps: usize, grid: &[f64]) -> Result<Vec<Vec<(f64, f64)>>> {
    model.validate()?;
    check_methods(methods, model.k)?;
    if reps == 0 {
        return Err(MergeError::Range("reps must be positive".into()));
    }
    let merged = simulate_merged(|rep| model.draw(rep), methods, reps);
    Ok(merged.iter().map(|v| cdf_at(v, grid)).collect())
}

pub fn empirical_cdf(model: &ZTestModel, method: &MergeMethod, reps: usize, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    Ok(empirical_cdfs(model, std::slice::from_ref(method), reps, grid)?.remove(0))
}

fn check_methods(methods: &[MergeMethod], k: usize) -> Result<()> {
    match methods.iter().find(|m| m.arity() != k) {
        Some(m) => Err(MergeError::Range(format!("method {} bound to K = {}, model has K = {k}", m.spec(), m.arity()))),
        None => Ok(()),
    }
}

/// Exceedance check `Q̂(F ≤ t)` against `t` for a p-variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Exceedance {
    pub threshold: f64,
    pub fraction: f64,
    pub stderr: f64,
}

impl Exceedance {
    /// Whether the estimate stays within `t + z·stderr`. The standard error
    /// is taken at the bound `t`, floored at one replication.
    pub fn is_valid(&self, z: f64, reps: usize) -> bool {
        self.fraction <= self.threshold + z * self.stderr.max(1.0 / reps as f64)
    }
}

pub fn exceedance(values: &[f64], grid: &[f64]) -> Vec<Exceedance> {
    let n = values.len() as f64;
    cdf_at(values, grid)
        .into_iter()
        .map(|(t, fraction)| {
            let q = t.clamp(0.0, 1.0);
            Exceedance { threshold: t, fraction, stderr: (q * (1.0 - q) / n).sqrt() }
        })
        .collect()
}

/// Componentwise `⌈Dp⌉/D`.
pub fn discretize(p: &PVector, d: u64) -> Result<PVector> {
    if d == 0 {
        return Err(MergeError::Range("D must be at least 1".into()));
    }
    PVector::new(p.values().iter().map(|&x| discretize_value(x, d)).collect())
}

fn discretize_value(x: f64, d: u64) -> f64 {
    let df = d as f64;
    (x * df).ceil() / df
}

/// Scenario `(ε, 2ε, …, K1·ε, 1, …, 1)` of length `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteScenario {
    pub k: usize,
    pub k1: usize,
    pub alpha_target: f64,
}

impl DiscreteScenario {
    pub fn new(k: usize, k1: usize) -> Result<Self> {
        let s = Self { k, k1, alpha_target: 0.01 };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if self.k1 == 0 || self.k1 > self.k {
            return Err(MergeError::Range(format!("need 1 <= K1 <= K, got K={} K1={}", self.k, self.k1)));
        }
        if !(self.alpha_target > 0.0 && self.alpha_target < 1.0) {
            return Err(MergeError::Range(format!("alpha_target = {} outside (0, 1)", self.alpha_target)));
        }
        Ok(())
    }

    /// Ascending scenario vector, optionally discretized.
    pub fn vector(&self, eps: f64, discretize: Option<u64>) -> Vec<f64> {
        let mut v: Vec<f64> = (1..=self.k1).map(|i| (i as f64 * eps).min(1.0)).collect();
        if let Some(d) = discretize {
            v.iter_mut().for_each(|x| *x = discretize_value(*x, d));
        }
        v.resize(self.k, 1.0);
        v
    }
}

/// Largest `ε ∈ (0, 1/K1]` with `F(ε, 2ε, …, K1ε, 1, …, 1) ≤ α`.
pub fn borderline_epsilon(s: &DiscreteScenario, method: &MergeMethod) -> Result<f64> {
    borderline_epsilon_with(s, method, None)
}

/// [`borderline_epsilon`] with the small p-values discretized to the grid
/// `1/D` before merging.
pub fn borderline_epsilon_with(s: &DiscreteScenario, method: &MergeMethod, discretize: Option<u64>) -> Result<f64> {
    s.validate()?;
    check_methods(std::slice::from_ref(method), s.k)?;
    let f = |log_eps: f64| method.merge_sorted(&s.vector(log_eps.exp(), discretize));
    let mut hi = -(s.k1 as f64).ln();
    if f(hi) <= s.alpha_target {
        return Ok(hi.exp());
    }
    let mut lo = f64::MIN_POSITIVE.ln();
    if f(lo) > s.alpha_target {
        return Err(MergeError::NoRejection(format!("{} cannot reach {} in this scenario", method.spec(), s.alpha_target)));
    }
    for _ in 0..EPSILON_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if f(mid) <= s.alpha_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo.exp())
}

/// With probability `Kα` a uniformly random permutation of
/// `(α, 2α, …, Kα)`, otherwise all ones. Each margin is a p-variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialModel {
    pub k: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl AdversarialModel {
    pub fn draw(&self, rep: u64) -> Vec<f64> {
        let mut rng = substream(self.seed, rep);
        if rng.random::<f64>() < self.k as f64 * self.alpha {
            let mut v: Vec<f64> = (1..=self.k).map(|i| i as f64 * self.alpha).collect();
            v.shuffle(&mut rng);
            v
        } else {
            vec![1.0; self.k]
        }
    }
}

pub fn adversarial_permutation_model(k: usize, alpha: f64, seed: u64) -> Result<AdversarialModel> {
    if k == 0 {
        return Err(MergeError::Range("K must be positive".into()));
    }
    if alpha.is_nan() || alpha <= 0.0 || k as f64 * alpha > 1.0 {
        return Err(MergeError::Range(format!("need 0 < K·alpha <= 1, got K={k} alpha={alpha}")));
    }
    Ok(AdversarialModel { k, alpha, seed })
}

/// Element-wise median of discovery matrices of equal shape.
pub fn median_matrix(dms: &[DiscoveryMatrix]) -> Result<DiscoveryMatrix> {
    let first = dms.first().ok_or(MergeError::EmptySet)?;
    if dms.iter().any(|d| d.corner != first.corner) {
        return Err(MergeError::Range("discovery matrices differ in shape".into()));
    }
    let median = |pick: fn(&DiscoveryMatrix) -> &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        (0..first.corner)
            .map(|l| {
                (0..=l)
                    .map(|j| {
                        let mut xs: Vec<f64> = dms.iter().map(|d| pick(d)[l][j]).collect();
                        xs.sort_by(f64::total_cmp);
                        let n = xs.len();
                        if n % 2 == 1 {
                            xs[n / 2]
                        } else {
                            0.5 * (xs[n / 2 - 1] + xs[n / 2])
                        }
                    })
                    .collect()
            })
            .collect()
    };
    Ok(DiscoveryMatrix {
        corner: first.corner,
        method_tag: first.method_tag.clone(),
        alphas: first.alphas.clone(),
        dm: median(|d| &d.dm),
        dm_prime: median(|d| &d.dm_prime),
    })
}

/// Element-wise median of the discovery matrices of `runs` model draws.
pub fn median_discovery_matrix(model: &ZTestModel, family: &MethodSpec, corner: usize, runs: usize) -> Result<DiscoveryMatrix> {
    model.validate()?;
    let dms = (0..runs as u64).map(|rep| discovery_matrix(&PVector::new(model.draw(rep))?, family, corner)).collect::<Result<Vec<_>>>()?;
    median_matrix(&dms)
}
