//! P-to-e calibrators, weighted p-to-e merging and the sufficient
//! admissibility condition for calibrator-induced merging functions.

use serde::Serialize;

use crate::classic::{check_coeffs, MCoefficients};
use crate::error::{MergeError, Result};
use crate::numeric::{harmonic_number, integrate, snapped_ceil, CompensatedSum};
use crate::pvec::{ExtReal, PVector};

const QUAD_TOL: f64 = 1e-10;
const CONVEXITY_GRID: usize = 512;
const CONVEXITY_THRESHOLD: f64 = 1e-9;

/// Shape of a calibrator on its strictly decreasing segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvexityClass {
    StrictlyConvex,
    StrictlyConcave,
    PiecewiseConstant,
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CalibratorKind {
    /// `K 1{ℓ_K x ≤ 1} / ⌈K ℓ_K x⌉`.
    GridHarmonic { ell: f64 },
    /// `(K/k) 1_{[0, k/K]}`.
    OFamily { k: usize },
    /// Calibrator of the starred power-mean merger.
    MStar { r: f64, c: f64, d: f64 },
    /// Right-continuous-from-the-left step function: `values[i]` on
    /// `(knots[i-1], knots[i]]`, with `knots[-1] = 0`.
    Step { knots: Vec<f64>, values: Vec<f64> },
    /// `K` on `[0, η]`, then `f((x - η)/(1 - Kη))` on `(η, 1 - (K-1)η]`.
    Transformed { base: Box<Calibrator>, eta: f64 },
}

/// A decreasing function `f: [0, ∞) → [0, ∞]` with `f = 0` above one.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibrator {
    kind: CalibratorKind,
    k: usize,
    eta: Option<f64>,
    convexity: ConvexityClass,
    integral_on_unit: f64,
    admissible: bool,
    at_zero: f64,
    breakpoints: Vec<f64>,
}

impl Calibrator {
    fn build(kind: CalibratorKind, k: usize, eta: Option<f64>, convexity: ConvexityClass, at_zero: f64, breakpoints: Vec<f64>) -> Self {
        let mut cal = Calibrator { kind, k, eta, convexity, integral_on_unit: f64::NAN, admissible: false, at_zero, breakpoints };
        cal.integral_on_unit = integrate(|x| cal.eval_f64(x), 0.0, 1.0, &cal.breakpoints, QUAD_TOL);
        cal.admissible = at_zero == f64::INFINITY && (cal.integral_on_unit - 1.0).abs() <= 1e-9;
        cal
    }

    pub fn kind(&self) -> &CalibratorKind {
        &self.kind
    }

    /// Number of p-values the calibrator was constructed for.
    pub fn arity(&self) -> usize {
        self.k
    }

    /// Length of the initial plateau at height `K`, if declared.
    pub fn eta(&self) -> Option<f64> {
        self.eta
    }

    pub fn convexity_class(&self) -> ConvexityClass {
        self.convexity
    }

    pub fn integral_on_unit(&self) -> f64 {
        self.integral_on_unit
    }

    /// `f(0) = ∞` and `∫₀¹ f = 1`.
    pub fn is_admissible(&self) -> bool {
        self.admissible
    }

    /// Points where `f` jumps or changes its analytic form.
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn eval(&self, x: f64) -> ExtReal {
        ExtReal::new(self.eval_f64(x)).expect("calibrator values are never NaN")
    }

    /// Like [`Calibrator::eval`] but returning `f64::INFINITY` for `f(0) = ∞`.
    pub fn eval_f64(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return self.at_zero;
        }
        if x > 1.0 {
            return 0.0;
        }
        let kf = self.k as f64;
        match &self.kind {
            CalibratorKind::GridHarmonic { ell } => {
                let q = snapped_ceil(kf * ell * x);
                if q > kf {
                    0.0
                } else {
                    kf / q
                }
            }
            CalibratorKind::OFamily { k } => {
                if x * kf <= *k as f64 {
                    kf / *k as f64
                } else {
                    0.0
                }
            }
            CalibratorKind::MStar { r, c, d } => mstar_value(*r, kf, *c, *d, x),
            CalibratorKind::Step { knots, values } => {
                let i = knots.partition_point(|&t| t < x);
                values.get(i).copied().unwrap_or(0.0)
            }
            CalibratorKind::Transformed { base, eta } => {
                let tau = 1.0 - (kf - 1.0) * eta;
                if x <= *eta {
                    kf
                } else if x <= tau {
                    base.eval_f64((x - eta) / (1.0 - kf * eta))
                } else {
                    0.0
                }
            }
        }
    }
}

fn mstar_value(r: f64, kf: f64, c: f64, d: f64, x: f64) -> f64 {
    if c == 0.0 {
        // r in [1/(K-1), K-1): ((r+1)/r)(1 - x^r)_+
        return (r + 1.0) / r * (1.0 - x.powf(r)).max(0.0);
    }
    if x <= c {
        return kf;
    }
    if x >= d {
        return 0.0;
    }
    let ratio = if r == 0.0 {
        (x / d).ln() / (c / d).ln()
    } else {
        // (x^r - d^r)/(c^r - d^r), written in ratios to d to avoid overflow.
        ((x / d).powf(r) - 1.0) / ((c / d).powf(r) - 1.0)
    };
    kf * ratio.clamp(0.0, 1.0)
}

/// The grid harmonic calibrator `x ↦ K 1{ℓ_K x ≤ 1} / ⌈K ℓ_K x⌉`, `f(0) = ∞`.
pub fn grid_harmonic_calibrator(k: usize) -> Result<Calibrator> {
    if k < 2 {
        return Err(MergeError::Range(format!("K = {k} < 2")));
    }
    let ell = harmonic_number(k);
    let kf = k as f64;
    let breaks = (1..=k).map(|j| j as f64 / (kf * ell)).collect();
    let eta = 1.0 / (kf * ell);
    Ok(Calibrator::build(CalibratorKind::GridHarmonic { ell }, k, Some(eta), ConvexityClass::PiecewiseConstant, f64::INFINITY, breaks))
}

/// `(K/k) 1_{[0, k/K]}`, inducing the order-statistic merger `G_{k,K}`.
/// For `k = 1` this is the Bonferroni calibrator with `f(0) = ∞`; for
/// `k > 1` we set `f(0) = K`.
pub fn o_family_calibrator(k: usize, big_k: usize) -> Result<Calibrator> {
    if big_k < 2 || k == 0 || k > big_k {
        return Err(MergeError::Range(format!("need 1 <= k <= K and K >= 2, got k = {k}, K = {big_k}")));
    }
    let at_zero = if k == 1 { f64::INFINITY } else { big_k as f64 };
    let eta = if k == 1 { None } else { Some(0.0) };
    Ok(Calibrator::build(
        CalibratorKind::OFamily { k },
        big_k,
        eta,
        ConvexityClass::PiecewiseConstant,
        at_zero,
        vec![k as f64 / big_k as f64],
    ))
}

/// Calibrator of `F*_{r,K}`. Requires `K ≥ 3` and `r < K - 1`; `coeffs`
/// must be solved for `(r, K)`. `f(0) = ∞` in every branch.
pub fn mstar_calibrator(r: f64, k: usize, coeffs: &MCoefficients) -> Result<Calibrator> {
    if k < 3 {
        return Err(MergeError::Range(format!("K = {k} < 3")));
    }
    let kf = k as f64;
    if r.is_nan() || r >= kf - 1.0 || r == f64::NEG_INFINITY {
        return Err(MergeError::Range(format!("r = {r} outside (-inf, K-1) for K = {k}")));
    }
    check_coeffs(k, r, coeffs)?;
    let convexity = if r < 1.0 {
        ConvexityClass::StrictlyConvex
    } else if r > 1.0 {
        ConvexityClass::StrictlyConcave
    } else {
        ConvexityClass::Other
    };
    let (c, d) = (coeffs.c_r, coeffs.d_r);
    let (eta, breaks) = if c == 0.0 { (0.0, vec![]) } else { (c, vec![c, d]) };
    Ok(Calibrator::build(CalibratorKind::MStar { r, c, d }, k, Some(eta), convexity, f64::INFINITY, breaks))
}

/// Decreasing step calibrator taking `values[i]` on `(knots[i-1], knots[i]]`.
pub fn step_calibrator(k: usize, knots: Vec<f64>, values: Vec<f64>, at_zero: f64) -> Result<Calibrator> {
    if knots.len() != values.len() || knots.is_empty() {
        return Err(MergeError::Range("knots and values must be non-empty and of equal length".into()));
    }
    let sorted = knots.windows(2).all(|w| w[0] < w[1]) && knots[0] > 0.0 && knots[knots.len() - 1] <= 1.0;
    let decreasing = values.windows(2).all(|w| w[0] >= w[1]) && values.iter().all(|v| *v >= 0.0 && v.is_finite());
    if !sorted || !decreasing || at_zero < values[0] {
        return Err(MergeError::NonMonotone("step calibrator must be decreasing on increasing knots in (0, 1]".into()));
    }
    let breaks = knots.clone();
    Ok(Calibrator::build(CalibratorKind::Step { knots, values }, k, None, ConvexityClass::PiecewiseConstant, at_zero, breaks))
}

/// Compress `f` into `(η, 1 - (K-1)η]` and put a plateau of height `K` on
/// `[0, η]`, for `η ∈ [0, 1/K]`.
pub fn transform_calibrator(f: &Calibrator, eta: f64) -> Result<Calibrator> {
    let kf = f.k as f64;
    if !(0.0..=1.0 / kf).contains(&eta) {
        return Err(MergeError::Range(format!("eta = {eta} outside [0, 1/K]")));
    }
    let scale = 1.0 - kf * eta;
    let tau = 1.0 - (kf - 1.0) * eta;
    let mut breaks: Vec<f64> = vec![eta, tau];
    breaks.extend(f.breakpoints.iter().map(|b| eta + scale * b));
    let plateau = eta + scale * f.eta.unwrap_or(0.0);
    let at_zero = if f.at_zero == f64::INFINITY { f64::INFINITY } else { kf };
    Ok(Calibrator::build(CalibratorKind::Transformed { base: Box::new(f.clone()), eta }, f.k, Some(plateau), f.convexity, at_zero, breaks))
}

/// Outcome of checking the sufficient admissibility condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub satisfied: bool,
    pub eta: f64,
    pub witnesses: Vec<String>,
}

/// Numerically check: `f = K` on `(0, η]`, `f(η+) ∈ (K/(K-1), K]`, `f`
/// strictly convex or strictly concave on `(η, τ]` with `τ = 1 - (K-1)η`,
/// and `f(1) = 0`. Failed clauses are returned as witnesses.
pub fn check_admissibility_condition(f: &Calibrator, k: usize) -> AdmissibilityReport {
    let kf = k as f64;
    let eta = f.eta.unwrap_or(0.0);
    let tau = 1.0 - (kf - 1.0) * eta;
    let mut witnesses = Vec::new();
    if f.k != k {
        witnesses.push(format!("calibrator built for K = {}, checked with K = {k}", f.k));
    }
    if !(0.0..1.0 / kf).contains(&eta) {
        witnesses.push(format!("eta = {eta} not in [0, 1/K)"));
    }
    if eta > 0.0 {
        for i in 1..=64 {
            let x = eta * i as f64 / 64.0;
            let v = f.eval_f64(x);
            if (v - kf).abs() > 1e-9 * kf {
                witnesses.push(format!("f({x}) = {v} differs from K on (0, eta]"));
                break;
            }
        }
    }
    let jump = f.eval_f64(eta + 1e-12 * (tau - eta).max(f64::MIN_POSITIVE));
    if !(jump > kf / (kf - 1.0) && jump <= kf * (1.0 + 1e-12)) {
        witnesses.push(format!("f(eta+) = {jump} outside (K/(K-1), K]"));
    }
    let numeric = numeric_convexity(f, eta, tau);
    match (f.convexity, numeric) {
        (ConvexityClass::StrictlyConvex, ConvexityClass::StrictlyConvex)
        | (ConvexityClass::StrictlyConcave, ConvexityClass::StrictlyConcave) => {}
        (declared, found) => witnesses
            .push(format!("not strictly convex or concave on (eta, tau]: declared {declared:?}, second differences indicate {found:?}")),
    }
    let at_one = f.eval_f64(1.0);
    if at_one != 0.0 {
        witnesses.push(format!("f(1) = {at_one} is not zero"));
    }
    AdmissibilityReport { satisfied: witnesses.is_empty(), eta, witnesses }
}

fn numeric_convexity(f: &Calibrator, eta: f64, tau: f64) -> ConvexityClass {
    if tau <= eta {
        return ConvexityClass::Other;
    }
    let h = (tau - eta) / CONVEXITY_GRID as f64;
    let vals: Vec<f64> = (1..=CONVEXITY_GRID).map(|i| f.eval_f64(eta + h * i as f64)).collect();
    let second: Vec<f64> = vals.windows(3).map(|w| w[0] - 2.0 * w[1] + w[2]).collect();
    if second.iter().all(|&s| s > CONVEXITY_THRESHOLD) {
        ConvexityClass::StrictlyConvex
    } else if second.iter().all(|&s| s < -CONVEXITY_THRESHOLD) {
        ConvexityClass::StrictlyConcave
    } else if second.iter().all(|&s| s.abs() <= CONVEXITY_THRESHOLD) {
        ConvexityClass::Other
    } else {
        ConvexityClass::PiecewiseConstant
    }
}

/// A point of the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightVector {
    lambdas: Vec<f64>,
}

impl WeightVector {
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() || lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(MergeError::Range("weights must be finite and non-negative".into()));
        }
        let total: f64 = lambdas.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(MergeError::Range(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { lambdas })
    }

    pub fn uniform(k: usize) -> Self {
        Self { lambdas: vec![1.0 / k as f64; k] }
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }
}

/// `Σ λ_k f_k(p_k)`, saturating at `+∞`.
pub fn p_to_e_merge(p: &PVector, fs: &[Calibrator], w: &WeightVector) -> Result<ExtReal> {
    if fs.len() != p.len() || w.lambdas.len() != p.len() {
        return Err(MergeError::Range(format!("{} p-values, {} calibrators, {} weights", p.len(), fs.len(), w.lambdas.len())));
    }
    let mut acc = CompensatedSum::new();
    for ((&pk, f), &lam) in p.values().iter().zip(fs).zip(&w.lambdas) {
        let e = f.eval(pk).scale(lam);
        if e.is_infinite() {
            return Ok(ExtReal::INFINITY);
        }
        acc.add(e.value());
    }
    Ok(ExtReal::new(acc.value()).expect("finite sum"))
}

/// Reciprocal of the p-to-e merge, capped at one.
pub fn naive_detour_merge(p: &PVector, fs: &[Calibrator], w: &WeightVector) -> Result<f64> {
    Ok(e_to_p(p_to_e_merge(p, fs, w)?))
}

/// `1/e ∧ 1`, with `1/∞ = 0`.
pub fn e_to_p(e: ExtReal) -> f64 {
    if e.is_infinite() {
        0.0
    } else if e.value() <= 1.0 {
        1.0
    } else {
        1.0 / e.value()
    }
}
