//! Classic merging families: Bonferroni, Simes, Hommel, the order-statistic
//! (O) family and the power-mean (M) family with its coefficient solver.

use std::collections::HashMap;
use std::sync::{OnceLock, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{MergeError, Result};
use crate::numeric::{exprel, harmonic_number, CompensatedSum};
use crate::pvec::PVector;

/// `K · min(p) ∧ 1`.
pub fn bonferroni(p: &PVector) -> f64 {
    if p.has_zero() {
        return 0.0;
    }
    bonferroni_sorted(p.sorted())
}

pub(crate) fn bonferroni_sorted(sorted: &[f64]) -> f64 {
    (sorted.len() as f64 * sorted[0]).min(1.0)
}

/// Rüger's order-statistic merger `(K/k) p_(k) ∧ 1`.
pub fn o_family(p: &PVector, k: usize) -> Result<f64> {
    let n = p.len();
    if k == 0 || k > n {
        return Err(MergeError::Range(format!("k = {k} outside 1..={n}")));
    }
    if p.has_zero() {
        return Ok(0.0);
    }
    Ok((n as f64 / k as f64 * p.sorted()[k - 1]).min(1.0))
}

/// Simes function `min_k (K/k) p_(k) ∧ 1`.
///
/// Not a valid merging function under arbitrary dependence; it is the
/// pointwise lower bound of every symmetric one.
pub fn simes(p: &PVector) -> f64 {
    simes_sorted(p.sorted()).min(1.0)
}

pub(crate) fn simes_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    sorted.iter().enumerate().map(|(i, &q)| n * q / (i + 1) as f64).fold(f64::INFINITY, f64::min)
}

/// Hommel's function `ℓ_K · S_K ∧ 1`.
pub fn hommel(p: &PVector) -> f64 {
    hommel_sorted(p.sorted())
}

pub(crate) fn hommel_sorted(sorted: &[f64]) -> f64 {
    let scale = harmonic_number(sorted.len()) * sorted.len() as f64;
    sorted.iter().enumerate().map(|(i, &q)| scale * q / (i + 1) as f64).fold(f64::INFINITY, f64::min).min(1.0)
}

/// Power mean `M_{r,K}` with the limiting cases `r ∈ {-inf, 0, +inf}`.
/// For `r < 0` a zero entry makes the mean zero.
pub fn power_mean(xs: &[f64], r: f64) -> f64 {
    assert!(!xs.is_empty(), "power mean of an empty slice");
    let n = xs.len() as f64;
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if r == f64::NEG_INFINITY {
        return lo;
    }
    if r == f64::INFINITY {
        return hi;
    }
    if r == 0.0 {
        if lo == 0.0 {
            return 0.0;
        }
        let mut acc = CompensatedSum::new();
        xs.iter().for_each(|x| acc.add(x.ln()));
        return (acc.value() / n).exp();
    }
    // Factor out the dominant term so every summand is at most one.
    let scale = if r < 0.0 { lo } else { hi };
    if scale == 0.0 {
        return 0.0;
    }
    let mut acc = CompensatedSum::new();
    xs.iter().for_each(|&x| acc.add((x / scale).powf(r)));
    scale * (acc.value() / n).powf(1.0 / r)
}

/// Solved coefficients of the M-family member with exponent `r` and arity `K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCoefficients {
    pub r: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub c_r: f64,
    pub d_r: f64,
    #[serde(rename = "b_rK")]
    pub b_rk: f64,
    pub residual: f64,
}

impl MCoefficients {
    /// `r ≥ 1/(K-1)`: the closed-form branch with `c_r = 0`.
    pub fn is_closed_form(&self) -> bool {
        self.c_r == 0.0
    }
}

/// Which of the three root equations defines `c_r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RootBranch {
    Generic,
    Harmonic,
    Geometric,
}

const BRANCH_SNAP: f64 = 1e-9;

pub fn root_branch(r: f64) -> RootBranch {
    if (r + 1.0).abs() <= BRANCH_SNAP {
        RootBranch::Harmonic
    } else if r.abs() <= BRANCH_SNAP {
        RootBranch::Geometric
    } else {
        RootBranch::Generic
    }
}

/// Relative residual of the branch equation defining `c_r`, written in the
/// original variables `(c, d = 1 - (K-1)c)`.
pub fn branch_residual(r: f64, k: usize, c: f64) -> f64 {
    let kf = k as f64;
    let d = 1.0 - (kf - 1.0) * c;
    let (lhs, rhs) = match root_branch(r) {
        RootBranch::Harmonic => ((1.0 - kf * c) / (kf * c * d), (1.0 / c - (kf - 1.0)).ln()),
        RootBranch::Geometric => (kf * (1.0 - kf * c), (1.0 / c - (kf - 1.0)).ln()),
        RootBranch::Generic => {
            ((kf - 1.0) * d.powf(r) + c.powf(r), kf * (d.powf(r + 1.0) - c.powf(r + 1.0)) / ((r + 1.0) * (1.0 - kf * c)))
        }
    };
    (lhs - rhs) / lhs.abs().max(rhs.abs())
}

/// The root equation in `u = ln(c/d)`. Both sides of the defining equation
/// are homogeneous in `(c, d)`, so it reduces to one in `t = c/d ∈ (0, 1)`.
fn root_function(r: f64, k: f64, u: f64) -> f64 {
    let t = u.exp();
    let one_minus_t = -u.exp_m1();
    match root_branch(r) {
        RootBranch::Harmonic => (one_minus_t * (1.0 + (k - 1.0) * t)) / (k * t) + u,
        RootBranch::Geometric => k * one_minus_t + u * (1.0 + (k - 1.0) * t),
        RootBranch::Generic if r <= -0.5 => k + (r * u).exp_m1() + k * u * exprel((r + 1.0) * u) / one_minus_t,
        RootBranch::Generic => {
            let e = exprel(r * u);
            u * e + k * (one_minus_t + t * u * e) / ((r + 1.0) * one_minus_t)
        }
    }
}

fn solve_ratio(r: f64, k: usize) -> Result<f64> {
    let kf = k as f64;
    // The geometric branch stays finite for any u; its root sits near u = -K.
    let mut lo = match root_branch(r) {
        RootBranch::Geometric => -(2.0 * kf + 50.0),
        _ => -700.0 / r.abs().max((r + 1.0).abs()).max(1.0),
    };
    let f_lo = root_function(r, kf, lo);
    if !f_lo.is_finite() || f_lo == 0.0 {
        return Err(MergeError::Convergence(format!("bad lower bracket value {f_lo} for r = {r}, K = {k}")));
    }
    // Near t = 1 the equation has a trivial root; step towards it until the
    // sign flips.
    let mut hi = f64::NAN;
    for e in 2..=7 {
        let cand = -(10f64.powi(-e));
        let v = root_function(r, kf, cand);
        if v.is_finite() && v != 0.0 && v.signum() != f_lo.signum() {
            hi = cand;
            break;
        }
    }
    if hi.is_nan() {
        return Err(MergeError::Convergence(format!("could not bracket c_r for r = {r}, K = {k}")));
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let v = root_function(r, kf, mid);
        if v == 0.0 {
            return Ok(mid);
        }
        if v.signum() == f_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Solve `c_r`, `d_r` and `b_{r,K}`.
///
/// For `r ≥ 1/(K-1)` (and `r = ±inf`) the closed form applies and `c_r = 0`,
/// `d_r = 1`. For `K = 2` and `r < 1`, `b = 2` and no root is solved.
pub fn solve_m_coefficients(r: f64, k: usize) -> Result<MCoefficients> {
    if k < 2 {
        return Err(MergeError::Range(format!("K = {k} < 2")));
    }
    if r.is_nan() {
        return Err(MergeError::Range("r is NaN".into()));
    }
    let kf = k as f64;
    let closed = |b: f64| MCoefficients { r, k, c_r: 0.0, d_r: 1.0, b_rk: b, residual: 0.0 };
    if r == f64::NEG_INFINITY {
        return Ok(closed(kf));
    }
    if r == f64::INFINITY {
        return Ok(closed(1.0));
    }
    if r >= 1.0 / (kf - 1.0) {
        return Ok(closed((r + 1.0).min(kf).powf(1.0 / r)));
    }
    if k == 2 {
        return Ok(closed(2.0));
    }
    let u = solve_ratio(r, k)?;
    let t = u.exp();
    let c = t / (1.0 + (kf - 1.0) * t);
    let d = 1.0 - (kf - 1.0) * c;
    // ln M_{r,K}(c, d, ..., d) = ln d + ln(mean of (t^r, 1, ..., 1)) / r
    let log_mean = if root_branch(r) == RootBranch::Geometric {
        u / kf
    } else if r < 0.0 {
        (r * u + ((kf - 1.0) * (-r * u).exp()).ln_1p() - kf.ln()) / r
    } else {
        ((kf - 1.0 + (r * u).exp()) / kf).ln() / r
    };
    let b = (-(d.ln() + log_mean)).exp();
    let residual = branch_residual(r, k, c);
    Ok(MCoefficients { r, k, c_r: c, d_r: d, b_rk: b, residual })
}

type CoeffKey = (u64, usize);

fn coeff_cache() -> &'static RwLock<HashMap<CoeffKey, MCoefficients>> {
    static CACHE: OnceLock<RwLock<HashMap<CoeffKey, MCoefficients>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// Memoised [`solve_m_coefficients`]. Insertion is idempotent, so a racing
/// duplicate solve is harmless.
pub fn m_coefficients(r: f64, k: usize) -> Result<MCoefficients> {
    let key = (r.to_bits(), k);
    if let Some(c) = coeff_cache().read().expect("coefficient cache poisoned").get(&key) {
        return Ok(*c);
    }
    let c = solve_m_coefficients(r, k)?;
    coeff_cache().write().expect("coefficient cache poisoned").insert(key, c);
    Ok(c)
}

/// `b_{r,K} M_{r,K}(p) ∧ 1`, zero-one adjusted.
pub fn m_family(p: &PVector, r: f64, coeffs: &MCoefficients) -> Result<f64> {
    check_coeffs(p.len(), r, coeffs)?;
    if p.has_zero() {
        return Ok(0.0);
    }
    let clamped = p.clamped();
    Ok(m_family_raw(clamped.values(), coeffs.b_rk, r))
}

pub(crate) fn m_family_raw(xs: &[f64], b: f64, r: f64) -> f64 {
    (b * power_mean(xs, r)).min(1.0)
}

pub(crate) fn check_coeffs(k: usize, r: f64, coeffs: &MCoefficients) -> Result<()> {
    if coeffs.k != k || coeffs.r.to_bits() != r.to_bits() {
        return Err(MergeError::Range(format!(
            "coefficients solved for (r = {}, K = {}) used with (r = {r}, K = {k})",
            coeffs.r, coeffs.k
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> PVector {
        PVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn bonferroni_examples() {
        assert!((bonferroni(&pv(&[0.02, 0.5, 0.5])) - 0.06).abs() < 1e-15);
        assert_eq!(bonferroni(&pv(&[0.5, 0.5])), 1.0);
        assert_eq!(bonferroni(&pv(&[0.0, 0.9])), 0.0);
    }

    #[test]
    fn o_family_examples() {
        assert!((o_family(&pv(&[0.1, 0.2, 0.3, 0.4]), 2).unwrap() - 0.4).abs() < 1e-15);
        let p = pv(&[0.07, 0.02, 0.3]);
        assert_eq!(o_family(&p, 1).unwrap(), bonferroni(&p));
        assert_eq!(o_family(&pv(&[0.3, 0.7]), 2).unwrap(), 0.7);
        assert!(matches!(o_family(&p, 0), Err(MergeError::Range(_))));
        assert!(matches!(o_family(&p, 4), Err(MergeError::Range(_))));
    }

    #[test]
    fn simes_examples() {
        assert!((simes(&pv(&[0.01, 0.04, 0.9])) - 0.03).abs() < 1e-15);
        let a = 0.01;
        let staircase: Vec<f64> = (1..=5).map(|k| k as f64 * a).collect();
        assert!((simes(&pv(&staircase)) - 5.0 * a).abs() < 1e-15);
        assert_eq!(simes(&pv(&[1.0; 4])), 1.0);
    }

    #[test]
    fn hommel_examples() {
        assert!((hommel(&pv(&[0.01, 0.04, 0.9])) - 0.055).abs() < 1e-15);
        assert!((hommel(&pv(&[0.2, 0.5])) - 0.6).abs() < 1e-15);
        assert_eq!(hommel(&pv(&[0.6, 0.9, 0.95])), 1.0);
    }

    #[test]
    fn power_mean_examples() {
        assert!((power_mean(&[0.5, 0.5], -1.0) - 0.5).abs() < 1e-15);
        assert!((power_mean(&[0.25, 1.0], 0.0) - 0.5).abs() < 1e-15);
        assert_eq!(power_mean(&[0.0, 0.9], -1.0), 0.0);
        assert_eq!(power_mean(&[0.2, 0.9], f64::NEG_INFINITY), 0.2);
        assert_eq!(power_mean(&[0.2, 0.9], f64::INFINITY), 0.9);
    }

    #[test]
    fn power_mean_extreme_values_do_not_overflow() {
        let v = power_mean(&[1e-300, 1e-300, 1.0], -2.0);
        assert!((v / 1e-300 - (1.5f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn closed_form_coefficients() {
        let c = solve_m_coefficients(1.0, 3).unwrap();
        assert_eq!(c.b_rk, 2.0);
        assert_eq!(c.c_r, 0.0);
        assert_eq!(c.d_r, 1.0);
        assert_eq!(solve_m_coefficients(f64::NEG_INFINITY, 5).unwrap().b_rk, 5.0);
        assert_eq!(solve_m_coefficients(f64::INFINITY, 5).unwrap().b_rk, 1.0);
        assert_eq!(solve_m_coefficients(0.5, 2).unwrap().b_rk, 2.0);
        assert_eq!(solve_m_coefficients(-1.0, 2).unwrap().b_rk, 2.0);
        // (r+1) ∧ K caps at K for large r.
        let big = solve_m_coefficients(10.0, 3).unwrap();
        assert!((big.b_rk - 3f64.powf(0.1)).abs() < 1e-15);
    }

    #[test]
    fn harmonic_root_satisfies_its_equation() {
        let c = solve_m_coefficients(-1.0, 3).unwrap();
        let kc = 3.0 * c.c_r;
        let lhs = (1.0 - kc) / (kc * (1.0 - 2.0 * c.c_r));
        let rhs = (1.0 / c.c_r - 2.0).ln();
        assert!(((lhs - rhs) / lhs).abs() < 1e-12);
        assert!(c.residual.abs() < 1e-12);
        assert!(c.c_r > 0.0 && c.c_r < 1.0 / 3.0);
        assert!((c.d_r - (1.0 - 2.0 * c.c_r)).abs() < 1e-15);
    }

    #[test]
    fn branch_equations_agree_near_special_exponents() {
        // The generic root varies continuously into the dedicated branches.
        for &(special, k) in &[(-1.0, 5usize), (0.0, 5), (0.0, 10)] {
            let at = solve_m_coefficients(special, k).unwrap();
            for &h in &[1e-6, -1e-6] {
                let near = solve_m_coefficients(special + h, k).unwrap();
                assert!((near.c_r - at.c_r).abs() / at.c_r < 1e-4, "{special} {h}");
            }
        }
    }

    /// Reference roots from a 50-digit bisection of the untransformed branch
    /// equations in `c`.
    #[test]
    #[allow(clippy::excessive_precision)]
    fn roots_match_high_precision_reference() {
        let cases = [
            (-5.0, 3, 0.2923851321123358, 2.9136963560253693),
            (-1.0, 3, 0.20759979091018658, 2.7456435767327244),
            (-1.0, 100, 0.0015914634618795275, 7.458675454147101),
            (-0.5, 10, 0.011111111111111111, 3.6),
            (0.0, 5, 0.0079596980110992863, 2.6981279437747298),
            (0.2, 3, 0.052760350003914885, 2.4337893035884751),
            (0.2, 5, 0.00013028790625705404, 2.4882662322734708),
            (-2.0, 5, 0.125, 4.0),
        ];
        for (r, k, c, b) in cases {
            let got = solve_m_coefficients(r, k).unwrap();
            assert!((got.c_r / c - 1.0).abs() < 1e-12, "c r={r} K={k}: {}", got.c_r);
            assert!((got.b_rk / b - 1.0).abs() < 1e-12, "b r={r} K={k}: {}", got.b_rk);
        }
    }

    #[test]
    fn b_matches_power_mean_definition() {
        let c = solve_m_coefficients(-0.5, 4).unwrap();
        let v = [c.c_r, c.d_r, c.d_r, c.d_r];
        assert!((c.b_rk * power_mean(&v, -0.5) - 1.0).abs() < 1e-12);
        let c = solve_m_coefficients(0.0, 4).unwrap();
        let v = [c.c_r, c.d_r, c.d_r, c.d_r];
        assert!((c.b_rk * power_mean(&v, 0.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn m_family_examples() {
        let p = pv(&[0.1, 0.2, 0.3]);
        let c1 = m_coefficients(1.0, 3).unwrap();
        assert!((m_family(&p, 1.0, &c1).unwrap() - 0.4).abs() < 1e-15);
        let cinf = m_coefficients(f64::INFINITY, 3).unwrap();
        assert_eq!(m_family(&p, f64::INFINITY, &cinf).unwrap(), 0.3);
        let c0 = m_coefficients(0.0, 3).unwrap();
        let same = pv(&[0.01, 0.01, 0.01]);
        assert!((m_family(&same, 0.0, &c0).unwrap() - (c0.b_rk * 0.01).min(1.0)).abs() < 1e-15);
        assert!(m_family(&p, 0.0, &c1).is_err());
    }

    #[test]
    fn memo_is_consistent() {
        let a = m_coefficients(-2.0, 7).unwrap();
        let b = m_coefficients(-2.0, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, solve_m_coefficients(-2.0, 7).unwrap());
    }
}
