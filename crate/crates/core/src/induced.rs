//! Merging functions induced by calibrators: the generic binary search, the
//! exact grid harmonic merger `H*_K`, the closed forms of `F*_{r,K}` and the
//! improvement-ratio quantities.

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{One, Zero};

use crate::calibrate::Calibrator;
use crate::classic::{check_coeffs, m_coefficients, m_family, simes_sorted, MCoefficients};
use crate::error::{MergeError, Result};
use crate::numeric::{harmonic_number, snapped_ceil, CompensatedSum};
use crate::pvec::{MergeResult, PVector};

/// Rounding allowance when comparing `(1/K) Σ f(p_k/ε)` with one.
const PHI_TOL: f64 = 1e-12;

pub const DEFAULT_DEPTH: u32 = 52;

/// Algorithm 1 configured with a calibrator and a search depth `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct InducedMerge {
    calibrator: Calibrator,
    depth: u32,
}

impl InducedMerge {
    pub fn new(calibrator: Calibrator, depth: u32) -> Result<Self> {
        if depth == 0 {
            return Err(MergeError::Range("search depth M must be at least 1".into()));
        }
        Ok(Self { calibrator, depth })
    }

    pub fn calibrator(&self) -> &Calibrator {
        &self.calibrator
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn arity(&self) -> usize {
        self.calibrator.arity()
    }

    /// `φ_p(ε) = (1/K) Σ f(p_k/ε)`.
    pub fn phi(&self, p: &[f64], eps: f64) -> f64 {
        let mut acc = CompensatedSum::new();
        for &x in p {
            let v = self.calibrator.eval_f64(x / eps);
            if v == f64::INFINITY {
                return f64::INFINITY;
            }
            acc.add(v);
        }
        acc.value() / p.len() as f64
    }

    /// Whether `p` lies in the rejection region at level `ε`.
    pub fn rejects(&self, p: &[f64], eps: f64) -> bool {
        self.phi(p, eps) >= 1.0 - PHI_TOL
    }
}

/// Binary search for the induced p-value. Returns the upper end `R` of the
/// final bracket, at most `2^{-M}` above the exact induced value.
pub fn merge_induced(p: &PVector, im: &InducedMerge) -> Result<MergeResult> {
    if p.len() != im.arity() {
        return Err(MergeError::Range(format!("calibrator built for K = {}, got {} p-values", im.arity(), p.len())));
    }
    let tag = "induced";
    if p.has_zero() {
        return Ok(MergeResult::exact(0.0, tag));
    }
    let xs = p.values();
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..im.depth {
        let eps = 0.5 * (lo + hi);
        if im.rejects(xs, eps) {
            hi = eps;
        } else {
            lo = eps;
        }
    }
    Ok(MergeResult { p: hi, method_tag: tag.into(), accuracy_bound: (-(im.depth as f64)).exp2() })
}

/// `Σ 1/⌈m ℓ_m p_k / ε⌉` over the entries with `⌈·⌉ ≤ m`, i.e. the grid
/// harmonic `φ_p(ε)`. `sorted` ascending, so the scan stops at the first
/// entry outside the support.
fn grid_phi(sorted: &[f64], ell: f64, eps: f64) -> f64 {
    let mf = sorted.len() as f64;
    let mut acc = CompensatedSum::new();
    for &x in sorted {
        let q = snapped_ceil(mf * ell * x / eps);
        if q > mf {
            break;
        }
        acc.add(1.0 / q);
    }
    acc.value()
}

/// Reference `H*_K`: the smallest candidate `ε = K ℓ_K p_j / i` in the
/// rejection region, by exhaustive search in `O(K³)`.
pub fn grid_harmonic_exact(p: &PVector) -> f64 {
    if p.has_zero() {
        return 0.0;
    }
    let k = p.len();
    let ell = harmonic_number(k);
    let kf = k as f64;
    let xs = p.clamped();
    let sorted = xs.sorted();
    let mut best = 1.0f64;
    for &pj in sorted {
        for i in 1..=k {
            let eps = kf * ell * pj / i as f64;
            if eps < best && grid_phi(sorted, ell, eps) >= 1.0 - PHI_TOL {
                best = eps;
            }
        }
    }
    best
}

/// `H*_K(p)`, exact over the same candidate set as [`grid_harmonic_exact`]
/// but located by bisection between the Simes and Hommel values.
pub fn grid_harmonic(p: &PVector) -> f64 {
    if p.has_zero() {
        return 0.0;
    }
    let xs = p.clamped();
    grid_harmonic_sorted(xs.sorted())
}

/// [`grid_harmonic`] on ascending, positive input clamped to `[0, 1]`.
pub(crate) fn grid_harmonic_sorted(sorted: &[f64]) -> f64 {
    let m = sorted.len();
    if sorted[0] == 0.0 {
        return 0.0;
    }
    let ell = harmonic_number(m);
    let mf = m as f64;
    if m == 1 {
        return sorted[0].min(1.0);
    }
    let simes = simes_sorted(sorted);
    let mut hi = (ell * simes).min(1.0);
    if grid_phi(sorted, ell, hi) < 1.0 - PHI_TOL {
        if hi == 1.0 {
            return 1.0;
        }
        hi = 1.0;
        if grid_phi(sorted, ell, hi) < 1.0 - PHI_TOL {
            return 1.0;
        }
    }
    let mut lo = 0.5 * simes;
    while hi - lo > 1e-13 * hi {
        let mid = 0.5 * (lo + hi);
        if grid_phi(sorted, ell, mid) >= 1.0 - PHI_TOL {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (wlo, whi) = (lo * (1.0 - 1e-12), hi * (1.0 + 1e-12));
    let mut cands = Vec::new();
    for &x in sorted {
        let a = mf * ell * x;
        if a > mf * whi {
            break;
        }
        let i_min = (a / whi).ceil().max(1.0) as usize;
        let i_max = ((a / wlo).floor() as usize).min(m);
        for i in i_min..=i_max {
            cands.push(a / i as f64);
        }
    }
    cands.sort_by(f64::total_cmp);
    cands.into_iter().find(|&eps| grid_phi(sorted, ell, eps) >= 1.0 - PHI_TOL).unwrap_or(hi).min(1.0)
}

/// Closed form of `F*_{r,K}`. Requires `K ≥ 3` and `r < K - 1`.
///
/// For `r ∈ [1/(K-1), K-1)` this is `min_m M_{r,m}(p_m) / (1 - rK/((r+1)m))_+^{1/r}`,
/// which is what the calibrator `((r+1)/r)(1 - x^r)_+` induces.
pub fn m_star(p: &PVector, r: f64, coeffs: &MCoefficients) -> Result<f64> {
    let k = p.len();
    check_m_star_domain(r, k)?;
    check_coeffs(k, r, coeffs)?;
    if p.has_zero() {
        return Ok(0.0);
    }
    let xs = p.clamped();
    Ok(m_star_sorted(xs.sorted(), r, coeffs))
}

pub(crate) fn check_m_star_domain(r: f64, k: usize) -> Result<()> {
    if k < 3 {
        return Err(MergeError::Range(format!("F*_(r,K) needs K >= 3, got {k}")));
    }
    if r.is_nan() || r == f64::NEG_INFINITY || r >= k as f64 - 1.0 {
        return Err(MergeError::Range(format!("F*_(r,K) needs r < K - 1, got r = {r}, K = {k}")));
    }
    Ok(())
}

/// `F*_{r,K}` on ascending, positive input in `[0, 1]`, with coefficients for
/// `K = sorted.len()`. Running prefix statistics make this `O(K)`.
pub(crate) fn m_star_sorted(sorted: &[f64], r: f64, coeffs: &MCoefficients) -> f64 {
    let k = sorted.len();
    let kf = k as f64;
    let p1 = sorted[0];
    if p1 == 0.0 {
        return 0.0;
    }
    let (c, d) = (coeffs.c_r, coeffs.d_r);
    let mut best = f64::INFINITY;
    if !coeffs.is_closed_form() && r < 0.0 {
        // Ratio = (p_(1)/c) (A_m / B_m)^{1/r} with A_m = Σ (p_(i)/p_(1))^r and
        // B_m = 1 + (m-1)(d/c)^r; both sums have terms at most one.
        let w = (d / c).powf(r);
        let mut acc = CompensatedSum::new();
        for (i, &x) in sorted.iter().enumerate() {
            acc.add((x / p1).powf(r));
            let b = 1.0 + i as f64 * w;
            best = best.min(p1 / c * (acc.value() / b).powf(1.0 / r));
        }
    } else if !coeffs.is_closed_form() && r == 0.0 {
        let (lc, ld) = (c.ln(), d.ln());
        let mut acc = CompensatedSum::new();
        for (i, &x) in sorted.iter().enumerate() {
            acc.add(x.ln());
            let m = (i + 1) as f64;
            best = best.min(((acc.value() - lc - i as f64 * ld) / m).exp());
        }
    } else {
        // r > 0: A_m = Σ (p_(i)/p_(m))^r, rescaled as m advances.
        let w = if coeffs.is_closed_form() { 0.0 } else { (c / d).powf(r) };
        let mut a = 0.0f64;
        let mut prev = p1;
        for (i, &x) in sorted.iter().enumerate() {
            a = a * (prev / x).powf(r) + 1.0;
            prev = x;
            let m = (i + 1) as f64;
            let v = if coeffs.is_closed_form() {
                let denom = 1.0 - r * kf / ((r + 1.0) * m);
                if denom <= 0.0 {
                    continue;
                }
                x * (a / m / denom).powf(1.0 / r)
            } else {
                x / d * (a / (w + i as f64)).powf(1.0 / r)
            };
            best = best.min(v);
        }
    }
    best.min(1.0)
}

/// Whether `F*(p) ≤ ε` agrees with `F_{r,K}(p ∧ ε d_r) ≤ ε or min p = 0`.
pub fn m_star_equivalence_check(p: &PVector, r: f64, eps: f64, coeffs: &MCoefficients) -> Result<bool> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(MergeError::Range(format!("eps = {eps} outside (0, 1)")));
    }
    let lhs = m_star(p, r, coeffs)? <= eps;
    let cap = eps * coeffs.d_r;
    let capped = PVector::new(p.values().iter().map(|&x| x.min(cap)).collect())?;
    let rhs = p.has_zero() || m_family(&capped, r, coeffs)? <= eps;
    Ok(lhs == rhs)
}

/// Infimum of `F*_{-1,K} / F_{-1,K}`, namely `1 - (K-1) c_{-1} = d_{-1}`.
pub fn improvement_ratio_mstar(k: usize) -> Result<f64> {
    if k < 3 {
        return Err(MergeError::Range(format!("K = {k} < 3")));
    }
    Ok(m_coefficients(-1.0, k)?.d_r)
}

/// `γ_K = min{t > 0 : Σ_k 1{t ≥ k/K} / ⌈k/t⌉ ≥ 1}` as a reduced fraction.
pub fn gamma_k_exact(k: usize) -> Result<(u64, u64)> {
    if k < 2 {
        return Err(MergeError::Range(format!("K = {k} < 2")));
    }
    let big_k = k as u64;
    // Float bisection for a bracket, then exact search over the breakpoints
    // k/m with k ≤ m ≤ K around it.
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if gamma_sum_f64(big_k, mid) >= 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let width = 1e-9;
    let mut cands: Vec<Ratio<u64>> = Vec::new();
    for m in 1..=big_k {
        let kmin = (((lo - width) * m as f64).ceil().max(1.0)) as u64;
        let kmax = (((hi + width) * m as f64).floor() as u64).min(m);
        for kk in kmin..=kmax {
            cands.push(Ratio::new(kk, m));
        }
    }
    cands.sort();
    cands.dedup();
    let mut cur = match cands.iter().find(|t| gamma_holds(big_k, **t)) {
        Some(t) => *t,
        None => {
            let mut t = cands.last().copied().unwrap_or_else(|| Ratio::new(1, 1));
            while !gamma_holds(big_k, t) {
                t = next_breakpoint_above(big_k, t);
            }
            t
        }
    };
    while let Some(prev) = next_breakpoint_below(big_k, cur) {
        if gamma_holds(big_k, prev) {
            cur = prev;
        } else {
            break;
        }
    }
    Ok((*cur.numer(), *cur.denom()))
}

pub fn gamma_k(k: usize) -> Result<f64> {
    let (a, b) = gamma_k_exact(k)?;
    Ok(a as f64 / b as f64)
}

fn gamma_sum_f64(k: u64, t: f64) -> f64 {
    let mut acc = CompensatedSum::new();
    for kk in 1..=k {
        if t < kk as f64 / k as f64 {
            break;
        }
        acc.add(1.0 / snapped_ceil(kk as f64 / t));
    }
    acc.value()
}

/// Exact test of `Σ_k 1{t ≥ k/K} / ⌈k/t⌉ ≥ 1` at `t = a/b`.
fn gamma_holds(k: u64, t: Ratio<u64>) -> bool {
    let (a, b) = (*t.numer() as u128, *t.denom() as u128);
    let approx = gamma_sum_f64(k, a as f64 / b as f64);
    if (approx - 1.0).abs() > 1e-9 {
        return approx > 1.0;
    }
    let mut sum = BigRational::zero();
    let mut kk: u128 = 1;
    while kk <= k as u128 && kk * b <= a * k as u128 {
        let q = (kk * b).div_ceil(a);
        // All k sharing this ceiling: ⌈k b / a⌉ = q  ⇔  k ≤ q a / b.
        let last = ((q * a) / b).min(k as u128).min((a * k as u128) / b);
        let count = last - kk + 1;
        sum += BigRational::new(BigInt::from(count), BigInt::from(q));
        kk = last + 1;
    }
    sum >= BigRational::one()
}

fn next_breakpoint_below(k: u64, t: Ratio<u64>) -> Option<Ratio<u64>> {
    let (a, b) = (*t.numer() as u128, *t.denom() as u128);
    (1..=k)
        .filter_map(|m| {
            let kk = (a * m as u128).div_ceil(b) - 1;
            (kk >= 1).then(|| Ratio::new(kk as u64, m))
        })
        .max()
}

fn next_breakpoint_above(k: u64, t: Ratio<u64>) -> Ratio<u64> {
    let (a, b) = (*t.numer() as u128, *t.denom() as u128);
    (1..=k)
        .filter_map(|m| {
            let kk = (a * m as u128) / b + 1;
            (kk <= m as u128).then(|| Ratio::new(kk as u64, m))
        })
        .min()
        .unwrap_or_else(|| Ratio::new(1, 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrate::{grid_harmonic_calibrator, mstar_calibrator, o_family_calibrator};
    use crate::classic::{bonferroni, hommel, solve_m_coefficients};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pv(v: &[f64]) -> PVector {
        PVector::new(v.to_vec()).unwrap()
    }

    fn random_p(rng: &mut ChaCha8Rng, k: usize) -> PVector {
        // Mix of scales so that several calibrator pieces are active.
        let v = (0..k)
            .map(|_| {
                let u: f64 = rng.random_range(1e-6..1.0);
                if rng.random_bool(0.5) {
                    u * 0.05
                } else {
                    u
                }
            })
            .collect();
        PVector::new(v).unwrap()
    }

    #[test]
    fn algorithm_one_matches_hommel_for_k3() {
        let im = InducedMerge::new(grid_harmonic_calibrator(3).unwrap(), DEFAULT_DEPTH).unwrap();
        let p = pv(&[0.01, 0.04, 0.9]);
        let res = merge_induced(&p, &im).unwrap();
        assert!((res.p - 0.055).abs() <= res.accuracy_bound + 1e-12, "{}", res.p);
        assert!((grid_harmonic_exact(&p) - 0.055).abs() < 1e-15);
        assert!((grid_harmonic(&p) - 0.055).abs() < 1e-15);
        let zero = pv(&[0.0, 0.5, 0.5]);
        assert_eq!(merge_induced(&zero, &im).unwrap().p, 0.0);
    }

    #[test]
    fn bonferroni_calibrator_induces_bonferroni() {
        let im = InducedMerge::new(o_family_calibrator(1, 4).unwrap(), DEFAULT_DEPTH).unwrap();
        let p = pv(&[0.03, 0.2, 0.5, 0.7]);
        let res = merge_induced(&p, &im).unwrap();
        assert!((res.p - bonferroni(&p)).abs() <= res.accuracy_bound + 1e-15);
    }

    #[test]
    fn grid_harmonic_staircase_k4() {
        let a = 0.01;
        let p = pv(&[a, 2.0 * a, 3.0 * a, 4.0 * a]);
        assert!((grid_harmonic_exact(&p) - 0.0625).abs() < 1e-15);
        assert!((grid_harmonic(&p) - 0.0625).abs() < 1e-15);
        assert!(grid_harmonic(&p) < hommel(&p));
        assert_eq!(grid_harmonic_exact(&pv(&[1.0, 1.0, 1.0])), 1.0);
        assert_eq!(grid_harmonic(&pv(&[1.0, 1.0, 1.0])), 1.0);
    }

    #[test]
    fn fast_grid_harmonic_equals_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &k in &[2usize, 3, 4, 5, 7, 12, 30] {
            for _ in 0..200 {
                let p = random_p(&mut rng, k);
                let fast = grid_harmonic(&p);
                let slow = grid_harmonic_exact(&p);
                assert_eq!(fast, slow, "K={k} p={:?}", p.values());
            }
        }
    }

    #[test]
    fn grid_harmonic_handles_ties_and_large_inputs() {
        let p = pv(&[0.02, 0.02, 0.02, 0.02, 0.02]);
        assert_eq!(grid_harmonic(&p), grid_harmonic_exact(&p));
        let p = pv(&[0.001, 3.0, 0.5]);
        assert_eq!(grid_harmonic(&p), grid_harmonic_exact(&p));
    }

    #[test]
    fn m_star_examples() {
        let coeffs = solve_m_coefficients(-1.0, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut strict = false;
        for _ in 0..2000 {
            let p = random_p(&mut rng, 3);
            let star = m_star(&p, -1.0, &coeffs).unwrap();
            let plain = m_family(&p, -1.0, &coeffs).unwrap();
            assert!(star <= plain + 1e-12);
            strict |= star < plain - 1e-9;
        }
        assert!(strict);
        assert_eq!(m_star(&pv(&[0.0, 0.5, 0.5]), -1.0, &coeffs).unwrap(), 0.0);
        // On (c, d, d) scaled down, the m = K term is active and both agree.
        let s = 0.1;
        let p = pv(&[s * coeffs.c_r, s * coeffs.d_r, s * coeffs.d_r]);
        let star = m_star(&p, -1.0, &coeffs).unwrap();
        assert!((star - m_family(&p, -1.0, &coeffs).unwrap()).abs() < 1e-12);
        assert!((star - s).abs() < 1e-12);
    }

    #[test]
    fn m_star_domain() {
        let coeffs = solve_m_coefficients(2.0, 3).unwrap();
        assert!(matches!(m_star(&pv(&[0.1, 0.2, 0.3]), 2.0, &coeffs), Err(MergeError::Range(_))));
        let coeffs = solve_m_coefficients(-1.0, 2).unwrap();
        assert!(matches!(m_star(&pv(&[0.1, 0.2]), -1.0, &coeffs), Err(MergeError::Range(_))));
    }

    #[test]
    fn m_star_matches_algorithm_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &k in &[3usize, 5, 10] {
            for &r in &[-2.0, -1.0, -0.5, 0.0, 0.5, 1.0] {
                if r >= k as f64 - 1.0 {
                    continue;
                }
                let coeffs = solve_m_coefficients(r, k).unwrap();
                let im = InducedMerge::new(mstar_calibrator(r, k, &coeffs).unwrap(), DEFAULT_DEPTH).unwrap();
                for _ in 0..100 {
                    let p = random_p(&mut rng, k);
                    let closed = m_star(&p, r, &coeffs).unwrap();
                    let alg = merge_induced(&p, &im).unwrap().p;
                    assert!((closed - alg).abs() <= 2f64.powi(-52) + 1e-9, "r={r} K={k} {closed} vs {alg}");
                }
            }
        }
    }

    #[test]
    fn m_star_equivalence() {
        let coeffs = solve_m_coefficients(-1.0, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let p = random_p(&mut rng, 5);
            let v = m_star(&p, -1.0, &coeffs).unwrap();
            if v + 1e-9 < 1.0 {
                assert!(m_star_equivalence_check(&p, -1.0, v + 1e-9, &coeffs).unwrap());
            }
            if v - 1e-9 > 0.0 && v < 1.0 {
                assert!(m_star_equivalence_check(&p, -1.0, v - 1e-9, &coeffs).unwrap());
            }
        }
        let p = pv(&[0.0, 0.3, 0.4, 0.5, 0.6]);
        assert!(m_star_equivalence_check(&p, -1.0, 0.2, &coeffs).unwrap());
    }

    #[test]
    fn gamma_small_cases() {
        assert_eq!(gamma_k_exact(3).unwrap(), (1, 1));
        assert_eq!(gamma_k_exact(4).unwrap(), (3, 4));
        assert_eq!(gamma_k_exact(2).unwrap(), (1, 1));
    }

    #[test]
    fn gamma_bounds_for_larger_k() {
        for &k in &[100usize, 1000] {
            let g = gamma_k(k).unwrap();
            let lk = (k as f64).ln();
            assert!(1.0 / g >= (lk - lk.ln()).floor() && 1.0 / g <= harmonic_number(k), "K={k}: {g}");
        }
    }

    #[test]
    fn improvement_ratio() {
        let c = solve_m_coefficients(-1.0, 3).unwrap();
        assert!((improvement_ratio_mstar(3).unwrap() - (1.0 - 2.0 * c.c_r)).abs() < 1e-15);
        assert!(improvement_ratio_mstar(1000).unwrap() > improvement_ratio_mstar(10).unwrap());
    }
}
