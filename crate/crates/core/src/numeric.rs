//! Small numerical helpers shared by the merging modules.

use statrs::distribution::{ContinuousCDF, Normal};

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut acc = CompensatedSum::new();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Harmonic number `sum_{k=1}^n 1/k`, summed from the small terms up.
pub fn harmonic_number(n: usize) -> f64 {
    compensated_sum((1..=n).rev().map(|k| 1.0 / k as f64))
}

/// `expm1(x) / x`, continuous at zero.
pub fn exprel(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 + x / 2.0
    } else {
        x.exp_m1() / x
    }
}

/// Ceiling that snaps quotients within a relative `1e-13` of an
/// integer onto that integer, so evaluations at grid breakpoints are exact.
pub fn snapped_ceil(q: f64) -> f64 {
    let r = q.round();
    if (q - r).abs() <= 1e-13 * r.abs().max(1.0) {
        r
    } else {
        q.ceil()
    }
}

/// Shortest round-trip text for `x`, switching to exponent notation outside
/// `[1e-4, 1e16)`.
pub fn format_float(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

/// Standard normal distribution function.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile function.
pub fn norm_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Adaptive Simpson quadrature on `[a, b]`, splitting at the given interior
/// breakpoints first so that discontinuities sit on panel boundaries.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, breakpoints: &[f64], tol: f64) -> f64 {
    let mut knots: Vec<f64> = vec![a];
    let mut inner: Vec<f64> = breakpoints.iter().copied().filter(|&x| x > a && x < b).collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    knots.extend(inner);
    knots.push(b);
    let panels = (knots.len() - 1) as f64;
    let mut acc = CompensatedSum::new();
    for w in knots.windows(2) {
        acc.add(simpson_panel(&f, w[0], w[1], tol / panels));
    }
    acc.value()
}

fn simpson_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    // The integrand may jump at the panel ends, so the end values are taken
    // from just inside the panel.
    let inset = (b - a) * 1e-9;
    let fa = f(a + inset);
    let fb = f(b - inset);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + simpson_rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(xs), 2.0);
    }

    #[test]
    fn harmonic_numbers() {
        assert_eq!(harmonic_number(1), 1.0);
        assert!((harmonic_number(3) - 11.0 / 6.0).abs() < 1e-15);
        assert!((harmonic_number(4) - 25.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn simpson_handles_steps_and_smooth_pieces() {
        let step = |x: f64| if x <= 0.25 { 4.0 } else { 0.0 };
        assert!((integrate(step, 0.0, 1.0, &[0.25], 1e-12) - 1.0).abs() < 1e-12);
        let smooth = |x: f64| 1.0 / x;
        let v = integrate(smooth, 0.5, 2.0, &[], 1e-12);
        assert!((v - 4f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn normal_tail() {
        assert!((norm_cdf(-5.0) / 2.866515718791939e-7 - 1.0).abs() < 1e-13);
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((norm_quantile(norm_cdf(-3.0)) + 3.0).abs() < 1e-9);
    }

    #[test]
    fn snapped_ceil_at_integers() {
        assert_eq!(snapped_ceil(3.0000000000000004), 3.0);
        assert_eq!(snapped_ceil(2.5), 3.0);
        assert_eq!(snapped_ceil(0.0), 0.0);
    }
}
