//! Validated p-value vectors, extended reals and the generic adjustments
//! (zero-one and lower-semicontinuous) of merging functions.

use std::cmp::Ordering;
use std::fmt;
use std::ops::Add;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{MergeError, Result};

/// A non-negative real number or `+inf`. NaN is never admitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtReal(f64);

impl ExtReal {
    pub const INFINITY: ExtReal = ExtReal(f64::INFINITY);
    pub const ZERO: ExtReal = ExtReal(0.0);

    pub fn new(value: f64) -> Option<Self> {
        if value.is_nan() || value == f64::NEG_INFINITY {
            None
        } else {
            Some(ExtReal(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0 == f64::INFINITY
    }

    /// Multiply by a non-negative weight; `0 * inf` is taken to be zero.
    pub fn scale(self, w: f64) -> Self {
        if w == 0.0 {
            ExtReal::ZERO
        } else {
            ExtReal(self.0 * w)
        }
    }
}

impl Eq for ExtReal {}

impl PartialOrd for ExtReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ExtReal {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl Add for ExtReal {
    type Output = ExtReal;
    fn add(self, rhs: Self) -> Self {
        // inf + finite saturates; -inf never occurs.
        ExtReal(self.0 + rhs.0)
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// A vector of `K >= 2` finite, non-negative p-values with cached order
/// statistics. Entries above one are accepted.
#[derive(Debug, Clone)]
pub struct PVector {
    values: Vec<f64>,
    sorted: OnceLock<Vec<f64>>,
}

impl PartialEq for PVector {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values
    }
}

impl PVector {
    pub fn new(raw: Vec<f64>) -> Result<Self> {
        if raw.len() < 2 {
            return Err(MergeError::Length { min: 2, got: raw.len() });
        }
        if let Some((index, &value)) = raw.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(MergeError::Value { index, value });
        }
        Ok(Self { values: raw, sorted: OnceLock::new() })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Ascending order statistics; `sorted()[m - 1]` is `p_(m)`.
    pub fn sorted(&self) -> &[f64] {
        self.sorted.get_or_init(|| sorted_copy(&self.values))
    }

    pub fn min(&self) -> f64 {
        self.sorted()[0]
    }

    pub fn max(&self) -> f64 {
        self.sorted()[self.len() - 1]
    }

    /// The `m` smallest components.
    pub fn smallest(&self, m: usize) -> &[f64] {
        &self.sorted()[..m]
    }

    pub fn has_zero(&self) -> bool {
        self.min() == 0.0
    }

    /// Componentwise `p ∧ 1`.
    pub fn clamped(&self) -> PVector {
        let v = self.values.iter().map(|&p| p.min(1.0)).collect();
        PVector { values: v, sorted: OnceLock::new() }
    }

    /// Componentwise `λ p`; `λ` must be finite and non-negative.
    pub fn scaled(&self, lambda: f64) -> PVector {
        let v = self.values.iter().map(|&p| p * lambda).collect();
        PVector { values: v, sorted: OnceLock::new() }
    }

    /// Parse the one-column CSV format: one p-value per line, with an
    /// optional leading header `p`. Blank lines are skipped.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut out = Vec::new();
        let mut seen_data = false;
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let field = line.trim().trim_matches('"');
            if field.is_empty() {
                continue;
            }
            if !seen_data && field.eq_ignore_ascii_case("p") {
                seen_data = true;
                continue;
            }
            seen_data = true;
            let v: f64 = field.parse().map_err(|_| MergeError::Parse { line: lineno, msg: format!("not a number: {field:?}") })?;
            if !v.is_finite() || v < 0.0 {
                return Err(MergeError::Parse { line: lineno, msg: format!("invalid p-value {v}") });
            }
            out.push(v);
        }
        PVector::new(out)
    }
}

pub(crate) fn sorted_copy(xs: &[f64]) -> Vec<f64> {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Validate raw input into a [`PVector`].
pub fn validate_pvector(raw: &[f64]) -> Result<PVector> {
    PVector::new(raw.to_vec())
}

/// Output of a merge: the combined p-value, the method that produced it and
/// how far above the exact induced value it may lie.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeResult {
    pub p: f64,
    pub method_tag: String,
    pub accuracy_bound: f64,
}

impl MergeResult {
    pub fn exact(p: f64, method_tag: impl Into<String>) -> Self {
        Self { p, method_tag: method_tag.into(), accuracy_bound: 0.0 }
    }
}

/// Zero-one adjusted version of `f`: zero as soon as a component is zero,
/// otherwise `f(p ∧ 1) ∧ 1`.
pub fn zero_one_adjust<F>(f: F, p: &PVector) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if p.has_zero() {
        return Ok(0.0);
    }
    let clamped = p.clamped();
    Ok(f(clamped.values())?.min(1.0))
}

pub const LSC_DEFAULT_STEPS: u32 = 30;
const LSC_TOL: f64 = 1e-12;

/// Lower semicontinuous version `lim_{λ↑1} F(λp)`, approximated from the
/// values at `λ = 1 - 2^{-s}`, `s = 1..=shrink_steps`.
///
/// When `F(p)` agrees with the sampled approach (the last increment bounds
/// the remaining gap), `F(p)` itself is returned.
pub fn lsc_version<F>(f: F, p: &PVector, shrink_steps: u32) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if shrink_steps == 0 {
        return Err(MergeError::Range("shrink_steps must be positive".into()));
    }
    let mut prev: Option<f64> = None;
    let mut last_step = 0.0;
    for s in 1..=shrink_steps {
        let lambda = 1.0 - (-(s as f64)).exp2();
        let v = f(p.scaled(lambda).values())?;
        if let Some(pv) = prev {
            if v < pv - LSC_TOL {
                return Err(MergeError::NonMonotone(format!("F(λp) decreased from {pv} to {v} at λ = {lambda}")));
            }
            last_step = v - pv;
        }
        prev = Some(v);
    }
    let approach = prev.unwrap_or(0.0);
    let at_p = f(p.values())?;
    if at_p < approach - LSC_TOL {
        return Err(MergeError::NonMonotone(format!("F(p) = {at_p} below F(λp) = {approach}")));
    }
    if at_p - approach <= 2.0 * last_step + LSC_TOL {
        Ok(at_p)
    } else {
        Ok(approach)
    }
}
