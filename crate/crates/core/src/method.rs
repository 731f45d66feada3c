//! Method strings, their parsed form and binding to a concrete arity.
//!
//! Accepted strings: `bonferroni`, `simes`, `hommel`, `o:k=<int>`,
//! `m:r=<real>`, `grid-harmonic`, `m-star:r=<real>` and
//! `induced:<calibrator>:M=<int>` with calibrator `grid-harmonic`,
//! `mstar:r=<real>` or `o:k=<int>`.

use std::fmt;
use std::str::FromStr;

use crate::calibrate::{grid_harmonic_calibrator, mstar_calibrator, o_family_calibrator, Calibrator};
use crate::classic::{bonferroni_sorted, hommel_sorted, m_coefficients, m_family_raw, simes_sorted, MCoefficients};
use crate::error::{MergeError, Result};
use crate::induced::{check_m_star_domain, grid_harmonic_sorted, m_star_sorted, InducedMerge, DEFAULT_DEPTH};
use crate::pvec::{MergeResult, PVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CalibratorSpec {
    GridHarmonic,
    MStar { r: f64 },
    OFamily { k: usize },
}

impl CalibratorSpec {
    pub fn build(&self, k: usize) -> Result<Calibrator> {
        match *self {
            CalibratorSpec::GridHarmonic => grid_harmonic_calibrator(k),
            CalibratorSpec::MStar { r } => mstar_calibrator(r, k, &m_coefficients(r, k)?),
            CalibratorSpec::OFamily { k: kk } => o_family_calibrator(kk, k),
        }
    }
}

impl fmt::Display for CalibratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CalibratorSpec::GridHarmonic => write!(f, "grid-harmonic"),
            CalibratorSpec::MStar { r } => write!(f, "mstar:r={r}"),
            CalibratorSpec::OFamily { k } => write!(f, "o:k={k}"),
        }
    }
}

impl FromStr for CalibratorSpec {
    type Err = MergeError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "grid-harmonic" {
            return Ok(CalibratorSpec::GridHarmonic);
        }
        if let Some(v) = s.strip_prefix("mstar:r=") {
            return Ok(CalibratorSpec::MStar { r: parse_real(v, s)? });
        }
        if let Some(v) = s.strip_prefix("o:k=") {
            return Ok(CalibratorSpec::OFamily { k: parse_int(v, s)? });
        }
        Err(MergeError::Method(format!("unknown calibrator {s:?}")))
    }
}

/// A merging method independent of the number of p-values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MethodSpec {
    Bonferroni,
    Simes,
    Hommel,
    OFamily { k: usize },
    MFamily { r: f64 },
    GridHarmonic,
    MStar { r: f64 },
    Induced { calibrator: CalibratorSpec, depth: u32 },
}

fn parse_real(v: &str, whole: &str) -> Result<f64> {
    let r: f64 = v.trim().parse().map_err(|_| MergeError::Method(format!("bad real in {whole:?}")))?;
    if r.is_nan() {
        return Err(MergeError::Method(format!("NaN in {whole:?}")));
    }
    Ok(r)
}

fn parse_int<T: FromStr>(v: &str, whole: &str) -> Result<T> {
    v.trim().parse().map_err(|_| MergeError::Method(format!("bad integer in {whole:?}")))
}

impl FromStr for MethodSpec {
    type Err = MergeError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "bonferroni" => return Ok(MethodSpec::Bonferroni),
            "simes" => return Ok(MethodSpec::Simes),
            "hommel" => return Ok(MethodSpec::Hommel),
            "grid-harmonic" => return Ok(MethodSpec::GridHarmonic),
            _ => {}
        }
        if let Some(v) = s.strip_prefix("o:k=") {
            return Ok(MethodSpec::OFamily { k: parse_int(v, s)? });
        }
        if let Some(v) = s.strip_prefix("m:r=") {
            return Ok(MethodSpec::MFamily { r: parse_real(v, s)? });
        }
        if let Some(v) = s.strip_prefix("m-star:r=") {
            return Ok(MethodSpec::MStar { r: parse_real(v, s)? });
        }
        if let Some(rest) = s.strip_prefix("induced:") {
            let (cal, depth) = match rest.rfind(":M=") {
                Some(i) => (&rest[..i], parse_int(&rest[i + 3..], s)?),
                None => (rest, DEFAULT_DEPTH),
            };
            return Ok(MethodSpec::Induced { calibrator: cal.parse()?, depth });
        }
        Err(MergeError::Method(format!("unknown method {s:?}")))
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodSpec::Bonferroni => write!(f, "bonferroni"),
            MethodSpec::Simes => write!(f, "simes"),
            MethodSpec::Hommel => write!(f, "hommel"),
            MethodSpec::OFamily { k } => write!(f, "o:k={k}"),
            MethodSpec::MFamily { r } => write!(f, "m:r={r}"),
            MethodSpec::GridHarmonic => write!(f, "grid-harmonic"),
            MethodSpec::MStar { r } => write!(f, "m-star:r={r}"),
            MethodSpec::Induced { calibrator, depth } => write!(f, "induced:{calibrator}:M={depth}"),
        }
    }
}

impl MethodSpec {
    /// Every implemented method is symmetric in its arguments.
    pub fn is_symmetric(&self) -> bool {
        true
    }

    /// False only for Simes, which is invalid under arbitrary dependence.
    pub fn is_universally_valid(&self) -> bool {
        !matches!(self, MethodSpec::Simes)
    }

    pub fn bind(&self, k: usize) -> Result<MergeMethod> {
        if k < 2 {
            return Err(MergeError::Length { min: 2, got: k });
        }
        let bound = match *self {
            MethodSpec::OFamily { k: kk } => {
                if kk == 0 || kk > k {
                    return Err(MergeError::Range(format!("k = {kk} outside 1..={k}")));
                }
                Bound::Plain
            }
            MethodSpec::MFamily { r } => Bound::Coeffs(m_coefficients(r, k)?),
            MethodSpec::MStar { r } => {
                check_m_star_domain(r, k)?;
                Bound::Coeffs(m_coefficients(r, k)?)
            }
            MethodSpec::Induced { calibrator, depth } => Bound::Induced(InducedMerge::new(calibrator.build(k)?, depth)?),
            _ => Bound::Plain,
        };
        Ok(MergeMethod { spec: *self, k, bound })
    }

    /// The arity-`m` member of the family applied to `sorted` (ascending,
    /// clamped to `[0, 1]`), with `m = sorted.len()`. Arity one is the
    /// identity. For the starred power means, arities where `F*_{r,m}` is
    /// undefined (`m = 2` or `r ≥ m - 1`) fall back to `F_{r,m}`.
    pub fn merge_sorted(&self, sorted: &[f64]) -> Result<f64> {
        let m = sorted.len();
        if m == 0 {
            return Err(MergeError::EmptySet);
        }
        if let MethodSpec::OFamily { k } = *self {
            if k > m {
                return Err(MergeError::Arity(m));
            }
        }
        if sorted[0] == 0.0 {
            return Ok(0.0);
        }
        if m == 1 {
            return Ok(sorted[0].min(1.0));
        }
        Ok(match *self {
            MethodSpec::Bonferroni => bonferroni_sorted(sorted),
            MethodSpec::Simes => simes_sorted(sorted).min(1.0),
            MethodSpec::Hommel => hommel_sorted(sorted),
            MethodSpec::OFamily { k } => (m as f64 / k as f64 * sorted[k - 1]).min(1.0),
            MethodSpec::MFamily { r } => m_family_raw(sorted, m_coefficients(r, m)?.b_rk, r),
            MethodSpec::GridHarmonic => grid_harmonic_sorted(sorted),
            MethodSpec::MStar { r } => {
                let coeffs = m_coefficients(r, m)?;
                if check_m_star_domain(r, m).is_ok() {
                    m_star_sorted(sorted, r, &coeffs)
                } else {
                    m_family_raw(sorted, coeffs.b_rk, r)
                }
            }
            MethodSpec::Induced { .. } => return Err(MergeError::Arity(m)),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Bound {
    Plain,
    Coeffs(MCoefficients),
    Induced(InducedMerge),
}

/// A [`MethodSpec`] bound to `K` p-values, with any coefficients solved and
/// calibrators constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeMethod {
    spec: MethodSpec,
    k: usize,
    bound: Bound,
}

impl MergeMethod {
    pub fn spec(&self) -> &MethodSpec {
        &self.spec
    }

    pub fn arity(&self) -> usize {
        self.k
    }

    pub fn coefficients(&self) -> Option<&MCoefficients> {
        match &self.bound {
            Bound::Coeffs(c) => Some(c),
            _ => None,
        }
    }

    /// Zero-one adjusted merge of `p`.
    pub fn merge(&self, p: &PVector) -> Result<MergeResult> {
        if p.len() != self.k {
            return Err(MergeError::Range(format!("method bound to K = {}, got {} p-values", self.k, p.len())));
        }
        let tag = self.spec.to_string();
        if p.has_zero() {
            return Ok(MergeResult::exact(0.0, tag));
        }
        let xs = p.clamped();
        let v = self.merge_sorted(xs.sorted());
        let bound = match &self.bound {
            Bound::Induced(im) => (-(im.depth() as f64)).exp2(),
            _ => 0.0,
        };
        Ok(MergeResult { p: v, method_tag: tag, accuracy_bound: bound })
    }

    /// Merge ascending input already clamped to `[0, 1]`, of length `K`.
    pub fn merge_sorted(&self, sorted: &[f64]) -> f64 {
        debug_assert_eq!(sorted.len(), self.k);
        if sorted[0] == 0.0 {
            return 0.0;
        }
        let k = self.k;
        match (&self.spec, &self.bound) {
            (MethodSpec::Bonferroni, _) => bonferroni_sorted(sorted),
            (MethodSpec::Simes, _) => simes_sorted(sorted).min(1.0),
            (MethodSpec::Hommel, _) => hommel_sorted(sorted),
            (MethodSpec::OFamily { k: kk }, _) => (k as f64 / *kk as f64 * sorted[kk - 1]).min(1.0),
            (MethodSpec::MFamily { r }, Bound::Coeffs(c)) => m_family_raw(sorted, c.b_rk, *r),
            (MethodSpec::GridHarmonic, _) => grid_harmonic_sorted(sorted),
            (MethodSpec::MStar { r }, Bound::Coeffs(c)) => m_star_sorted(sorted, *r, c),
            (MethodSpec::Induced { .. }, Bound::Induced(im)) => induced_value(im, sorted),
            _ => unreachable!("method bound without its parameters"),
        }
    }
}

fn induced_value(im: &InducedMerge, xs: &[f64]) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..im.depth() {
        let eps = 0.5 * (lo + hi);
        if im.rejects(xs, eps) {
            hi = eps;
        } else {
            lo = eps;
        }
    }
    hi
}
