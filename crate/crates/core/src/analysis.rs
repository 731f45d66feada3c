//! Domination between M-family members, non-symmetric mergers beating the
//! grid harmonic function at `K = 2, 3`, and the `K = 2` curve description
//! of rejection regions.

use serde::{Deserialize, Serialize};

use crate::classic::{m_coefficients, power_mean};
use crate::error::{MergeError, Result};
use crate::induced::grid_harmonic_sorted;
use crate::pvec::sorted_copy;

/// Smallest margin a witness must show.
pub const WITNESS_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    FirstDominates,
    SecondDominates,
    Incomparable,
}

/// Outcome of a domination check. For `first_dominates` the witness is a
/// point where the first function is strictly smaller, for
/// `second_dominates` one where the second is. Incomparable verdicts carry
/// both: `witness` favours the first function, `counter_witness` the second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominationVerdict {
    pub relation: Relation,
    pub witness: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counter_witness: Option<Vec<f64>>,
}

impl DominationVerdict {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("verdict serializes")
    }

    /// Whether every witness the relation calls for was found.
    pub fn is_witnessed(&self) -> bool {
        match self.relation {
            Relation::Incomparable => self.witness.is_some() && self.counter_witness.is_some(),
            _ => self.witness.is_some(),
        }
    }
}

/// Deterministic search grid for `K` coordinates: a tensor product of
/// `{1e-4, …, 1}` for small `K`, two-level vectors otherwise, plus the
/// special shapes `(1, 0, …, 0)`, `(0, 1, …, 1)` and `(δ, 1, …, 1)`.
pub fn witness_grid(k: usize) -> Vec<Vec<f64>> {
    let levels = [1e-4, 1e-3, 1e-2, 1e-1, 1.0];
    let mut out: Vec<Vec<f64>> = Vec::new();
    if k <= 4 {
        let mut idx = vec![0usize; k];
        loop {
            // Nondecreasing index tuples only; the functions are symmetric.
            if idx.windows(2).all(|w| w[0] <= w[1]) {
                out.push(idx.iter().map(|&i| levels[i]).collect());
            }
            let mut pos = 0;
            while pos < k && idx[pos] == levels.len() - 1 {
                idx[pos] = 0;
                pos += 1;
            }
            if pos == k {
                break;
            }
            idx[pos] += 1;
        }
    } else {
        for &x in &levels {
            for &y in &levels {
                for m in 1..k {
                    let mut v = vec![x; m];
                    v.resize(k, y);
                    out.push(v);
                }
            }
        }
    }
    let mut corner = vec![0.0; k];
    corner[0] = 1.0;
    out.push(corner);
    let mut hole = vec![1.0; k];
    hole[0] = 0.0;
    out.push(hole);
    for e in 1..=12 {
        let mut v = vec![1.0; k];
        v[0] = 10f64.powi(-e);
        out.push(v);
    }
    out
}

/// Verdict for a known relation between `f` and `g`, with witnesses taken
/// from the grid as the points of largest gap.
fn witnessed(relation: Relation, f: impl Fn(&[f64]) -> f64, g: impl Fn(&[f64]) -> f64, grid: &[Vec<f64>]) -> DominationVerdict {
    let best = |sign: f64| -> Option<Vec<f64>> {
        grid.iter()
            .map(|p| (sign * (g(p) - f(p)), p))
            .filter(|(gap, _)| *gap >= WITNESS_MARGIN)
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, p)| p.clone())
    };
    match relation {
        Relation::FirstDominates => DominationVerdict { relation, witness: best(1.0), counter_witness: None },
        Relation::SecondDominates => DominationVerdict { relation, witness: best(-1.0), counter_witness: None },
        Relation::Incomparable => DominationVerdict { relation, witness: best(1.0), counter_witness: best(-1.0) },
    }
}

/// Compares `a·M_{r,K}` with `b·M_{s,K}` for `r < s`: the first dominates
/// iff `a ≤ b`; the second iff `rs > 0` and `a K^{-1/r} ≥ b K^{-1/s}`.
pub fn m_scaled_domination(r: f64, a: f64, s: f64, b: f64, k: usize) -> Result<DominationVerdict> {
    if r.partial_cmp(&s) != Some(std::cmp::Ordering::Less) {
        return Err(MergeError::Range(format!("need r < s, got r={r} s={s}")));
    }
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) || k < 2 {
        return Err(MergeError::Range(format!("need a, b > 0 and K >= 2, got a={a} b={b} K={k}")));
    }
    let kf = k as f64;
    let relation = if a <= b {
        Relation::FirstDominates
    } else if r * s > 0.0 && a * kf.powf(-1.0 / r) >= b * kf.powf(-1.0 / s) {
        Relation::SecondDominates
    } else {
        Relation::Incomparable
    };
    Ok(witnessed(relation, |p| a * power_mean(p, r), |p| b * power_mean(p, s), &witness_grid(k)))
}

/// Whether `F_{r,K}` is dominated by `F_{s,K}`.
fn m_dominated_by(r: f64, s: f64, k: usize) -> bool {
    if k == 2 {
        (1.0 <= r && r < s) || (s < r && r <= 1.0)
    } else {
        (k - 1) as f64 <= r && r < s
    }
}

/// Domination between `F_{r,K}` and `F_{s,K}`, from the analytic
/// characterization, with witnesses found on [`witness_grid`].
pub fn m_family_domination(r: f64, s: f64, k: usize) -> Result<DominationVerdict> {
    if r == s || r.is_nan() || s.is_nan() {
        return Err(MergeError::Range(format!("need r != s, got r={r} s={s}")));
    }
    if k < 2 {
        return Err(MergeError::Range(format!("need K >= 2, got {k}")));
    }
    let relation = if m_dominated_by(r, s, k) {
        Relation::SecondDominates
    } else if m_dominated_by(s, r, k) {
        Relation::FirstDominates
    } else {
        Relation::Incomparable
    };
    let (br, bs) = (m_coefficients(r, k)?.b_rk, m_coefficients(s, k)?.b_rk);
    Ok(witnessed(relation, |p| br * power_mean(p, r), |p| bs * power_mean(p, s), &witness_grid(k)))
}

/// The non-symmetric p-merging functions that strictly dominate the grid
/// harmonic function at `K = 2` and `K = 3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimeCounterexample {
    /// `3p₁ ∧ (3/2)p₂ ∧ 1`.
    Two,
    /// Rejection region `ε{p : g₁(p₁) + g₂(p₂) + g₃(p₃) ≥ 1}`.
    Three,
}

/// Step levels of `g₁, g₂, g₃` in twelfths on `[0, 2/11]`, `(2/11, 4/11]`,
/// `(4/11, 6/11]`; zero beyond.
const PRIME3_LEVELS: [[u32; 3]; 3] = [[12, 6, 6], [12, 6, 3], [12, 6, 3]];
/// Right ends of the steps, in elevenths.
const PRIME3_KNOTS: [f64; 3] = [2.0, 4.0, 6.0];

pub fn prime_counterexample(k: usize) -> Result<PrimeCounterexample> {
    match k {
        2 => Ok(PrimeCounterexample::Two),
        3 => Ok(PrimeCounterexample::Three),
        _ => Err(MergeError::Range(format!("fixtures exist for K = 2 and 3, got {k}"))),
    }
}

impl PrimeCounterexample {
    pub fn arity(&self) -> usize {
        match self {
            PrimeCounterexample::Two => 2,
            PrimeCounterexample::Three => 3,
        }
    }

    /// Combined p-value of `p` in its given (unsorted) order.
    pub fn merge(&self, p: &[f64]) -> Result<f64> {
        if p.len() != self.arity() {
            return Err(MergeError::Range(format!("expected {} p-values, got {}", self.arity(), p.len())));
        }
        if let Some((index, &value)) = p.iter().enumerate().find(|(_, x)| x.is_nan() || **x < 0.0) {
            return Err(MergeError::Value { index, value });
        }
        if p.contains(&0.0) {
            return Ok(0.0);
        }
        Ok(match self {
            PrimeCounterexample::Two => (3.0 * p[0]).min(1.5 * p[1]).min(1.0),
            PrimeCounterexample::Three => prime3(p).min(1.0),
        })
    }
}

/// Smallest `ε` with `Σ g_k(p_k/ε) ≥ 1`. The sum only jumps at
/// `ε = 11 p_k / knot`, and is right-continuous there, so the infimum is
/// one of those candidates.
fn prime3(p: &[f64]) -> f64 {
    let mut candidates: Vec<f64> = p.iter().flat_map(|&x| PRIME3_KNOTS.iter().map(move |&t| 11.0 * x / t)).collect();
    candidates.sort_by(f64::total_cmp);
    let total = |eps: f64| -> u32 {
        p.iter()
            .zip(PRIME3_LEVELS.iter())
            .map(|(&x, levels)| {
                // x/ε ≤ t/11, i.e. 11x ≤ tε.
                PRIME3_KNOTS.iter().position(|&t| 11.0 * x <= t * eps * (1.0 + 4.0 * f64::EPSILON)).map_or(0, |i| levels[i])
            })
            .sum()
    };
    candidates.into_iter().find(|&eps| total(eps) >= 12).unwrap_or(f64::INFINITY)
}

/// Grid check that `f ≤ H*_K` everywhere on `{i/n}^K` (offset away from
/// zero) and strictly somewhere. Returns the point of largest strict gap.
pub fn dominates_grid_harmonic(f: impl Fn(&[f64]) -> Result<f64>, k: usize, n: usize) -> Result<Option<Vec<f64>>> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut idx = vec![1usize; k];
    loop {
        let p: Vec<f64> = idx.iter().map(|&i| i as f64 / n as f64).collect();
        let h = grid_harmonic_sorted(&sorted_copy(&p));
        let v = f(&p)?;
        if v > h * (1.0 + 1e-12) {
            return Err(MergeError::NonMonotone(format!("not dominated at {p:?}: {v} > {h}")));
        }
        let gap = h - v;
        if gap >= WITNESS_MARGIN && best.as_ref().is_none_or(|(g, _)| gap > *g) {
            best = Some((gap, p));
        }
        let mut pos = 0;
        while pos < k && idx[pos] == n {
            idx[pos] = 1;
            pos += 1;
        }
        if pos == k {
            break;
        }
        idx[pos] += 1;
    }
    Ok(best.map(|(_, p)| p))
}

/// Increasing curve from `(0, 0)` through the given vertices to `(1, 1)`,
/// linear in between. A repeated abscissa encodes a jump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalCurve {
    vertices: Vec<(f64, f64)>,
}

impl DiagonalCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        let mut vertices = Vec::with_capacity(points.len() + 2);
        vertices.push((0.0, 0.0));
        vertices.extend(points);
        vertices.push((1.0, 1.0));
        for (i, &(u, v)) in vertices.iter().enumerate() {
            if !((0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v)) {
                return Err(MergeError::Curve(format!("vertex {i} = ({u}, {v}) outside the unit square")));
            }
        }
        if let Some(w) = vertices.windows(2).find(|w| w[1].0 < w[0].0 || w[1].1 < w[0].1) {
            return Err(MergeError::Curve(format!("not increasing between {:?} and {:?}", w[0], w[1])));
        }
        Ok(Self { vertices })
    }

    /// The identity curve, which yields Bonferroni.
    pub fn identity() -> Self {
        Self::new(Vec::new()).expect("identity curve")
    }

    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.vertices
    }

    /// Last chain parameter whose coordinate is at most `x`.
    fn last_param(&self, x: f64, coord: fn(&(f64, f64)) -> f64) -> f64 {
        let vs = &self.vertices;
        let i = vs.partition_point(|v| coord(v) <= x) - 1;
        if i + 1 == vs.len() {
            return i as f64;
        }
        let (c0, c1) = (coord(&vs[i]), coord(&vs[i + 1]));
        i as f64 + (x - c0) / (c1 - c0)
    }

    fn point(&self, t: f64) -> (f64, f64) {
        let i = (t.floor() as usize).min(self.vertices.len() - 1);
        let frac = t - i as f64;
        if frac == 0.0 {
            return self.vertices[i];
        }
        let (a, b) = (self.vertices[i], self.vertices[i + 1]);
        (a.0 + frac * (b.0 - a.0), a.1 + frac * (b.1 - a.1))
    }
}

/// `u₁ + u₂ ∧ 1` for the largest curve point `(u₁, u₂) ≤ (p₁, p₂)`.
///
/// The curve always contains the origin, so such a point exists.
pub fn diag_curve_merge(curve: &DiagonalCurve, p1: f64, p2: f64) -> Result<f64> {
    for (index, value) in [(0, p1), (1, p2)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(MergeError::Value { index, value });
        }
    }
    let t = curve.last_param(p1, |v| v.0).min(curve.last_param(p2, |v| v.1));
    let (u1, u2) = curve.point(t);
    Ok((u1 + u2).min(1.0))
}

/// Lower set `E ⊂ [0,1]²` given by the height `h(u)` at which its complement
/// starts in column `u`: vertices with nondecreasing `u` and nonincreasing
/// `h`, linear in between, `h = 0` right of the last vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerSetBoundary {
    pub vertices: Vec<(f64, f64)>,
}

/// `1 ∧ inf{u₁ + u₂ : (u₁, u₂) ∈ [0,1]² \ E}`.
pub fn ucp_lower_set_k2(boundary: &LowerSetBoundary) -> Result<f64> {
    let vs = &boundary.vertices;
    if vs.is_empty() {
        return Err(MergeError::EmptySet);
    }
    if vs.iter().any(|&(u, h)| !((0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&h))) {
        return Err(MergeError::Curve("boundary vertex outside the unit square".into()));
    }
    if vs.windows(2).any(|w| w[1].0 < w[0].0 || w[1].1 > w[0].1) {
        return Err(MergeError::Curve("boundary must move right and down".into()));
    }
    // u + h(u) is piecewise linear, so its infimum sits at a vertex or at
    // the start of the empty region right of the last vertex.
    let mut inf = vs.iter().map(|&(u, h)| u + h).fold(f64::INFINITY, f64::min);
    let last = vs[vs.len() - 1].0;
    if last < 1.0 {
        inf = inf.min(last);
    }
    Ok(inf.min(1.0))
}
