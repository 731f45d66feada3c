//! True-discovery matrices: `DM_{l,j} = max_{I : |R \ I| < j} F_p(I)` with `R`
//! the indices of the `l` smallest p-values.

use rayon::prelude::*;
use serde::Serialize;

use crate::classic::{m_coefficients, MCoefficients};
use crate::error::{MergeError, Result};
use crate::induced::{check_m_star_domain, grid_harmonic_sorted, m_star_sorted};
use crate::method::MethodSpec;
use crate::numeric::{format_float, CompensatedSum};
use crate::pvec::{sorted_copy, PVector};

pub const DEFAULT_CORNER: usize = 120;
pub const DEFAULT_ALPHAS: [f64; 2] = [0.01, 0.05];

/// Slack applied to analytic upper bounds before they are used to skip an
/// exact evaluation.
const BOUND_SLACK: f64 = 1e-9;

/// Lower-triangular matrix of combined p-values, rows `l = 1..=corner`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscoveryMatrix {
    pub corner: usize,
    pub method_tag: String,
    pub alphas: Vec<f64>,
    /// `dm[l-1][j-1]`, nondecreasing in `j`.
    pub dm: Vec<Vec<f64>>,
    /// The per-`j` maxima before the running maximum is taken.
    pub dm_prime: Vec<Vec<f64>>,
}

impl DiscoveryMatrix {
    /// `DM_{l,j}` with 1-based indices.
    pub fn get(&self, l: usize, j: usize) -> f64 {
        self.dm[l - 1][j - 1]
    }

    pub fn get_prime(&self, l: usize, j: usize) -> f64 {
        self.dm_prime[l - 1][j - 1]
    }

    /// Whether the running maximum changed nothing.
    pub fn equals_prime(&self) -> bool {
        self.dm == self.dm_prime
    }

    /// CSV with header `l,j,p`, one row per cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("l,j,p\n");
        for (l, row) in self.dm.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                out.push_str(&format!("{},{},{}\n", l + 1, j + 1, format_float(*v)));
            }
        }
        out
    }

    /// CSV with header `l,j,bucket` for the given ascending thresholds.
    pub fn categories_csv(&self, alphas: &[f64]) -> String {
        let mut out = String::from("l,j,bucket\n");
        for (l, row) in categorize(self, alphas).iter().enumerate() {
            for (j, b) in row.iter().enumerate() {
                out.push_str(&format!("{},{},{}\n", l + 1, j + 1, b));
            }
        }
        out
    }
}

/// Bucket index per cell: the first `i` with `value ≤ alphas[i]`, or
/// `alphas.len()` when above every threshold.
pub fn categorize(dm: &DiscoveryMatrix, alphas: &[f64]) -> Vec<Vec<usize>> {
    dm.dm.iter().map(|row| row.iter().map(|&v| alphas.iter().position(|&a| v <= a).unwrap_or(alphas.len())).collect()).collect()
}

/// `max{j : DM_{l,j} ≤ α}`, zero if no cell qualifies.
pub fn true_discovery_lower_bound(dm: &DiscoveryMatrix, l: usize, alpha: f64) -> Result<usize> {
    if l == 0 || l > dm.corner {
        return Err(MergeError::Range(format!("l = {l} outside 1..={}", dm.corner)));
    }
    Ok(dm.dm[l - 1].iter().rposition(|&v| v <= alpha).map_or(0, |j| j + 1))
}

/// Discovery matrix by the suffix-augmented search: for each `l` and `j`,
/// the maximum of `F` over `{j..l} ∪ {i..K}`, `i = K+1, K, …, l+1`, followed
/// by a running maximum over `j`.
pub fn discovery_matrix(p: &PVector, family: &MethodSpec, corner: usize) -> Result<DiscoveryMatrix> {
    let k = p.len();
    if corner == 0 || corner > k {
        return Err(MergeError::Range(format!("corner = {corner} outside 1..={k}")));
    }
    let sorted: Vec<f64> = sorted_copy(p.values()).into_iter().map(|x| x.min(1.0)).collect();
    let ctx = Context::new(&sorted, family, corner)?;
    let rows: Vec<Result<Vec<f64>>> = (1..=corner).into_par_iter().map(|l| ctx.row(l)).collect();
    let dm_prime = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let dm = dm_prime
        .iter()
        .map(|row| {
            let mut run = f64::NEG_INFINITY;
            row.iter()
                .map(|&v| {
                    run = run.max(v);
                    run
                })
                .collect()
        })
        .collect();
    Ok(DiscoveryMatrix { corner, method_tag: family.to_string(), alphas: DEFAULT_ALPHAS.to_vec(), dm, dm_prime })
}

/// Reference discovery matrix by enumeration of every non-empty subset;
/// exponential in `K`.
pub fn discovery_matrix_bruteforce(p: &PVector, family: &MethodSpec, corner: usize) -> Result<Vec<Vec<f64>>> {
    let k = p.len();
    if k > 20 {
        return Err(MergeError::Range(format!("brute force limited to K <= 20, got {k}")));
    }
    let sorted: Vec<f64> = sorted_copy(p.values()).into_iter().map(|x| x.min(1.0)).collect();
    let mut values = Vec::with_capacity(1 << k);
    values.push(f64::NAN);
    for mask in 1u32..(1 << k) {
        let set: Vec<f64> = (0..k).filter(|g| mask >> g & 1 == 1).map(|g| sorted[g]).collect();
        values.push(family.merge_sorted(&set)?);
    }
    let mut out = Vec::with_capacity(corner);
    for l in 1..=corner {
        let r_mask: u32 = (1 << l) - 1;
        let row = (1..=l)
            .map(|j| {
                (1u32..(1 << k))
                    .filter(|m| ((r_mask & !m).count_ones() as usize) < j)
                    .map(|m| values[m as usize])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        out.push(row);
    }
    Ok(out)
}

enum Family {
    Bonferroni,
    Simes,
    Hommel,
    Power { r: f64, b: Vec<f64> },
    GridHarmonic,
    MStar { r: f64, b: Vec<f64>, coeffs: Vec<Option<MCoefficients>> },
    Generic(MethodSpec),
}

/// Precomputed statistics over the sorted input, shared by all rows.
struct Context<'a> {
    p: &'a [f64],
    k: usize,
    corner: usize,
    family: Family,
    ell: Vec<f64>,
    /// `simes_tail[(a-1)(K+2) + i] = min_{g ≥ i} p_g / (g + a + 1 - i)`: the
    /// Simes minimum of the suffix `{i..K}` placed after `a` smaller values.
    simes_tail: Vec<f64>,
    power: Option<PowerStats>,
}

impl<'a> Context<'a> {
    fn new(p: &'a [f64], spec: &MethodSpec, corner: usize) -> Result<Self> {
        let k = p.len();
        let mut ell = vec![0.0; k + 1];
        let mut acc = CompensatedSum::new();
        for (n, slot) in ell.iter_mut().enumerate().skip(1) {
            acc.add(1.0 / n as f64);
            *slot = acc.value();
        }
        let coeff_table = |r: f64| -> Result<Vec<f64>> {
            let mut b = vec![1.0; k + 1];
            for (n, slot) in b.iter_mut().enumerate().skip(2) {
                *slot = m_coefficients(r, n)?.b_rk;
            }
            Ok(b)
        };
        let family = match *spec {
            MethodSpec::Bonferroni => Family::Bonferroni,
            MethodSpec::Simes => Family::Simes,
            MethodSpec::Hommel => Family::Hommel,
            MethodSpec::MFamily { r } => Family::Power { r, b: coeff_table(r)? },
            MethodSpec::GridHarmonic => Family::GridHarmonic,
            MethodSpec::MStar { r } => {
                let mut coeffs = vec![None; k + 1];
                for (n, slot) in coeffs.iter_mut().enumerate().skip(3) {
                    if check_m_star_domain(r, n).is_ok() {
                        *slot = Some(m_coefficients(r, n)?);
                    }
                }
                Family::MStar { r, b: coeff_table(r)?, coeffs }
            }
            MethodSpec::OFamily { .. } | MethodSpec::Induced { .. } => {
                // Arity one is always present and these families fix K.
                if k >= 1 {
                    spec.merge_sorted(&p[..1])?;
                }
                Family::Generic(*spec)
            }
        };
        let needs_simes = !matches!(family, Family::Bonferroni | Family::Power { .. } | Family::Generic(_));
        let simes_tail = if needs_simes { simes_tail_table(p, corner) } else { Vec::new() };
        let power = match &family {
            Family::Power { r, .. } | Family::MStar { r, .. } => Some(PowerStats::new(p, *r)),
            _ => None,
        };
        Ok(Self { p, k, corner, family, ell, simes_tail, power })
    }

    /// `p_g`, 1-based.
    fn at(&self, g: usize) -> f64 {
        self.p[g - 1]
    }

    fn simes_of(&self, j: usize, l: usize, i: usize, head_min: f64) -> f64 {
        let a = l - j + 1;
        let n = a + (self.k + 1 - i);
        let tail = if i > self.k { f64::INFINITY } else { self.simes_tail[(a - 1) * (self.k + 2) + i] };
        n as f64 * head_min.min(tail)
    }

    fn row(&self, l: usize) -> Result<Vec<f64>> {
        let k = self.k;
        let mut out = Vec::with_capacity(l);
        let mut buf = Vec::with_capacity(k);
        for j in 1..=l {
            if self.at(j) == 0.0 {
                out.push(0.0);
                continue;
            }
            // Simes minimum over the head {j..l}.
            let head_min = (j..=l).map(|g| self.at(g) / (g - j + 1) as f64).fold(f64::INFINITY, f64::min);
            let suffix_starts = (l + 1..=k + 1).rev();
            let best = match &self.family {
                Family::Bonferroni => {
                    suffix_starts.map(|i| ((l - j + 1 + k + 1 - i) as f64 * self.at(j)).min(1.0)).fold(f64::NEG_INFINITY, f64::max)
                }
                Family::Simes => suffix_starts.map(|i| self.simes_of(j, l, i, head_min).min(1.0)).fold(f64::NEG_INFINITY, f64::max),
                Family::Hommel => suffix_starts
                    .map(|i| {
                        let n = l - j + 1 + k + 1 - i;
                        (self.ell[n] * self.simes_of(j, l, i, head_min)).min(1.0)
                    })
                    .fold(f64::NEG_INFINITY, f64::max),
                Family::Power { r, b } => {
                    let ps = self.power.as_ref().expect("power statistics");
                    suffix_starts
                        .map(|i| {
                            let n = l - j + 1 + k + 1 - i;
                            (b[n] * ps.mean(self.p, j, l, i, *r)).min(1.0)
                        })
                        .fold(f64::NEG_INFINITY, f64::max)
                }
                Family::GridHarmonic => {
                    let bounds: Vec<(usize, f64, f64)> = suffix_starts
                        .map(|i| {
                            let n = l - j + 1 + k + 1 - i;
                            let s = self.simes_of(j, l, i, head_min);
                            (i, s.min(1.0), (self.ell[n] * s).min(1.0))
                        })
                        .collect();
                    self.pruned_max(j, l, bounds, &mut buf, |set| Ok(grid_harmonic_sorted(set)))?
                }
                Family::MStar { r, b, coeffs } => {
                    let ps = self.power.as_ref().expect("power statistics");
                    let bounds: Vec<(usize, f64, f64)> = suffix_starts
                        .map(|i| {
                            let n = l - j + 1 + k + 1 - i;
                            let plain = (b[n] * ps.mean(self.p, j, l, i, *r)).min(1.0);
                            let lower = if coeffs[n].is_some() { self.simes_of(j, l, i, head_min).min(1.0) } else { plain };
                            (i, lower, plain)
                        })
                        .collect();
                    self.pruned_max(j, l, bounds, &mut buf, |set| {
                        Ok(match &coeffs[set.len()] {
                            Some(c) => m_star_sorted(set, *r, c),
                            None if set.len() == 1 => set[0].min(1.0),
                            None => (b[set.len()] * crate::classic::power_mean(set, *r)).min(1.0),
                        })
                    })?
                }
                Family::Generic(spec) => {
                    let mut best = f64::NEG_INFINITY;
                    for i in suffix_starts {
                        self.fill(&mut buf, j, l, i);
                        best = best.max(spec.merge_sorted(&buf)?);
                    }
                    best
                }
            };
            out.push(best);
        }
        debug_assert!(l <= self.corner);
        Ok(out)
    }

    fn fill(&self, buf: &mut Vec<f64>, j: usize, l: usize, i: usize) {
        buf.clear();
        buf.extend_from_slice(&self.p[j - 1..l]);
        if i <= self.k {
            buf.extend_from_slice(&self.p[i - 1..]);
        }
    }

    /// Maximum of an expensive `F` over the candidate suffix starts, given
    /// `(i, lower, upper)` bounds per candidate. The candidate with the best
    /// lower bound is evaluated first; the rest in decreasing order of upper
    /// bound until no remaining upper bound exceeds the best exact value.
    fn pruned_max<F>(&self, j: usize, l: usize, mut bounds: Vec<(usize, f64, f64)>, buf: &mut Vec<f64>, exact: F) -> Result<f64>
    where
        F: Fn(&[f64]) -> Result<f64>,
    {
        let first =
            bounds.iter().enumerate().max_by(|a, b| a.1 .1.total_cmp(&b.1 .1)).map(|(idx, _)| idx).expect("at least the empty suffix");
        let (i0, _, _) = bounds.swap_remove(first);
        self.fill(buf, j, l, i0);
        let mut best = exact(buf)?;
        bounds.sort_by(|a, b| b.2.total_cmp(&a.2));
        for (i, _, upper) in bounds {
            if best >= 1.0 || upper * (1.0 + BOUND_SLACK) <= best {
                break;
            }
            self.fill(buf, j, l, i);
            best = best.max(exact(buf)?);
        }
        Ok(best)
    }
}

fn simes_tail_table(p: &[f64], corner: usize) -> Vec<f64> {
    let k = p.len();
    let width = k + 2;
    let mut tab = vec![f64::INFINITY; corner * width];
    // Along each diagonal e = a + 1 - i the quantity is a suffix minimum of
    // p_g / (g + e).
    for e in (2 - k as i64)..=0 {
        let mut run = f64::INFINITY;
        let lowest = (2 - e).max(1) as usize;
        for g in (lowest..=k).rev() {
            let pos = g as i64 + e;
            run = run.min(p[g - 1] / pos as f64);
            let a = g as i64 + e - 1;
            if a >= 1 && (a as usize) <= corner {
                tab[(a as usize - 1) * width + g] = run;
            }
        }
    }
    tab
}

/// Normalised power sums for the mean of `{j..l} ∪ {i..K}` in `O(1)`.
struct PowerStats {
    /// `r < 0`: `Σ_{h ≥ g} (p_h/p_g)^r`; `r > 0`: `Σ_{h ≤ g} (p_h/p_g)^r`.
    norm: Vec<f64>,
    /// `r > 0`: `Σ_{h ≥ g} (p_h/p_K)^r`.
    tail_to_max: Vec<f64>,
    /// `r = 0`: prefix sums of `ln p`.
    log_prefix: Vec<f64>,
}

impl PowerStats {
    fn new(p: &[f64], r: f64) -> Self {
        let k = p.len();
        let mut norm = Vec::new();
        let mut tail_to_max = Vec::new();
        let mut log_prefix = Vec::new();
        if r.is_finite() && r < 0.0 {
            norm = vec![0.0; k + 2];
            for g in (1..=k).rev() {
                let next = if g < k { norm[g + 1] * (p[g] / p[g - 1]).powf(r) } else { 0.0 };
                norm[g] = 1.0 + next;
            }
        } else if r.is_finite() && r > 0.0 {
            norm = vec![0.0; k + 1];
            for g in 1..=k {
                // Entries at zero p-values are never read; keep them finite.
                let prev = if g > 1 && p[g - 1] > 0.0 { norm[g - 1] * (p[g - 2] / p[g - 1]).powf(r) } else { 0.0 };
                norm[g] = 1.0 + prev;
            }
            tail_to_max = vec![0.0; k + 2];
            for g in (1..=k).rev() {
                tail_to_max[g] = tail_to_max[g + 1] + (p[g - 1] / p[k - 1]).powf(r);
            }
        } else if r == 0.0 {
            log_prefix = vec![0.0; k + 1];
            let mut acc = CompensatedSum::new();
            for g in 1..=k {
                // Sets start at a positive p-value, so zeros cancel out of
                // every difference that is read.
                if p[g - 1] > 0.0 {
                    acc.add(p[g - 1].ln());
                }
                log_prefix[g] = acc.value();
            }
        }
        Self { norm, tail_to_max, log_prefix }
    }

    /// Power mean `M_{r,n}` of `{j..l} ∪ {i..K}` (1-based, `i = K+1` empty).
    fn mean(&self, p: &[f64], j: usize, l: usize, i: usize, r: f64) -> f64 {
        let k = p.len();
        let at = |g: usize| p[g - 1];
        let n = (l - j + 1 + k + 1 - i) as f64;
        if r == f64::NEG_INFINITY {
            return at(j);
        }
        if r == f64::INFINITY {
            return if i <= k { at(k) } else { at(l) };
        }
        if r == 0.0 {
            let lp = &self.log_prefix;
            let s = lp[l] - lp[j - 1] + if i <= k { lp[k] - lp[i - 1] } else { 0.0 };
            return (s / n).exp();
        }
        if r < 0.0 {
            let pj = at(j);
            let head = if l < k { self.norm[j] - self.norm[l + 1] * (at(l + 1) / pj).powf(r) } else { self.norm[j] };
            let tail = if i <= k { self.norm[i] * (at(i) / pj).powf(r) } else { 0.0 };
            return pj * ((head + tail) / n).powf(1.0 / r);
        }
        let pl = at(l);
        let head = if j > 1 { self.norm[l] - self.norm[j - 1] * (at(j - 1) / pl).powf(r) } else { self.norm[l] };
        if i > k {
            return pl * (head / n).powf(1.0 / r);
        }
        let pk = at(k);
        at(k) * ((head * (pl / pk).powf(r) + self.tail_to_max[i]) / n).powf(1.0 / r)
    }
}
