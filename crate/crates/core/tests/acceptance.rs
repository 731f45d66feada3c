//! Acceptance criteria 1-9. Each test prints one `PASS`/`FAIL` line to the
//! real stdout (bypassing libtest capture) before asserting.

use std::io::Write;
use std::time::Instant;

use pmerge_core::analysis::{dominates_grid_harmonic, prime_counterexample};
use pmerge_core::calibrate::{grid_harmonic_calibrator, mstar_calibrator};
use pmerge_core::classic::{branch_residual, hommel, m_coefficients, m_family, simes, solve_m_coefficients};
use pmerge_core::discovery::{discovery_matrix, discovery_matrix_bruteforce};
use pmerge_core::induced::{gamma_k_exact, grid_harmonic, grid_harmonic_exact, m_star, merge_induced, InducedMerge};
use pmerge_core::method::{MergeMethod, MethodSpec};
use pmerge_core::simlab::{
    adversarial_permutation_model, borderline_epsilon, empirical_cdfs, exceedance, simulate_merged, threshold_grid, DiscreteScenario,
    ZTestModel,
};
use pmerge_core::PVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, title: &str, ok: bool, detail: &str) {
    let line = format!("[{}] criterion {n}: {title} ({detail})\n", if ok { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(ok, "criterion {n} failed: {detail}");
}

/// p-values spread over many magnitudes, with occasional ties.
fn random_p(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    (0..k)
        .map(|_| {
            let u: f64 = rng.random_range(1e-9..1.0);
            match rng.random_range(0..4) {
                0 => u,
                1 => u.powi(4),
                2 => 0.05 * u,
                _ => (u * 20.0).ceil() / 20.0,
            }
        })
        .collect()
}

fn bind(s: &str, k: usize) -> MergeMethod {
    s.parse::<MethodSpec>().unwrap().bind(k).unwrap()
}

#[test]
fn criterion_1_borderline_epsilon() {
    let t0 = Instant::now();
    let k = 1_000_000;
    let s = DiscreteScenario::new(k, 1000).unwrap();
    let cases = [
        ("bonferroni", 1.00e-8, 1e-4),
        ("simes", 1.00e-8, 1e-4),
        ("hommel", 6.94e-10, 1e-2),
        ("grid-harmonic", 5.12e-9, 1e-2),
        ("m:r=-1", 4.25e-9, 1e-2),
        ("m-star:r=-1", 4.52e-9, 1e-2),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (m, expect, tol) in cases {
        let e = borderline_epsilon(&s, &bind(m, k)).unwrap();
        let rel = (e / expect - 1.0).abs();
        ok &= rel <= tol;
        parts.push(format!("{m}={e:.4e}"));
    }
    let secs = t0.elapsed().as_secs_f64();
    ok &= secs < 60.0;
    report(1, "borderline epsilon at K=1e6, K1=1e3", ok, &format!("{}; {secs:.1}s", parts.join(", ")));
}

#[test]
fn criterion_2_coefficient_solver() {
    let t0 = Instant::now();
    let rs = [-5.0, -2.0, -1.0, -0.5, 0.0, 0.2];
    let ks = [3usize, 5, 10, 100];
    let mut ok = true;
    let mut worst_residual = 0.0f64;
    let mut closed = 0;
    for &k in &ks {
        for &r in &rs {
            let c = solve_m_coefficients(r, k).unwrap();
            if r >= 1.0 / (k - 1) as f64 {
                // Closed-form branch: no root to solve.
                ok &= c.c_r == 0.0 && c.is_closed_form();
                closed += 1;
                continue;
            }
            let res = branch_residual(r, k, c.c_r).abs();
            worst_residual = worst_residual.max(res);
            ok &= res <= 1e-12 && c.c_r > 0.0 && c.c_r < 1.0 / k as f64;
        }
        for &r in &rs {
            for &s in &rs {
                if r < s && r * s > 0.0 {
                    let (br, bs) = (m_coefficients(r, k).unwrap().b_rk, m_coefficients(s, k).unwrap().b_rk);
                    let lower = (k as f64).powf(1.0 / s - 1.0 / r) * br;
                    ok &= lower <= bs * (1.0 + 1e-9) && bs <= br * (1.0 + 1e-9);
                }
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ok &= secs < 5.0;
    report(
        2,
        "coefficient roots, bounds and b ordering",
        ok,
        &format!("worst residual {worst_residual:.2e}; {closed} closed-form cases have c_r = 0; {secs:.2}s"),
    );
}

#[test]
fn criterion_3_oracle_equivalence() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tol = (-52f64).exp2();
    let mut ok = true;
    let mut worst_gh = 0.0f64;
    for k in [3usize, 5, 12] {
        let im = InducedMerge::new(grid_harmonic_calibrator(k).unwrap(), 52).unwrap();
        for _ in 0..1000 {
            let p = PVector::new(random_p(&mut rng, k)).unwrap();
            let diff = (merge_induced(&p, &im).unwrap().p - grid_harmonic_exact(&p)).abs();
            worst_gh = worst_gh.max(diff);
            ok &= diff <= tol + 1e-12;
        }
    }
    let mut worst_ms = 0.0f64;
    for r in [-2.0, -1.0, 0.0, 0.5, 1.0] {
        for k in [3usize, 5, 10] {
            let coeffs = m_coefficients(r, k).unwrap();
            let im = InducedMerge::new(mstar_calibrator(r, k, &coeffs).unwrap(), 52).unwrap();
            for _ in 0..200 {
                let p = PVector::new(random_p(&mut rng, k)).unwrap();
                let diff = (merge_induced(&p, &im).unwrap().p - m_star(&p, r, &coeffs).unwrap()).abs();
                worst_ms = worst_ms.max(diff);
                ok &= diff <= tol + 1e-9;
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ok &= secs < 60.0;
    report(
        3,
        "binary search M=52 vs exact forms",
        ok,
        &format!("grid harmonic max |diff| {worst_gh:.1e}, m-star {worst_ms:.1e}; {secs:.1}s"),
    );
}

#[test]
fn criterion_4_domination() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ok = true;
    let mut notes = Vec::new();
    for k in 2..=20 {
        for _ in 0..300 {
            let p = PVector::new(random_p(&mut rng, k)).unwrap();
            ok &= grid_harmonic(&p) <= hommel(&p) * (1.0 + 1e-12);
        }
    }
    let mut strict_all = true;
    for k in 4..=40 {
        let alpha = 1e-3 / k as f64;
        let p = PVector::new((1..=k).map(|i| i as f64 * alpha).collect()).unwrap();
        strict_all &= grid_harmonic(&p) < hommel(&p);
    }
    ok &= strict_all;
    notes.push(format!("H* < H at (a,..,Ka) for K=4..40: {strict_all}"));

    let mut strict_m = 0;
    let mut cases = 0;
    for r in [-2.0, -1.0, -0.5, 0.0, 0.3] {
        for k in [3usize, 4, 6, 10] {
            let coeffs = m_coefficients(r, k).unwrap();
            if r >= (k - 1) as f64 {
                continue;
            }
            cases += 1;
            let mut strict = false;
            for _ in 0..300 {
                let p = PVector::new(random_p(&mut rng, k)).unwrap();
                let (star, plain) = (m_star(&p, r, &coeffs).unwrap(), m_family(&p, r, &coeffs).unwrap());
                ok &= star <= plain * (1.0 + 1e-12);
                strict |= star < plain * (1.0 - 1e-9);
            }
            strict_m += strict as usize;
        }
    }
    ok &= strict_m == cases;
    notes.push(format!("F* <= F with a strict witness in {strict_m}/{cases} (r,K)"));

    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let p = PVector::new(random_p(&mut rng, 3)).unwrap();
        worst = worst.max((grid_harmonic(&p) - hommel(&p)).abs());
    }
    ok &= worst <= (-50f64).exp2();
    notes.push(format!("max |H*_3 - H_3| = {worst:.1e}"));
    let (g3, g4) = (gamma_k_exact(3).unwrap(), gamma_k_exact(4).unwrap());
    ok &= g3 == (1, 1) && g4 == (3, 4);
    notes.push(format!("gamma_3 = {}/{}, gamma_4 = {}/{}", g3.0, g3.1, g4.0, g4.1));
    report(4, "domination suite", ok, &notes.join("; "));
}

#[test]
fn criterion_5_simes_minimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ok = true;
    let mut checked = 0usize;
    for k in [2usize, 3, 5, 10] {
        let mut names: Vec<String> =
            ["bonferroni", "hommel", "grid-harmonic", "m:r=-inf", "m:r=-2", "m:r=-1", "m:r=0", "m:r=0.5", "m:r=1", "m:r=2", "m:r=inf"]
                .iter()
                .map(|s| s.to_string())
                .collect();
        names.extend((1..=k).map(|j| format!("o:k={j}")));
        for r in ["-2", "-1", "0", "0.5"] {
            if k >= 3 {
                names.push(format!("m-star:r={r}"));
            }
        }
        if k >= 3 {
            names.push("induced:grid-harmonic:M=52".into());
        }
        let methods: Vec<MergeMethod> = names.iter().map(|n| bind(n, k)).collect();
        for _ in 0..10_000 {
            let p = PVector::new(random_p(&mut rng, k)).unwrap();
            let s = simes(&p).min(1.0);
            for m in &methods {
                let v = m.merge(&p).unwrap().p;
                ok &= v >= s - 1e-12;
                checked += 1;
            }
        }
    }
    report(5, "every symmetric method is at least Simes", ok, &format!("{checked} evaluations"));
}

#[test]
fn criterion_6_validity() {
    let t0 = Instant::now();
    let reps = 100_000;
    let k = 10;
    let grid: Vec<f64> = (1..=20).map(|i| 0.005 * i as f64).collect();
    let names = [
        "bonferroni",
        "hommel",
        "grid-harmonic",
        "m:r=-1",
        "m:r=0",
        "m:r=1",
        "m-star:r=-1",
        "m-star:r=0.5",
        "o:k=3",
        "induced:grid-harmonic:M=52",
    ];
    let methods: Vec<MergeMethod> = names.iter().map(|n| bind(n, k)).collect();
    let mut ok = true;
    let mut worst = f64::NEG_INFINITY;
    let mut models = 0;
    let mut check = |merged: Vec<Vec<f64>>| {
        for values in merged {
            for e in exceedance(&values, &grid) {
                worst = worst.max((e.fraction - e.threshold) / e.stderr);
                ok &= e.is_valid(4.0, reps);
            }
        }
    };
    for alpha in [0.01, 0.05, 0.1] {
        let adv = adversarial_permutation_model(k, alpha, 61).unwrap();
        check(simulate_merged(|i| adv.draw(i), &methods, reps));
        models += 1;
    }
    for rho in [0.0, 0.5, 0.9] {
        let z = ZTestModel::new(k, 0, rho, 62).unwrap();
        check(simulate_merged(|i| z.draw(i), &methods, reps));
        models += 1;
    }
    let secs = t0.elapsed().as_secs_f64();
    ok &= secs < 300.0;
    report(
        6,
        "Monte Carlo validity at 4 sigma",
        ok,
        &format!("{} methods x {models} models x {reps} reps; largest (Q-t)/se = {worst:.2}; {secs:.1}s", names.len()),
    );
}

#[test]
fn criterion_7_cdf_ordering() {
    let t0 = Instant::now();
    let (k, reps) = (1000, 10_000);
    let model = ZTestModel::new(k, 10, 0.9, 42).unwrap();
    let names = ["simes", "grid-harmonic", "m-star:r=-1", "m:r=-1", "hommel", "bonferroni"];
    let methods: Vec<MergeMethod> = names.iter().map(|n| bind(n, k)).collect();
    let grid = threshold_grid(512, 1.0);
    let cdfs = empirical_cdfs(&model, &methods, reps, &grid).unwrap();
    let at = |m: usize, t: usize| cdfs[m][t].1;
    // Four standard errors of a difference of two proportions.
    let tol = |a: f64, b: f64| 4.0 * ((a * (1.0 - a) + b * (1.0 - b)) / reps as f64).sqrt() + 1e-12;
    let mut ok = true;
    let mut violations = Vec::new();
    for (t, &thr) in grid.iter().enumerate() {
        let (s, gh, hs, h, hom, bon) = (at(0, t), at(1, t), at(2, t), at(3, t), at(4, t), at(5, t));
        for (name, hi, lo) in [("simes>=gh", s, gh), ("gh>=harmonic*", gh, hs), ("gh>=hommel", gh, hom)] {
            if hi + tol(hi, lo) < lo {
                ok = false;
                violations.push(format!("{name} at t={}", thr));
            }
        }
        let floor = bon.min(hom);
        for (name, v) in [("grid-harmonic", gh), ("harmonic*", hs), ("harmonic", h)] {
            if floor > v + tol(floor, v) {
                ok = false;
                violations.push(format!("min(bonferroni, hommel) above {name} at t={}", thr));
            }
        }
    }
    let mid = grid.iter().position(|&t| t >= 0.05).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let detail = format!(
        "at t={:.3}: simes {:.3}, grid-harmonic {:.3}, harmonic* {:.3}, harmonic {:.3}, hommel {:.3}, bonferroni {:.3}; {} violations; {secs:.1}s",
        grid[mid],
        at(0, mid),
        at(1, mid),
        at(2, mid),
        at(3, mid),
        at(4, mid),
        at(5, mid),
        violations.len()
    );
    report(7, "CDF ordering, K=1e3, K1=10, rho=0.9", ok, &detail);
}

#[test]
fn criterion_8_discovery_matrix() {
    let families = ["bonferroni", "simes", "hommel", "grid-harmonic", "m:r=-1", "m-star:r=-1"];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut ok = true;
    let mut cells = 0usize;
    for k in 2..=7 {
        for _ in 0..15 {
            let p = PVector::new(random_p(&mut rng, k)).unwrap();
            for f in families {
                let spec: MethodSpec = f.parse().unwrap();
                let dm = discovery_matrix(&p, &spec, k).unwrap();
                let bf = discovery_matrix_bruteforce(&p, &spec, k).unwrap();
                for l in 1..=k {
                    for j in 1..=l {
                        let (a, b) = (dm.get(l, j), bf[l - 1][j - 1]);
                        ok &= (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300);
                        cells += 1;
                    }
                    ok &= dm.dm[l - 1].windows(2).all(|w| w[0] <= w[1]);
                }
            }
        }
    }
    let p = PVector::new(
        (0..1000)
            .map(|i| {
                let u: f64 = rng.random_range(0.0..1.0);
                if i < 50 {
                    u * 1e-4
                } else {
                    u
                }
            })
            .collect(),
    )
    .unwrap();
    let mut timings = Vec::new();
    for f in families {
        let t0 = Instant::now();
        let dm = discovery_matrix(&p, &f.parse().unwrap(), 120).unwrap();
        let secs = t0.elapsed().as_secs_f64();
        ok &= secs < 120.0;
        ok &= dm.dm.iter().all(|row| row.windows(2).all(|w| w[0] <= w[1]));
        timings.push(format!("{f} {secs:.1}s"));
    }
    report(
        8,
        "discovery matrix oracle, monotonicity and corner-120 timing",
        ok,
        &format!("{cells} cells vs brute force; {}", timings.join(", ")),
    );
}

#[test]
fn criterion_9_prime_fixtures() {
    let mut ok = true;
    let mut notes = Vec::new();
    for (k, n) in [(2usize, 1000usize), (3, 80)] {
        let f = prime_counterexample(k).unwrap();
        match dominates_grid_harmonic(|p| f.merge(p), k, n) {
            Ok(Some(w)) => notes.push(format!("K={k} strict at {w:?}")),
            Ok(None) => {
                ok = false;
                notes.push(format!("K={k} no strict witness"));
            }
            Err(e) => {
                ok = false;
                notes.push(format!("K={k}: {e}"));
            }
        }
        let reps = 100_000u64;
        let grid: Vec<f64> = (1..=20).map(|i| 0.005 * i as f64).collect();
        let mut worst = f64::NEG_INFINITY;
        for alpha in [0.01, 0.05, 0.1] {
            let adv = adversarial_permutation_model(k, alpha, 90 + k as u64).unwrap();
            let values: Vec<f64> = (0..reps).map(|i| f.merge(&adv.draw(i)).unwrap()).collect();
            for e in exceedance(&values, &grid) {
                worst = worst.max((e.fraction - e.threshold) / e.stderr);
                ok &= e.is_valid(4.0, reps as usize);
            }
        }
        let z = ZTestModel { flip_last: true, ..ZTestModel::new(k, 0, 0.9, 99).unwrap() };
        let values: Vec<f64> = (0..reps).map(|i| f.merge(&z.draw(i)).unwrap()).collect();
        for e in exceedance(&values, &grid) {
            worst = worst.max((e.fraction - e.threshold) / e.stderr);
            ok &= e.is_valid(4.0, reps as usize);
        }
        notes.push(format!("K={k} largest (Q-t)/se = {worst:.2}"));
    }
    report(9, "prime-K fixtures dominate H* and stay valid", ok, &notes.join("; "));
}
