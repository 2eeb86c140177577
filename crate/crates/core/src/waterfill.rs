//! Mass-constrained least-squares projection ("water-filling").
//!
//! For samples `g ≥ 0` with quadrature weights and a budget `gamma`, the
//! minimizer of `∫(v − g)²` over `v ≥ 0` with `∫v = gamma` is
//! `v* = max{lambda + g, 0}` where the level `lambda ≤ 0` meets the budget;
//! its objective equals `∫ min{lambda², g²}`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::math::ln;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterfillResult {
    pub lambda: f64,
    pub v_star: Vec<f64>,
    pub objective: f64,
    /// `∫v* − gamma`; negative when the budget exceeds `∫g`.
    pub constraint_residual: f64,
}

/// `∫ max{lambda + g, 0}`.
pub(crate) fn mass(g: &[f64], w: &[f64], lambda: f64) -> f64 {
    let mut s = 0.0;
    for (gi, wi) in g.iter().zip(w) {
        let v = lambda + gi;
        if v > 0.0 {
            s += wi * v;
        }
    }
    s
}

/// The water level alone; no validation, no allocation.
///
/// Conventions: `gamma ≥ ∫g` gives 0, `gamma = 0` gives `−max g`.
pub(crate) fn level(g: &[f64], w: &[f64], gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut gmax: f64 = 0.0;
    for (gi, wi) in g.iter().zip(w) {
        total += wi * gi;
        gmax = gmax.max(*gi);
    }
    if gamma >= total {
        return 0.0;
    }
    if gamma <= 0.0 {
        return -gmax;
    }
    let tol = 1e-12 * total.max(1.0);
    let (mut lo, mut hi) = (-gmax, 0.0);
    let mut best = 0.5 * (lo + hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        // One pass gives the mass at `mid` and the active-set sums; if the
        // affine solve on that active set stays inside the same breakpoint
        // interval it is the exact level.
        let (mut m, mut sw, mut swg) = (0.0, 0.0, 0.0);
        let (mut min_active, mut max_inactive) = (f64::INFINITY, f64::NEG_INFINITY);
        for (gi, wi) in g.iter().zip(w) {
            if mid + gi > 0.0 {
                m += wi * (mid + gi);
                sw += wi;
                swg += wi * gi;
                min_active = min_active.min(*gi);
            } else {
                max_inactive = max_inactive.max(*gi);
            }
        }
        if sw > 0.0 {
            let cand = (gamma - swg) / sw;
            if cand + min_active > 0.0 && cand + max_inactive <= 0.0 && cand <= 0.0 {
                return cand;
            }
        }
        best = mid;
        if (m - gamma).abs() <= tol * 1e-3 {
            break;
        }
        if m > gamma {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= f64::EPSILON * gmax {
            break;
        }
    }
    best
}

fn validate(g: &[f64], w: &[f64], gamma: f64) -> Result<()> {
    if g.len() != w.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} weights", g.len()),
            got: format!("{}", w.len()),
        });
    }
    if let Some(i) = g.iter().position(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(invalid!("samples must be finite and nonnegative, sample {i} is {}", g[i]));
    }
    if w.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(invalid!("weights must be positive and finite"));
    }
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(invalid!("budget must be finite and nonnegative, got {gamma}"));
    }
    Ok(())
}

pub fn solve_lambda(g: &[f64], weights: &[f64], gamma: f64) -> Result<WaterfillResult> {
    validate(g, weights, gamma)?;
    let lambda = level(g, weights, gamma);
    let v_star: Vec<f64> = g.iter().map(|x| (lambda + x).max(0.0)).collect();
    let objective = objective_of(g, weights, &v_star);
    let mass: f64 = v_star.iter().zip(weights).map(|(v, w)| v * w).sum();
    Ok(WaterfillResult {
        lambda,
        v_star,
        objective,
        constraint_residual: mass - gamma,
    })
}

/// `∫(v − g)²`.
pub fn objective_of(g: &[f64], w: &[f64], v: &[f64]) -> f64 {
    g.iter().zip(w).zip(v).map(|((gi, wi), vi)| wi * (vi - gi) * (vi - gi)).sum()
}

/// `∫ min{lambda², g²}`.
pub fn objective_min_form(g: &[f64], w: &[f64], lambda: f64) -> f64 {
    g.iter().zip(w).map(|(gi, wi)| wi * (lambda * lambda).min(gi * gi)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub trials: usize,
    pub seed: u64,
    pub optimum: f64,
    /// Smallest objective among the random competitors.
    pub best_competitor: f64,
    /// `(trial, objective)` for every competitor below `optimum − 1e-10`.
    pub violations: Vec<(usize, f64)>,
    pub note: String,
}

impl OptimalityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Randomized dominance check: draws feasible `v ≥ 0` with `∫v = gamma`
/// (Dirichlet mass splits, sparse splits, and mixtures with `v*`) and records
/// any that beat `result`.
pub fn verify_optimality(
    g: &[f64],
    weights: &[f64],
    gamma: f64,
    result: &WaterfillResult,
    trials: usize,
    seed: u64,
) -> Result<OptimalityReport> {
    validate(g, weights, gamma)?;
    if result.v_star.len() != g.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} samples", g.len()),
            got: format!("{}", result.v_star.len()),
        });
    }
    let n = g.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::INFINITY;
    let mut violations = Vec::new();
    let mut split = alloc::vec![0.0; n];
    let mut v = alloc::vec![0.0; n];
    for t in 0..trials {
        // Exponential draws normalized to the budget are Dirichlet(1,…,1).
        let sparse = t % 3 == 1;
        let mut sum = 0.0;
        for s in split.iter_mut() {
            let keep = !sparse || rng.gen_bool(0.3);
            *s = if keep { -ln(1.0 - rng.gen::<f64>()) } else { 0.0 };
            sum += *s;
        }
        if sum == 0.0 {
            split[rng.gen_range(0..n)] = 1.0;
            sum = 1.0;
        }
        for i in 0..n {
            v[i] = gamma * split[i] / sum / weights[i];
        }
        if t % 3 == 2 {
            // Mixtures stay feasible when v* carries the full budget.
            let u: f64 = rng.gen();
            let theta = u * u * u;
            if result.constraint_residual.abs() <= 1e-9 * gamma.max(1.0) {
                for i in 0..n {
                    v[i] = (1.0 - theta) * result.v_star[i] + theta * v[i];
                }
            }
        }
        let obj = objective_of(g, weights, &v);
        best = best.min(obj);
        if obj < result.objective - 1e-10 {
            violations.push((t, obj));
        }
    }
    Ok(OptimalityReport {
        trials,
        seed,
        optimum: result.objective,
        best_competitor: best,
        violations,
        note: String::from("competitors: Dirichlet splits, sparse splits, mixtures with v*"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_relative_eq;

    #[test]
    fn budget_equals_supply() {
        let r = solve_lambda(&[1.0], &[1.0], 1.0).unwrap();
        assert_eq!(r.lambda, 0.0);
        assert_eq!(r.v_star, vec![1.0]);
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn constant_supply() {
        let r = solve_lambda(&[1.0; 4], &[0.25; 4], 0.3).unwrap();
        assert_relative_eq!(r.lambda, -0.7, max_relative = 1e-12);
        for v in &r.v_star {
            assert_relative_eq!(*v, 0.3, max_relative = 1e-12);
        }
        assert_relative_eq!(r.objective, 0.49, max_relative = 1e-12);
    }

    #[test]
    fn two_level_supply() {
        let r = solve_lambda(&[2.0, 0.0], &[0.5, 0.5], 0.5).unwrap();
        assert_relative_eq!(r.lambda, -1.0, max_relative = 1e-12);
        assert_relative_eq!(r.v_star[0], 1.0, max_relative = 1e-12);
        assert_eq!(r.v_star[1], 0.0);
        assert_relative_eq!(r.objective, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn zero_budget_convention() {
        let r = solve_lambda(&[0.5, 2.0, 1.0], &[1.0; 3], 0.0).unwrap();
        assert_eq!(r.lambda, -2.0);
        assert!(r.v_star.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_cell_closed_form() {
        let (g, gamma) = (3.0, 1.2);
        let r = solve_lambda(&[g], &[1.0], gamma).unwrap();
        assert_relative_eq!(r.v_star[0], gamma, max_relative = 1e-12);
        assert_relative_eq!(r.objective, (gamma - g) * (gamma - g), max_relative = 1e-12);
        assert_relative_eq!(r.lambda, gamma - g, max_relative = 1e-12);
        let rep = verify_optimality(&[g], &[1.0], gamma, &r, 10, 1).unwrap();
        assert!(rep.passed());
        assert_relative_eq!(rep.best_competitor, r.objective, max_relative = 1e-12);
    }

    #[test]
    fn rejects_negative_samples() {
        assert!(solve_lambda(&[-1.0], &[1.0], 0.1).is_err());
        assert!(solve_lambda(&[1.0], &[0.0], 0.1).is_err());
        assert!(solve_lambda(&[1.0], &[1.0], -0.1).is_err());
    }

    #[test]
    fn brute_force_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let n = rng.gen_range(1..=16);
            let g: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
            let ws: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= ws);
            let total: f64 = g.iter().zip(&w).map(|(a, b)| a * b).sum();
            let gamma = rng.gen_range(0.0..1.2) * total;
            let r = solve_lambda(&g, &w, gamma).unwrap();
            assert!(r.constraint_residual.abs() <= 1e-12 * total.max(1.0) || r.lambda == 0.0);
            let gmax = g.iter().cloned().fold(0.0, f64::max);
            let steps = 100_000;
            let mut best = f64::INFINITY;
            for s in 0..=steps {
                let lam = -gmax * s as f64 / steps as f64;
                if mass(&g, &w, lam) <= gamma + 1e-12 {
                    best = best.min(objective_min_form(&g, &w, lam));
                }
            }
            assert!((best - r.objective).abs() < 1e-4, "{best} vs {}", r.objective);
        }
    }

    proptest::proptest! {
        #[test]
        fn value_identity_and_scaling(
            g in proptest::collection::vec(0.0f64..5.0, 1..40),
            frac in 0.0f64..1.0,
            t in 0.1f64..10.0,
        ) {
            let w = vec![1.0 / g.len() as f64; g.len()];
            let total: f64 = g.iter().zip(&w).map(|(a, b)| a * b).sum();
            let gamma = frac * total;
            let r = solve_lambda(&g, &w, gamma).unwrap();
            let alt = objective_min_form(&g, &w, r.lambda);
            proptest::prop_assert!((alt - r.objective).abs() <= 1e-10 * r.objective.max(1e-12));
            let gs: Vec<f64> = g.iter().map(|x| t * x).collect();
            let rs = solve_lambda(&gs, &w, t * gamma).unwrap();
            proptest::prop_assert!((rs.lambda - t * r.lambda).abs() <= 1e-9 * (1.0 + t * r.lambda.abs()));
            proptest::prop_assert!((rs.objective - t * t * r.objective).abs() <= 1e-9 * (1.0 + t * t * r.objective));
            // larger budget never hurts
            let r2 = solve_lambda(&g, &w, (gamma + 0.1 * total).min(total)).unwrap();
            proptest::prop_assert!(r2.objective <= r.objective + 1e-12);
        }

        #[test]
        fn dominance(g in proptest::collection::vec(0.0f64..2.0, 2..12), frac in 0.05f64..0.95, seed in 0u64..100) {
            let w = vec![0.5; g.len()];
            let total: f64 = g.iter().map(|x| 0.5 * x).sum();
            let r = solve_lambda(&g, &w, frac * total).unwrap();
            let rep = verify_optimality(&g, &w, frac * total, &r, 200, seed).unwrap();
            proptest::prop_assert!(rep.passed(), "{:?}", rep.violations);
        }
    }
}
