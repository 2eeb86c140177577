//! Preconditioned L-BFGS with Armijo backtracking, and golden-section search.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::sqrt;

#[derive(Debug, Clone, Copy)]
pub(crate) struct LbfgsOptions {
    pub max_iter: usize,
    pub memory: usize,
    /// Stop once the relative decrease over `window` iterations drops below.
    pub f_tol: f64,
    pub window: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            max_iter: 4000,
            memory: 12,
            f_tol: 1e-12,
            window: 10,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LbfgsOutcome {
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` starting from `x` (updated in place). `f(x, g)` returns the
/// value and writes the gradient; `precond(r, out)` applies the inverse of
/// an SPD approximation of the Hessian and seeds the two-loop recursion.
pub(crate) fn lbfgs(
    x: &mut [f64],
    mut f: impl FnMut(&[f64], &mut [f64]) -> f64,
    mut precond: impl FnMut(&[f64], &mut [f64]),
    opts: LbfgsOptions,
) -> LbfgsOutcome {
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut fx = f(x, &mut g);
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut dir = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut alpha = vec![0.0; opts.memory];
    let mut xn = vec![0.0; n];
    let mut gn = vec![0.0; n];
    let mut trail: VecDeque<f64> = VecDeque::new();
    trail.push_back(fx);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        // Two-loop recursion with the preconditioner as initial inverse.
        q.copy_from_slice(&g);
        for (j, (s, y, rho)) in hist.iter().enumerate().rev() {
            alpha[j] = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= alpha[j] * yi;
            }
        }
        precond(&q, &mut dir);
        for (j, (s, y, rho)) in hist.iter().enumerate() {
            let beta = rho * dot(y, &dir);
            for (di, si) in dir.iter_mut().zip(s) {
                *di += (alpha[j] - beta) * si;
            }
        }
        dir.iter_mut().for_each(|d| *d = -*d);
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            // Curvature pairs went stale; restart from the preconditioned step.
            hist.clear();
            precond(&g, &mut dir);
            dir.iter_mut().for_each(|d| *d = -*d);
            slope = dot(&g, &dir);
            if !(slope < 0.0) {
                converged = true;
                break;
            }
        }

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            for i in 0..n {
                xn[i] = x[i] + t * dir[i];
            }
            let fn_ = f(&xn, &mut gn);
            if fn_.is_finite() && fn_ <= fx + 1e-4 * t * slope {
                let mut s = vec![0.0; n];
                let mut y = vec![0.0; n];
                for i in 0..n {
                    s[i] = xn[i] - x[i];
                    y[i] = gn[i] - g[i];
                }
                let sy = dot(&s, &y);
                if sy > 1e-14 * sqrt(dot(&s, &s) * dot(&y, &y)) {
                    if hist.len() == opts.memory {
                        hist.pop_front();
                    }
                    hist.push_back((s, y, 1.0 / sy));
                }
                x.copy_from_slice(&xn);
                g.copy_from_slice(&gn);
                fx = fn_;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        if !accepted {
            if hist.is_empty() {
                // No descent even along the preconditioned gradient: we sit
                // at a (possibly nonsmooth) stationary point.
                converged = true;
                break;
            }
            hist.clear();
            continue;
        }
        trail.push_back(fx);
        if trail.len() > opts.window + 1 {
            trail.pop_front();
        }
        if trail.len() == opts.window + 1 {
            let old = trail[0];
            if old - fx <= opts.f_tol * fx.abs().max(1e-300) {
                converged = true;
                break;
            }
        }
    }
    LbfgsOutcome {
        f: fx,
        iterations,
        converged,
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section minimization of `f` on `[lo, hi]` with a fixed number of
/// interval reductions; returns the best evaluated point and value. A
/// degenerate bracket returns its single point.
pub fn golden_section(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, iters: usize) -> (f64, f64) {
    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    if a == b {
        return (a, f(a));
    }
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let (mut bx, mut bf) = if fc <= fd { (c, fc) } else { (d, fd) };
    for _ in 0..iters {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
            if fc < bf {
                bx = c;
                bf = fc;
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
            if fd < bf {
                bx = d;
                bf = fd;
            }
        }
    }
    (bx, bf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn golden_finds_parabola_minimum() {
        let (x, fx) = golden_section(|x| (x - 1.3) * (x - 1.3) + 2.0, 0.0, 5.0, 60);
        assert_relative_eq!(x, 1.3, epsilon = 1e-8);
        assert_relative_eq!(fx, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn golden_degenerate_bracket() {
        let mut calls = 0;
        let (x, _) = golden_section(
            |x| {
                calls += 1;
                x
            },
            2.0,
            2.0,
            40,
        );
        assert_eq!(x, 2.0);
        assert_eq!(calls, 1);
    }

    #[test]
    fn lbfgs_rosenbrock() {
        let mut x = [-1.2, 1.0];
        let out = lbfgs(
            &mut x,
            |x, g| {
                let (a, b) = (x[0], x[1]);
                g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
                g[1] = 200.0 * (b - a * a);
                (1.0 - a) * (1.0 - a) + 100.0 * (b - a * a) * (b - a * a)
            },
            |r, o| o.copy_from_slice(r),
            LbfgsOptions { f_tol: 0.0, max_iter: 500, ..Default::default() },
        );
        assert!(out.f < 1e-12, "{out:?}");
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-5);
    }

    #[test]
    fn preconditioner_solves_quadratic_in_one_step() {
        let diag = [1.0, 1e4, 1e-2];
        let mut x = [1.0, 1.0, 1.0];
        let out = lbfgs(
            &mut x,
            |x, g| {
                let mut f = 0.0;
                for i in 0..3 {
                    g[i] = diag[i] * x[i];
                    f += 0.5 * diag[i] * x[i] * x[i];
                }
                f
            },
            |r, o| {
                for i in 0..3 {
                    o[i] = r[i] / diag[i];
                }
            },
            LbfgsOptions::default(),
        );
        assert!(out.f < 1e-20);
        assert!(out.iterations <= 3);
    }
}
