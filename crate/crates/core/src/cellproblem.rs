//! Cell problem for the surface tension.
//!
//! `Φ(γ)` is computed as the infimum over scales `L > 0`, profiles `u` on
//! the unit cell (affine bands `∓a x_N + c` at `x_N = ∓1/2`, periodic in
//! `x'`) and levels `λ ≤ 0` with `∫ max{λ + |∇²u|, 0} ≤ γ` of
//! `F_{1/L}(u, λ)`.
//!
//! The level is eliminated exactly: for fixed `u` the best admissible `λ`
//! is the water-fill level of `|∇²u|` (see [`crate::waterfill`]), so the
//! profile step minimizes the reduced energy `G_L(u) = F_{1/L}(u, λ(u))` by
//! preconditioned L-BFGS, and the scale step is a golden-section search in
//! `L` with a warm-started profile solve per trial scale.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::{EnergyBreakdown, EnergyWorkspace};
use crate::error::invalid;
use crate::fft::Preconditioner;
use crate::fields::{apply_boundary_bands, Grid, GridField};
use crate::math::{sin, sqrt};
use crate::optim::{golden_section, lbfgs, LbfgsOptions};
use crate::potential::{check_assumptions_seeded, PotentialSpec};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub l_min: f64,
    pub l_max: f64,
    pub golden_iters: usize,
    pub max_sweeps: usize,
    /// Relative energy decrease per sweep below which the alternation stops.
    pub sweep_tol: f64,
    pub inner_max_iter: usize,
    /// Relative decrease over ten L-BFGS steps that ends a profile solve.
    pub inner_tol: f64,
    pub band: usize,
    /// Width of the initial cubic ramp.
    pub init_width: f64,
    /// Solve with `λ = 0` and no budget (the unconstrained value `K`).
    pub pin_lambda_zero: bool,
    pub seed: u64,
    /// Random perturbation of the initial profile (relative to `|a|`).
    pub random_init: f64,
    /// 2D solves: amplitude of the seeded `x'`-dependent perturbation added to
    /// the rasterized 1D profile.
    pub perturbation: f64,
    /// 2D solves search `L` in `[L₁/f, L₁·f]` around the 1D optimum.
    pub nd_bracket_factor: f64,
    pub nd_golden_iters: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            l_min: 0.5,
            l_max: 50.0,
            golden_iters: 40,
            max_sweeps: 3,
            sweep_tol: 1e-8,
            inner_max_iter: 6000,
            inner_tol: 1e-13,
            band: 4,
            init_width: 0.4,
            pin_lambda_zero: false,
            seed: 0,
            random_init: 0.0,
            perturbation: 0.05,
            nd_bracket_factor: 1.25,
            nd_golden_iters: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// L-BFGS iterations summed over all profile solves.
    pub iterations: usize,
    pub sweeps: usize,
    pub final_grad_norm: f64,
    /// `∫ max{λ + |∇²u|, 0}` at the returned pair.
    pub constraint_mass: f64,
    pub energy_breakdown: EnergyBreakdown,
    pub converged: bool,
    /// The best scale sat on the (widened) bracket boundary.
    pub scale_at_bracket_end: bool,
    pub bracket_widened: bool,
    pub lambda_pinned: bool,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSolution {
    pub value: f64,
    pub lambda: f64,
    pub scale_l: f64,
    pub profile: GridField,
    /// Budget the pair is admissible for. For `λ`-pinned solves this is the
    /// profile's own mass `∫|∇²u|`.
    pub gamma: f64,
    pub diagnostics: Diagnostics,
}

impl CellSolution {
    /// Re-runs the water-fill on the returned profile.
    pub fn recompute_lambda(&self, spec: &PotentialSpec) -> Result<f64> {
        let mut ws = EnergyWorkspace::new(*self.profile.grid(), spec)?;
        Ok(ws.reduced(self.profile.values(), self.gamma, 1.0 / self.scale_l, spec, None).lambda)
    }

    /// Whether the profile is independent of `x'` (always true in 1D).
    pub fn is_one_dimensional(&self) -> bool {
        self.profile.grid().dim() == 1
    }
}

/// Result of the golden-section search over the scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleSearch {
    pub l: f64,
    pub value: f64,
    pub widened: bool,
    pub at_endpoint: bool,
    pub bracket: (f64, f64),
}

/// Golden-section search of `inner` over `[l_min, l_max]` with `iters`
/// reductions. If the best point lands on an end of the bracket, the
/// bracket is pushed out by a factor 4 on that side and searched once more;
/// a second endpoint hit is flagged. A degenerate bracket is returned as is.
pub fn optimize_scale(mut inner: impl FnMut(f64) -> f64, l_min: f64, l_max: f64, iters: usize) -> Result<ScaleSearch> {
    if !(l_min > 0.0) || !(l_max >= l_min) || !l_max.is_finite() {
        return Err(invalid!("scale bracket must satisfy 0 < L_min <= L_max, got [{l_min}, {l_max}]"));
    }
    if l_min == l_max {
        return Ok(ScaleSearch {
            l: l_min,
            value: inner(l_min),
            widened: false,
            at_endpoint: false,
            bracket: (l_min, l_max),
        });
    }
    let near_end = |l: f64, lo: f64, hi: f64| {
        let tol = 1e-3 * (hi - lo);
        if l - lo <= tol {
            Some(false)
        } else if hi - l <= tol {
            Some(true)
        } else {
            None
        }
    };
    let (l, v) = golden_section(&mut inner, l_min, l_max, iters);
    match near_end(l, l_min, l_max) {
        None => Ok(ScaleSearch { l, value: v, widened: false, at_endpoint: false, bracket: (l_min, l_max) }),
        Some(top) => {
            let (lo, hi) = if top { (l_min, 4.0 * l_max) } else { (0.25 * l_min, l_max) };
            let (l2, v2) = golden_section(&mut inner, lo, hi, iters + 3);
            let (l, value) = if v2 <= v { (l2, v2) } else { (l, v) };
            Ok(ScaleSearch {
                l,
                value,
                widened: true,
                at_endpoint: near_end(l, lo, hi).is_some(),
                bracket: (lo, hi),
            })
        }
    }
}

/// Initial ramp `s(t) = −t + 2w P((t + w/2)/w)` with `P(y) = y³ − y⁴/2` on
/// `[0, 1]`, continued affinely: `s' = −1` below the ramp, `+1` above, C².
fn ramp(t: f64, w: f64) -> f64 {
    let y = (t + 0.5 * w) / w;
    let p = if y <= 0.0 {
        0.0
    } else if y >= 1.0 {
        0.5 + (y - 1.0)
    } else {
        y * y * y - 0.5 * y * y * y * y
    };
    -t + 2.0 * w * p
}

/// Cubic Hermite sample of component `c` of the profile column `i` at
/// height `x`, with nodal slopes from the grid's first-derivative stencil and
/// affine continuation beyond the outer nodes.
pub fn sample_column(u: &GridField, i: usize, c: usize, x: f64) -> f64 {
    let g = u.grid();
    let n = g.n_last();
    let h = g.h();
    let val = |k: usize| u.at(i, k)[c];
    let slope = |k: usize| {
        if k == 0 {
            (-3.0 * val(0) + 4.0 * val(1) - val(2)) / (2.0 * h)
        } else if k == n - 1 {
            (3.0 * val(n - 1) - 4.0 * val(n - 2) + val(n - 3)) / (2.0 * h)
        } else {
            (val(k + 1) - val(k - 1)) / (2.0 * h)
        }
    };
    let x0 = g.x_last(0);
    let x1 = g.x_last(n - 1);
    if x <= x0 {
        return val(0) + (x - x0) * slope(0);
    }
    if x >= x1 {
        return val(n - 1) + (x - x1) * slope(n - 1);
    }
    let s = (x - x0) / h;
    let k = (s as usize).min(n - 2);
    let t = s - k as f64;
    let (t2, t3) = (t * t, t * t * t);
    (2.0 * t3 - 3.0 * t2 + 1.0) * val(k)
        + (t3 - 2.0 * t2 + t) * h * slope(k)
        + (-2.0 * t3 + 3.0 * t2) * val(k + 1)
        + (t3 - t2) * h * slope(k + 1)
}

/// `factor · u(x / factor)` column by column, bands reset afterwards. With
/// `factor = L_old / L_new` this maps an optimal profile at one scale to a
/// good guess at another.
fn rescale(u: &GridField, factor: f64, a: &[f64]) -> Result<GridField> {
    let g = *u.grid();
    let d = g.d();
    let mut out = GridField::zeros(g);
    for i in 0..g.n_prime() {
        for k in 0..g.n_last() {
            let x = g.x_last(k);
            let node = g.node(i, k);
            for c in 0..d {
                out.values_mut()[node * d + c] = factor * sample_column(u, i, c, x / factor);
            }
        }
    }
    apply_boundary_bands(&out, a)
}

struct Solver<'a> {
    spec: &'a PotentialSpec,
    grid: Grid,
    gamma: f64,
    opts: &'a SolveOptions,
    ws: EnergyWorkspace,
    best_u: GridField,
    best_l: f64,
    best_val: f64,
    iterations: usize,
    unconverged: usize,
}

impl<'a> Solver<'a> {
    fn new(spec: &'a PotentialSpec, grid: Grid, gamma: f64, opts: &'a SolveOptions, init: GridField, l0: f64) -> Result<Self> {
        Ok(Solver {
            ws: EnergyWorkspace::new(grid, spec)?,
            spec,
            grid,
            gamma,
            opts,
            best_u: init,
            best_l: l0,
            best_val: f64::INFINITY,
            iterations: 0,
            unconverged: 0,
        })
    }

    /// Minimizes the reduced energy at scale `l` in place.
    fn relax(&mut self, u: &mut [f64], l: f64) -> f64 {
        let eps = 1.0 / l;
        let mut pc = Preconditioner::new(self.grid, eps);
        let (spec, gamma, pin) = (self.spec, self.gamma, self.opts.pin_lambda_zero);
        let ws = &mut self.ws;
        let out = lbfgs(
            u,
            |x, g| {
                if pin {
                    ws.energy_f(x, 0.0, eps, spec, Some(g)).total
                } else {
                    ws.reduced(x, gamma, eps, spec, Some(g)).breakdown.total
                }
            },
            |r, o| pc.apply(r, o),
            LbfgsOptions {
                max_iter: self.opts.inner_max_iter,
                f_tol: self.opts.inner_tol,
                ..Default::default()
            },
        );
        self.iterations += out.iterations;
        if !out.converged {
            self.unconverged += 1;
        }
        out.f
    }

    /// Profile-optimal energy at scale `l`, warm-started from the best
    /// profile found so far.
    fn value_at(&mut self, l: f64) -> f64 {
        let mut u = match rescale(&self.best_u, self.best_l / l, self.spec.a()) {
            Ok(u) => u,
            Err(_) => return f64::INFINITY,
        };
        let v = self.relax(u.values_mut(), l);
        if v < self.best_val {
            self.best_val = v;
            self.best_l = l;
            self.best_u = u;
        }
        v
    }

    fn run(mut self, bracket: (f64, f64), golden_iters: usize) -> Result<CellSolution> {
        let mut notes = Vec::new();
        let l0 = self.best_l;
        let mut u0 = self.best_u.clone();
        self.best_val = self.relax(u0.values_mut(), l0);
        self.best_u = u0;
        let (mut widened, mut at_end) = (false, false);
        let mut prev = self.best_val;
        let mut sweeps = 0;
        let mut converged = false;
        let mut polished = true;
        let mut br = bracket;
        while sweeps < self.opts.max_sweeps {
            sweeps += 1;
            let search = optimize_scale(|l| self.value_at(l), br.0, br.1, golden_iters)?;
            widened |= search.widened;
            at_end = search.at_endpoint;
            // polish at the best scale
            let l = self.best_l;
            let mut u = self.best_u.clone();
            let capped = self.unconverged;
            let v = self.relax(u.values_mut(), l);
            polished = self.unconverged == capped;
            if v < self.best_val {
                self.best_val = v;
                self.best_u = u;
            }
            let decrease = prev - self.best_val;
            if sweeps > 1 && decrease <= self.opts.sweep_tol * self.best_val.abs() {
                converged = true;
                break;
            }
            if decrease < -1e-12 * self.best_val.abs() {
                notes.push(format!("sweep {sweeps} increased the energy by {:.3e}", -decrease));
            }
            prev = self.best_val;
            br = (self.best_l / 1.5, self.best_l * 1.5);
        }
        if self.opts.max_sweeps == 1 {
            converged = true;
        }
        if self.unconverged > 0 {
            notes.push(format!("{} profile solves hit the iteration cap", self.unconverged));
        }
        if at_end {
            notes.push(format!("best scale {:.4} on the bracket boundary", self.best_l));
        }
        let eps = 1.0 / self.best_l;
        let mut grad = vec![0.0; self.grid.len()];
        let (breakdown, lambda, mass) = if self.opts.pin_lambda_zero {
            let b = self.ws.energy_f(self.best_u.values(), 0.0, eps, self.spec, Some(&mut grad));
            let m = self.ws.mass(0.0);
            (b, 0.0, m)
        } else {
            let r = self.ws.reduced(self.best_u.values(), self.gamma, eps, self.spec, Some(&mut grad));
            (r.breakdown, r.lambda, r.mass)
        };
        let gamma = if self.opts.pin_lambda_zero { mass } else { self.gamma };
        Ok(CellSolution {
            value: breakdown.total,
            lambda,
            scale_l: self.best_l,
            profile: self.best_u,
            gamma,
            diagnostics: Diagnostics {
                iterations: self.iterations,
                sweeps,
                final_grad_norm: sqrt(grad.iter().map(|x| x * x).sum()),
                constraint_mass: mass,
                energy_breakdown: breakdown,
                converged: converged && polished && !at_end,
                scale_at_bracket_end: at_end,
                bracket_widened: widened,
                lambda_pinned: self.opts.pin_lambda_zero,
                notes,
            },
        })
    }
}

fn check_common(spec: &PotentialSpec, gamma: f64, opts: &SolveOptions) -> Result<()> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(invalid!("budget gamma must be finite and nonnegative, got {gamma}"));
    }
    if !(opts.l_min > 0.0 && opts.l_max >= opts.l_min) {
        return Err(invalid!("scale bracket must satisfy 0 < l_min <= l_max"));
    }
    let _ = spec;
    Ok(())
}

fn ramp_profile(grid: Grid, spec: &PotentialSpec, opts: &SolveOptions) -> Result<GridField> {
    let a = spec.a().to_vec();
    let w = opts.init_width;
    let mut u = GridField::from_fn(grid, |_, xn, o| {
        let s = ramp(xn, w);
        for c in 0..o.len() {
            o[c] = a[c] * s;
        }
    });
    if opts.random_init > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let amp = opts.random_init * spec.a_norm();
        let modes: Vec<(f64, f64)> = (0..6).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0))).collect();
        let g = grid;
        let d = g.d();
        for i in 0..g.n_prime() {
            for k in g.free_layers() {
                let x = g.x_last(k);
                let env = (0.25 - x * x).max(0.0) * 4.0;
                for c in 0..d {
                    let mut s = 0.0;
                    for (m, (coef, ph)) in modes.iter().enumerate() {
                        s += coef * sin(core::f64::consts::PI * ((m + 1) as f64 * (x + 0.5) + ph + c as f64));
                    }
                    u.values_mut()[g.node(i, k) * d + c] += amp * env * s / 6.0;
                }
            }
        }
    }
    apply_boundary_bands(&u, spec.a())
}

/// One-dimensional cell solve on `n` nodes along `x_N`.
pub fn solve_profile_1d(spec: &PotentialSpec, gamma: f64, n: usize, opts: &SolveOptions) -> Result<CellSolution> {
    solve_profile_1d_from(spec, gamma, n, opts, None)
}

/// Like [`solve_profile_1d`], warm-started from an earlier solution (any
/// resolution) when given.
pub fn solve_profile_1d_from(
    spec: &PotentialSpec,
    gamma: f64,
    n: usize,
    opts: &SolveOptions,
    warm: Option<&CellSolution>,
) -> Result<CellSolution> {
    check_common(spec, gamma, opts)?;
    if n < 64 {
        return Err(invalid!("1D cell solves need at least 64 nodes, got {n}"));
    }
    let grid = Grid::new_1d(spec.d(), n, opts.band)?;
    let mut notes = Vec::new();
    let rep = check_assumptions_seeded(spec, 256, 1e-12, opts.seed)?;
    if !rep.check("transverse_dominance").map_or(false, |c| c.passed) {
        notes.push(String::from("potential fails W(xi) >= W(0, xi_N) on the sample; 1D profiles may not be optimal"));
    }
    let (init, l0) = match warm {
        Some(w) if w.profile.grid().d() == spec.d() => (resample_1d(&w.profile, grid, spec)?, w.scale_l),
        _ => (ramp_profile(grid, spec, opts)?, sqrt(opts.l_min * opts.l_max)),
    };
    let solver = Solver::new(spec, grid, gamma, opts, init, l0)?;
    let mut sol = solver.run((opts.l_min, opts.l_max), opts.golden_iters)?;
    sol.diagnostics.notes.extend(notes);
    Ok(sol)
}

/// Samples column 0 of `src` onto every column of `grid`.
fn resample_1d(src: &GridField, grid: Grid, spec: &PotentialSpec) -> Result<GridField> {
    let u = GridField::from_fn(grid, |_, xn, o| {
        for c in 0..o.len() {
            o[c] = sample_column(src, 0, c, xn);
        }
    });
    apply_boundary_bands(&u, spec.a())
}

/// Full 2D cell solve. The profile starts from the rasterized 1D optimum
/// (computed here at `grid.n_last()` unless supplied) plus a seeded
/// `x'`-dependent perturbation; the value is per unit interface area.
pub fn solve_profile_nd(
    spec: &PotentialSpec,
    gamma: f64,
    grid: Grid,
    opts: &SolveOptions,
    init_1d: Option<&CellSolution>,
) -> Result<CellSolution> {
    check_common(spec, gamma, opts)?;
    if grid.dim() != 2 {
        return Err(invalid!("full solves need a 2D grid"));
    }
    if grid.d() != spec.d() {
        return Err(invalid!("grid has d = {}, potential has d = {}", grid.d(), spec.d()));
    }
    let owned;
    let base = match init_1d {
        Some(s) => s,
        None => {
            let mut o1 = opts.clone();
            o1.band = grid.band();
            owned = solve_profile_1d(spec, gamma, grid.n_last().max(64), &o1)?;
            &owned
        }
    };
    let mut u = resample_1d(&base.profile, grid, spec)?;
    if opts.perturbation > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x2d);
        let amp = opts.perturbation * spec.a_norm();
        let phase: f64 = rng.gen_range(0.0..1.0);
        let mode = rng.gen_range(1..=2) as f64;
        let d = grid.d();
        let coef: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for i in 0..grid.n_prime() {
            let x1 = grid.x_prime(i);
            let wave = sin(2.0 * core::f64::consts::PI * (mode * x1 + phase));
            for k in grid.free_layers() {
                let x = grid.x_last(k);
                let env = ((0.25 - x * x) * 4.0).max(0.0);
                let env = env * env;
                for c in 0..d {
                    u.values_mut()[grid.node(i, k) * d + c] += amp * coef[c] * wave * env;
                }
            }
        }
        u = apply_boundary_bands(&u, spec.a())?;
    }
    let f = opts.nd_bracket_factor.max(1.0);
    let l1 = base.scale_l;
    let solver = Solver::new(spec, grid, gamma, opts, u, l1)?;
    let mut sol = solver.run((l1 / f, l1 * f), opts.nd_golden_iters)?;
    sol.diagnostics.notes.push(format!("initialized from a 1D profile at L = {l1:.6}"));
    Ok(sol)
}

/// The unconstrained value `K` (level pinned at 0).
pub fn k_value(spec: &PotentialSpec, n: usize, opts: &SolveOptions) -> Result<CellSolution> {
    let mut o = opts.clone();
    o.pin_lambda_zero = true;
    solve_profile_1d(spec, 0.0, n, &o)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiPoint {
    pub gamma: f64,
    pub phi: f64,
    pub lambda: f64,
    pub scale_l: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub constraint_mass: f64,
    pub converged: bool,
    /// `(n, value)` per level of the resolution schedule, coarse to fine.
    pub refinement: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiCurve {
    pub points: Vec<PhiPoint>,
    pub schedule: Vec<usize>,
    pub options: SolveOptions,
    /// Per-point problems (non-convergence, refinement increases).
    pub failures: Vec<String>,
}

impl PhiCurve {
    pub fn new(points: Vec<PhiPoint>, schedule: Vec<usize>, options: SolveOptions) -> Result<Self> {
        for w in points.windows(2) {
            if !(w[1].gamma > w[0].gamma) {
                return Err(invalid!("curve budgets must be strictly increasing"));
            }
        }
        if points.iter().any(|p| !(p.phi >= 0.0) || !p.phi.is_finite()) {
            return Err(invalid!("curve values must be finite and nonnegative"));
        }
        Ok(PhiCurve { points, schedule, options, failures: Vec::new() })
    }

    /// Monotone piecewise-linear interpolation; values are replaced by their
    /// running minimum first so the interpolant is nonincreasing, and it is
    /// clamped outside the sampled range. The flag reports clamping.
    pub fn interpolate(&self, gamma: f64) -> (f64, bool) {
        let pts = &self.points;
        if pts.is_empty() {
            return (f64::NAN, true);
        }
        let mut mono = Vec::with_capacity(pts.len());
        let mut run = f64::INFINITY;
        for p in pts {
            run = run.min(p.phi);
            mono.push(run);
        }
        if gamma <= pts[0].gamma {
            return (mono[0], gamma < pts[0].gamma);
        }
        let last = pts.len() - 1;
        if gamma >= pts[last].gamma {
            return (mono[last], gamma > pts[last].gamma);
        }
        let j = pts.iter().position(|p| p.gamma > gamma).unwrap_or(last);
        let (g0, g1) = (pts[j - 1].gamma, pts[j].gamma);
        let t = (gamma - g0) / (g1 - g0);
        ((1.0 - t) * mono[j - 1] + t * mono[j], false)
    }
}

/// Runs the 1D solver for each budget on every resolution of `schedule`
/// (coarse to fine), warm-starting from the previous budget's solution at
/// the same resolution. The reported value is the finest one.
pub fn sweep_phi(spec: &PotentialSpec, gammas: &[f64], schedule: &[usize], opts: &SolveOptions) -> Result<PhiCurve> {
    if gammas.is_empty() {
        return Err(invalid!("at least one budget is required"));
    }
    for w in gammas.windows(2) {
        if !(w[1] > w[0]) {
            return Err(invalid!("budgets must be strictly increasing, got {} then {}", w[0], w[1]));
        }
    }
    if schedule.is_empty() {
        return Err(invalid!("resolution schedule must not be empty"));
    }
    let mut prev: Vec<Option<CellSolution>> = vec![None; schedule.len()];
    let mut points = Vec::with_capacity(gammas.len());
    let mut failures = Vec::new();
    for &gamma in gammas {
        let mut refinement = Vec::new();
        let mut finest = None;
        for (lvl, &n) in schedule.iter().enumerate() {
            let sol = solve_profile_1d_from(spec, gamma, n, opts, prev[lvl].as_ref())?;
            refinement.push((n, sol.value));
            if !sol.diagnostics.converged {
                failures.push(format!("gamma = {gamma}, n = {n}: not converged ({:?})", sol.diagnostics.notes));
            }
            prev[lvl] = Some(sol.clone());
            finest = Some(sol);
        }
        for w in refinement.windows(2) {
            if w[1].1 > w[0].1 + 1e-6 {
                failures.push(format!(
                    "gamma = {gamma}: refining {} -> {} raised the value by {:.3e}",
                    w[0].0,
                    w[1].0,
                    w[1].1 - w[0].1
                ));
            }
        }
        let s = finest.expect("schedule is nonempty");
        points.push(PhiPoint {
            gamma,
            phi: s.value,
            lambda: s.lambda,
            scale_l: s.scale_l,
            iterations: s.diagnostics.iterations,
            grad_norm: s.diagnostics.final_grad_norm,
            constraint_mass: s.diagnostics.constraint_mass,
            converged: s.diagnostics.converged,
            refinement,
        });
    }
    let mut curve = PhiCurve::new(points, schedule.to_vec(), opts.clone())?;
    curve.failures = failures;
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneReport {
    pub passed: bool,
    pub slack: f64,
    pub worst_violation: f64,
    /// Index `i` with the worst `phi[i+1] − phi[i]` when it exceeds `slack`.
    pub violation_index: Option<usize>,
}

/// Checks `phi(γ_{i+1}) ≤ phi(γ_i) + slack`.
pub fn check_monotone(curve: &PhiCurve, slack: f64) -> MonotoneReport {
    let mut worst = f64::NEG_INFINITY;
    let mut idx = None;
    for (i, w) in curve.points.windows(2).enumerate() {
        let inc = w[1].phi - w[0].phi;
        if inc > worst {
            worst = inc;
            if inc > slack {
                idx = Some(i);
            }
        }
    }
    if curve.points.len() < 2 {
        worst = 0.0;
    }
    MonotoneReport {
        passed: idx.is_none(),
        slack,
        worst_violation: worst.max(0.0),
        violation_index: idx,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec() -> PotentialSpec {
        PotentialSpec::prototype(vec![1.0], 2.0, 2).unwrap()
    }

    fn quick() -> SolveOptions {
        SolveOptions { golden_iters: 24, max_sweeps: 2, ..Default::default() }
    }

    #[test]
    fn ramp_is_even_with_unit_slopes() {
        for &t in &[0.05, 0.13, 0.3] {
            assert_relative_eq!(ramp(t, 0.4), ramp(-t, 0.4), epsilon = 1e-14);
        }
        assert_relative_eq!(ramp(0.35, 0.4) - ramp(0.3, 0.4), 0.05, epsilon = 1e-14);
        assert_relative_eq!(ramp(-0.35, 0.4) - ramp(-0.3, 0.4), 0.05, epsilon = 1e-14);
    }

    #[test]
    fn hermite_sampling_reproduces_cubics() {
        let g = Grid::new_1d(1, 32, 2).unwrap();
        let u = GridField::from_fn(g, |_, x, o| o[0] = x * x - 0.3 * x);
        for &x in &[-0.41, -0.1, 0.0, 0.2, 0.45] {
            assert_relative_eq!(sample_column(&u, 0, 0, x), x * x - 0.3 * x, epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_bracket_is_returned() {
        let s = optimize_scale(|l| (l - 3.0).powi(2), 2.0, 2.0, 40).unwrap();
        assert_eq!(s.l, 2.0);
        assert!(optimize_scale(|l| l, 0.0, 1.0, 10).is_err());
    }

    #[test]
    fn endpoint_minimum_triggers_widening() {
        let s = optimize_scale(|l| (l - 70.0).powi(2), 0.5, 50.0, 40).unwrap();
        assert!(s.widened && !s.at_endpoint);
        assert_relative_eq!(s.l, 70.0, max_relative = 1e-4);
        let s = optimize_scale(|l| -l, 0.5, 50.0, 40).unwrap();
        assert!(s.widened && s.at_endpoint);
    }

    #[test]
    fn endpoints_and_sandwich_on_coarse_grid() {
        let s = spec();
        let o = quick();
        let k = k_value(&s, 128, &o).unwrap();
        assert!(k.value > 1.9 && k.value < 2.3, "K = {}", k.value);
        let zero = solve_profile_1d(&s, 0.0, 128, &o).unwrap();
        assert_relative_eq!(zero.value / k.value, sqrt(2.0), max_relative = 0.02);
        let big = solve_profile_1d(&s, 2.5, 128, &o).unwrap();
        assert_eq!(big.lambda, 0.0);
        assert_relative_eq!(big.value, k.value, max_relative = 1e-6);
        let mid = solve_profile_1d(&s, 1.0, 128, &o).unwrap();
        assert!(mid.lambda < 0.0);
        assert!(mid.value >= k.value - 1e-6 && mid.value <= zero.value + 1e-6);
        assert!(mid.diagnostics.constraint_mass <= 1.0 + 1e-9);
        assert_relative_eq!(mid.recompute_lambda(&s).unwrap(), mid.lambda, epsilon = 1e-9);
    }

    #[test]
    fn sweep_validation() {
        let s = spec();
        assert!(sweep_phi(&s, &[0.5, 0.5], &[64], &quick()).is_err());
        assert!(sweep_phi(&s, &[], &[64], &quick()).is_err());
    }

    fn point(gamma: f64, phi: f64) -> PhiPoint {
        PhiPoint {
            gamma,
            phi,
            lambda: 0.0,
            scale_l: 1.0,
            iterations: 0,
            grad_norm: 0.0,
            constraint_mass: 0.0,
            converged: true,
            refinement: vec![],
        }
    }

    #[test]
    fn monotone_check_locates_violation() {
        let c = PhiCurve::new(vec![point(0.0, 3.0), point(1.0, 2.5), point(2.0, 2.0)], vec![64], quick()).unwrap();
        assert!(check_monotone(&c, 1e-3).passed);
        let bad = PhiCurve::new(vec![point(0.0, 3.0), point(1.0, 2.0), point(2.0, 2.5)], vec![64], quick()).unwrap();
        let r = check_monotone(&bad, 1e-3);
        assert!(!r.passed);
        assert_eq!(r.violation_index, Some(1));
        let single = PhiCurve::new(vec![point(0.0, 3.0)], vec![64], quick()).unwrap();
        assert!(check_monotone(&single, 0.0).passed);
    }

    #[test]
    fn interpolation_is_monotone_and_clamped() {
        let c = PhiCurve::new(vec![point(0.0, 3.0), point(1.0, 2.0), point(2.0, 2.2)], vec![64], quick()).unwrap();
        assert_eq!(c.interpolate(0.5), (2.5, false));
        assert_eq!(c.interpolate(1.5), (2.0, false));
        assert_eq!(c.interpolate(5.0), (2.0, true));
    }
}
