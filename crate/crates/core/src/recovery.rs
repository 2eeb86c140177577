//! Recovery pairs for a single-interface laminate: the optimal 1D cell
//! profile, shrunk by `εL` and glued into the laminate, together with the
//! surfactant density `max{|∇²u_ε| + λ/(εL), 0}` on the slab, two `√ε`
//! strips carrying the leftover budget, and bumps at the atoms.
//!
//! Each nominal `ε` is snapped so that the rescaled profile nodes coincide
//! with recovery grid nodes; the slab then reproduces the cell energy to
//! rounding and the remaining gap to the target comes from the strips,
//! atoms and cutoffs only.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cellproblem::{CellSolution, PhiCurve, PhiPoint, SolveOptions};
use crate::energy::{EnergyBreakdown, EnergyWorkspace};
use crate::error::invalid;
use crate::fields::{gradient, hessian_norm, integrate, DensityField, Grid, GridField};
use crate::math::{abs, cos, exp, ln, pow_abs, powf, round, sin, smoothstep5, sqrt};
use crate::potential::PotentialSpec;
use crate::sharpinterface::{limit_energy, Laminate, LimitEnergy, SurfactantMeasure};
use crate::waterfill;
use crate::Result;

const PI: f64 = core::f64::consts::PI;

#[derive(Debug, Clone)]
pub struct RecoveryConfig {
    pub spec: PotentialSpec,
    /// Nominal values, strictly decreasing.
    pub epsilons: Vec<f64>,
    /// Width of the `x'` blend across patch boundaries.
    pub delta: f64,
    /// Strip slack coefficient: `δ̃ = tilde_delta · √ε`.
    pub tilde_delta: f64,
    /// Profile used on the patches (its `gamma` must equal their density).
    pub cell: CellSolution,
    /// Profile for the bare part of the interface; `cell` is used when it
    /// already has `gamma = 0`.
    pub cell_zero: Option<CellSolution>,
    pub laminate: Laminate,
    pub measure: SurfactantMeasure,
    pub n_prime: usize,
    pub band: usize,
    /// `ψ = 1` within `psi_margin/3` of the interface and `0` beyond
    /// `psi_margin/2`; defaults to `1.6 (1/2 − |t|)`.
    pub psi_margin: Option<f64>,
    /// Surface-tension curve for the target; defaults to the cell values.
    pub curve: Option<PhiCurve>,
    pub min_atom_distance: f64,
    /// Largest perturbation amplitude tried by [`probe_liminf`].
    pub probe_amplitude: f64,
}

impl RecoveryConfig {
    pub fn new(spec: PotentialSpec, cell: CellSolution, laminate: Laminate, measure: SurfactantMeasure, epsilons: Vec<f64>) -> Self {
        RecoveryConfig {
            spec,
            epsilons,
            delta: 0.05,
            tilde_delta: 0.01,
            cell,
            cell_zero: None,
            laminate,
            measure,
            n_prime: 4,
            band: 2,
            psi_margin: None,
            curve: None,
            min_atom_distance: 0.0,
            probe_amplitude: 1.0,
        }
    }

    fn t(&self) -> f64 {
        self.laminate.heights()[0]
    }

    fn psi_margin(&self) -> f64 {
        self.psi_margin.unwrap_or(1.6 * (0.5 - abs(self.t())))
    }

    fn zero_profile(&self) -> Option<&CellSolution> {
        self.cell_zero.as_ref().or(if self.cell.gamma == 0.0 { Some(&self.cell) } else { None })
    }

    fn validate(&self) -> Result<()> {
        if self.spec.n() != 2 {
            return Err(invalid!("recovery is implemented for N = 2, got N = {}", self.spec.n()));
        }
        if self.laminate.heights().len() != 1 {
            return Err(invalid!("recovery needs a laminate with exactly one interface"));
        }
        if self.laminate.a().iter().zip(self.spec.a()).any(|(x, y)| abs(x - y) > 1e-12) {
            return Err(invalid!("laminate well vector differs from the potential's"));
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return Err(invalid!("epsilons must be a nonempty list of positive values"));
        }
        if self.epsilons.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(invalid!("epsilons must be strictly decreasing"));
        }
        if !(self.delta > 0.0) || !(self.tilde_delta >= 0.0) {
            return Err(invalid!("delta must be positive and tilde_delta nonnegative"));
        }
        let m = self.psi_margin();
        if !(m > 0.0) || self.t().abs() + m / 2.0 >= 0.5 {
            return Err(invalid!("psi margin {m} pushes the cutoff outside the domain"));
        }
        for c in core::iter::once(&self.cell).chain(self.cell_zero.as_ref()) {
            if !c.is_one_dimensional() {
                return Err(invalid!("recovery accepts 1D cell profiles only"));
            }
            if c.profile.grid().d() != self.spec.d() {
                return Err(invalid!("cell profile has d = {}, potential has d = {}", c.profile.grid().d(), self.spec.d()));
            }
        }
        if let Some(z) = &self.cell_zero {
            if z.gamma != 0.0 {
                return Err(invalid!("cell_zero must be the gamma = 0 profile, got gamma = {}", z.gamma));
            }
        }
        self.measure.validate(&self.laminate, 2, self.min_atom_distance)?;
        let g = self.cell.gamma;
        for p in &self.measure.patches {
            if p.density != 0.0 && abs(p.density - g) > 1e-9 * (1.0 + g) {
                return Err(invalid!("patch density {} has no cell profile (cell gamma is {g})", p.density));
            }
        }
        if self.bare_fraction_positive() && self.zero_profile().is_none() {
            return Err(invalid!("part of the interface carries no surfactant; a gamma = 0 profile is required"));
        }
        Ok(())
    }

    fn main_patches(&self) -> impl Iterator<Item = &crate::sharpinterface::Patch> {
        self.measure.patches.iter().filter(|p| p.density != 0.0)
    }

    fn bare_fraction_positive(&self) -> bool {
        let covered: f64 = self.main_patches().map(|p| p.area()).sum();
        covered < 1.0 - 1e-12
    }

    fn target_curve(&self) -> Result<PhiCurve> {
        if let Some(c) = &self.curve {
            return Ok(c.clone());
        }
        let pt = |c: &CellSolution| PhiPoint {
            gamma: c.gamma,
            phi: c.value,
            lambda: c.lambda,
            scale_l: c.scale_l,
            iterations: c.diagnostics.iterations,
            grad_norm: c.diagnostics.final_grad_norm,
            constraint_mass: c.diagnostics.constraint_mass,
            converged: c.diagnostics.converged,
            refinement: vec![],
        };
        let mut pts = vec![pt(&self.cell)];
        if let Some(z) = &self.cell_zero {
            if self.cell.gamma > 0.0 {
                pts.insert(0, pt(z));
            }
        }
        PhiCurve::new(pts, vec![self.cell.profile.grid().n_last()], SolveOptions::default())
    }

    pub fn target(&self) -> Result<LimitEnergy> {
        self.validate()?;
        limit_energy(&self.laminate, &self.measure, &self.target_curve()?)
    }
}

/// A cell profile prepared for gluing: `ṽ = v − c_bot` so that `ṽ = −a y`
/// on the bottom band.
struct Profile<'a> {
    field: &'a GridField,
    a: &'a [f64],
    l: f64,
    lambda: f64,
    gamma: f64,
    c_bot: Vec<f64>,
    c_top: Vec<f64>,
    /// Recovery node index of profile node 0 when the two grids align.
    offset: Option<i64>,
}

impl<'a> Profile<'a> {
    fn new(cell: &'a CellSolution, a: &'a [f64]) -> Self {
        let f = &cell.profile;
        let g = f.grid();
        let n = g.n_last();
        let (y0, y1) = (g.x_last(0), g.x_last(n - 1));
        let c_bot = (0..g.d()).map(|c| f.at(0, 0)[c] + a[c] * y0).collect();
        let c_top = (0..g.d()).map(|c| f.at(0, n - 1)[c] - a[c] * y1).collect();
        Profile { field: f, a, l: cell.scale_l, lambda: cell.lambda, gamma: cell.gamma, c_bot, c_top, offset: None }
    }

    fn value(&self, c: usize, k: usize, y: f64) -> f64 {
        let g = self.field.grid();
        let n = g.n_last();
        if let Some(o) = self.offset {
            let j = k as i64 - o;
            if j >= 0 && (j as usize) < n {
                return self.field.at(0, j as usize)[c] - self.c_bot[c];
            }
        }
        if y <= g.x_last(0) {
            -self.a[c] * y
        } else if y >= g.x_last(n - 1) {
            self.a[c] * y + self.c_top[c] - self.c_bot[c]
        } else {
            crate::cellproblem::sample_column(self.field, 0, c, y) - self.c_bot[c]
        }
    }
}

/// Recovery resolution for one nominal `ε`: `n_last` close to
/// `n_cell/(εL)` with the profile nodes landing on grid nodes, and the
/// matching effective `ε`.
fn layout(eps: f64, n_cell: usize, l: f64, t: f64) -> (usize, f64, Option<i64>) {
    let n0 = n_cell as f64 / (eps * l);
    let base = round(n0).max(8.0) as i64;
    let radius = (n0 / 100.0).max(16.0) as i64;
    for dn in 0..=radius {
        for cand in [base - dn, base + dn] {
            if cand < 8 {
                continue;
            }
            let o = cand as f64 * (t + 0.5) - 0.5 * n_cell as f64;
            if abs(o - round(o)) < 1e-9 {
                let n = cand as usize;
                return (n, n_cell as f64 / (l * n as f64), Some(round(o) as i64));
            }
        }
    }
    (base as usize, eps, None)
}

/// Periodic `x'` blend of one patch: quintic steps of width `delta`
/// centred on the patch ends, so it integrates to the patch length.
fn patch_weight(lo: f64, hi: f64, delta: f64, x: f64) -> f64 {
    if hi - lo >= 1.0 - 1e-12 {
        return 1.0;
    }
    let one = |x: f64| smoothstep5((x - lo) / delta + 0.5) * smoothstep5((hi - x) / delta + 0.5);
    (one(x - 1.0) + one(x) + one(x + 1.0)).min(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryPair {
    pub u: GridField,
    pub rho: DensityField,
    pub epsilon_nominal: f64,
    /// The `ε` the pair is built for (after snapping).
    pub epsilon: f64,
    pub aligned: bool,
    /// Slab, strips or atom bumps collide with each other, the cutoff or the
    /// bands.
    pub pre_asymptotic: bool,
    /// Nodes with `0 < ψ < 1` or `0 < φ < 1`.
    pub cutoff_mask: Vec<bool>,
    pub notes: Vec<String>,
}

pub fn build_recovery(cfg: &RecoveryConfig, eps: f64) -> Result<RecoveryPair> {
    cfg.validate()?;
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(invalid!("epsilon must be positive, got {eps}"));
    }
    let spec = &cfg.spec;
    let d = spec.d();
    let a = cfg.laminate.a();
    let t = cfg.t();
    let lam = &cfg.laminate;
    let mut notes = Vec::new();

    let mut main = Profile::new(&cfg.cell, a);
    let mut zero = cfg.zero_profile().map(|c| Profile::new(c, a));
    let n_cell = cfg.cell.profile.grid().n_last();
    let (n_last, e, offset) = layout(eps, n_cell, main.l, t);
    main.offset = offset;
    if offset.is_none() {
        notes.push(format!("profile nodes not aligned with the grid at eps = {eps}; Hermite sampling used"));
    }
    if let Some(z) = zero.as_mut() {
        if core::ptr::eq(z.field, main.field) {
            z.offset = offset;
        }
    }

    let uses_main = cfg.main_patches().next().is_some();
    let uses_zero = cfg.bare_fraction_positive();
    let mut l_max: f64 = 0.0;
    if uses_main {
        l_max = l_max.max(main.l);
    }
    if uses_zero {
        l_max = l_max.max(zero.as_ref().map_or(0.0, |z| z.l));
    }
    let strip = sqrt(e);
    let half_slab = 0.5 * e * l_max;
    let h = 1.0 / n_last as f64;
    let room = 0.5 - abs(t) - cfg.band as f64 * h;
    if half_slab + strip >= room {
        let need = {
            // largest eps with e L/2 + √e below the room
            let r = room;
            let q = (-1.0 + sqrt(1.0 + 2.0 * l_max * r)) / l_max;
            q * q
        };
        return Err(invalid!(
            "slab of half-width {half_slab:.4} plus strips of width {strip:.4} do not fit within {room:.4} of the interface; use eps below {need:.3e}"
        ));
    }
    if n_last > 1 << 22 {
        return Err(invalid!("eps = {eps} would need {n_last} layers; increase eps or coarsen the cell profile"));
    }
    let grid = Grid::new_2d(d, cfg.n_prime, n_last, cfg.band)?;

    let margin = cfg.psi_margin();
    let psi = |x: f64| 1.0 - smoothstep5((abs(x - t) - margin / 3.0) / (margin / 6.0));
    let weight_main: Vec<f64> = (0..grid.n_prime())
        .map(|i| {
            let x = grid.x_prime(i);
            cfg.main_patches().map(|p| patch_weight(p.lo[0], p.hi[0], cfg.delta, x)).sum::<f64>().min(1.0)
        })
        .collect();
    let sign = -lam.gradient_sign(t - 1e-12);
    let ut = lam.value_at(t);

    let mut mask = vec![false; grid.nodes()];
    for i in 0..grid.n_prime() {
        let wm = weight_main[i];
        for k in 0..n_last {
            let ps = psi(grid.x_last(k));
            mask[grid.node(i, k)] = (ps > 0.0 && ps < 1.0) || (wm > 0.0 && wm < 1.0);
        }
    }
    let build = |weights: &[f64]| {
        let mut u = GridField::zeros(grid);
        for i in 0..grid.n_prime() {
            let wm = weights[i];
            for k in 0..n_last {
                let x = grid.x_last(k);
                let node = grid.node(i, k);
                let base = lam.value_at(x);
                let ps = psi(x);
                for c in 0..d {
                    let mut z = 0.0;
                    if wm > 0.0 {
                        z += wm * main.l * main.value(c, k, (x - t) / (e * main.l));
                    }
                    if wm < 1.0 {
                        let zp = zero.as_ref().expect("validated");
                        z += (1.0 - wm) * zp.l * zp.value(c, k, (x - t) / (e * zp.l));
                    }
                    let z = ut[c] + sign * e * z;
                    u.values_mut()[node * d + c] = if ps >= 1.0 { z } else { ps * z + (1.0 - ps) * base[c] };
                }
            }
        }
        u
    };
    let u = build(&weight_main);

    // Slab density from the pure main profile, scaled by the patch weight, so
    // the slab carries exactly w·γ per column. The bare part gets ρ = 0, which
    // is optimal at γ = 0.
    let blended = weight_main.iter().any(|&w| w > 0.0 && w < 1.0);
    let hn = hessian_norm(&u);
    let h_main = if blended && uses_main { hessian_norm(&build(&vec![1.0; grid.n_prime()])) } else { hn };
    let mut rho = vec![0.0; grid.nodes()];
    for i in 0..grid.n_prime() {
        let wm = weight_main[i];
        if wm <= 0.0 {
            continue;
        }
        for k in 0..n_last {
            let n = grid.node(i, k);
            rho[n] = wm * (h_main.values()[n] + main.lambda / (e * main.l)).max(0.0);
        }
    }

    // Strips: whatever the slab leaves of γ + δ̃, column by column.
    let slack = cfg.tilde_delta * sqrt(e);
    let in_strip = |x: f64| {
        let s = abs(x - t);
        s > half_slab && s <= half_slab + strip
    };
    let strip_layers: Vec<usize> = (0..n_last).filter(|&k| in_strip(grid.x_last(k))).collect();
    if strip_layers.is_empty() {
        return Err(invalid!("strips of width {strip:.3e} hold no grid layer at n = {n_last}"));
    }
    let mut clipped = 0usize;
    for i in 0..grid.n_prime() {
        let wm = weight_main[i];
        let col: f64 = (0..n_last).map(|k| rho[grid.node(i, k)]).sum::<f64>() * h;
        let want = wm * main.gamma + slack;
        let extra = want - col;
        if extra < 0.0 {
            clipped += 1;
            continue;
        }
        let v = extra / (h * strip_layers.len() as f64);
        for &k in &strip_layers {
            rho[grid.node(i, k)] += v;
        }
    }
    if clipped > 0 {
        notes.push(format!("{clipped} columns carry more slab mass than their budget; strip left empty there"));
    }

    let mut pre = half_slab > margin / 3.0;
    let cross = |x1: f64, y1: f64| {
        let dx = x1 - y1;
        dx - round(dx)
    };
    // Atom bumps: radius ε^{1/(2N)}, height β/(√ε |B₁|), renormalised.
    let r = powf(e, 1.0 / (2.0 * spec.n() as f64));
    for (j, atom) in cfg.measure.atoms.iter().enumerate() {
        let (ax, an) = (atom.location[0], atom.location[1]);
        let height = atom.mass / (sqrt(e) * PI);
        let mut nodes = Vec::new();
        for i in 0..grid.n_prime() {
            for k in 0..n_last {
                let dx = cross(grid.x_prime(i), ax);
                let dn = grid.x_last(k) - an;
                if dx * dx + dn * dn < r * r {
                    nodes.push(grid.node(i, k));
                }
            }
        }
        if nodes.is_empty() {
            return Err(invalid!("atom {j}: bump of radius {r:.3e} holds no node; increase n_prime"));
        }
        let discrete = height * grid.cell_volume() * nodes.len() as f64;
        let scale = atom.mass / discrete;
        for n in nodes {
            rho[n] += height * scale;
        }
        if abs(an - t) - r < half_slab + strip || abs(an) + r > 0.5 - cfg.band as f64 * h {
            pre = true;
            notes.push(format!("atom {j}: bump of radius {r:.3} reaches the interface zone or the bands"));
        }
    }
    if pre {
        notes.push(format!("eps = {e:.4e} is pre-asymptotic for this configuration"));
    }
    let rho = DensityField::new(grid, rho)?;
    Ok(RecoveryPair {
        u,
        rho,
        epsilon_nominal: eps,
        epsilon: e,
        aligned: offset.is_some(),
        pre_asymptotic: pre,
        cutoff_mask: mask,
        notes,
    })
}

/// The five fixed smooth test functions of the weak-* check.
pub fn test_function(j: usize, x1: f64, xn: f64) -> f64 {
    match j {
        0 => 1.0,
        1 => 1.0 + xn,
        2 => cos(PI * xn),
        3 => 1.0 + 0.5 * sin(2.0 * PI * x1),
        _ => exp(xn) * (1.0 + 0.3 * cos(2.0 * PI * x1)),
    }
}

pub const TEST_FUNCTIONS: usize = 5;

fn weak_target(cfg: &RecoveryConfig, j: usize) -> f64 {
    let t = cfg.t();
    let m = 4096;
    let mut s = 0.0;
    for p in &cfg.measure.patches {
        let (lo, hi) = (p.lo[0], p.hi[0]);
        let len = hi - lo;
        let mut acc = 0.0;
        for q in 0..m {
            acc += test_function(j, lo + (q as f64 + 0.5) * len / m as f64, t);
        }
        s += p.density * acc * len / m as f64;
    }
    for a in &cfg.measure.atoms {
        s += a.mass * test_function(j, a.location[0], a.location[1]);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimsupRow {
    pub epsilon_nominal: f64,
    pub epsilon: f64,
    pub n_last: usize,
    pub n_prime: usize,
    pub energy: EnergyBreakdown,
    pub target: f64,
    pub ratio: f64,
    pub mass: f64,
    pub mass_target: f64,
    pub mass_error: f64,
    /// `Σ |∇u_ε − ∇u|^p` over the grid.
    pub w1p_error: f64,
    /// Share of the energy in the cutoff regions.
    pub cutoff_share: f64,
    pub weak_errors: Vec<f64>,
    pub pre_asymptotic: bool,
    pub aligned: bool,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimsupReport {
    pub rows: Vec<LimsupRow>,
    pub target: LimitEnergy,
    /// Over the rows that are not pre-asymptotic.
    pub ratios_nonincreasing: bool,
    /// Log-log slope of the mass error against `ε`.
    pub mass_slope: Option<f64>,
    pub w1p_decreasing: bool,
    pub weak_decreasing: Vec<bool>,
    pub final_ratio: f64,
    pub final_cutoff_share: f64,
}

fn evaluate_row(cfg: &RecoveryConfig, pair: &RecoveryPair, target: f64) -> Result<LimsupRow> {
    let spec = &cfg.spec;
    let grid = *pair.u.grid();
    let mut ws = EnergyWorkspace::new(grid, spec)?;
    let energy = ws.energy_e(pair.u.values(), pair.rho.values(), pair.epsilon, spec, None);
    let cut = ws.energy_e_masked(pair.u.values(), pair.rho.values(), pair.epsilon, spec, &pair.cutoff_mask);
    let mass = integrate(&grid, pair.rho.values(), None)?;
    let mass_target = cfg.measure.total_mass();

    let p = spec.p();
    let d = spec.d();
    let gr = gradient(&pair.u, 2)?;
    let a = cfg.laminate.a();
    let mut w = vec![0.0; grid.nodes()];
    for i in 0..grid.n_prime() {
        for k in 0..grid.n_last() {
            let s = cfg.laminate.gradient_sign(grid.x_last(k));
            let g = gr.at(i, k);
            let mut sq = 0.0;
            for c in 0..d {
                sq += g[2 * c] * g[2 * c];
                let dn = g[2 * c + 1] - s * a[c];
                sq += dn * dn;
            }
            w[grid.node(i, k)] = pow_abs(sqrt(sq), p);
        }
    }
    let w1p_error = integrate(&grid, &w, None)?;

    let mut weak_errors = Vec::with_capacity(TEST_FUNCTIONS);
    let rv = pair.rho.values();
    for j in 0..TEST_FUNCTIONS {
        let vals: Vec<f64> = (0..grid.nodes())
            .map(|n| {
                let (i, k) = (n / grid.n_last(), n % grid.n_last());
                rv[n] * test_function(j, grid.x_prime(i), grid.x_last(k))
            })
            .collect();
        weak_errors.push(abs(integrate(&grid, &vals, None)? - weak_target(cfg, j)));
    }

    Ok(LimsupRow {
        epsilon_nominal: pair.epsilon_nominal,
        epsilon: pair.epsilon,
        n_last: grid.n_last(),
        n_prime: grid.n_prime(),
        energy,
        target,
        ratio: energy.total / target,
        mass,
        mass_target,
        mass_error: abs(mass - mass_target),
        w1p_error,
        cutoff_share: if energy.total > 0.0 { cut.total / energy.total } else { 0.0 },
        weak_errors,
        pre_asymptotic: pair.pre_asymptotic,
        aligned: pair.aligned,
        notes: pair.notes.clone(),
    })
}

fn decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).filter(|(x, y)| **x > 0.0 && **y > 0.0).map(|(x, y)| (ln(*x), ln(*y))).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx > 0.0 {
        Some(sxy / sxx)
    } else {
        None
    }
}

/// Builds the pair for every `ε`, evaluates `E_ε` against the limit energy
/// and reports the trends (pre-asymptotic rows are excluded from them).
pub fn validate_limsup(cfg: &RecoveryConfig) -> Result<LimsupReport> {
    let target = cfg.target()?;
    let mut rows = Vec::with_capacity(cfg.epsilons.len());
    for &eps in &cfg.epsilons {
        rows.push(limsup_row(cfg, eps)?);
    }
    Ok(summarize_limsup(rows, target))
}

/// One row of [`validate_limsup`]; rows for different `ε` are independent.
pub fn limsup_row(cfg: &RecoveryConfig, eps: f64) -> Result<LimsupRow> {
    let target = cfg.target()?;
    let pair = build_recovery(cfg, eps)?;
    evaluate_row(cfg, &pair, target.value)
}

/// Trend checks over rows ordered by decreasing `ε`.
pub fn summarize_limsup(rows: Vec<LimsupRow>, target: LimitEnergy) -> LimsupReport {
    let good: Vec<&LimsupRow> = rows.iter().filter(|r| !r.pre_asymptotic).collect();
    let ratios: Vec<f64> = good.iter().map(|r| r.ratio).collect();
    let ratios_nonincreasing = ratios.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    let eps: Vec<f64> = good.iter().map(|r| r.epsilon).collect();
    let merr: Vec<f64> = good.iter().map(|r| r.mass_error).collect();
    let mass_slope = loglog_slope(&eps, &merr);
    let w1p_decreasing = decreasing(&good.iter().map(|r| r.w1p_error).collect::<Vec<_>>());
    let weak_decreasing =
        (0..TEST_FUNCTIONS).map(|j| decreasing(&good.iter().map(|r| r.weak_errors[j]).collect::<Vec<_>>())).collect();
    let last = rows.last();
    LimsupReport {
        final_ratio: last.map_or(f64::NAN, |r| r.ratio),
        final_cutoff_share: last.map_or(f64::NAN, |r| r.cutoff_share),
        rows,
        target,
        ratios_nonincreasing,
        mass_slope,
        w1p_decreasing,
        weak_decreasing,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiminfReport {
    pub epsilon: f64,
    pub target: f64,
    pub baseline: f64,
    pub seed: u64,
    pub trials: usize,
    pub min_energy: f64,
    pub min_ratio: f64,
    /// Trials with `E_ε < 0.98 · target`.
    pub violations: Vec<usize>,
    pub energies: Vec<f64>,
    pub amplitudes: Vec<f64>,
}

impl LiminfReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

struct Modes {
    terms: Vec<(usize, f64, usize, f64, f64)>,
}

impl Modes {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let terms = (0..3)
            .map(|_| (rng.gen_range(0..4usize), rng.gen_range(0.0..2.0 * PI), rng.gen_range(1..5usize), rng.gen_range(0.0..PI), rng.gen_range(-1.0..1.0)))
            .collect();
        Modes { terms }
    }

    fn eval(&self, x1: f64, s: f64) -> f64 {
        self.terms.iter().map(|&(m1, ph1, m2, ph2, c)| c * cos(2.0 * PI * m1 as f64 * x1 + ph1) * sin(m2 as f64 * s + ph2)).sum()
    }
}

/// Energy of one random admissible perturbation of `pair` at amplitude
/// `amp`: smooth changes of `u` vanishing on the bands (global or
/// concentrated on the slab) and of `ρ`, with the mass restored by the
/// water-fill.
fn perturbed_energy(cfg: &RecoveryConfig, pair: &RecoveryPair, ws: &mut EnergyWorkspace, amp: f64, rng: &mut ChaCha8Rng) -> f64 {
    let grid = *pair.u.grid();
    let d = grid.d();
    let e = pair.epsilon;
    let t = cfg.t();
    let el = e * cfg.cell.scale_l;
    let edge = 0.5 - grid.band() as f64 * grid.h();
    let local = rng.gen_bool(0.5);
    let modes: Vec<Modes> = (0..d).map(|_| Modes::draw(rng)).collect();
    let rmodes = Modes::draw(rng);
    let rbump = rng.gen_range(0.0..1.0);

    let mut u = pair.u.clone();
    let mut g = pair.rho.values().to_vec();
    let mass: f64 = integrate(&grid, &g, None).unwrap_or(0.0);
    for i in 0..grid.n_prime() {
        let x1 = grid.x_prime(i);
        for k in 0..grid.n_last() {
            let xn = grid.x_last(k);
            let env = smoothstep5((edge - abs(xn)) / 0.05);
            let node = grid.node(i, k);
            let (scale, s, bump) = if local {
                let y = (xn - t) / el;
                (el, y, exp(-4.0 * y * y))
            } else {
                (e, PI * (xn + 0.5), 1.0)
            };
            for c in 0..d {
                u.values_mut()[node * d + c] += amp * scale * env * bump * modes[c].eval(x1, s);
            }
            let base = g[node];
            let y = (xn - t) / el;
            let near = mass * exp(-4.0 * y * y) / el;
            g[node] = (base * (1.0 + 0.5 * amp * rmodes.eval(x1, s)) + amp * rbump * near * env).max(0.0);
        }
    }
    let w = vec![grid.cell_volume(); grid.nodes()];
    let now: f64 = integrate(&grid, &g, None).unwrap_or(0.0);
    if now > mass {
        let lam = waterfill::level(&g, &w, mass);
        g.iter_mut().for_each(|v| *v = (*v + lam).max(0.0));
    } else {
        let add = mass - now;
        if add > 0.0 {
            g.iter_mut().for_each(|v| *v += add);
        }
    }
    ws.energy_e(u.values(), &g, e, &cfg.spec, None).total
}

/// Samples `trials` random perturbations of the recovery pair at the finest
/// `ε` and reports the lowest energy found against the limit energy.
/// Amplitudes are log-uniform in `[1e-3, 1] · probe_amplitude`; trial `j`
/// draws from stream `j` of the seeded generator.
pub fn probe_liminf(cfg: &RecoveryConfig, trials: usize, seed: u64) -> Result<LiminfReport> {
    let target = cfg.target()?.value;
    let eps = *cfg.epsilons.last().expect("validated");
    let pair = build_recovery(cfg, eps)?;
    let mut ws = EnergyWorkspace::new(*pair.u.grid(), &cfg.spec)?;
    let baseline = ws.energy_e(pair.u.values(), pair.rho.values(), pair.epsilon, &cfg.spec, None).total;
    let mut energies = Vec::with_capacity(trials);
    let mut amplitudes = Vec::with_capacity(trials);
    for j in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(j as u64);
        let amp = cfg.probe_amplitude * powf(10.0, -3.0 * rng.gen::<f64>());
        energies.push(perturbed_energy(cfg, &pair, &mut ws, amp, &mut rng));
        amplitudes.push(amp);
    }
    let min_energy = energies.iter().copied().fold(baseline, f64::min);
    let violations = energies.iter().enumerate().filter(|(_, e)| **e < 0.98 * target).map(|(j, _)| j).collect();
    Ok(LiminfReport {
        epsilon: pair.epsilon,
        target,
        baseline,
        seed,
        trials,
        min_energy,
        min_ratio: min_energy / target,
        violations,
        energies,
        amplitudes,
    })
}

/// Energy of a single perturbation at a prescribed amplitude (amplitude 0
/// returns the unperturbed energy).
pub fn perturbation_energy(cfg: &RecoveryConfig, eps: f64, amp: f64, seed: u64) -> Result<f64> {
    let pair = build_recovery(cfg, eps)?;
    let mut ws = EnergyWorkspace::new(*pair.u.grid(), &cfg.spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(perturbed_energy(cfg, &pair, &mut ws, amp, &mut rng))
}
