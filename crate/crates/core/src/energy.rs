//! The discrete energies
//!
//! ```text
//! E_eps(u, rho)    = ∫ W(∇u)/eps + eps |∇²u|² + eps (rho − |∇²u|)²
//! F_eps(u, lambda) = ∫ W(∇u)/eps + eps |∇²u|² + eps min{lambda², |∇²u|²}
//! ```
//!
//! with their exact gradients with respect to the nodal values. All
//! quadratures run over every node (bands included) with the midpoint weight
//! and pairwise summation, so the two energies agree bit-for-bit up to the
//! rounding of `rho − |∇²u|` when `rho = max{lambda + |∇²u|, 0}`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::fields::{derivatives_adjoint, Derivatives, DensityField, Grid, GridField, Region, Stencils};
use crate::math::{pairwise_sum, sqrt};
use crate::potential::PotentialSpec;
use crate::waterfill;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub potential: f64,
    pub second_gradient: f64,
    pub surfactant: f64,
    pub total: f64,
    pub epsilon: f64,
}

impl EnergyBreakdown {
    fn new(potential: f64, second_gradient: f64, surfactant: f64, epsilon: f64) -> Self {
        EnergyBreakdown {
            potential,
            second_gradient,
            surfactant,
            total: potential + second_gradient + surfactant,
            epsilon,
        }
    }
}

/// Which third term the energy carries.
#[derive(Debug, Clone, Copy)]
enum Third<'a> {
    /// `(rho − |H|)²` with a given density.
    Density(&'a [f64]),
    /// `min{lambda², |H|²}`.
    Level(f64),
    /// Same value as `Level`, gradient of `E` at the water-filled density
    /// `max{lambda + |H|, 0}` (the envelope of `E` over densities).
    Water(f64),
}

/// Scratch buffers for repeated evaluations on one grid.
#[derive(Debug, Clone)]
pub struct EnergyWorkspace {
    grid: Grid,
    cols: usize,
    st: Stencils,
    der: Derivatives,
    adj: Derivatives,
    scratch: Vec<f64>,
    hess: Vec<f64>,
    terms: [Vec<f64>; 3],
    weights: Vec<f64>,
    mat: Vec<f64>,
    mat_grad: Vec<f64>,
}

/// Value of the mass-constrained reduced energy `min_rho E` at one `u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedValue {
    pub breakdown: EnergyBreakdown,
    pub lambda: f64,
    /// `∫ max{lambda + |∇²u|, 0}`.
    pub mass: f64,
}

impl EnergyWorkspace {
    pub fn new(grid: Grid, spec: &PotentialSpec) -> Result<Self> {
        check_dims(&grid, spec)?;
        let cols = spec.n();
        let m = grid.d() * cols;
        Ok(EnergyWorkspace {
            st: Stencils::new(&grid),
            der: Derivatives::new(&grid),
            adj: Derivatives::new(&grid),
            scratch: vec![0.0; grid.len()],
            hess: vec![0.0; grid.nodes()],
            terms: [vec![0.0; grid.nodes()], vec![0.0; grid.nodes()], vec![0.0; grid.nodes()]],
            weights: vec![grid.cell_volume(); grid.nodes()],
            mat: vec![0.0; m],
            mat_grad: vec![0.0; m],
            grid,
            cols,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `|∇²u|` per node, as computed by the last evaluation.
    pub fn hessian_norms(&self) -> &[f64] {
        &self.hess
    }

    fn load_matrix(&mut self, node: usize) {
        let (d, cols) = (self.grid.d(), self.cols);
        self.mat.iter_mut().for_each(|x| *x = 0.0);
        for c in 0..d {
            self.mat[c * cols + cols - 1] = self.der.dn[node * d + c];
            if self.grid.dim() == 2 {
                self.mat[c * cols] = self.der.d1[node * d + c];
            }
        }
    }

    fn derivatives(&mut self, u: &[f64]) {
        self.der.compute(&self.st, &self.grid, u);
        for n in 0..self.grid.nodes() {
            self.hess[n] = self.der.hess_sq(&self.grid, n);
        }
    }

    /// Evaluates the energy with the chosen third term. When `grad` is given
    /// it receives the full nodal gradient (band entries zeroed). `s` below
    /// is `∂(third-term integrand + |H|²)/∂|H|²`.
    fn eval(
        &mut self,
        u: &[f64],
        third: Third<'_>,
        eps: f64,
        spec: &PotentialSpec,
        mask: Option<&[bool]>,
        grad: Option<&mut [f64]>,
    ) -> EnergyBreakdown {
        self.derivatives(u);
        let g = self.grid;
        let (d, cols) = (g.d(), self.cols);
        let w = g.cell_volume();
        let want_grad = grad.is_some();
        for n in 0..g.nodes() {
            let q = self.hess[n];
            let keep = mask.map_or(true, |m| m[n]);
            self.load_matrix(n);
            let wv = if want_grad {
                let (mat, mg) = (&self.mat, &mut self.mat_grad);
                spec.value_grad_slice(mat, mg)
            } else {
                spec.eval_slice(&self.mat)
            };
            let (third_val, s) = match third {
                Third::Level(lam) => {
                    let l2 = lam * lam;
                    if q < l2 {
                        (q, 2.0)
                    } else {
                        (l2, 1.0)
                    }
                }
                Third::Water(lam) => {
                    let r = sqrt(q);
                    let s = if lam + r > 0.0 { 1.0 - lam / r } else { 2.0 };
                    ((lam * lam).min(q), s)
                }
                Third::Density(rho) => {
                    let r = sqrt(q);
                    let e = rho[n] - r;
                    let s = if r > 0.0 { 2.0 - rho[n] / r } else { 1.0 };
                    (e * e, s)
                }
            };
            if keep {
                self.terms[0][n] = wv / eps;
                self.terms[1][n] = eps * q;
                self.terms[2][n] = eps * third_val;
            } else {
                self.terms[0][n] = 0.0;
                self.terms[1][n] = 0.0;
                self.terms[2][n] = 0.0;
            }
            if want_grad {
                let (sw, sp) = if keep { (w * eps * s, w / eps) } else { (0.0, 0.0) };
                for c in 0..d {
                    let j = n * d + c;
                    self.adj.dn[j] = sp * self.mat_grad[c * cols + cols - 1];
                    self.adj.dnn[j] = 2.0 * sw * self.der.dnn[j];
                    if g.dim() == 2 {
                        self.adj.d1[j] = sp * self.mat_grad[c * cols];
                        self.adj.d11[j] = 2.0 * sw * self.der.d11[j];
                        self.adj.d1n[j] = 4.0 * sw * self.der.d1n[j];
                    }
                }
            }
        }
        for n in 0..g.nodes() {
            self.hess[n] = sqrt(self.hess[n]);
        }
        if let Some(out) = grad {
            derivatives_adjoint(&self.st, &g, &self.adj, &mut self.scratch, out);
            zero_bands(&g, out);
        }
        EnergyBreakdown::new(
            w * pairwise_sum(&self.terms[0]),
            w * pairwise_sum(&self.terms[1]),
            w * pairwise_sum(&self.terms[2]),
            eps,
        )
    }

    pub fn energy_f(&mut self, u: &[f64], lambda: f64, eps: f64, spec: &PotentialSpec, grad: Option<&mut [f64]>) -> EnergyBreakdown {
        self.eval(u, Third::Level(lambda), eps, spec, None, grad)
    }

    pub fn energy_e(&mut self, u: &[f64], rho: &[f64], eps: f64, spec: &PotentialSpec, grad: Option<&mut [f64]>) -> EnergyBreakdown {
        self.eval(u, Third::Density(rho), eps, spec, None, grad)
    }

    /// `G(u) = min { E_eps(u, rho) : rho ≥ 0, ∫rho ≤ gamma }`, attained at
    /// the water-fill `rho = max{lambda + |∇²u|, 0}`; then `G(u) = F_eps(u,
    /// lambda)`. Since the optimal density is unique, the gradient of `G` is
    /// that of `E` at fixed optimal `rho`.
    pub fn reduced(&mut self, u: &[f64], gamma: f64, eps: f64, spec: &PotentialSpec, grad: Option<&mut [f64]>) -> ReducedValue {
        self.derivatives(u);
        for n in 0..self.grid.nodes() {
            self.hess[n] = sqrt(self.hess[n]);
        }
        let lambda = waterfill::level(&self.hess, &self.weights, gamma);
        self.reduced_at(u, lambda, eps, spec, grad)
    }

    /// Same as [`Self::reduced`] with the level already known.
    pub fn reduced_at(&mut self, u: &[f64], lambda: f64, eps: f64, spec: &PotentialSpec, grad: Option<&mut [f64]>) -> ReducedValue {
        let breakdown = self.eval(u, Third::Water(lambda), eps, spec, None, grad);
        let mass = self.mass(lambda);
        ReducedValue { breakdown, lambda, mass }
    }

    /// `∫ max{lambda + |H|, 0}` from the norms of the last evaluation.
    pub fn mass(&self, lambda: f64) -> f64 {
        waterfill::mass(&self.hess, &self.weights, lambda)
    }

    /// Energy restricted to a node mask (used for regional shares).
    pub fn energy_e_masked(&mut self, u: &[f64], rho: &[f64], eps: f64, spec: &PotentialSpec, mask: &[bool]) -> EnergyBreakdown {
        self.eval(u, Third::Density(rho), eps, spec, Some(mask), None)
    }
}

fn zero_bands(g: &Grid, out: &mut [f64]) {
    let d = g.d();
    for i in 0..g.n_prime() {
        for k in (0..g.band()).chain(g.n_last() - g.band()..g.n_last()) {
            let n = g.node(i, k);
            out[n * d..(n + 1) * d].iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

fn check_dims(grid: &Grid, spec: &PotentialSpec) -> Result<()> {
    if grid.d() != spec.d() {
        return Err(invalid!("grid carries d = {} components, potential expects {}", grid.d(), spec.d()));
    }
    if grid.dim() > spec.n() {
        return Err(invalid!("grid dimension {} exceeds N = {}", grid.dim(), spec.n()));
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(invalid!("epsilon must be positive and finite, got {eps}"));
    }
    Ok(())
}

fn masked(grid: &Grid, region: Option<&Region>) -> Result<Option<Vec<bool>>> {
    region.map(|r| r.mask(grid)).transpose()
}

pub fn energy_e(
    u: &GridField,
    rho: &DensityField,
    eps: f64,
    spec: &PotentialSpec,
    region: Option<&Region>,
) -> Result<EnergyBreakdown> {
    if u.grid() != rho.grid() {
        return Err(Error::GridMismatch);
    }
    check_eps(eps)?;
    let mut ws = EnergyWorkspace::new(*u.grid(), spec)?;
    let mask = masked(u.grid(), region)?;
    Ok(ws.eval(u.values(), Third::Density(rho.values()), eps, spec, mask.as_deref(), None))
}

pub fn energy_f(
    u: &GridField,
    lambda: f64,
    eps: f64,
    spec: &PotentialSpec,
    region: Option<&Region>,
) -> Result<EnergyBreakdown> {
    if !(lambda <= 0.0) {
        return Err(invalid!("lambda must be nonpositive, got {lambda}"));
    }
    check_eps(eps)?;
    let mut ws = EnergyWorkspace::new(*u.grid(), spec)?;
    let mask = masked(u.grid(), region)?;
    Ok(ws.eval(u.values(), Third::Level(lambda), eps, spec, mask.as_deref(), None))
}

/// Gradient of [`energy_f`] over all of `Q`; band entries are zero. Where
/// `|∇²u| = |lambda|` exactly the `lambda²` branch (no local derivative) is
/// taken.
pub fn grad_f(u: &GridField, lambda: f64, eps: f64, spec: &PotentialSpec) -> Result<GridField> {
    if !(lambda <= 0.0) {
        return Err(invalid!("lambda must be nonpositive, got {lambda}"));
    }
    check_eps(eps)?;
    let mut ws = EnergyWorkspace::new(*u.grid(), spec)?;
    let mut out = vec![0.0; u.grid().len()];
    ws.energy_f(u.values(), lambda, eps, spec, Some(&mut out));
    GridField::from_values(*u.grid(), out)
}

/// Gradient of [`energy_e`] in `u` at fixed density.
pub fn grad_e(u: &GridField, rho: &DensityField, eps: f64, spec: &PotentialSpec) -> Result<GridField> {
    if u.grid() != rho.grid() {
        return Err(Error::GridMismatch);
    }
    check_eps(eps)?;
    let mut ws = EnergyWorkspace::new(*u.grid(), spec)?;
    let mut out = vec![0.0; u.grid().len()];
    ws.energy_e(u.values(), rho.values(), eps, spec, Some(&mut out));
    GridField::from_values(*u.grid(), out)
}

/// Both sides of `min{lambda² + w², 2w²} = w² + (max{lambda + w, 0} − w)²`.
pub fn check_min_identity(lambda: f64, w: f64) -> Result<(f64, f64)> {
    if !(lambda <= 0.0) || !(w >= 0.0) {
        return Err(invalid!("need lambda <= 0 and w >= 0, got ({lambda}, {w})"));
    }
    let lhs = (lambda * lambda + w * w).min(2.0 * w * w);
    let e = (lambda + w).max(0.0) - w;
    Ok((lhs, w * w + e * e))
}
