//! Box grids on `Q = (−1/2, 1/2)^N`, periodic in `x'`, and finite-difference
//! derivatives of vector fields living on them.
//!
//! Nodes are cell centers, `x = −1/2 + (i + 1/2) h`. A node is addressed as
//! `i * n_last + k` with `i` along `x_1` and `k` along `x_N`; a field stores
//! its `d` components contiguously per node. One-dimensional grids (profiles
//! depending on `x_N` only) use `n_prime = 1` and no `x_1` derivatives.
//!
//! The first `band` and last `band` layers in `x_N` are the boundary bands,
//! where fields are pinned to `∓a x_N + c`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::math::{pairwise_sum, sqrt};
use crate::{Error, Result};

#[derive(Deserialize)]
struct RawGrid {
    dim: usize,
    d: usize,
    n_prime: usize,
    n_last: usize,
    band: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct Grid {
    dim: usize,
    d: usize,
    n_prime: usize,
    n_last: usize,
    band: usize,
}

impl TryFrom<RawGrid> for Grid {
    type Error = Error;
    fn try_from(r: RawGrid) -> Result<Self> {
        match r.dim {
            1 => Grid::new_1d(r.d, r.n_last, r.band),
            2 => Grid::new_2d(r.d, r.n_prime, r.n_last, r.band),
            other => Err(invalid!("grid dimension must be 1 or 2, got {other}")),
        }
    }
}

impl Grid {
    /// Full grid on the unit square, periodic in `x_1`.
    pub fn new_2d(d: usize, n_prime: usize, n_last: usize, band: usize) -> Result<Self> {
        if n_prime < 4 {
            return Err(invalid!("n_prime must be at least 4, got {n_prime}"));
        }
        Self::check(d, n_last, band)?;
        Ok(Grid {
            dim: 2,
            d,
            n_prime,
            n_last,
            band,
        })
    }

    /// Profile grid along `x_N` only.
    pub fn new_1d(d: usize, n_last: usize, band: usize) -> Result<Self> {
        Self::check(d, n_last, band)?;
        Ok(Grid {
            dim: 1,
            d,
            n_prime: 1,
            n_last,
            band,
        })
    }

    fn check(d: usize, n_last: usize, band: usize) -> Result<()> {
        if d == 0 {
            return Err(invalid!("codomain dimension d must be at least 1"));
        }
        if n_last < 8 {
            return Err(invalid!("n_last must be at least 8, got {n_last}"));
        }
        if band < 2 {
            return Err(invalid!("band must be at least 2, got {band}"));
        }
        if 2 * band + 4 > n_last {
            return Err(invalid!(
                "bands of {band} layers leave fewer than 4 free layers out of {n_last}"
            ));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_prime(&self) -> usize {
        self.n_prime
    }

    pub fn n_last(&self) -> usize {
        self.n_last
    }

    pub fn band(&self) -> usize {
        self.band
    }

    pub fn nodes(&self) -> usize {
        self.n_prime * self.n_last
    }

    pub fn len(&self) -> usize {
        self.nodes() * self.d
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn h_prime(&self) -> f64 {
        1.0 / self.n_prime as f64
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n_last as f64
    }

    /// Quadrature weight of one node.
    pub fn cell_volume(&self) -> f64 {
        if self.dim == 2 {
            self.h_prime() * self.h()
        } else {
            self.h()
        }
    }

    pub fn x_prime(&self, i: usize) -> f64 {
        -0.5 + (i as f64 + 0.5) * self.h_prime()
    }

    pub fn x_last(&self, k: usize) -> f64 {
        -0.5 + (k as f64 + 0.5) * self.h()
    }

    #[inline]
    pub fn node(&self, i: usize, k: usize) -> usize {
        i * self.n_last + k
    }

    pub fn is_band(&self, k: usize) -> bool {
        k < self.band || k >= self.n_last - self.band
    }

    /// Range of free (non-band) layers in `x_N`.
    pub fn free_layers(&self) -> core::ops::Range<usize> {
        self.band..self.n_last - self.band
    }

    pub fn free_len(&self) -> usize {
        self.n_last - 2 * self.band
    }
}

/// Deformation `u: Q → R^d` sampled at the nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    grid: Grid,
    values: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: Grid) -> Self {
        GridField {
            values: vec![0.0; grid.len()],
            grid,
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values", grid.len()),
                got: format!("{}", values.len()),
            });
        }
        Ok(GridField { grid, values })
    }

    /// Samples `f(x_1, x_N, out)`; on 1D grids `x_1` is passed as 0.
    pub fn from_fn(grid: Grid, mut f: impl FnMut(f64, f64, &mut [f64])) -> Self {
        let mut out = GridField::zeros(grid);
        let d = grid.d;
        for i in 0..grid.n_prime {
            let x1 = if grid.dim == 2 { grid.x_prime(i) } else { 0.0 };
            for k in 0..grid.n_last {
                let n = grid.node(i, k);
                f(x1, grid.x_last(k), &mut out.values[n * d..(n + 1) * d]);
            }
        }
        out
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, i: usize, k: usize) -> &[f64] {
        let n = self.grid.node(i, k);
        &self.values[n * self.grid.d..(n + 1) * self.grid.d]
    }

    /// Cyclic shift by `s` nodes along `x_1`.
    pub fn shift_prime(&self, s: usize) -> GridField {
        let g = self.grid;
        let mut out = GridField::zeros(g);
        let stride = g.n_last * g.d;
        for i in 0..g.n_prime {
            let j = (i + s) % g.n_prime;
            out.values[j * stride..(j + 1) * stride]
                .copy_from_slice(&self.values[i * stride..(i + 1) * stride]);
        }
        out
    }

    /// Largest variance across `x_1` of any component on any layer.
    pub fn max_prime_variance(&self) -> f64 {
        let g = self.grid;
        let mut worst: f64 = 0.0;
        for k in 0..g.n_last {
            for c in 0..g.d {
                let mut mean = 0.0;
                for i in 0..g.n_prime {
                    mean += self.at(i, k)[c];
                }
                mean /= g.n_prime as f64;
                let mut var = 0.0;
                for i in 0..g.n_prime {
                    let e = self.at(i, k)[c] - mean;
                    var += e * e;
                }
                worst = worst.max(var / g.n_prime as f64);
            }
        }
        worst
    }
}

/// Nonnegative scalar density (surfactant `ρ`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityField {
    grid: Grid,
    values: Vec<f64>,
}

impl DensityField {
    pub fn zeros(grid: Grid) -> Self {
        DensityField {
            values: vec![0.0; grid.nodes()],
            grid,
        }
    }

    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.nodes() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} nodes", grid.nodes()),
                got: format!("{}", values.len()),
            });
        }
        if let Some(pos) = values.iter().position(|v| !(*v >= 0.0)) {
            return Err(invalid!("density must be nonnegative, node {pos} has {}", values[pos]));
        }
        Ok(DensityField { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Per-node `d × cols` gradient matrices, row-major, last column `∂_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    grid: Grid,
    cols: usize,
    values: Vec<f64>,
}

impl GradientField {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at_node(&self, node: usize) -> &[f64] {
        let m = self.grid.d * self.cols;
        &self.values[node * m..(node + 1) * m]
    }

    pub fn at(&self, i: usize, k: usize) -> &[f64] {
        self.at_node(self.grid.node(i, k))
    }
}

/// One row of a non-periodic stencil along `x_N`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Row {
    start: usize,
    coef: [f64; 4],
    len: usize,
}

/// Stencil tables along `x_N`: first derivative (central, second-order
/// one-sided at the ends) and second derivative (3-point, 4-point one-sided).
#[derive(Debug, Clone)]
pub(crate) struct Stencils {
    dn: Vec<Row>,
    dnn: Vec<Row>,
}

impl Stencils {
    pub(crate) fn new(grid: &Grid) -> Self {
        let n = grid.n_last;
        let h = grid.h();
        let (i2h, ih2) = (0.5 / h, 1.0 / (h * h));
        let mut dn = Vec::with_capacity(n);
        let mut dnn = Vec::with_capacity(n);
        for k in 0..n {
            dn.push(if k == 0 {
                Row { start: 0, coef: [-3.0 * i2h, 4.0 * i2h, -i2h, 0.0], len: 3 }
            } else if k == n - 1 {
                Row { start: n - 3, coef: [i2h, -4.0 * i2h, 3.0 * i2h, 0.0], len: 3 }
            } else {
                Row { start: k - 1, coef: [-i2h, 0.0, i2h, 0.0], len: 3 }
            });
            dnn.push(if k == 0 {
                Row { start: 0, coef: [2.0 * ih2, -5.0 * ih2, 4.0 * ih2, -ih2], len: 4 }
            } else if k == n - 1 {
                Row { start: n - 4, coef: [-ih2, 4.0 * ih2, -5.0 * ih2, 2.0 * ih2], len: 4 }
            } else {
                Row { start: k - 1, coef: [ih2, -2.0 * ih2, ih2, 0.0], len: 3 }
            });
        }
        Stencils { dn, dnn }
    }

    fn apply(rows: &[Row], grid: &Grid, u: &[f64], out: &mut [f64]) {
        let (n, d) = (grid.n_last, grid.d);
        for i in 0..grid.n_prime {
            let base = i * n * d;
            for (k, r) in rows.iter().enumerate() {
                for c in 0..d {
                    let mut s = 0.0;
                    for j in 0..r.len {
                        s += r.coef[j] * u[base + (r.start + j) * d + c];
                    }
                    out[base + k * d + c] = s;
                }
            }
        }
    }

    /// `out += rowsᵀ g`.
    fn apply_t(rows: &[Row], grid: &Grid, g: &[f64], out: &mut [f64]) {
        let (n, d) = (grid.n_last, grid.d);
        for i in 0..grid.n_prime {
            let base = i * n * d;
            for (k, r) in rows.iter().enumerate() {
                for c in 0..d {
                    let gk = g[base + k * d + c];
                    for j in 0..r.len {
                        out[base + (r.start + j) * d + c] += r.coef[j] * gk;
                    }
                }
            }
        }
    }

    pub(crate) fn dn(&self, grid: &Grid, u: &[f64], out: &mut [f64]) {
        Self::apply(&self.dn, grid, u, out)
    }

    pub(crate) fn dn_t(&self, grid: &Grid, g: &[f64], out: &mut [f64]) {
        Self::apply_t(&self.dn, grid, g, out)
    }

    pub(crate) fn dnn(&self, grid: &Grid, u: &[f64], out: &mut [f64]) {
        Self::apply(&self.dnn, grid, u, out)
    }

    pub(crate) fn dnn_t(&self, grid: &Grid, g: &[f64], out: &mut [f64]) {
        Self::apply_t(&self.dnn, grid, g, out)
    }
}

/// Periodic central first difference along `x_1`.
pub(crate) fn d1(grid: &Grid, u: &[f64], out: &mut [f64]) {
    let (np, stride) = (grid.n_prime, grid.n_last * grid.d);
    let s = 0.5 / grid.h_prime();
    for i in 0..np {
        let (ip, im) = ((i + 1) % np, (i + np - 1) % np);
        for j in 0..stride {
            out[i * stride + j] = s * (u[ip * stride + j] - u[im * stride + j]);
        }
    }
}

/// `out += d1ᵀ g` (= `−d1 g`).
pub(crate) fn d1_t(grid: &Grid, g: &[f64], out: &mut [f64]) {
    let (np, stride) = (grid.n_prime, grid.n_last * grid.d);
    let s = 0.5 / grid.h_prime();
    for i in 0..np {
        let (ip, im) = ((i + 1) % np, (i + np - 1) % np);
        for j in 0..stride {
            out[i * stride + j] += s * (g[im * stride + j] - g[ip * stride + j]);
        }
    }
}

/// Periodic 3-point second difference along `x_1` (symmetric).
pub(crate) fn d11(grid: &Grid, u: &[f64], out: &mut [f64]) {
    let (np, stride) = (grid.n_prime, grid.n_last * grid.d);
    let s = 1.0 / (grid.h_prime() * grid.h_prime());
    for i in 0..np {
        let (ip, im) = ((i + 1) % np, (i + np - 1) % np);
        for j in 0..stride {
            out[i * stride + j] = s * (u[ip * stride + j] - 2.0 * u[i * stride + j] + u[im * stride + j]);
        }
    }
}

pub(crate) fn d11_t(grid: &Grid, g: &[f64], out: &mut [f64]) {
    let (np, stride) = (grid.n_prime, grid.n_last * grid.d);
    let s = 1.0 / (grid.h_prime() * grid.h_prime());
    for i in 0..np {
        let (ip, im) = ((i + 1) % np, (i + np - 1) % np);
        for j in 0..stride {
            out[i * stride + j] += s * (g[ip * stride + j] - 2.0 * g[i * stride + j] + g[im * stride + j]);
        }
    }
}

/// Discrete first and second derivatives of a field, kept around so the
/// energy and its adjoint share one evaluation.
#[derive(Debug, Clone)]
pub(crate) struct Derivatives {
    pub(crate) dn: Vec<f64>,
    pub(crate) dnn: Vec<f64>,
    /// Only filled on 2D grids.
    pub(crate) d1: Vec<f64>,
    pub(crate) d11: Vec<f64>,
    pub(crate) d1n: Vec<f64>,
}

impl Derivatives {
    pub(crate) fn new(grid: &Grid) -> Self {
        let len = grid.len();
        let extra = if grid.dim == 2 { len } else { 0 };
        Derivatives {
            dn: vec![0.0; len],
            dnn: vec![0.0; len],
            d1: vec![0.0; extra],
            d11: vec![0.0; extra],
            d1n: vec![0.0; extra],
        }
    }

    pub(crate) fn compute(&mut self, st: &Stencils, grid: &Grid, u: &[f64]) {
        st.dn(grid, u, &mut self.dn);
        st.dnn(grid, u, &mut self.dnn);
        if grid.dim == 2 {
            d1(grid, u, &mut self.d1);
            d11(grid, u, &mut self.d11);
            d1(grid, &self.dn, &mut self.d1n);
        }
    }

    /// Squared Frobenius norm of the Hessian at a node.
    #[inline]
    pub(crate) fn hess_sq(&self, grid: &Grid, node: usize) -> f64 {
        let d = grid.d;
        let mut s = 0.0;
        for c in node * d..(node + 1) * d {
            s += self.dnn[c] * self.dnn[c];
            if grid.dim == 2 {
                s += self.d11[c] * self.d11[c] + 2.0 * self.d1n[c] * self.d1n[c];
            }
        }
        s
    }
}

/// Adjoint accumulator: given `∂J/∂(derivative)` arrays with the layout of
/// [`Derivatives`], writes `∂J/∂u` into `out` (overwriting).
pub(crate) fn derivatives_adjoint(
    st: &Stencils,
    grid: &Grid,
    g: &Derivatives,
    scratch: &mut [f64],
    out: &mut [f64],
) {
    out.iter_mut().for_each(|x| *x = 0.0);
    st.dnn_t(grid, &g.dnn, out);
    if grid.dim == 2 {
        d11_t(grid, &g.d11, out);
        d1_t(grid, &g.d1, out);
        // d1n = d1 ∘ dn, so its transpose is dnᵀ ∘ d1ᵀ.
        scratch.iter_mut().for_each(|x| *x = 0.0);
        d1_t(grid, &g.d1n, scratch);
        for (s, v) in scratch.iter_mut().zip(&g.dn) {
            *s += v;
        }
        st.dn_t(grid, scratch, out);
    } else {
        st.dn_t(grid, &g.dn, out);
    }
}

/// `∇u` as `d × cols` matrices per node; `cols` is the ambient dimension `N`
/// (at least the grid dimension). Column 0 carries `∂_1` on 2D grids, the
/// last column `∂_N`, any others are zero.
pub fn gradient(f: &GridField, cols: usize) -> Result<GradientField> {
    let g = f.grid;
    if cols < g.dim.max(2) {
        return Err(invalid!("gradient needs at least {} columns, got {cols}", g.dim.max(2)));
    }
    let st = Stencils::new(&g);
    let mut dn = vec![0.0; g.len()];
    st.dn(&g, &f.values, &mut dn);
    let mut dx = Vec::new();
    if g.dim == 2 {
        dx = vec![0.0; g.len()];
        d1(&g, &f.values, &mut dx);
    }
    let m = g.d * cols;
    let mut values = vec![0.0; g.nodes() * m];
    for node in 0..g.nodes() {
        for c in 0..g.d {
            values[node * m + c * cols + cols - 1] = dn[node * g.d + c];
            if g.dim == 2 {
                values[node * m + c * cols] = dx[node * g.d + c];
            }
        }
    }
    Ok(GradientField { grid: g, cols, values })
}

/// `|∇²u|` (Frobenius over all `d·N²` entries) per node.
pub fn hessian_norm(f: &GridField) -> DensityField {
    let g = f.grid;
    let st = Stencils::new(&g);
    let mut der = Derivatives::new(&g);
    der.compute(&st, &g, &f.values);
    let values = (0..g.nodes()).map(|n| sqrt(der.hess_sq(&g, n))).collect();
    DensityField { grid: g, values }
}

/// Mean of component `c` over the layer `k`.
fn layer_mean(f: &GridField, k: usize, c: usize) -> f64 {
    let g = f.grid;
    let mut s = 0.0;
    for i in 0..g.n_prime {
        s += f.at(i, k)[c];
    }
    s / g.n_prime as f64
}

/// Overwrites the bands with `−a x_N + c_bot` (bottom) and `a x_N + c_top`
/// (top); each constant makes the affine band, continued one layer inward,
/// agree with the mean of that first free layer. Idempotent.
pub fn apply_boundary_bands(f: &GridField, a: &[f64]) -> Result<GridField> {
    let g = f.grid;
    if a.len() != g.d {
        return Err(Error::ShapeMismatch {
            expected: format!("well vector of length {}", g.d),
            got: format!("{}", a.len()),
        });
    }
    let mut out = f.clone();
    let (lo, hi) = (g.band, g.n_last - g.band - 1);
    for c in 0..g.d {
        let c_bot = layer_mean(f, lo, c) + a[c] * g.x_last(lo);
        let c_top = layer_mean(f, hi, c) - a[c] * g.x_last(hi);
        for i in 0..g.n_prime {
            for k in 0..g.band {
                let n = g.node(i, k);
                out.values[n * g.d + c] = -a[c] * g.x_last(k) + c_bot;
            }
            for k in g.n_last - g.band..g.n_last {
                let n = g.node(i, k);
                out.values[n * g.d + c] = a[c] * g.x_last(k) + c_top;
            }
        }
    }
    Ok(out)
}

/// Integration region inside `Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Region {
    /// Axis-aligned box; node centers inside `[lo, hi)` count. Axis order
    /// `x_1, x_N` on 2D grids, `x_N` alone on 1D grids.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Explicit per-node selection.
    Mask(Vec<bool>),
}

impl Region {
    /// Per-node selection on `grid`.
    pub fn mask(&self, grid: &Grid) -> Result<Vec<bool>> {
        match self {
            Region::Mask(m) => {
                if m.len() != grid.nodes() {
                    return Err(Error::ShapeMismatch {
                        expected: format!("{} nodes", grid.nodes()),
                        got: format!("{}", m.len()),
                    });
                }
                Ok(m.clone())
            }
            Region::Box { lo, hi } => {
                if lo.len() != grid.dim || hi.len() != grid.dim {
                    return Err(invalid!("region box needs {} coordinates per corner", grid.dim));
                }
                let tol = 1e-12;
                for (l, u) in lo.iter().zip(hi) {
                    if *l < -0.5 - tol || *u > 0.5 + tol || !l.is_finite() || !u.is_finite() {
                        return Err(invalid!("region [{l}, {u}] leaves the unit box"));
                    }
                }
                let inside = |x: f64, ax: usize| x >= lo[ax] && x < hi[ax];
                let mut m = vec![false; grid.nodes()];
                for i in 0..grid.n_prime {
                    let ok1 = grid.dim == 1 || inside(grid.x_prime(i), 0);
                    for k in 0..grid.n_last {
                        m[grid.node(i, k)] = ok1 && inside(grid.x_last(k), grid.dim - 1);
                    }
                }
                Ok(m)
            }
        }
    }
}

/// Midpoint-rule integral of a nodal scalar field over `region` (all of `Q`
/// when `None`).
pub fn integrate(grid: &Grid, values: &[f64], region: Option<&Region>) -> Result<f64> {
    if values.len() != grid.nodes() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} nodes", grid.nodes()),
            got: format!("{}", values.len()),
        });
    }
    let w = grid.cell_volume();
    match region {
        None => Ok(w * pairwise_sum(values)),
        Some(r) => {
            let m = r.mask(grid)?;
            let picked: Vec<f64> = values
                .iter()
                .zip(&m)
                .map(|(v, &keep)| if keep { *v } else { 0.0 })
                .collect();
            Ok(w * pairwise_sum(&picked))
        }
    }
}

pub fn integrate_density(rho: &DensityField, region: Option<&Region>) -> Result<f64> {
    integrate(&rho.grid, &rho.values, region)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{cos, sin};
    use approx::assert_relative_eq;
    use core::f64::consts::PI;

    fn g2(n: usize) -> Grid {
        Grid::new_2d(2, n, n, 2).unwrap()
    }

    #[test]
    fn grid_invariants() {
        assert!(Grid::new_2d(1, 3, 16, 2).is_err());
        assert!(Grid::new_2d(1, 4, 7, 2).is_err());
        assert!(Grid::new_2d(1, 4, 16, 1).is_err());
        let g = Grid::new_2d(1, 4, 16, 2).unwrap();
        assert_relative_eq!(g.h() * 16.0, 1.0);
        assert_relative_eq!(g.h_prime() * 4.0, 1.0);
    }

    #[test]
    fn affine_gradient_is_exact() {
        let g = g2(16);
        let f = GridField::from_fn(g, |_, xn, o| {
            o[0] = 0.7 * xn;
            o[1] = -0.2 * xn + 1.0;
        });
        let gr = gradient(&f, 2).unwrap();
        for n in 0..g.nodes() {
            let m = gr.at_node(n);
            assert!(m[0].abs() < 1e-12 && (m[1] - 0.7).abs() < 1e-12);
            assert!(m[2].abs() < 1e-12 && (m[3] + 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_has_zero_derivatives() {
        let g = g2(8);
        let f = GridField::from_fn(g, |_, _, o| o.fill(3.0));
        assert!(gradient(&f, 3).unwrap().values.iter().all(|v| v.abs() < 1e-12));
        assert!(hessian_norm(&f).values().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn periodic_derivative_is_second_order() {
        let g = g2(64);
        let f = GridField::from_fn(g, |x1, _, o| {
            o[0] = sin(2.0 * PI * x1);
            o[1] = 0.0;
        });
        let gr = gradient(&f, 2).unwrap();
        let bound = (2.0 * PI).powi(3) * g.h_prime() * g.h_prime() / 6.0;
        for i in 0..64 {
            for k in 0..64 {
                let err = (gr.at(i, k)[0] - 2.0 * PI * cos(2.0 * PI * g.x_prime(i))).abs();
                assert!(err < bound, "err {err} bound {bound}");
            }
        }
    }

    #[test]
    fn quadratic_hessian_is_exact() {
        let g = g2(16);
        let f = GridField::from_fn(g, |_, xn, o| {
            o[0] = 0.6 * xn * xn / 2.0;
            o[1] = 0.8 * xn * xn / 2.0;
        });
        for v in hessian_norm(&f).values() {
            assert_relative_eq!(*v, 1.0, max_relative = 1e-9);
        }
    }

    #[test]
    fn sine_hessian_error_bound() {
        let g = Grid::new_1d(1, 128, 2).unwrap();
        let f = GridField::from_fn(g, |_, xn, o| o[0] = sin(2.0 * PI * xn));
        let hn = hessian_norm(&f);
        let bound = (2.0 * PI).powi(4) * g.h() * g.h() / 12.0;
        for k in 0..128 {
            let exact = (4.0 * PI * PI * sin(2.0 * PI * g.x_last(k))).abs();
            assert!((hn.values()[k] - exact).abs() < bound);
        }
    }

    #[test]
    fn mixed_derivative_and_adjoint() {
        let g = Grid::new_2d(1, 8, 12, 2).unwrap();
        let f = GridField::from_fn(g, |x1, xn, o| o[0] = x1 * xn);
        let hn = hessian_norm(&f);
        // interior nodes away from the seam: |H| = sqrt(2)
        for i in 1..7 {
            for k in 1..11 {
                assert_relative_eq!(hn.values()[g.node(i, k)], sqrt(2.0), max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn adjoint_matches_inner_products() {
        use rand::{Rng, SeedableRng};
        let g = Grid::new_2d(2, 6, 10, 2).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let u: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let st = Stencils::new(&g);
        let mut der = Derivatives::new(&g);
        der.compute(&st, &g, &u);
        let mut w = Derivatives::new(&g);
        for arr in [&mut w.dn, &mut w.dnn, &mut w.d1, &mut w.d11, &mut w.d1n] {
            arr.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        }
        let lhs: f64 = [(&der.dn, &w.dn), (&der.dnn, &w.dnn), (&der.d1, &w.d1), (&der.d11, &w.d11), (&der.d1n, &w.d1n)]
            .iter()
            .map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f64>())
            .sum();
        let mut scratch = vec![0.0; g.len()];
        let mut out = vec![0.0; g.len()];
        derivatives_adjoint(&st, &g, &w, &mut scratch, &mut out);
        let rhs: f64 = out.iter().zip(&u).map(|(x, y)| x * y).sum();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-11);
    }

    #[test]
    fn bands_zero_field_and_idempotence() {
        let g = g2(16);
        let a = [1.0, 0.5];
        let f = GridField::zeros(g);
        let once = apply_boundary_bands(&f, &a).unwrap();
        let twice = apply_boundary_bands(&once, &a).unwrap();
        assert_eq!(once, twice);
        // continuing the bottom band into the first free layer gives the mean 0
        let k = g.band();
        let c_bot = once.at(0, 0)[0] + a[0] * g.x_last(0);
        assert_relative_eq!(-a[0] * g.x_last(k) + c_bot, 0.0, epsilon = 1e-14);
        let affine = GridField::from_fn(g, |_, xn, o| {
            o[0] = a[0] * xn.abs();
            o[1] = a[1] * xn.abs();
        });
        assert_eq!(apply_boundary_bands(&affine, &a).unwrap().values(), affine.values());
    }

    #[test]
    fn quadrature() {
        let g = Grid::new_2d(1, 64, 64, 2).unwrap();
        assert_relative_eq!(integrate(&g, &vec![1.0; g.nodes()], None).unwrap(), 1.0, max_relative = 1e-14);
        let f = GridField::from_fn(g, |_, xn, o| o[0] = xn * xn);
        assert!((integrate(&g, f.values(), None).unwrap() - 1.0 / 12.0).abs() < 1e-4);
        let empty = Region::Box { lo: vec![0.1, 0.1], hi: vec![0.1, 0.3] };
        assert_eq!(integrate(&g, &vec![1.0; g.nodes()], Some(&empty)).unwrap(), 0.0);
        let outside = Region::Box { lo: vec![-0.7, 0.0], hi: vec![0.0, 0.2] };
        assert!(integrate(&g, &vec![1.0; g.nodes()], Some(&outside)).is_err());
        let half = Region::Box { lo: vec![-0.5, 0.0], hi: vec![0.5, 0.5] };
        assert_relative_eq!(integrate(&g, &vec![1.0; g.nodes()], Some(&half)).unwrap(), 0.5);
    }

    #[test]
    fn negative_density_rejected() {
        let g = g2(8);
        let mut v = vec![0.0; g.nodes()];
        v[3] = -1e-3;
        assert!(DensityField::new(g, v).is_err());
    }

    proptest::proptest! {
        #[test]
        fn shift_equivariance(seed in 0u64..1000, s in 0usize..8) {
            use rand::{Rng, SeedableRng};
            let g = Grid::new_2d(2, 8, 12, 2).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let f = GridField::from_values(g, (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let a = gradient(&f.shift_prime(s), 2).unwrap();
            let b = gradient(&f, 2).unwrap();
            for i in 0..8 {
                for k in 0..12 {
                    let j = (i + s) % 8;
                    for (x, y) in a.at(j, k).iter().zip(b.at(i, k)) {
                        proptest::prop_assert!((x - y).abs() < 1e-12);
                    }
                }
            }
            let h1 = integrate(&g, hessian_norm(&f).values(), None).unwrap();
            let h2 = integrate(&g, hessian_norm(&f.shift_prime(s)).values(), None).unwrap();
            proptest::prop_assert!((h1 - h2).abs() <= 1e-10 * h1.abs().max(1.0));
        }
    }
}
