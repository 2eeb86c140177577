//! Sharp-interface limit objects: laminates with finitely many horizontal
//! interfaces, surfactant measures made of interface patches and atoms, and
//! the limit energy `Σ_i ∫_{interface i} Φ(dμ/dH^{N−1})`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cellproblem::PhiCurve;
use crate::error::invalid;
use crate::fields::{Grid, GridField};
use crate::math::abs;
use crate::{Error, Result};

#[derive(Deserialize)]
struct RawLaminate {
    gamma0: Vec<f64>,
    a: Vec<f64>,
    heights: Vec<f64>,
    #[serde(default = "yes")]
    bottom_in_e: bool,
}

fn yes() -> bool {
    true
}

/// `u(x) = gamma0 + a x_N − 2 ψ(x_N) a` with `ψ(s) = ∫_0^s χ_E`, where `E`
/// is a union of the slabs cut out by `heights`; `∇u = B` inside `E` and
/// `A` outside. `bottom_in_e` says whether the lowest slab belongs to `E`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLaminate")]
pub struct Laminate {
    gamma0: Vec<f64>,
    a: Vec<f64>,
    heights: Vec<f64>,
    bottom_in_e: bool,
}

impl TryFrom<RawLaminate> for Laminate {
    type Error = Error;
    fn try_from(r: RawLaminate) -> Result<Self> {
        Laminate::new(r.gamma0, r.a, r.heights, r.bottom_in_e)
    }
}

impl Laminate {
    pub fn new(gamma0: Vec<f64>, a: Vec<f64>, heights: Vec<f64>, bottom_in_e: bool) -> Result<Self> {
        if gamma0.len() != a.len() || a.is_empty() {
            return Err(invalid!("gamma0 and a must be nonempty vectors of equal length"));
        }
        let an: f64 = a.iter().map(|x| x * x).sum();
        if !(an > 0.0) {
            return Err(invalid!("well vector a must be nonzero"));
        }
        let dot: f64 = gamma0.iter().zip(&a).map(|(x, y)| x * y).sum();
        if abs(dot) > 1e-12 * (1.0 + an) {
            return Err(invalid!("gamma0 must be orthogonal to a (gamma0·a = {dot})"));
        }
        for w in heights.windows(2) {
            if !(w[1] > w[0]) {
                return Err(invalid!("heights must be strictly increasing"));
            }
        }
        if heights.iter().any(|t| !(*t > -0.5 && *t < 0.5)) {
            return Err(invalid!("heights must lie in (-1/2, 1/2)"));
        }
        Ok(Laminate { gamma0, a, heights, bottom_in_e })
    }

    /// The canonical `|x_N − t| a` kink (plus `gamma0`).
    pub fn single(a: Vec<f64>, t: f64) -> Result<Self> {
        let g0 = vec![0.0; a.len()];
        Laminate::new(g0, a, vec![t], true)
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn gamma0(&self) -> &[f64] {
        &self.gamma0
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn bottom_in_e(&self) -> bool {
        self.bottom_in_e
    }

    /// Whether the slab containing height `s` belongs to `E`.
    pub fn in_e(&self, s: f64) -> bool {
        let below = self.heights.iter().filter(|t| **t <= s).count();
        (below % 2 == 0) == self.bottom_in_e
    }

    /// `+1` where `∇u = A`, `−1` where `∇u = B`.
    pub fn gradient_sign(&self, s: f64) -> f64 {
        if self.in_e(s) {
            -1.0
        } else {
            1.0
        }
    }

    /// `ψ(s) = ∫_0^s χ_E`.
    pub fn psi(&self, s: f64) -> f64 {
        let (lo, hi, sign) = if s >= 0.0 { (0.0, s, 1.0) } else { (s, 0.0, -1.0) };
        let mut cuts = vec![lo];
        cuts.extend(self.heights.iter().copied().filter(|t| *t > lo && *t < hi));
        cuts.push(hi);
        let mut acc = 0.0;
        for w in cuts.windows(2) {
            if self.in_e(0.5 * (w[0] + w[1])) {
                acc += w[1] - w[0];
            }
        }
        sign * acc
    }

    /// Value at height `s` (the laminate does not depend on `x'`).
    pub fn value_at(&self, s: f64) -> Vec<f64> {
        let p = self.psi(s);
        self.gamma0.iter().zip(&self.a).map(|(g, a)| g + a * s - 2.0 * p * a).collect()
    }
}

/// `x` is a point of `Q` with `x_N` last.
pub fn eval_laminate(lam: &Laminate, x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(invalid!("point needs at least the x_N coordinate"));
    }
    if x.iter().any(|c| !(*c >= -0.5 && *c <= 0.5)) {
        return Err(invalid!("point {x:?} lies outside the unit box"));
    }
    Ok(lam.value_at(x[x.len() - 1]))
}

/// Nodal evaluation; interfaces must be at least two grid cells apart and
/// from the boundary bands.
pub fn rasterize(lam: &Laminate, grid: &Grid) -> Result<GridField> {
    if grid.d() != lam.a.len() {
        return Err(invalid!("grid has d = {}, laminate has d = {}", grid.d(), lam.a.len()));
    }
    let h = grid.h();
    let mut prev = -0.5 + grid.band() as f64 * h;
    for &t in &lam.heights {
        if t - prev < 2.0 * h {
            return Err(invalid!("interface at {t} is closer than two cells to its neighbour or the bands"));
        }
        prev = t;
    }
    if 0.5 - grid.band() as f64 * h - prev < 2.0 * h {
        return Err(invalid!("interface at {prev} is closer than two cells to the top band"));
    }
    Ok(GridField::from_fn(*grid, |_, xn, o| o.copy_from_slice(&lam.value_at(xn))))
}

/// Constant-density piece `γ χ_{K'}` on interface `interface`, with `K'`
/// the box `[lo, hi)` in `x'` (one coordinate for `N = 2`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub interface: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub density: f64,
}

impl Patch {
    pub fn area(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| (h - l).max(0.0)).product()
    }

    /// Uniform density over the whole cross-section (`N = 2`).
    pub fn full(interface: usize, density: f64) -> Self {
        Patch { interface, lo: vec![-0.5], hi: vec![0.5], density }
    }

    fn overlaps(&self, other: &Patch) -> bool {
        self.interface == other.interface
            && self.lo.iter().zip(&self.hi).zip(other.lo.iter().zip(&other.hi)).all(|((l1, h1), (l2, h2))| l1.max(*l2) < h1.min(*h2))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    /// Point of `Q`, `x_N` last.
    pub location: Vec<f64>,
    pub mass: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SurfactantMeasure {
    pub patches: Vec<Patch>,
    pub atoms: Vec<Atom>,
}

impl SurfactantMeasure {
    pub fn uniform(density: f64) -> Self {
        SurfactantMeasure { patches: vec![Patch::full(0, density)], atoms: vec![] }
    }

    /// `μ(Q)`.
    pub fn total_mass(&self) -> f64 {
        self.patches.iter().map(|p| p.density * p.area()).sum::<f64>() + self.atoms.iter().map(|a| a.mass).sum::<f64>()
    }

    /// Checks the measure against a laminate in `N` dimensions: patches inside
    /// the cross-section, on existing interfaces and pairwise disjoint; atoms
    /// inside `Q` and at least `min_atom_distance` away from every interface.
    pub fn validate(&self, lam: &Laminate, n: usize, min_atom_distance: f64) -> Result<()> {
        for (k, p) in self.patches.iter().enumerate() {
            if p.interface >= lam.heights.len() {
                return Err(invalid!("patch {k} refers to interface {} of {}", p.interface, lam.heights.len()));
            }
            if p.lo.len() != n - 1 || p.hi.len() != n - 1 {
                return Err(invalid!("patch {k} needs {} cross-section coordinates", n - 1));
            }
            let tol = 1e-12;
            if p.lo.iter().zip(&p.hi).any(|(l, h)| *l < -0.5 - tol || *h > 0.5 + tol || !(h > l)) {
                return Err(invalid!("patch {k} leaves the cross-section or is empty"));
            }
            if !(p.density >= 0.0) || !p.density.is_finite() {
                return Err(invalid!("patch {k} has invalid density {}", p.density));
            }
            for q in &self.patches[..k] {
                if p.overlaps(q) {
                    return Err(invalid!("patch {k} overlaps an earlier patch on the same interface"));
                }
            }
        }
        for (k, a) in self.atoms.iter().enumerate() {
            if a.location.len() != n || a.location.iter().any(|c| !(*c > -0.5 && *c < 0.5)) {
                return Err(invalid!("atom {k} must be an interior point of Q in {n} dimensions"));
            }
            if !(a.mass >= 0.0) || !a.mass.is_finite() {
                return Err(invalid!("atom {k} has invalid mass {}", a.mass));
            }
            let xn = a.location[n - 1];
            if lam.heights.iter().any(|t| abs(t - xn) < min_atom_distance) {
                return Err(invalid!("atom {k} is within {min_atom_distance} of an interface"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitEnergy {
    pub value: f64,
    /// Some density fell outside the curve's sampled range (flat
    /// continuation was used).
    pub extrapolated: bool,
}

/// `Σ_i [Σ_patches Φ(γ_p) |K'_p| + Φ(0) (1 − Σ_p |K'_p|)]` on `Q`; atoms are
/// invisible to the limit energy.
pub fn limit_energy(lam: &Laminate, mu: &SurfactantMeasure, curve: &PhiCurve) -> Result<LimitEnergy> {
    if curve.points.is_empty() {
        return Err(invalid!("surface-tension curve is empty"));
    }
    let n = mu.patches.first().map_or(2, |p| p.lo.len() + 1);
    mu.validate(lam, n, 0.0)?;
    let mut value = 0.0;
    let mut extrapolated = false;
    for i in 0..lam.heights.len() {
        let mut covered = 0.0;
        for p in mu.patches.iter().filter(|p| p.interface == i) {
            let (phi, ex) = curve.interpolate(p.density);
            extrapolated |= ex;
            value += phi * p.area();
            covered += p.area();
        }
        let rest = 1.0 - covered;
        if rest > 1e-12 {
            let (phi0, ex) = curve.interpolate(0.0);
            extrapolated |= ex;
            value += phi0 * rest;
        }
    }
    Ok(LimitEnergy { value, extrapolated })
}
