//! Two-well potentials on `d × N` matrices.
//!
//! Only the prototype family `W(ξ) = min{|ξ − A|^p, |ξ − B|^p}` is shipped,
//! with wells `A = a⊗e_N` and `B = −a⊗e_N` and the Frobenius norm. The
//! hypothesis checker works against [`PotentialSpec`] only through
//! [`PotentialSpec::eval_slice`], so other potentials can be checked the same
//! way.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::math::{pow_abs, powf, sqrt};
use crate::{Error, Result};

/// Dense `rows × cols` matrix, row-major. Rows index the codomain (`d`),
/// columns the spatial derivative direction; column `cols − 1` is `x_N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: format!("{} entries", rows * cols),
                got: format!("{}", data.len()),
            });
        }
        Ok(Mat { rows, cols, data })
    }

    /// `v ⊗ e_last`: the matrix whose last column is `v`.
    pub fn outer_last(v: &[f64], cols: usize) -> Self {
        let mut m = Mat::zeros(v.len(), cols);
        for (i, &x) in v.iter().enumerate() {
            m.set(i, cols - 1, x);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn norm(&self) -> f64 {
        sqrt(self.data.iter().map(|x| x * x).sum())
    }

    pub fn scaled_add(&self, t: f64, other: &Mat) -> Mat {
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| x + t * y)
            .collect();
        Mat {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    /// `W(ξ) = min{|ξ − A|^p, |ξ − B|^p}`.
    PrototypeP,
}

#[derive(Deserialize)]
struct RawSpec {
    kind: PotentialKind,
    a: Vec<f64>,
    p: f64,
    d: usize,
    #[serde(rename = "N")]
    n: usize,
}

/// The double-well potential together with its dimensions.
///
/// Immutable once built; construction rejects degenerate wells (`a = 0`),
/// `p < 2`, `N < 2` and mismatched `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct PotentialSpec {
    kind: PotentialKind,
    a: Vec<f64>,
    p: f64,
    d: usize,
    #[serde(rename = "N")]
    n: usize,
}

impl TryFrom<RawSpec> for PotentialSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        if raw.a.len() != raw.d {
            return Err(invalid!(
                "well vector has {} entries but d = {}",
                raw.a.len(),
                raw.d
            ));
        }
        match raw.kind {
            PotentialKind::PrototypeP => PotentialSpec::prototype(raw.a, raw.p, raw.n),
        }
    }
}

impl PotentialSpec {
    /// Prototype potential with wells `±a⊗e_N` in `R^{d×N}`, `d = a.len()`.
    pub fn prototype(a: Vec<f64>, p: f64, n: usize) -> Result<Self> {
        if a.is_empty() {
            return Err(invalid!("codomain dimension d must be at least 1"));
        }
        if n < 2 {
            return Err(invalid!("domain dimension N must be at least 2, got {n}"));
        }
        if !(p >= 2.0) || !p.is_finite() {
            return Err(invalid!("growth exponent p must be a finite number >= 2, got {p}"));
        }
        if a.iter().any(|x| !x.is_finite()) {
            return Err(invalid!("well vector must be finite"));
        }
        let norm = sqrt(a.iter().map(|x| x * x).sum());
        if !(norm > 0.0) {
            return Err(invalid!("well vector a must be nonzero; the wells would coincide"));
        }
        Ok(PotentialSpec {
            kind: PotentialKind::PrototypeP,
            d: a.len(),
            a,
            p,
            n,
        })
    }

    pub fn kind(&self) -> PotentialKind {
        self.kind
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn a_norm(&self) -> f64 {
        sqrt(self.a.iter().map(|x| x * x).sum())
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Domain dimension `N`.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn well_a(&self) -> Mat {
        Mat::outer_last(&self.a, self.n)
    }

    pub fn well_b(&self) -> Mat {
        let neg: Vec<f64> = self.a.iter().map(|x| -x).collect();
        Mat::outer_last(&neg, self.n)
    }

    fn check_shape(&self, xi: &Mat) -> Result<()> {
        if xi.rows != self.d || xi.cols != self.n {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", self.d, self.n),
                got: format!("{}x{}", xi.rows, xi.cols),
            });
        }
        Ok(())
    }

    pub fn eval(&self, xi: &Mat) -> Result<f64> {
        self.check_shape(xi)?;
        Ok(self.eval_slice(&xi.data))
    }

    /// Gradient `p |ξ − S|^{p−2} (ξ − S)` with `S` the nearer well; ties go
    /// to `A`.
    pub fn grad(&self, xi: &Mat) -> Result<Mat> {
        self.check_shape(xi)?;
        let mut out = Mat::zeros(self.d, self.n);
        self.value_grad_slice(&xi.data, &mut out.data);
        Ok(out)
    }

    /// Squared distances to `A` and `B` for a row-major `d × N` slice.
    #[inline]
    fn well_distances(&self, xi: &[f64]) -> (f64, f64) {
        let n = self.n;
        let mut common = 0.0;
        let mut da = 0.0;
        let mut db = 0.0;
        for i in 0..self.d {
            let row = &xi[i * n..(i + 1) * n];
            for &x in &row[..n - 1] {
                common += x * x;
            }
            let last = row[n - 1];
            let ea = last - self.a[i];
            let eb = last + self.a[i];
            da += ea * ea;
            db += eb * eb;
        }
        (common + da, common + db)
    }

    /// Unchecked evaluation on a row-major `d × N` slice.
    #[inline]
    pub fn eval_slice(&self, xi: &[f64]) -> f64 {
        let (da, db) = self.well_distances(xi);
        let m = if da <= db { da } else { db };
        if self.p == 2.0 {
            m
        } else {
            powf(m, 0.5 * self.p)
        }
    }

    /// Value and gradient at once; `out` has the layout of `xi`.
    #[inline]
    pub fn value_grad_slice(&self, xi: &[f64], out: &mut [f64]) -> f64 {
        let (da, db) = self.well_distances(xi);
        let (m, sign) = if da <= db { (da, 1.0) } else { (db, -1.0) };
        let (value, coef) = if self.p == 2.0 {
            (m, 2.0)
        } else {
            (powf(m, 0.5 * self.p), self.p * powf(m, 0.5 * self.p - 1.0))
        };
        let n = self.n;
        for i in 0..self.d {
            for j in 0..n {
                let k = i * n + j;
                let well = if j == n - 1 { sign * self.a[i] } else { 0.0 };
                out[k] = coef * (xi[k] - well);
            }
        }
        value
    }
}

/// Outcome of one hypothesis check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub name: String,
    pub passed: bool,
    /// Largest violation found (0 when none).
    pub worst_violation: f64,
    pub detail: String,
}

/// Sampled verification of the structural hypotheses on `W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub seed: u64,
    pub samples: usize,
    pub tolerance: f64,
    pub checks: Vec<HypothesisCheck>,
    /// Smallest `C > 1` with `|ξ|^p / C − C ≤ W(ξ) ≤ C (|ξ|^p + 1)` on the sample.
    pub growth_constant: f64,
    /// Empirical `c ≤ W / |ξ − S|^p ≤ C` near the wells.
    pub local_lower: f64,
    pub local_upper: f64,
    pub local_radius: f64,
    /// Empirical `C₁ = min W(ξ)/|ξ'|^p`.
    pub transverse_c1: f64,
    /// Empirical `C₂ = max W(ξ) / (W(η) + |ξ − η|^p)` over sampled pairs.
    pub comparison_c2: f64,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const DEFAULT_ASSUMPTION_SEED: u64 = 0x5eed_0f_3a11;

/// Checks the structural assumptions on W and the transverse bounds on `samples` random matrices
/// plus deterministic probes, with the default seed.
pub fn check_assumptions(spec: &PotentialSpec, samples: usize, tol: f64) -> Result<AssumptionReport> {
    check_assumptions_seeded(spec, samples, tol, DEFAULT_ASSUMPTION_SEED)
}

pub fn check_assumptions_seeded(
    spec: &PotentialSpec,
    samples: usize,
    tol: f64,
    seed: u64,
) -> Result<AssumptionReport> {
    if samples == 0 {
        return Err(invalid!("at least one sample is required"));
    }
    if !(tol >= 0.0) {
        return Err(invalid!("tolerance must be nonnegative"));
    }
    let (d, n) = (spec.d(), spec.n());
    let len = d * n;
    let p = spec.p();
    let scale = spec.a_norm();
    let well_a = spec.well_a();
    let well_b = spec.well_b();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Probe set: wells, midpoint, scaled axes, then random matrices of mixed
    // magnitude and random points near each well.
    let mut pts: Vec<Vec<f64>> = Vec::new();
    pts.push(well_a.as_slice().to_vec());
    pts.push(well_b.as_slice().to_vec());
    pts.push(vec![0.0; len]);
    for k in 0..len {
        for &s in &[-3.0, -1.0, 0.5, 2.0] {
            let mut v = vec![0.0; len];
            v[k] = s * scale;
            pts.push(v);
        }
    }
    let mut near: Vec<(Vec<f64>, bool)> = Vec::new();
    for s in 0..samples {
        let mag = match s % 3 {
            0 => 0.5,
            1 => 3.0,
            _ => 30.0,
        } * scale;
        pts.push((0..len).map(|_| rng.gen_range(-mag..mag)).collect());
        let at_a = s % 2 == 0;
        let base = if at_a { &well_a } else { &well_b };
        let r = 0.5 * scale * rng.gen::<f64>();
        let dir: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dn = sqrt(dir.iter().map(|x| x * x).sum::<f64>()).max(1e-300);
        near.push((
            base.as_slice().iter().zip(&dir).map(|(b, x)| b + r * x / dn).collect(),
            at_a,
        ));
    }

    let w = |x: &[f64]| spec.eval_slice(x);
    let fro = |x: &[f64]| sqrt(x.iter().map(|v| v * v).sum());
    let dist = |x: &[f64], m: &Mat| sqrt(x.iter().zip(m.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum());

    let mut checks = Vec::new();

    // Zero set is exactly {A, B}; continuity via small perturbations.
    {
        let mut worst: f64 = w(well_a.as_slice()).max(w(well_b.as_slice()));
        let mut nonpositive = 0usize;
        let mut cont_worst: f64 = 0.0;
        for x in pts.iter().chain(near.iter().map(|(x, _)| x)) {
            let off = dist(x, &well_a).min(dist(x, &well_b));
            let v = w(x);
            if off > 1e-9 * scale && !(v > 0.0) {
                nonpositive += 1;
                worst = worst.max(off);
            }
            let bump: Vec<f64> = x.iter().map(|v| v + 1e-7 * (1.0 + fro(x))).collect();
            let jump = (w(&bump) - v).abs() / (1.0 + v);
            cont_worst = cont_worst.max(jump);
        }
        let passed = worst <= tol && nonpositive == 0 && cont_worst < 1e-3;
        checks.push(HypothesisCheck {
            name: "wells".into(),
            passed,
            worst_violation: worst,
            detail: format!(
                "W(A), W(B) <= {worst:.3e}; {nonpositive} non-well samples with W <= 0; continuity jump {cont_worst:.3e}"
            ),
        });
    }

    // p-growth with a single constant C > 1.
    let growth_constant = {
        let mut upper: f64 = 1.0;
        for x in &pts {
            let r = pow_abs(fro(x), p);
            upper = upper.max(w(x) / (r + 1.0));
        }
        let lower_ok = |c: f64| pts.iter().all(|x| pow_abs(fro(x), p) / c - c <= w(x) * (1.0 + tol) + tol);
        let mut c = upper.max(1.0 + 1e-9);
        let mut doublings = 0;
        while !lower_ok(c) && doublings < 200 {
            c *= 2.0;
            doublings += 1;
        }
        if lower_ok(c) {
            // shrink back toward the smallest admissible constant
            let (mut lo, mut hi) = (upper.max(1.0 + 1e-9).max(c / 2.0), c);
            if lower_ok(lo) {
                hi = lo;
            }
            for _ in 0..60 {
                if hi - lo <= 1e-9 * hi {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                if lower_ok(mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            hi
        } else {
            f64::INFINITY
        }
    };
    checks.push(HypothesisCheck {
        name: "growth".into(),
        passed: growth_constant.is_finite(),
        worst_violation: if growth_constant.is_finite() { 0.0 } else { f64::INFINITY },
        detail: format!("empirical growth constant C = {growth_constant:.6}"),
    });

    // Local p-homogeneity near each well.
    let local_radius = 0.5 * scale;
    let (mut local_lower, mut local_upper) = (f64::INFINITY, 0.0f64);
    for (x, at_a) in &near {
        let well = if *at_a { &well_a } else { &well_b };
        let r = dist(x, well);
        if r <= 1e-12 * scale || r > local_radius {
            continue;
        }
        let ratio = w(x) / pow_abs(r, p);
        local_lower = local_lower.min(ratio);
        local_upper = local_upper.max(ratio);
    }
    checks.push(HypothesisCheck {
        name: "local_homogeneity".into(),
        passed: local_lower > 0.0 && local_upper.is_finite(),
        worst_violation: 0.0,
        detail: format!("c = {local_lower:.6}, C = {local_upper:.6} within radius {local_radius:.4}"),
    });

    // Invariance under flipping the sign of any column.
    {
        let mut worst: f64 = 0.0;
        for x in pts.iter().chain(near.iter().map(|(x, _)| x)) {
            let v = w(x);
            for col in 0..n {
                let mut y = x.clone();
                for i in 0..d {
                    y[i * n + col] = -y[i * n + col];
                }
                worst = worst.max((w(&y) - v).abs() / (1.0 + v.abs()));
            }
        }
        checks.push(HypothesisCheck {
            name: "column_symmetry".into(),
            passed: worst <= tol,
            worst_violation: worst,
            detail: format!("largest relative change under a column sign flip {worst:.3e}"),
        });
    }

    // Transverse dominance W(ξ) >= W(0, ξ_N).
    let mut transverse_c1 = f64::INFINITY;
    {
        let mut worst: f64 = 0.0;
        for x in pts.iter().chain(near.iter().map(|(x, _)| x)) {
            let mut y = x.clone();
            let mut tnorm = 0.0;
            for i in 0..d {
                for j in 0..n - 1 {
                    tnorm += y[i * n + j] * y[i * n + j];
                    y[i * n + j] = 0.0;
                }
            }
            let (wx, wy) = (w(x), w(&y));
            worst = worst.max((wy - wx) / (1.0 + wx.abs()));
            let tnorm = sqrt(tnorm);
            if tnorm > 1e-9 * scale {
                transverse_c1 = transverse_c1.min(wx / pow_abs(tnorm, p));
            }
        }
        let worst = worst.max(0.0);
        checks.push(HypothesisCheck {
            name: "transverse_dominance".into(),
            passed: worst <= tol,
            worst_violation: worst,
            detail: format!("largest relative excess of W(0, xi_N) over W(xi) {worst:.3e}"),
        });
    }

    // Transverse lower bound and comparison bound C1|ξ'|^p <= W(ξ) <= C2 (W(η) + |ξ−η|^p).
    let mut comparison_c2: f64 = 0.0;
    for (k, x) in pts.iter().enumerate() {
        let eta = &pts[(k * 7 + 3) % pts.len()];
        let diff = sqrt(x.iter().zip(eta).map(|(a, b)| (a - b) * (a - b)).sum());
        let denom = w(eta) + pow_abs(diff, p);
        if denom > 0.0 {
            comparison_c2 = comparison_c2.max(w(x) / denom);
        }
        for (y, _) in near.iter().take(4) {
            let diff = sqrt(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum());
            let denom = w(y) + pow_abs(diff, p);
            if denom > 0.0 {
                comparison_c2 = comparison_c2.max(w(x) / denom);
            }
        }
    }
    checks.push(HypothesisCheck {
        name: "transverse_bounds".into(),
        passed: transverse_c1 > 0.0 && comparison_c2.is_finite(),
        worst_violation: 0.0,
        detail: format!("C1 = {transverse_c1:.6}, C2 = {comparison_c2:.6}"),
    });

    Ok(AssumptionReport {
        seed,
        samples,
        tolerance: tol,
        checks,
        growth_constant,
        local_lower,
        local_upper,
        local_radius,
        transverse_c1,
        comparison_c2,
    })
}
