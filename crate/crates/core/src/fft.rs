//! Small complex FFT and the spectral preconditioner for the cell solver.
//!
//! The preconditioner approximates the Hessian of the discrete energy by
//! `w (alpha A + beta A²)` with `A = −Δ_h` on the free layers (Dirichlet at
//! the bands, periodic in `x_1`). A Fourier transform in `x_1` decouples the
//! modes; each mode factors as `beta A_k (A_k + alpha/beta)` and is solved by
//! two tridiagonal sweeps.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::fields::Grid;
use crate::math::{cos, sin};

/// In-place complex DFT of length `n` (`sign = −1` forward, `+1` inverse,
/// unnormalized). Radix-2 when `n` is a power of two, direct sum otherwise.
pub(crate) fn dft(re: &mut [f64], im: &mut [f64], sign: f64, tw: &Twiddles) {
    let n = re.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        let mut j = 0;
        for i in 1..n {
            let mut bit = n >> 1;
            while j & bit != 0 {
                j ^= bit;
                bit >>= 1;
            }
            j |= bit;
            if i < j {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let step = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..len / 2 {
                    let (c, s) = (tw.cos[k * step], sign * tw.sin[k * step]);
                    let (a, b) = (start + k, start + k + len / 2);
                    let tr = re[b] * c - im[b] * s;
                    let ti = re[b] * s + im[b] * c;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            len <<= 1;
        }
    } else {
        let (r0, i0) = (re.to_vec(), im.to_vec());
        for k in 0..n {
            let (mut sr, mut si) = (0.0, 0.0);
            for j in 0..n {
                let idx = (j * k) % n;
                let (c, s) = (tw.cos[idx], sign * tw.sin[idx]);
                sr += r0[j] * c - i0[j] * s;
                si += r0[j] * s + i0[j] * c;
            }
            re[k] = sr;
            im[k] = si;
        }
    }
}

/// `cos`/`sin` of `2πj/n`.
#[derive(Debug, Clone)]
pub(crate) struct Twiddles {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Twiddles {
    pub(crate) fn new(n: usize) -> Self {
        let ang = |j: usize| 2.0 * PI * j as f64 / n as f64;
        Twiddles {
            cos: (0..n).map(|j| cos(ang(j))).collect(),
            sin: (0..n).map(|j| sin(ang(j))).collect(),
        }
    }
}

/// Solves `(T + shift) x = b` for the Dirichlet Laplacian `T` (diagonal
/// `2/h²`, off-diagonal `−1/h²`) in place.
fn thomas(b: &mut [f64], h2: f64, shift: f64, c: &mut [f64]) {
    let n = b.len();
    let off = -1.0 / h2;
    let diag = 2.0 / h2 + shift;
    let mut denom = diag;
    b[0] /= denom;
    for i in 1..n {
        c[i - 1] = off / denom;
        denom = diag - off * c[i - 1];
        b[i] = (b[i] - off * b[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        b[i] -= c[i] * b[i + 1];
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Preconditioner {
    grid: Grid,
    alpha_over_beta: f64,
    scale: f64,
    tw: Twiddles,
    mu: Vec<f64>,
    re: Vec<f64>,
    im: Vec<f64>,
    line_re: Vec<f64>,
    line_im: Vec<f64>,
    work: Vec<f64>,
}

impl Preconditioner {
    /// For the energy at `eps`: `alpha = 2/eps` (potential curvature),
    /// `beta = 4 eps` (second-gradient terms at their heaviest).
    pub(crate) fn new(grid: Grid, eps: f64) -> Self {
        let np = grid.n_prime();
        let hp = grid.h_prime();
        let alpha = 2.0 / eps;
        let beta = 4.0 * eps;
        let mu = (0..np)
            .map(|k| if grid.dim() == 2 { (2.0 - 2.0 * cos(2.0 * PI * k as f64 / np as f64)) / (hp * hp) } else { 0.0 })
            .collect();
        let nf = grid.free_len();
        Preconditioner {
            alpha_over_beta: alpha / beta,
            scale: 1.0 / (grid.cell_volume() * beta),
            tw: Twiddles::new(np),
            mu,
            re: vec![0.0; np * nf],
            im: vec![0.0; np * nf],
            line_re: vec![0.0; np],
            line_im: vec![0.0; np],
            work: vec![0.0; nf],
            grid,
        }
    }

    /// `out = M⁻¹ r` on free nodes, zero on bands.
    pub(crate) fn apply(&mut self, r: &[f64], out: &mut [f64]) {
        let g = self.grid;
        let (np, nl, d) = (g.n_prime(), g.n_last(), g.d());
        let nf = g.free_len();
        let b = g.band();
        let h2 = g.h() * g.h();
        out.iter_mut().for_each(|x| *x = 0.0);
        for c in 0..d {
            // Forward transform along x_1 for each free layer.
            for kk in 0..nf {
                for i in 0..np {
                    self.line_re[i] = r[(i * nl + b + kk) * d + c];
                    self.line_im[i] = 0.0;
                }
                dft(&mut self.line_re, &mut self.line_im, -1.0, &self.tw);
                for m in 0..np {
                    self.re[m * nf + kk] = self.line_re[m];
                    self.im[m * nf + kk] = self.line_im[m];
                }
            }
            for m in 0..np {
                for part in [&mut self.re, &mut self.im] {
                    let line = &mut part[m * nf..(m + 1) * nf];
                    thomas(line, h2, self.mu[m], &mut self.work);
                    thomas(line, h2, self.mu[m] + self.alpha_over_beta, &mut self.work);
                }
            }
            let inv_n = self.scale / np as f64;
            for kk in 0..nf {
                for m in 0..np {
                    self.line_re[m] = self.re[m * nf + kk];
                    self.line_im[m] = self.im[m * nf + kk];
                }
                dft(&mut self.line_re, &mut self.line_im, 1.0, &self.tw);
                for i in 0..np {
                    out[(i * nl + b + kk) * d + c] = self.line_re[i] * inv_n;
                }
            }
        }
    }
}
