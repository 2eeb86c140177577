//! Numerical toolkit for surfactant-laden solid-solid phase transitions.
//!
//! The crate discretizes the singularly perturbed second-gradient energy
//!
//! ```text
//! E_eps(u, rho) = ∫ W(∇u)/eps + eps |∇²u|² + eps (rho - |∇²u|)² dx
//! ```
//!
//! on box grids that are periodic in `x'`, computes the effective surface
//! tension `Φ(γ)` from the cell problem, evaluates the sharp-interface limit
//! energy on laminates and builds recovery pairs `(u_eps, rho_eps)` that
//! exhibit the limsup inequality numerically.
//!
//! Everything here is `no_std` (with `alloc`); file formats, configuration
//! and the command line live in the companion `surftension` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cellproblem;
pub mod energy;
mod error;
pub mod fields;
mod fft;
mod math;
mod optim;
pub mod potential;
pub mod recovery;
pub mod sharpinterface;
pub mod waterfill;

pub use error::{Error, Result};
pub use optim::golden_section;
