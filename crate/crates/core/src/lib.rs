//! Numerical laboratory for the parabolic Anderson model
//! `∂m/∂t = κΔm + v(x)m` on `Z^d` with an i.i.d. Weibull potential.
//!
//! The crate implements, and cross-validates against independent oracles,
//! every computable object of the underlying theory:
//!
//! - [`environment`]: Weibull potentials, order statistics and their
//!   Gumbel extreme-value behavior;
//! - [`lattice`]: boxes, nearest-neighbor path enumeration and the
//!   strip-box mesoscopic partition;
//! - [`spectral`]: lattice Schrödinger operators, Green functions and the
//!   rank-one (Aronszajn-Krein) perturbation machinery for the principal
//!   Dirichlet eigenvalue;
//! - [`pde`]: Dirichlet solutions of the parabolic Anderson equation on
//!   finite boxes (spectral expansion vs. adaptive ODE integration);
//! - [`scaling`]: the implicit scaling function `h(t)` solving
//!   `ζ_M(h) = L^{-d}`, its recursive expansion and closed-form variants;
//! - [`stable`]: totally asymmetric stable laws, Lévy-Khintchine triples,
//!   triangular-array diagnostics and the Monte Carlo pipeline for the
//!   stable limit of rescaled spatial averages;
//! - [`annealed`]: the cumulant generating function `H`, Feynman-Kac
//!   Monte Carlo of `⟨m(0,t)⟩` and the path-decomposition series.
//!
//! All Monte Carlo is seeded and deterministic, independent of thread
//! count; see [`rng`].

pub mod annealed;
pub mod environment;
pub mod lattice;
pub mod pde;
pub mod quad;
pub mod rng;
pub mod scaling;
pub mod spectral;
pub mod stable;
pub mod validation;
