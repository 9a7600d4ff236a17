//! Generalised (gap) diffusions that embed a centred law `μ` at an
//! independent exponential time.
//!
//! The speed measure `m(dx) = μ(dx) / U(x)`, with `U(x) = u_μ(x) - |x - x₀|`
//! the excess of the potential over that of `δ_{x₀}`, makes the diffusion
//! `X_t = B_{A_t}` satisfy `X_T ~ μ` for `T ~ Exp(1)` independent of `B`.
//!
//! Modules:
//! - [`measure`]: target laws, potentials, truncation.
//! - [`speed`]: the speed measure and boundary classification.
//! - [`chain`]: the birth–death chain for atomic `μ`, exact and simulated.
//! - [`pathsim`]: lattice Brownian paths, time change, Poisson marks, SDE.
//! - [`resolvent`]: eigenfunctions and the Green function.
//! - [`stats`]: distances between laws.
//! - [`finance`]: implied laws from option prices and gamma-clock paths.
//! - [`cli`]: the `gapdiff` command line.

pub mod chain;
pub mod cli;
pub mod finance;
pub mod measure;
pub mod pathsim;
pub mod resolvent;
pub mod rng;
pub mod speed;
pub mod stats;
