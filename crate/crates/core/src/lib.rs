//! Spectral solver and verification suite for solitary waves of
//! `√(-Δ+m²)u - ωu - λ(W ∗ u²)u + F_s(x,u) = 0` on a periodic box.
//!
//! Modules build on each other bottom-up: [`grid`] (lattices and the DFT),
//! [`fracops`] (the operator and its half-space extension), [`hartree`]
//! (nonlocal convolutions), [`model`] (energy and gradient), [`mountainpass`]
//! and [`manifold`] (the two variational solvers), and [`identities`]
//! (integral identities, inequalities and regime classification).

pub mod error;
pub mod fracops;
pub mod grid;
pub mod hartree;
pub mod identities;
pub mod io;
pub mod manifold;
pub mod model;
pub mod mountainpass;

pub use error::{Error, Result};
pub use fracops::{ExtensionField, ExtensionKind, SlabSpec};
pub use grid::{Grid, RealField, SpectralField};
pub use hartree::{HartreeOperator, Kernel, KernelVariant, RadialTable};
pub use identities::{CheckSpec, PohozaevReport, Regime};
pub use model::{Model, ModelParams, Nonlinearity, NonlinearityKind};
pub use mountainpass::{Solution, SolveReport, SolverOptions};
