//! Representative volume elements for 2D random scalar conductivity fields.
//!
//! The crate covers the whole pipeline of the selection approach for
//! representative volumes:
//!
//! * [`fieldgen`] draws periodic coefficient fields (random checkerboards,
//!   hard-core Poisson inclusions, the laminate-tile counterexample).
//! * [`pde`] solves the periodic corrector problem with FFT-preconditioned
//!   conjugate gradients and the constant-coefficient auxiliary problem by
//!   direct FFT diagonalization.
//! * [`estimators`] evaluates the cell formula, the statistical quantities
//!   `F_avg` and `F_2pt`, and the selection criterion.
//! * [`experiment`] runs calibrated plain and selected Monte Carlo ensembles.
//! * [`oracles`] holds closed-form laminate tensors and brute-force checks.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod estimators;
pub mod experiment;
pub mod fieldgen;
pub mod oracles;
pub mod pde;
pub mod rng;
pub mod stats;

mod fft;

pub use error::{Error, Result};
pub use estimators::{EffectiveMatrix, FVector, Quantity, SelectionSpec};
pub use fieldgen::{GeneratorSpec, GridGeometry, ScalarField, Variant};
pub use rng::SampleSeed;
