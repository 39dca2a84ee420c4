//! Simulation and loop SPAM analysis of a two-qubit polarization experiment.
//!
//! The crate models photon pairs in a partially dephased Bell state mixed with
//! white noise, measured by two parties whose detectors are set by a
//! quarter-wave plate and a half-wave plate. Coincidence counts are drawn from
//! the Born-rule probabilities, and the resulting expectation matrix is checked
//! for self-consistency with the partial-determinant test: for uncorrelated
//! measurements `A⁻¹ B D⁻¹ C = I`, independent of the state and of the
//! detector settings.
//!
//! Modules:
//! - [`states`]: density operators, correlation matrix, Horodecki `M`,
//!   negativity and fidelity.
//! - [`polarimetry`]: Jones matrices, measurement operators, Born-rule
//!   probabilities and the eavesdropper's setting remap.
//! - [`counts`]: multinomial coincidence simulation, estimators, trial sets
//!   and their CSV/JSON forms.
//! - [`consistency`]: expectation matrices, the overlapping embedding, the
//!   partial determinant, trial statistics and the verdict.
//! - [`tomography`]: linear-inversion state tomography, physical projection,
//!   Werner-model fit and CHSH helpers.
//! - [`scenario`]: scenario configs and the end-to-end pipeline behind the
//!   `loopspam` binary.

pub mod consistency;
pub mod counts;
mod error;
pub mod linalg;
pub mod polarimetry;
pub mod scenario;
pub mod states;
pub mod tomography;

pub use error::{Error, Result, Side};
