//! Numerical laboratory for the plain aggregation model and its
//! nonlinear-diffusion regularization on a bounded interval.
//!
//! * [`potentials`]: interaction kernels and their derivatives.
//! * [`measures`]: densities, particle ensembles and mixed measures.
//! * [`transport`]: exact 1-D 2-Wasserstein distances.
//! * [`energy`]: interaction and diffusive energies.
//! * [`particle`]: projected particle method for the plain model.
//! * [`fv`]: upwind finite-volume scheme for the diffusive model.
//! * [`equilibria`]: diffusive energy minimizers and first-variation checks.
//! * [`experiments`]: batch drivers that emit CSV tables.

pub mod error;
pub mod potentials;
pub mod measures;
pub mod transport;
pub mod energy;
pub mod particle;
pub mod fv;
pub mod equilibria;
pub mod experiments;

pub use error::{Error, Result};
pub use measures::{Atom, DensityField, Grid1D, MixedMeasure, ParticleEnsemble};
pub use potentials::{PotentialKind, PotentialSpec};
