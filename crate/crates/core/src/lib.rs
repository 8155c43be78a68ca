//! Recovery of the five elastic constants of a transversely isotropic rotor
//! core from the lowest natural eigenvalues of a free-free stepped rotor.
//!
//! The pipeline is: [`tensor`] (elasticity matrices and admissibility) →
//! [`mesh`] (structured hexahedral rotor) → [`fem`] (stiffness/mass assembly)
//! → [`eig`] (generalized symmetric eigensolver) → [`forward`] (mode
//! classification and the parameter-to-eigenvalue map) → [`inverse`]
//! (least squares and ensemble Kalman inversion) → [`harness`] (experiments).

pub mod band;
pub mod config;
pub mod eig;
pub mod error;
pub mod fem;
pub mod forward;
pub mod harness;
pub mod inverse;
pub mod mesh;
pub mod tensor;

pub use error::{Error, Result};
