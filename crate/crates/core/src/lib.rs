//! Driven, lossy cavity with a dynamically blocked photon level: Fock-space
//! operators, Lindblad evolution, the qubit–cavity model behind the blockade,
//! Wigner tomography and parameter fitting.
//!
//! Numerical kernels are generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the common `f64` case.

pub mod dynamics;
pub mod error;
pub mod fit;
pub mod fock;
pub mod io;
pub mod joint;
pub mod linalg;
pub mod master;
pub mod scalar;
pub mod tomography;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Complex64 = scalar::C<f64>;
pub type Operator = linalg::Operator<f64>;
pub type DensityMatrix = fock::DensityMatrix<f64>;
pub type StateVector = fock::StateVector<f64>;
pub type Trajectory = master::Trajectory<f64>;

pub type Operator32 = linalg::Operator<f32>;
pub type DensityMatrix32 = fock::DensityMatrix<f32>;
pub type StateVector32 = fock::StateVector<f32>;
pub type Trajectory32 = master::Trajectory<f32>;
