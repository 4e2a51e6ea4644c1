//! Homogenization, exact Floquet-Bloch dispersion and effective-equation simulation
//! for one-dimensional diffusive laminates modulated in space-time.

pub mod bloch;
pub mod cell;
pub mod cellfn;
pub mod effective;
pub mod fdsolver;
pub mod laminate;
pub mod validate;
