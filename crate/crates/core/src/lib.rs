//! Inverse acoustic scattering from phaseless far-field data: random
//! particle geometry, a boundary-element forward solver, and the point-cloud
//! networks that map far-field magnitudes to shapes.

pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod networks;
pub mod par;
pub mod solver;
pub mod training;
