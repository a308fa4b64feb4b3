//! Collocation boundary-element solver for sound-soft scatterers.

pub mod assembly;
pub mod farfield;
pub mod grid;
pub mod quadrature;
pub mod series;
pub mod solve;
pub mod symmetry;
pub mod wave;

pub use assembly::{assemble_single_layer, assemble_single_layer_with, DenseMatrix};
pub use farfield::{complex_relative_l2, far_field, far_field_with, phaseless, FarFieldGrid, FarFieldValues};
pub use grid::{make_direction_grid, DirectionGrid};
pub use quadrature::{gauss_legendre, TriangleRule};
pub use series::{analytic_soft_sphere, series_terms_needed};
pub use solve::{solve_soft, solve_soft_with, BemOptions, BemSolution, MAX_CONDITION};
pub use symmetry::{axial_symmetry_group, solve_soft_symmetric};
pub use wave::{incident_field, PlaneWave, DEFAULT_SOUND_SPEED};
