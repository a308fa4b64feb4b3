use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::quadrature::gauss_legendre;
use crate::error::SolverError;
use crate::geometry::Vec3;

/// Observation directions: Gauss-Legendre polar angles × uniform azimuths.
/// Flattened values use latitude-major order, `index = i_lat · n_lon + i_lon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionGrid {
    pub n_lat: usize,
    pub n_lon: usize,
    /// Polar angles, strictly increasing in (0, π).
    pub theta: Vec<f64>,
    /// Azimuths 2πj/n_lon.
    pub phi: Vec<f64>,
    /// Gauss-Legendre weights attached to `cos θ`.
    pub lat_weights: Vec<f64>,
}

pub fn make_direction_grid(n_lat: usize, n_lon: usize) -> Result<DirectionGrid, SolverError> {
    if n_lat < 2 || n_lon < 2 {
        return Err(SolverError::Parameter(format!(
            "direction grid needs n_lat >= 2 and n_lon >= 2, got {n_lat}x{n_lon}"
        )));
    }
    let (x, w) = gauss_legendre(n_lat);
    // ascending cos θ means descending θ; flip so θ increases
    let theta: Vec<f64> = x.iter().rev().map(|&c| c.acos()).collect();
    let lat_weights: Vec<f64> = w.into_iter().rev().collect();
    let phi = (0..n_lon)
        .map(|j| 2.0 * PI * j as f64 / n_lon as f64)
        .collect();
    Ok(DirectionGrid {
        n_lat,
        n_lon,
        theta,
        phi,
        lat_weights,
    })
}

impl DirectionGrid {
    pub fn len(&self) -> usize {
        self.n_lat * self.n_lon
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_lat, self.n_lon)
    }

    pub fn direction(&self, i_lat: usize, i_lon: usize) -> Vec3 {
        let (st, ct) = self.theta[i_lat].sin_cos();
        let (sp, cp) = self.phi[i_lon].sin_cos();
        [st * cp, st * sp, ct]
    }

    /// Unit directions in storage order.
    pub fn directions(&self) -> impl Iterator<Item = Vec3> + '_ {
        (0..self.n_lat).flat_map(move |i| (0..self.n_lon).map(move |j| self.direction(i, j)))
    }

    /// `(direction, θ, φ)` in storage order.
    pub fn directions_with_angles(&self) -> impl Iterator<Item = (Vec3, f64, f64)> + '_ {
        (0..self.n_lat).flat_map(move |i| {
            (0..self.n_lon).map(move |j| (self.direction(i, j), self.theta[i], self.phi[j]))
        })
    }

    /// Surface-quadrature weights on S² in storage order; they sum to 4π.
    pub fn solid_angle_weights(&self) -> impl Iterator<Item = f64> + '_ {
        let dphi = 2.0 * PI / self.n_lon as f64;
        (0..self.n_lat).flat_map(move |i| (0..self.n_lon).map(move |_| self.lat_weights[i] * dphi))
    }
}
