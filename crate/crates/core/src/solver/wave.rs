use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::SolverError;
use crate::geometry::{dot, norm, scale, Vec3};

/// Speed of sound in air at room temperature, m/s.
pub const DEFAULT_SOUND_SPEED: f64 = 343.0;

/// Time-harmonic plane wave e^{iκ d̂·r} (e^{-iωt} convention).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneWave {
    direction: Vec3,
    frequency: f64,
    sound_speed: f64,
}

impl PlaneWave {
    /// `direction` is normalized; it must be finite and nonzero.
    pub fn new(direction: Vec3, frequency: f64, sound_speed: f64) -> Result<Self, SolverError> {
        let n = norm(direction);
        if !(n > 0.0 && n.is_finite()) {
            return Err(SolverError::Parameter(format!(
                "plane-wave direction must be nonzero, got {direction:?}"
            )));
        }
        if !(frequency > 0.0 && frequency.is_finite()) {
            return Err(SolverError::Parameter(format!("frequency must be positive, got {frequency}")));
        }
        if !(sound_speed > 0.0 && sound_speed.is_finite()) {
            return Err(SolverError::Parameter(format!(
                "sound speed must be positive, got {sound_speed}"
            )));
        }
        Ok(PlaneWave {
            direction: scale(direction, 1.0 / n),
            frequency,
            sound_speed,
        })
    }

    /// Wave with the given wavenumber κ (1/m), at the default sound speed.
    pub fn with_wavenumber(direction: Vec3, wavenumber: f64) -> Result<Self, SolverError> {
        Self::new(
            direction,
            wavenumber * DEFAULT_SOUND_SPEED / (2.0 * PI),
            DEFAULT_SOUND_SPEED,
        )
    }

    pub fn direction(&self) -> Vec3 {
        self.direction
    }

    pub fn frequency(&self) -> f64 {
        self.frequency
    }

    pub fn sound_speed(&self) -> f64 {
        self.sound_speed
    }

    /// κ = 2πf/c.
    pub fn wavenumber(&self) -> f64 {
        2.0 * PI * self.frequency / self.sound_speed
    }
}

pub fn incident_field(wave: &PlaneWave, r: Vec3) -> Complex64 {
    let phase = wave.wavenumber() * dot(wave.direction, r);
    Complex64::from_polar(1.0, phase)
}
