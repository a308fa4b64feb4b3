//! Partial-wave series for plane-wave scattering by a sound-soft sphere.

use num_complex::Complex64;

use super::farfield::FarFieldGrid;
use super::grid::DirectionGrid;
use super::wave::PlaneWave;
use crate::error::SolverError;
use crate::geometry::dot;

/// Terms whose coefficient ratio |j_n/h_n| falls below this are negligible.
pub const SERIES_TOLERANCE: f64 = 1e-14;

/// Spherical Bessel functions j_0..=j_n at `x > 0` by Miller's downward
/// recurrence, normalized against j_0 = sin x / x.
pub fn spherical_jn(n: usize, x: f64) -> Vec<f64> {
    let start = n + 20 + (x.abs() as usize) + ((40.0 * (n as f64 + x)).sqrt() as usize);
    let mut vals = vec![0.0; start + 2];
    vals[start + 1] = 0.0;
    vals[start] = 1e-300;
    for k in (1..=start).rev() {
        vals[k - 1] = (2 * k + 1) as f64 / x * vals[k] - vals[k + 1];
        if vals[k - 1].abs() > 1e250 {
            // rescale to stay in range
            for v in vals[k - 1..].iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    let j0 = if x.abs() < 1e-8 { 1.0 - x * x / 6.0 } else { x.sin() / x };
    let j1 = if x.abs() < 1e-4 {
        x / 3.0 - x * x * x / 30.0
    } else {
        x.sin() / (x * x) - x.cos() / x
    };
    // normalize against whichever of j0, j1 is better conditioned
    let scale = if j0.abs() >= j1.abs() { j0 / vals[0] } else { j1 / vals[1] };
    vals.truncate(n + 1);
    vals.iter().map(|v| v * scale).collect()
}

/// Spherical Bessel functions y_0..=y_n by upward recurrence (stable for y).
pub fn spherical_yn(n: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let y0 = -x.cos() / x;
    out.push(y0);
    if n >= 1 {
        out.push(-x.cos() / (x * x) - x.sin() / x);
    }
    for k in 1..n {
        let next = (2 * k + 1) as f64 / x * out[k] - out[k - 1];
        out.push(next);
    }
    out
}

/// Coefficients j_n(x)/h_n^{(1)}(x) for n = 0..=n_max. Once |y_n| overflows
/// the ratio is zero to double precision.
pub fn soft_sphere_coefficients(n_max: usize, x: f64) -> Vec<Complex64> {
    let j = spherical_jn(n_max, x);
    let y = spherical_yn(n_max, x);
    j.iter()
        .zip(&y)
        .map(|(&jn, &yn)| {
            if !yn.is_finite() {
                return Complex64::new(0.0, 0.0);
            }
            jn / Complex64::new(jn, yn)
        })
        .collect()
}

/// Smallest n_terms whose last coefficient and its successor are below
/// [`SERIES_TOLERANCE`].
pub fn series_terms_needed(x: f64) -> usize {
    let n_max = (x.abs() as usize) * 2 + 60;
    let c = soft_sphere_coefficients(n_max, x);
    (1..n_max)
        .find(|&n| c[n].norm() < SERIES_TOLERANCE && c[n + 1].norm() < SERIES_TOLERANCE)
        .unwrap_or(n_max)
}

/// Legendre polynomials P_0..=P_n at `t`.
pub fn legendre_p(n: usize, t: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(n + 1);
    p.push(1.0);
    if n >= 1 {
        p.push(t);
    }
    for k in 1..n {
        let next = ((2 * k + 1) as f64 * t * p[k] - k as f64 * p[k - 1]) / (k + 1) as f64;
        p.push(next);
    }
    p
}

/// f(γ) = (i/κ) Σ_{n=0}^{n_terms} (2n+1) [j_n(κa)/h_n(κa)] P_n(cos γ), the
/// coefficient of e^{iκr}/r in the scattered field. This is the same
/// convention as the BEM far field, so the calibration constant is 1.
pub fn analytic_soft_sphere(
    radius: f64,
    wave: &PlaneWave,
    grid: &DirectionGrid,
    n_terms: usize,
) -> Result<FarFieldGrid, SolverError> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(SolverError::Parameter(format!("sphere radius must be positive, got {radius}")));
    }
    let kappa = wave.wavenumber();
    let x = kappa * radius;
    let coeffs = soft_sphere_coefficients(n_terms + 1, x);
    let tail = coeffs[n_terms].norm();
    if tail >= SERIES_TOLERANCE {
        return Err(SolverError::SeriesNotConverged {
            n_terms,
            ratio: tail,
        });
    }
    let d = wave.direction();
    let scale = Complex64::new(0.0, 1.0 / kappa);
    let values = grid
        .directions()
        .map(|k| {
            let t = dot(k, d).clamp(-1.0, 1.0);
            let p = legendre_p(n_terms, t);
            let s: Complex64 = (0..=n_terms)
                .map(|n| coeffs[n] * ((2 * n + 1) as f64 * p[n]))
                .sum();
            scale * s
        })
        .collect();
    FarFieldGrid::complex(grid.clone(), wave.frequency(), values)
}
