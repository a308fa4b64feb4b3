use std::f64::consts::{PI, SQRT_2};

use crate::error::GeometryError;

/// Associated Legendre function P_n^m(x), m ≥ 0, without the Condon–Shortley
/// phase.
fn assoc_legendre(n: usize, m: usize, x: f64) -> f64 {
    let s = (1.0 - x * x).max(0.0).sqrt();
    let mut pmm = 1.0;
    for k in 0..m {
        pmm *= (2 * k + 1) as f64 * s;
    }
    if n == m {
        return pmm;
    }
    let mut prev = pmm;
    let mut cur = x * (2 * m + 1) as f64 * pmm;
    for l in (m + 2)..=n {
        let next = ((2 * l - 1) as f64 * x * cur - (l + m - 1) as f64 * prev) / (l - m) as f64;
        prev = cur;
        cur = next;
    }
    cur
}

/// sqrt((2n+1)/4π · (n−m)!/(n+m)!)
fn normalization(n: usize, m: usize) -> f64 {
    let mut ratio = 1.0;
    for k in (n - m + 1)..=(n + m) {
        ratio /= k as f64;
    }
    ((2 * n + 1) as f64 / (4.0 * PI) * ratio).sqrt()
}

/// Orthonormal real spherical harmonic Y_nm at polar angle `theta` and
/// azimuth `phi`. Negative `m` selects the sine family.
pub fn real_spherical_harmonic(n: i64, m: i64, theta: f64, phi: f64) -> Result<f64, GeometryError> {
    if n < 0 || m.abs() > n {
        return Err(GeometryError::Parameter(format!(
            "spherical harmonic needs 0 <= n and -n <= m <= n, got (n={n}, m={m})"
        )));
    }
    let (n, am) = (n as usize, m.unsigned_abs() as usize);
    let base = normalization(n, am) * assoc_legendre(n, am, theta.cos());
    Ok(match m {
        0 => base,
        m if m > 0 => SQRT_2 * base * (am as f64 * phi).cos(),
        _ => SQRT_2 * base * (am as f64 * phi).sin(),
    })
}
