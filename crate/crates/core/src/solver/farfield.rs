use std::f64::consts::PI;
use std::io::{self, Read, Write};

use num_complex::Complex64;

use super::assembly::face_quadratures;
use super::grid::DirectionGrid;
use super::quadrature::TriangleRule;
use super::solve::BemSolution;
use crate::error::SolverError;
use crate::geometry::dot;
use crate::par;

/// Far-field samples, latitude-major.
#[derive(Debug, Clone, PartialEq)]
pub enum FarFieldValues {
    Complex(Vec<Complex64>),
    Magnitude(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FarFieldGrid {
    pub grid: DirectionGrid,
    pub frequency: f64,
    pub values: FarFieldValues,
}

impl FarFieldGrid {
    pub fn complex(
        grid: DirectionGrid,
        frequency: f64,
        values: Vec<Complex64>,
    ) -> Result<Self, SolverError> {
        check_len(&grid, values.len())?;
        Ok(FarFieldGrid {
            grid,
            frequency,
            values: FarFieldValues::Complex(values),
        })
    }

    /// Magnitude grid; values must be finite and non-negative.
    pub fn magnitude(grid: DirectionGrid, frequency: f64, values: Vec<f64>) -> Result<Self, SolverError> {
        check_len(&grid, values.len())?;
        if let Some(i) = values.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(SolverError::Parameter(format!(
                "magnitude value {} at index {i} is not a finite non-negative number",
                values[i]
            )));
        }
        Ok(FarFieldGrid {
            grid,
            frequency,
            values: FarFieldValues::Magnitude(values),
        })
    }

    pub fn len(&self) -> usize {
        match &self.values {
            FarFieldValues::Complex(v) => v.len(),
            FarFieldValues::Magnitude(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_phaseless(&self) -> bool {
        matches!(self.values, FarFieldValues::Magnitude(_))
    }

    /// Moduli of the values, whichever variant is stored.
    pub fn magnitudes(&self) -> Vec<f64> {
        match &self.values {
            FarFieldValues::Complex(v) => v.iter().map(|z| z.norm()).collect(),
            FarFieldValues::Magnitude(v) => v.clone(),
        }
    }

    pub fn complex_values(&self) -> Option<&[Complex64]> {
        match &self.values {
            FarFieldValues::Complex(v) => Some(v),
            FarFieldValues::Magnitude(_) => None,
        }
    }

    /// Little-endian f32 magnitudes, row-major.
    pub fn write_magnitudes_f32<W: Write>(&self, mut w: W) -> io::Result<()> {
        for v in self.magnitudes() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    /// Little-endian f32 `(re, im)` pairs, row-major. Magnitude grids write a
    /// zero imaginary part.
    pub fn write_complex_f32<W: Write>(&self, mut w: W) -> io::Result<()> {
        let pairs: Vec<(f64, f64)> = match &self.values {
            FarFieldValues::Complex(v) => v.iter().map(|z| (z.re, z.im)).collect(),
            FarFieldValues::Magnitude(v) => v.iter().map(|&m| (m, 0.0)).collect(),
        };
        for (re, im) in pairs {
            w.write_all(&(re as f32).to_le_bytes())?;
            w.write_all(&(im as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_magnitudes_f32<R: Read>(
        mut r: R,
        grid: DirectionGrid,
        frequency: f64,
    ) -> io::Result<Self> {
        let mut buf = vec![0u8; grid.len() * 4];
        r.read_exact(&mut buf)?;
        let values = read_f32s(&buf);
        Self::magnitude(grid, frequency, values)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
    }
}

pub(crate) fn read_f32s(buf: &[u8]) -> Vec<f64> {
    buf.chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect()
}

fn check_len(grid: &DirectionGrid, n: usize) -> Result<(), SolverError> {
    if n != grid.len() {
        return Err(SolverError::Parameter(format!(
            "far-field has {n} values but the grid has {} directions",
            grid.len()
        )));
    }
    Ok(())
}

/// Far-field pattern of the single-layer potential,
/// F(k̂) = (1/4π) Σ_j σ_j ∫_{T_j} e^{−iκ k̂·y} dA(y).
///
/// The outgoing-wave sign makes F the coefficient of e^{iκr}/r in the
/// scattered field, so it matches the partial-wave series with unit
/// calibration (a soft sphere at κ → 0 gives F = −a).
pub fn far_field(sol: &BemSolution, grid: &DirectionGrid) -> Result<FarFieldGrid, SolverError> {
    far_field_with(sol, grid, &TriangleRule::new(6)?)
}

pub fn far_field_with(
    sol: &BemSolution,
    grid: &DirectionGrid,
    rule: &TriangleRule,
) -> Result<FarFieldGrid, SolverError> {
    if sol.density.len() != sol.mesh.num_faces() {
        return Err(SolverError::Parameter(format!(
            "density has {} entries for {} faces",
            sol.density.len(),
            sol.mesh.num_faces()
        )));
    }
    let kappa = sol.wavenumber;
    let quads = face_quadratures(&sol.mesh, rule);
    // flatten nodes with density-scaled weights
    let mut nodes = Vec::with_capacity(quads.len() * rule.len());
    for (q, s) in quads.iter().zip(&sol.density) {
        for (y, w) in q.points.iter().zip(&q.weights) {
            nodes.push((*y, s * *w));
        }
    }
    let dirs: Vec<_> = grid.directions().collect();
    let values = par::map_range(dirs.len(), |d| {
        let k = dirs[d];
        let mut acc = Complex64::new(0.0, 0.0);
        for (y, sw) in &nodes {
            acc += sw * Complex64::from_polar(1.0, -kappa * dot(k, *y));
        }
        acc / (4.0 * PI)
    });
    FarFieldGrid::complex(grid.clone(), sol.frequency, values)
}

/// Element-wise modulus. Idempotent on magnitude grids.
pub fn phaseless(ff: &FarFieldGrid) -> FarFieldGrid {
    FarFieldGrid {
        grid: ff.grid.clone(),
        frequency: ff.frequency,
        values: FarFieldValues::Magnitude(ff.magnitudes()),
    }
}

/// ‖a − b‖₂ / ‖b‖₂ over complex samples.
pub fn complex_relative_l2(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{icosphere, mat_vec, random_particle, rotation_about_axis, ParticleSpec};
    use crate::solver::grid::make_direction_grid;
    use crate::solver::solve::solve_soft;
    use crate::solver::wave::PlaneWave;

    fn solution(density: Vec<Complex64>, kappa: f64, s: usize) -> BemSolution {
        BemSolution {
            mesh: icosphere(s).unwrap(),
            density,
            wavenumber: kappa,
            frequency: 1.0,
            residual: 0.0,
            condition_estimate: 1.0,
        }
    }

    #[test]
    fn zero_density_zero_field() {
        let n = icosphere(1).unwrap().num_faces();
        let sol = solution(vec![Complex64::new(0.0, 0.0); n], 2.0, 1);
        let g = make_direction_grid(5, 7).unwrap();
        let ff = far_field(&sol, &g).unwrap();
        assert!(ff.complex_values().unwrap().iter().all(|z| *z == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn unit_density_low_frequency_is_area_over_four_pi() {
        let mesh = icosphere(4).unwrap();
        let n = mesh.num_faces();
        let area = mesh.surface_area();
        let sol = solution(vec![Complex64::new(1.0, 0.0); n], 1e-9, 4);
        let g = make_direction_grid(6, 9).unwrap();
        let ff = far_field(&sol, &g).unwrap();
        for z in ff.complex_values().unwrap() {
            assert!((z.re - area / (4.0 * PI)).abs() < 1e-12);
            // polyhedral area approaches 4π
            assert!((z.re - 1.0).abs() < 5e-3);
        }
    }

    #[test]
    fn modulus_examples() {
        let g = make_direction_grid(2, 2).unwrap();
        let vals = vec![Complex64::new(3.0, 4.0); 4];
        let ff = FarFieldGrid::complex(g.clone(), 100.0, vals.clone()).unwrap();
        let m = phaseless(&ff);
        assert_eq!(m.magnitudes(), vec![5.0; 4]);
        assert_eq!(phaseless(&m), m);
        let rot = Complex64::from_polar(1.0, 0.7);
        let ff2 = FarFieldGrid::complex(g, 100.0, vals.iter().map(|z| z * rot).collect()).unwrap();
        let m2 = phaseless(&ff2).magnitudes();
        assert!(m2.iter().all(|v| (v - 5.0).abs() < 1e-14));
    }

    #[test]
    fn rejects_bad_shapes() {
        let g = make_direction_grid(2, 3).unwrap();
        assert!(FarFieldGrid::magnitude(g.clone(), 1.0, vec![1.0; 5]).is_err());
        assert!(FarFieldGrid::magnitude(g, 1.0, vec![-1.0; 6]).is_err());
    }

    #[test]
    fn f32_roundtrip() {
        let g = make_direction_grid(3, 4).unwrap();
        let v: Vec<f64> = (0..12).map(|i| i as f64 * 0.25).collect();
        let ff = FarFieldGrid::magnitude(g.clone(), 600.0, v.clone()).unwrap();
        let mut buf = Vec::new();
        ff.write_magnitudes_f32(&mut buf).unwrap();
        assert_eq!(buf.len(), 48);
        let back = FarFieldGrid::read_magnitudes_f32(&buf[..], g, 600.0).unwrap();
        assert_eq!(back.magnitudes(), v);
        let mut cbuf = Vec::new();
        ff.write_complex_f32(&mut cbuf).unwrap();
        assert_eq!(cbuf.len(), 96);
    }

    #[test]
    fn rotational_equivariance() {
        let mesh = random_particle(&ParticleSpec {
            subdivisions: 2,
            base_radius: 0.5,
            seed: 4,
            ..ParticleSpec::default()
        })
        .unwrap();
        let d = [0.3, 0.1, 1.0];
        let wave = PlaneWave::new(d, 600.0, 343.0).unwrap();
        let r = rotation_about_axis([0.2, 1.0, -0.4], 1.1);
        let rwave = PlaneWave::new(mat_vec(&r, wave.direction()), 600.0, 343.0).unwrap();
        let base = solve_soft(&mesh, &wave).unwrap();
        let rotated = solve_soft(&mesh.transformed(&r), &rwave).unwrap();
        let g = make_direction_grid(9, 17).unwrap();
        let f0 = far_field(&base, &g).unwrap();
        let rule = TriangleRule::new(6).unwrap();
        // evaluate the rotated solution at R·k̂ directly
        let quads = face_quadratures(&rotated.mesh, &rule);
        let kappa = rotated.wavenumber;
        let f1: Vec<Complex64> = g
            .directions()
            .map(|k| {
                let rk = mat_vec(&r, k);
                let mut acc = Complex64::new(0.0, 0.0);
                for (q, s) in quads.iter().zip(&rotated.density) {
                    for (y, w) in q.points.iter().zip(&q.weights) {
                        acc += s * *w * Complex64::from_polar(1.0, -kappa * dot(rk, *y));
                    }
                }
                acc / (4.0 * PI)
            })
            .collect();
        let err = complex_relative_l2(&f1, f0.complex_values().unwrap());
        assert!(err < 1e-4, "{err}");
    }
}
