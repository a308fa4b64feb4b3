use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::{Mat, MatRef};
use num_complex::Complex64;

use super::assembly::{assemble_single_layer_with, DenseMatrix};
use super::quadrature::TriangleRule;
use super::wave::{incident_field, PlaneWave};
use crate::error::SolverError;
use crate::geometry::TriangleMesh;

/// Systems whose 1-norm condition estimate exceeds this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Single-layer density per face for one incident wave.
#[derive(Debug, Clone)]
pub struct BemSolution {
    pub mesh: TriangleMesh,
    pub density: Vec<Complex64>,
    pub wavenumber: f64,
    /// Incident frequency, Hz.
    pub frequency: f64,
    /// ‖Aσ + Φ^inc‖ / ‖Φ^inc‖ of the solved system.
    pub residual: f64,
    pub condition_estimate: f64,
}

/// Options for the collocation solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BemOptions {
    /// Order of the symmetric triangle rule for regular integrals.
    pub quad_order: usize,
}

impl Default for BemOptions {
    fn default() -> Self {
        BemOptions { quad_order: 6 }
    }
}

/// Dense LU factorization with partial pivoting.
pub(crate) struct DenseLu {
    lu: PartialPivLu<Complex64>,
    n: usize,
}

impl DenseLu {
    pub fn new(a: &DenseMatrix) -> Self {
        let view = MatRef::from_column_major_slice(&a.data, a.nrows, a.ncols);
        DenseLu {
            lu: view.partial_piv_lu(),
            n: a.nrows,
        }
    }

    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let rhs = Mat::from_fn(self.n, 1, |i, _| b[i]);
        let x = self.lu.solve(&rhs);
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }

    pub fn solve_adjoint(&self, b: &[Complex64]) -> Vec<Complex64> {
        let rhs = Mat::from_fn(self.n, 1, |i, _| b[i]);
        let x = self.lu.solve_adjoint(&rhs);
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }

    /// Hager–Higham estimate of ‖A⁻¹‖₁.
    pub fn inverse_norm_one_estimate(&self) -> f64 {
        let n = self.n;
        let l1 = |v: &[Complex64]| v.iter().map(|z| z.norm()).sum::<f64>();
        let mut x = vec![Complex64::new(1.0 / n as f64, 0.0); n];
        let mut est = 0.0;
        let mut last_j = usize::MAX;
        for iter in 0..5 {
            let y = self.solve(&x);
            let new_est = l1(&y);
            if !new_est.is_finite() {
                return f64::INFINITY;
            }
            if iter > 0 && new_est <= est {
                break;
            }
            est = new_est;
            let xi: Vec<Complex64> = y
                .iter()
                .map(|&v| {
                    let a = v.norm();
                    if a > 0.0 {
                        v / a
                    } else {
                        Complex64::new(1.0, 0.0)
                    }
                })
                .collect();
            let z = self.solve_adjoint(&xi);
            let (j, zmax) = z
                .iter()
                .map(|v| v.norm())
                .enumerate()
                .fold((0, f64::MIN), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
            let ztx: f64 = z.iter().zip(&x).map(|(a, b)| (a.conj() * b).re).sum();
            if iter > 0 && (zmax <= ztx || j == last_j) {
                break;
            }
            last_j = j;
            x = vec![Complex64::new(0.0, 0.0); n];
            x[j] = Complex64::new(1.0, 0.0);
        }
        // alternating test vector guards against the estimator's blind spots
        let alt: Vec<Complex64> = (0..n)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                let denom = (n.max(2) - 1) as f64;
                Complex64::new(s * (1.0 + i as f64 / denom), 0.0)
            })
            .collect();
        let alt_est = 2.0 * l1(&self.solve(&alt)) / (3.0 * n as f64);
        est.max(alt_est)
    }
}

fn relative_residual(a: &DenseMatrix, x: &[Complex64], b: &[Complex64]) -> f64 {
    let ax = a.mul_vec(x);
    let num: f64 = ax.iter().zip(b).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|q| q.norm_sqr()).sum::<f64>().sqrt();
    num / den
}

/// Solves `a·x = b`, rejecting ill-conditioned systems. Returns the solution,
/// relative residual and condition estimate.
pub(crate) fn solve_checked(
    a: &DenseMatrix,
    b: &[Complex64],
) -> Result<(Vec<Complex64>, f64, f64), SolverError> {
    let lu = DenseLu::new(a);
    let condition = a.norm_one() * lu.inverse_norm_one_estimate();
    if !(condition <= MAX_CONDITION) {
        return Err(SolverError::Conditioning { condition });
    }
    let x = lu.solve(b);
    let residual = relative_residual(a, &x, b);
    Ok((x, residual, condition))
}

/// Sound-soft scattering: find σ with A·σ = −Φ^inc at the face centroids, so
/// the total field vanishes at every collocation point.
pub fn solve_soft(mesh: &TriangleMesh, wave: &PlaneWave) -> Result<BemSolution, SolverError> {
    solve_soft_with(mesh, wave, &BemOptions::default())
}

pub fn solve_soft_with(
    mesh: &TriangleMesh,
    wave: &PlaneWave,
    options: &BemOptions,
) -> Result<BemSolution, SolverError> {
    let kappa = wave.wavenumber();
    let h = mesh.max_edge_length();
    if kappa * h > 1.0 {
        log::debug!("κ·h = {:.2} exceeds 1; the mesh under-resolves the wavelength", kappa * h);
    }
    let rule = TriangleRule::new(options.quad_order)?;
    let a = assemble_single_layer_with(mesh, kappa, &rule)?;
    let rhs: Vec<Complex64> = (0..mesh.num_faces())
        .map(|f| -incident_field(wave, mesh.face_centroid(f)))
        .collect();
    let (density, residual, condition_estimate) = solve_checked(&a, &rhs)?;
    Ok(BemSolution {
        mesh: mesh.clone(),
        density,
        wavenumber: kappa,
        frequency: wave.frequency(),
        residual,
        condition_estimate,
    })
}
