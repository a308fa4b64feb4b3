//! Symmetry-reduced solves for meshes invariant under a finite point group.
//!
//! If every group element maps the mesh onto itself and fixes the incident
//! direction, the density is constant on face orbits. Summing the columns of
//! each orbit and keeping one row per orbit gives an exact reduced system.

use std::collections::HashMap;
use std::f64::consts::PI;

use num_complex::Complex64;

use super::assembly::{centroids, entry, face_quadratures, DenseMatrix};
use super::quadrature::TriangleRule;
use super::solve::{solve_checked, BemOptions, BemSolution};
use super::wave::{incident_field, PlaneWave};
use crate::error::SolverError;
use crate::geometry::{mat_vec, norm, reflection, rotation_about_axis, sub, Mat3, TriangleMesh, Vec3};
use crate::par;

/// The order-2n group C_nv about +z, with mirror plane y = 0.
pub fn axial_symmetry_group(n: usize) -> Vec<Mat3> {
    let mirror = reflection([0.0, 1.0, 0.0]);
    let mut group = Vec::with_capacity(2 * n);
    for k in 0..n {
        let r = rotation_about_axis([0.0, 0.0, 1.0], 2.0 * PI * k as f64 / n as f64);
        group.push(r);
        group.push(mat_mul(&r, &mirror));
    }
    group
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

/// Face permutation induced by each group element, matched on centroids.
pub fn face_permutations(mesh: &TriangleMesh, group: &[Mat3]) -> Result<Vec<Vec<usize>>, SolverError> {
    let cents = centroids(mesh);
    let tol = 1e-9 * mesh.max_vertex_norm().max(1.0);
    let cell = 1e3 * tol;
    let key = |p: Vec3| -> [i64; 3] { [0, 1, 2].map(|k| (p[k] / cell).floor() as i64) };
    let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (f, &c) in cents.iter().enumerate() {
        buckets.entry(key(c)).or_default().push(f);
    }
    let find = |p: Vec3| -> Option<usize> {
        let k = key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(fs) = buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        if let Some(&f) = fs.iter().find(|&&f| norm(sub(cents[f], p)) < tol) {
                            return Some(f);
                        }
                    }
                }
            }
        }
        None
    };
    group
        .iter()
        .enumerate()
        .map(|(index, g)| {
            let perm: Vec<usize> = cents
                .iter()
                .map(|&c| find(mat_vec(g, c)).ok_or(SolverError::Symmetry { index }))
                .collect::<Result<_, _>>()?;
            // a bijection on centroids plus matching areas
            let mut seen = vec![false; perm.len()];
            for (f, &p) in perm.iter().enumerate() {
                if seen[p] || (mesh.face_area(f) - mesh.face_area(p)).abs() > tol {
                    return Err(SolverError::Symmetry { index });
                }
                seen[p] = true;
            }
            Ok(perm)
        })
        .collect()
}

/// Face orbits under the permutations. Returns the orbit index per face and
/// the smallest face index of every orbit.
pub fn face_orbits(n_faces: usize, perms: &[Vec<usize>]) -> (Vec<usize>, Vec<usize>) {
    let mut orbit = vec![usize::MAX; n_faces];
    let mut reps = Vec::new();
    for f in 0..n_faces {
        if orbit[f] != usize::MAX {
            continue;
        }
        let id = reps.len();
        reps.push(f);
        for p in perms {
            orbit[p[f]] = id;
        }
        orbit[f] = id;
    }
    (orbit, reps)
}

/// Sound-soft solve exploiting the C_5v symmetry of a pole-aligned
/// icosphere. The incident direction must lie on the symmetry axis. The
/// result equals the dense solve up to rounding, at a tenth of the size.
pub fn solve_soft_symmetric(
    mesh: &TriangleMesh,
    wave: &PlaneWave,
    group: &[Mat3],
    options: &BemOptions,
) -> Result<BemSolution, SolverError> {
    for (index, g) in group.iter().enumerate() {
        let d = wave.direction();
        if norm(sub(mat_vec(g, d), d)) > 1e-12 {
            return Err(SolverError::Parameter(format!(
                "group element {index} does not fix the incident direction"
            )));
        }
    }
    let kappa = wave.wavenumber();
    let n = mesh.num_faces();
    let perms = face_permutations(mesh, group)?;
    let (orbit, reps) = face_orbits(n, &perms);
    let m = reps.len();
    let rule = TriangleRule::new(options.quad_order)?;
    let cents = centroids(mesh);
    let quads = face_quadratures(mesh, &rule);
    let rows = par::map_range(m, |o| {
        let i = reps[o];
        let mut row = vec![Complex64::new(0.0, 0.0); m];
        for j in 0..n {
            row[orbit[j]] += entry(kappa, mesh, &cents, &quads, i, j);
        }
        row
    });
    let mut b = DenseMatrix::zeros(m, m);
    for (o, row) in rows.iter().enumerate() {
        for (p, v) in row.iter().enumerate() {
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(SolverError::Assembly { row: reps[o], col: reps[p] });
            }
            b.data[p * m + o] = *v;
        }
    }
    let rhs: Vec<Complex64> = reps.iter().map(|&f| -incident_field(wave, cents[f])).collect();
    let (x, residual, condition_estimate) = solve_checked(&b, &rhs)?;
    Ok(BemSolution {
        mesh: mesh.clone(),
        density: orbit.iter().map(|&o| x[o]).collect(),
        wavenumber: kappa,
        frequency: wave.frequency(),
        residual,
        condition_estimate,
    })
}
