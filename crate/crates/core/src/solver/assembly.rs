//! Single-layer collocation matrix for piecewise-constant densities.
//!
//! Entry (i, j) is ∫_{T_j} G(x_i, y) dA(y) with x_i the centroid of face i and
//! G(x, y) = e^{iκ|x−y|} / (4π|x−y|).

use std::f64::consts::PI;

use num_complex::Complex64;

use super::quadrature::TriangleRule;
use crate::error::SolverError;
use crate::geometry::{dot, norm, sub, TriangleMesh, Vec3};
use crate::par;

/// Dense complex matrix in column-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub data: Vec<Complex64>,
}

impl DenseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        DenseMatrix {
            nrows,
            ncols,
            data: vec![Complex64::new(0.0, 0.0); nrows * ncols],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[j * self.nrows + i]
    }

    pub fn column(&self, j: usize) -> &[Complex64] {
        &self.data[j * self.nrows..(j + 1) * self.nrows]
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = vec![Complex64::new(0.0, 0.0); self.nrows];
        for (j, &xj) in x.iter().enumerate() {
            for (yi, a) in y.iter_mut().zip(self.column(j)) {
                *yi += a * xj;
            }
        }
        y
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> f64 {
        (0..self.ncols)
            .map(|j| self.column(j).iter().map(|a| a.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.data
            .iter()
            .position(|a| !(a.re.is_finite() && a.im.is_finite()))
            .map(|k| (k % self.nrows, k / self.nrows))
    }
}

/// Quadrature nodes of one face with area-scaled weights.
#[derive(Debug, Clone)]
pub(crate) struct FaceQuadrature {
    pub points: Vec<Vec3>,
    pub weights: Vec<f64>,
}

impl FaceQuadrature {
    pub fn new(mesh: &TriangleMesh, f: usize, rule: &TriangleRule) -> Self {
        let (points, weights) = rule.map(mesh.triangle(f), mesh.face_area(f)).unzip();
        FaceQuadrature { points, weights }
    }
}

#[inline]
fn green(kappa: f64, r: f64) -> Complex64 {
    let (s, c) = (kappa * r).sin_cos();
    let scale = 1.0 / (4.0 * PI * r);
    Complex64::new(c * scale, s * scale)
}

/// (e^{iκr} − 1) / (4πr), with its r → 0 limit iκ/4π.
#[inline]
fn green_smooth_part(kappa: f64, r: f64) -> Complex64 {
    if r * kappa < 1e-8 {
        return Complex64::new(-0.5 * kappa * kappa * r, kappa) / (4.0 * PI);
    }
    let (s, c) = (kappa * r).sin_cos();
    Complex64::new(c - 1.0, s) / (4.0 * PI * r)
}

/// ∫_T 1/|x − y| dA(y) for `x` inside triangle `T` (in its plane).
pub fn flat_triangle_inverse_distance(tri: [Vec3; 3], x: Vec3) -> f64 {
    let mut total = 0.0;
    for k in 0..3 {
        let a = tri[k];
        let b = tri[(k + 1) % 3];
        let edge = sub(b, a);
        let len = norm(edge);
        let e = [edge[0] / len, edge[1] / len, edge[2] / len];
        let t1 = dot(sub(a, x), e);
        let t2 = dot(sub(b, x), e);
        let foot = sub(sub(a, x), [t1 * e[0], t1 * e[1], t1 * e[2]]);
        let h = norm(foot);
        if h > 0.0 {
            total += h * ((t2 / h).asinh() - (t1 / h).asinh());
        }
    }
    total
}

/// Regular entry: collocation point `x` against face quadrature `q`.
#[inline]
pub(crate) fn regular_entry(kappa: f64, x: Vec3, q: &FaceQuadrature) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (y, &w) in q.points.iter().zip(&q.weights) {
        acc += green(kappa, norm(sub(x, *y))) * w;
    }
    acc
}

/// Self entry by singularity subtraction: the static 1/4πr part in closed
/// form plus quadrature of the bounded remainder.
pub(crate) fn self_entry(
    kappa: f64,
    mesh: &TriangleMesh,
    f: usize,
    q: &FaceQuadrature,
) -> Complex64 {
    let x = mesh.face_centroid(f);
    let static_part = flat_triangle_inverse_distance(mesh.triangle(f), x) / (4.0 * PI);
    let mut acc = Complex64::new(static_part, 0.0);
    for (y, &w) in q.points.iter().zip(&q.weights) {
        acc += green_smooth_part(kappa, norm(sub(x, *y))) * w;
    }
    acc
}

pub(crate) fn entry(
    kappa: f64,
    mesh: &TriangleMesh,
    centroids: &[Vec3],
    quads: &[FaceQuadrature],
    i: usize,
    j: usize,
) -> Complex64 {
    if i == j {
        self_entry(kappa, mesh, j, &quads[j])
    } else {
        regular_entry(kappa, centroids[i], &quads[j])
    }
}

pub(crate) fn face_quadratures(mesh: &TriangleMesh, rule: &TriangleRule) -> Vec<FaceQuadrature> {
    (0..mesh.num_faces())
        .map(|f| FaceQuadrature::new(mesh, f, rule))
        .collect()
}

pub(crate) fn centroids(mesh: &TriangleMesh) -> Vec<Vec3> {
    (0..mesh.num_faces()).map(|f| mesh.face_centroid(f)).collect()
}

/// Single-layer matrix with the default order-6 rule.
pub fn assemble_single_layer(mesh: &TriangleMesh, kappa: f64) -> Result<DenseMatrix, SolverError> {
    assemble_single_layer_with(mesh, kappa, &TriangleRule::new(6)?)
}

/// Single-layer matrix with an explicit regular-integral rule. Columns are
/// filled in parallel.
pub fn assemble_single_layer_with(
    mesh: &TriangleMesh,
    kappa: f64,
    rule: &TriangleRule,
) -> Result<DenseMatrix, SolverError> {
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(SolverError::Parameter(format!("wavenumber must be >= 0, got {kappa}")));
    }
    let n = mesh.num_faces();
    if n == 0 {
        return Err(SolverError::Parameter("mesh has no faces".into()));
    }
    let centroids = centroids(mesh);
    let quads = face_quadratures(mesh, rule);
    let mut a = DenseMatrix::zeros(n, n);
    par::for_each_chunk_mut(&mut a.data, n, |j, col| {
        for (i, out) in col.iter_mut().enumerate() {
            *out = entry(kappa, mesh, &centroids, &quads, i, j);
        }
    });
    if let Some((row, col)) = a.first_non_finite() {
        return Err(SolverError::Assembly { row, col });
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{icosphere, random_particle, ParticleSpec};
    use crate::solver::quadrature::gauss_legendre;

    /// Duffy-transformed oracle: split at x, integrate 1/r over each
    /// sub-triangle along the opposite edge.
    fn duffy_inverse_distance(tri: [Vec3; 3], x: Vec3) -> f64 {
        // composite rule: slivers put x close to an edge
        let (nodes, weights) = gauss_legendre(20);
        let panels = 200;
        let mut total = 0.0;
        for k in 0..3 {
            let a = tri[k];
            let b = tri[(k + 1) % 3];
            let pa = sub(a, x);
            let ab = sub(b, a);
            let c = crate::geometry::cross(pa, ab);
            let jac = norm(c);
            for p in 0..panels {
                for (t, w) in nodes.iter().zip(&weights) {
                    let v = (p as f64 + 0.5 * (t + 1.0)) / panels as f64;
                    let d = [pa[0] + v * ab[0], pa[1] + v * ab[1], pa[2] + v * ab[2]];
                    total += 0.5 * w * jac / norm(d) / panels as f64;
                }
            }
        }
        total
    }

    #[test]
    fn analytic_self_integral_matches_duffy() {
        let tris = [
            [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            [[0.3, -0.2, 1.0], [1.4, 0.5, 0.2], [-0.7, 0.9, 0.4]],
            [[0.0, 0.0, 0.0], [5.0, 0.0, 0.0], [2.5, 0.1, 0.0]],
        ];
        for tri in tris {
            let x = crate::geometry::scale(
                crate::geometry::add(crate::geometry::add(tri[0], tri[1]), tri[2]),
                1.0 / 3.0,
            );
            let exact = flat_triangle_inverse_distance(tri, x);
            let oracle = duffy_inverse_distance(tri, x);
            assert!((exact - oracle).abs() < 1e-10 * oracle, "{exact} vs {oracle}");
        }
    }

    #[test]
    fn static_diagonal_real_positive() {
        let mesh = icosphere(2).unwrap();
        let a = assemble_single_layer(&mesh, 0.5).unwrap();
        for i in 0..mesh.num_faces() {
            let d = a.get(i, i);
            assert!(d.re > 0.0);
            assert!(d.re > 10.0 * d.im.abs());
        }
    }

    #[test]
    fn laplace_limit_symmetric_on_icosahedron() {
        // every face pair of the icosahedron is swapped by some symmetry
        let mesh = icosphere(0).unwrap();
        let a = assemble_single_layer(&mesh, 0.0).unwrap();
        for i in 0..20 {
            for j in 0..20 {
                assert!((a.get(i, j) - a.get(j, i)).norm() < 1e-8);
                assert_eq!(a.get(i, j).im, 0.0);
            }
        }
    }

    #[test]
    fn columns_consistent_with_entry_function() {
        let mesh = random_particle(&ParticleSpec {
            subdivisions: 2,
            ..ParticleSpec::default()
        })
        .unwrap();
        let rule = TriangleRule::new(6).unwrap();
        let a = assemble_single_layer_with(&mesh, 3.0, &rule).unwrap();
        let c = centroids(&mesh);
        let q = face_quadratures(&mesh, &rule);
        for &(i, j) in &[(0, 5), (17, 3), (9, 9), (200, 100)] {
            assert_eq!(a.get(i, j), entry(3.0, &mesh, &c, &q, i, j));
        }
    }

    #[test]
    fn non_finite_entry_reported() {
        let mut mesh = icosphere(1).unwrap();
        let v = mesh.faces[7][1];
        mesh.vertices[v] = [f64::NAN; 3];
        let first = (0..mesh.num_faces()).find(|&f| mesh.faces[f].contains(&v)).unwrap();
        match assemble_single_layer(&mesh, 1.0) {
            Err(SolverError::Assembly { row, col }) => assert_eq!((row, col), (first, 0)),
            other => panic!("expected assembly error, got {other:?}"),
        }
    }
}
