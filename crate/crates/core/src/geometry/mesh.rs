use serde::{Deserialize, Serialize};

use super::{add, cross, dot, mat_vec, norm, scale, sub, triangle_area, Mat3, Vec3};
use crate::error::GeometryError;

/// Closed triangulated surface. Faces are counter-clockwise seen from outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Self {
        TriangleMesh { vertices, faces }
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    #[inline]
    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.triangle(f);
        triangle_area(a, b, c)
    }

    pub fn face_centroid(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        scale(add(add(a, b), c), 1.0 / 3.0)
    }

    /// Unit normal from the vertex winding.
    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        let n = cross(sub(b, a), sub(c, a));
        scale(n, 1.0 / norm(n))
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.num_faces()).map(|f| self.face_area(f)).sum()
    }

    /// Enclosed volume by the divergence theorem; positive for outward winding.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|&[a, b, c]| {
                dot(
                    self.vertices[a],
                    cross(self.vertices[b], self.vertices[c]),
                )
            })
            .sum::<f64>()
            / 6.0
    }

    pub fn vertex_centroid(&self) -> Vec3 {
        let n = self.vertices.len() as f64;
        let s = self
            .vertices
            .iter()
            .fold([0.0; 3], |acc, &v| add(acc, v));
        scale(s, 1.0 / n)
    }

    pub fn max_vertex_norm(&self) -> f64 {
        self.vertices.iter().map(|&v| norm(v)).fold(0.0, f64::max)
    }

    pub fn max_edge_length(&self) -> f64 {
        self.faces
            .iter()
            .flat_map(|&[a, b, c]| [(a, b), (b, c), (c, a)])
            .map(|(i, j)| norm(sub(self.vertices[i], self.vertices[j])))
            .fold(0.0, f64::max)
    }

    /// Applies `m` to every vertex. Orientation-reversing maps also flip the
    /// winding so faces stay outward.
    pub fn transformed(&self, m: &Mat3) -> TriangleMesh {
        let det = dot(m[0], cross(m[1], m[2]));
        let vertices = self.vertices.iter().map(|&v| mat_vec(m, v)).collect();
        let faces = if det < 0.0 {
            self.faces.iter().map(|&[a, b, c]| [a, c, b]).collect()
        } else {
            self.faces.clone()
        };
        TriangleMesh { vertices, faces }
    }

    pub fn translated(&self, t: Vec3) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|&v| add(v, t)).collect(),
            faces: self.faces.clone(),
        }
    }

    pub fn scaled(&self, s: f64) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|&v| scale(v, s)).collect(),
            faces: self.faces.clone(),
        }
    }
}

/// Moves the vertex centroid to the origin and scales uniformly so that the
/// farthest vertex sits at `radius`.
pub fn normalize_to_bounding_sphere(
    mesh: &TriangleMesh,
    radius: f64,
) -> Result<TriangleMesh, GeometryError> {
    if mesh.vertices.is_empty() {
        return Err(GeometryError::Parameter("mesh has no vertices".into()));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(GeometryError::Parameter(format!(
            "bounding radius must be positive, got {radius}"
        )));
    }
    let c = mesh.vertex_centroid();
    let centered = mesh.translated(scale(c, -1.0));
    let extent = centered.max_vertex_norm();
    let reference = mesh
        .vertices
        .iter()
        .map(|&v| norm(v))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    if !(extent > 1e-12 * reference) || !extent.is_finite() {
        return Err(GeometryError::Degenerate(
            "all vertices coincide".to_string(),
        ));
    }
    Ok(centered.scaled(radius / extent))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{icosphere, random_particle, rotation_about_axis, ParticleSpec};

    #[test]
    fn unit_icosphere_to_radius_two() {
        let m = normalize_to_bounding_sphere(&icosphere(2).unwrap(), 2.0).unwrap();
        for v in &m.vertices {
            assert!((norm(*v) - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_is_idempotent() {
        let p = random_particle(&ParticleSpec {
            seed: 11,
            ..ParticleSpec::default()
        })
        .unwrap();
        let once = normalize_to_bounding_sphere(&p, 2.0).unwrap();
        let twice = normalize_to_bounding_sphere(&once, 2.0).unwrap();
        for (a, b) in once.vertices.iter().zip(&twice.vertices) {
            assert!(norm(sub(*a, *b)) < 1e-12);
        }
    }

    #[test]
    fn random_particle_normalized_recomputed() {
        let p = random_particle(&ParticleSpec {
            seed: 5,
            ..ParticleSpec::default()
        })
        .unwrap();
        let m = normalize_to_bounding_sphere(&p, 2.0).unwrap();
        assert!((m.max_vertex_norm() - 2.0).abs() < 1e-12);
        assert!(norm(m.vertex_centroid()) < 1e-9);
    }

    #[test]
    fn normalization_commutes_with_rotation() {
        let p = random_particle(&ParticleSpec {
            seed: 3,
            ..ParticleSpec::default()
        })
        .unwrap();
        let r = rotation_about_axis([0.3, -1.0, 0.7], 1.1);
        let a = normalize_to_bounding_sphere(&p.transformed(&r), 2.0).unwrap();
        let b = normalize_to_bounding_sphere(&p, 2.0).unwrap().transformed(&r);
        for (x, y) in a.vertices.iter().zip(&b.vertices) {
            assert!(norm(sub(*x, *y)) < 1e-9);
        }
    }

    #[test]
    fn coincident_vertices_rejected() {
        let m = TriangleMesh::new(vec![[1.0, 1.0, 1.0]; 3], vec![[0, 1, 2]]);
        assert!(matches!(
            normalize_to_bounding_sphere(&m, 1.0),
            Err(GeometryError::Degenerate(_))
        ));
        let empty = TriangleMesh::new(vec![], vec![]);
        assert!(normalize_to_bounding_sphere(&empty, 1.0).is_err());
    }

    #[test]
    fn icosphere_volume_positive_and_near_sphere() {
        let m = icosphere(4).unwrap();
        let v = m.signed_volume();
        assert!(v > 0.0);
        assert!((v - 4.0 / 3.0 * std::f64::consts::PI).abs() < 0.02);
    }
}
