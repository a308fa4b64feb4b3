//! Scatterer shapes: icosphere meshes, random star-shaped particles, point
//! sampling, normalization and OFF interchange.

mod harmonics;
mod icosphere;
mod mesh;
mod off;
mod particle;
mod sampling;
mod validate;

pub use harmonics::real_spherical_harmonic;
pub use icosphere::{icosphere, MAX_SUBDIVISIONS};
pub use mesh::{normalize_to_bounding_sphere, TriangleMesh};
pub use off::{read_mesh_off, read_point_cloud_off, write_mesh_off, write_point_cloud_off};
pub use particle::{random_particle, ParticleSpec, RADIUS_CLAMP_FRACTION};
pub use sampling::{
    farthest_point_subset, furthest_point_sampling, surface_candidates, PointCloud,
    CANDIDATES_PER_POINT,
};
pub use validate::{validate_mesh, ValidityReport, Violation};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist2(a: Vec3, b: Vec3) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    scale(a, 1.0 / n)
}

pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

/// Rotation by `angle` radians about `axis` (Rodrigues).
pub fn rotation_about_axis(axis: Vec3, angle: f64) -> Mat3 {
    let [x, y, z] = normalize(axis);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

/// Reflection through the plane through the origin with normal `n`.
pub fn reflection(n: Vec3) -> Mat3 {
    let n = normalize(n);
    let mut m = [[0.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if i == j { 1.0 } else { 0.0 } - 2.0 * n[i] * n[j];
        }
    }
    m
}

pub fn triangle_area(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    0.5 * norm(cross(sub(b, a), sub(c, a)))
}
