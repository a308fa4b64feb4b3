use std::collections::HashMap;
use std::f64::consts::PI;

use super::{add, cross, dot, normalize, sub, TriangleMesh, Vec3};
use crate::error::GeometryError;

pub const MAX_SUBDIVISIONS: usize = 7;

/// Unit icosahedron with vertices at both poles, so +z is a five-fold axis.
fn icosahedron() -> TriangleMesh {
    let z = 1.0 / 5f64.sqrt();
    let r = 2.0 / 5f64.sqrt();
    let mut vertices: Vec<Vec3> = Vec::with_capacity(12);
    vertices.push([0.0, 0.0, 1.0]);
    for k in 0..5 {
        let a = 2.0 * PI * k as f64 / 5.0;
        vertices.push([r * a.cos(), r * a.sin(), z]);
    }
    for k in 0..5 {
        let a = 2.0 * PI * k as f64 / 5.0 + PI / 5.0;
        vertices.push([r * a.cos(), r * a.sin(), -z]);
    }
    vertices.push([0.0, 0.0, -1.0]);

    let mut faces = Vec::with_capacity(20);
    for k in 0..5 {
        let u0 = 1 + k;
        let u1 = 1 + (k + 1) % 5;
        let l0 = 6 + k;
        let l1 = 6 + (k + 1) % 5;
        faces.push([0, u0, u1]);
        faces.push([u0, l0, u1]);
        faces.push([u1, l0, l1]);
        faces.push([11, l1, l0]);
    }
    // the solid is convex and centered, so outward means n·c > 0
    for f in faces.iter_mut() {
        let [a, b, c] = [vertices[f[0]], vertices[f[1]], vertices[f[2]]];
        let n = cross(sub(b, a), sub(c, a));
        if dot(n, add(add(a, b), c)) < 0.0 {
            f.swap(1, 2);
        }
    }
    TriangleMesh::new(vertices, faces)
}

/// Unit-radius icosphere: the icosahedron split `subdivisions` times by edge
/// midpoints, every new vertex projected back onto the sphere.
pub fn icosphere(subdivisions: usize) -> Result<TriangleMesh, GeometryError> {
    if subdivisions > MAX_SUBDIVISIONS {
        return Err(GeometryError::Parameter(format!(
            "subdivisions must be in [0, {MAX_SUBDIVISIONS}], got {subdivisions}"
        )));
    }
    let mut mesh = icosahedron();
    for _ in 0..subdivisions {
        mesh = subdivide(&mesh);
    }
    Ok(mesh)
}

fn subdivide(mesh: &TriangleMesh) -> TriangleMesh {
    let mut vertices = mesh.vertices.clone();
    let mut midpoints: HashMap<(usize, usize), usize> =
        HashMap::with_capacity(mesh.faces.len() * 3 / 2);
    let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
        let key = (a.min(b), a.max(b));
        *midpoints.entry(key).or_insert_with(|| {
            let m = normalize(add(vertices[a], vertices[b]));
            vertices.push(m);
            vertices.len() - 1
        })
    };
    let mut faces = Vec::with_capacity(mesh.faces.len() * 4);
    for &[a, b, c] in &mesh.faces {
        let ab = midpoint(a, b, &mut vertices);
        let bc = midpoint(b, c, &mut vertices);
        let ca = midpoint(c, a, &mut vertices);
        faces.push([a, ab, ca]);
        faces.push([b, bc, ab]);
        faces.push([c, ca, bc]);
        faces.push([ab, bc, ca]);
    }
    TriangleMesh::new(vertices, faces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{norm, validate_mesh};
    use std::collections::HashSet;

    #[test]
    fn base_icosahedron_counts() {
        let m = icosphere(0).unwrap();
        assert_eq!(m.num_faces(), 20);
        assert_eq!(m.num_vertices(), 12);
    }

    #[test]
    fn three_subdivisions() {
        let m = icosphere(3).unwrap();
        assert_eq!(m.num_faces(), 1280);
        assert_eq!(m.num_vertices(), 642);
    }

    #[test]
    fn vertices_on_unit_sphere() {
        for v in &icosphere(2).unwrap().vertices {
            assert!((norm(*v) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn euler_characteristic_up_to_five() {
        for s in 0..=5 {
            let m = icosphere(s).unwrap();
            let p = 4usize.pow(s as u32);
            let edges: HashSet<(usize, usize)> = m
                .faces
                .iter()
                .flat_map(|&[a, b, c]| [(a, b), (b, c), (c, a)])
                .map(|(i, j)| (i.min(j), i.max(j)))
                .collect();
            assert_eq!(m.num_faces(), 20 * p);
            assert_eq!(m.num_vertices(), 10 * p + 2);
            assert_eq!(edges.len(), 30 * p);
            assert_eq!(
                m.num_vertices() as i64 - edges.len() as i64 + m.num_faces() as i64,
                2
            );
        }
    }

    #[test]
    fn constructed_valid() {
        assert!(validate_mesh(&icosphere(2).unwrap()).is_valid());
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(matches!(icosphere(8), Err(GeometryError::Parameter(_))));
    }
}
