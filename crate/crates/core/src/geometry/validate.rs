use std::collections::HashMap;

use serde::Serialize;

use super::TriangleMesh;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    FaceIndexOutOfRange { face: usize },
    RepeatedVertexInFace { face: usize },
    /// Edge used by a single face.
    BoundaryEdge { a: usize, b: usize },
    /// Edge shared by more than two faces.
    NonManifoldEdge { a: usize, b: usize, faces: usize },
    /// Both faces traverse the edge in the same direction: one of them is
    /// flipped relative to its neighbour.
    FlippedNormal { a: usize, b: usize },
    ZeroAreaFace { face: usize },
    EulerCharacteristic { chi: i64 },
    NonPositiveVolume { volume: f64 },
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidityReport {
    pub violations: Vec<Violation>,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn boundary_edges(&self) -> usize {
        self.count(|v| matches!(v, Violation::BoundaryEdge { .. }))
    }

    pub fn flipped_normals(&self) -> usize {
        self.count(|v| matches!(v, Violation::FlippedNormal { .. }))
    }

    pub fn count(&self, pred: impl Fn(&Violation) -> bool) -> usize {
        self.violations.iter().filter(|v| pred(v)).count()
    }
}

/// Lists every violation of the closed, outward-oriented, genus-0 mesh
/// contract. Never fails.
pub fn validate_mesh(mesh: &TriangleMesh) -> ValidityReport {
    let mut violations = Vec::new();
    let nv = mesh.num_vertices();

    let scale2 = mesh.max_edge_length().powi(2);
    // directed edge counts keyed by the undirected edge
    let mut edges: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
    for (f, face) in mesh.faces.iter().enumerate() {
        if face.iter().any(|&i| i >= nv) {
            violations.push(Violation::FaceIndexOutOfRange { face: f });
            continue;
        }
        let [a, b, c] = *face;
        if a == b || b == c || c == a {
            violations.push(Violation::RepeatedVertexInFace { face: f });
            continue;
        }
        if mesh.face_area(f) <= 1e-12 * scale2 {
            violations.push(Violation::ZeroAreaFace { face: f });
        }
        for (i, j) in [(a, b), (b, c), (c, a)] {
            let e = edges.entry((i.min(j), i.max(j))).or_insert((0, 0));
            if i < j {
                e.0 += 1;
            } else {
                e.1 += 1;
            }
        }
    }

    let mut keys: Vec<_> = edges.keys().copied().collect();
    keys.sort_unstable();
    for (a, b) in keys {
        let (fwd, bwd) = edges[&(a, b)];
        match fwd + bwd {
            1 => violations.push(Violation::BoundaryEdge { a, b }),
            2 if fwd != 1 => violations.push(Violation::FlippedNormal { a, b }),
            2 => {}
            n => violations.push(Violation::NonManifoldEdge { a, b, faces: n }),
        }
    }

    let chi = nv as i64 - edges.len() as i64 + mesh.num_faces() as i64;
    if chi != 2 {
        violations.push(Violation::EulerCharacteristic { chi });
    }
    if violations.is_empty() {
        let volume = mesh.signed_volume();
        if !(volume > 0.0) {
            violations.push(Violation::NonPositiveVolume { volume });
        }
    }
    ValidityReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::icosphere;

    #[test]
    fn icosphere_is_clean() {
        assert!(validate_mesh(&icosphere(2).unwrap()).is_valid());
    }

    #[test]
    fn removed_face_leaves_three_boundary_edges() {
        let mut m = icosphere(2).unwrap();
        m.faces.remove(17);
        let r = validate_mesh(&m);
        assert_eq!(r.boundary_edges(), 3);
        assert!(r
            .violations
            .contains(&Violation::EulerCharacteristic { chi: 1 }));
    }

    #[test]
    fn flipped_face_detected() {
        let mut m = icosphere(2).unwrap();
        m.faces[40].swap(0, 1);
        let r = validate_mesh(&m);
        assert!(r.flipped_normals() >= 1);
        assert_eq!(r.flipped_normals(), 3);
    }

    #[test]
    fn inverted_mesh_has_negative_volume() {
        let mut m = icosphere(1).unwrap();
        for f in m.faces.iter_mut() {
            f.swap(1, 2);
        }
        let r = validate_mesh(&m);
        assert_eq!(r.violations.len(), 1);
        assert!(matches!(r.violations[0], Violation::NonPositiveVolume { .. }));
    }

    #[test]
    fn degenerate_face_flagged() {
        let mut m = icosphere(1).unwrap();
        let [a, b, _] = m.faces[0];
        let mid = crate::geometry::scale(crate::geometry::add(m.vertices[a], m.vertices[b]), 0.5);
        let c = m.faces[0][2];
        m.vertices[c] = mid;
        let r = validate_mesh(&m);
        assert!(r.count(|v| matches!(v, Violation::ZeroAreaFace { .. })) >= 1);
    }

    #[test]
    fn duplicated_face_is_non_manifold() {
        let mut m = icosphere(1).unwrap();
        let f = m.faces[3];
        m.faces.push(f);
        let r = validate_mesh(&m);
        assert!(r.count(|v| matches!(v, Violation::NonManifoldEdge { .. })) == 3);
    }
}
