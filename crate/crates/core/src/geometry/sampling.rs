use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{add, dist2, norm, scale, TriangleMesh, Vec3};
use crate::error::GeometryError;

/// Size of the candidate pool per requested point.
pub const CANDIDATES_PER_POINT: usize = 8;

/// Fixed-size set of surface points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        PointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Row-major P×3 coordinates.
    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| p.iter().copied()).collect()
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        PointCloud {
            points: flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        }
    }
}

/// `count` points drawn uniformly by area over the mesh surface.
pub fn surface_candidates(mesh: &TriangleMesh, count: usize, seed: u64) -> Vec<Vec3> {
    let mut cumulative = Vec::with_capacity(mesh.num_faces());
    let mut total = 0.0;
    for f in 0..mesh.num_faces() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * total;
            let f = cumulative
                .partition_point(|&c| c <= u)
                .min(mesh.num_faces() - 1);
            let [a, b, c] = mesh.triangle(f);
            let r1 = rng.random::<f64>().sqrt();
            let r2 = rng.random::<f64>();
            add(
                add(scale(a, 1.0 - r1), scale(b, r1 * (1.0 - r2))),
                scale(c, r1 * r2),
            )
        })
        .collect()
}

/// Greedy max-min selection of `count` indices from `candidates`, starting at
/// `first`. Each later pick maximizes its distance to the picked set; ties go
/// to the lowest index.
pub fn farthest_point_subset(
    candidates: &[Vec3],
    count: usize,
    first: usize,
) -> Result<Vec<usize>, GeometryError> {
    if count < 1 {
        return Err(GeometryError::Parameter("point count must be >= 1".into()));
    }
    if count > candidates.len() {
        return Err(GeometryError::Parameter(format!(
            "cannot pick {count} points from {} candidates",
            candidates.len()
        )));
    }
    if first >= candidates.len() {
        return Err(GeometryError::Parameter(format!(
            "first index {first} out of range"
        )));
    }
    let mut picked = Vec::with_capacity(count);
    let mut nearest = vec![f64::INFINITY; candidates.len()];
    let mut current = first;
    loop {
        picked.push(current);
        if picked.len() == count {
            break;
        }
        let anchor = candidates[current];
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (i, (c, d)) in candidates.iter().zip(nearest.iter_mut()).enumerate() {
            *d = d.min(dist2(*c, anchor));
            if *d > best.0 {
                best = (*d, i);
            }
        }
        current = best.1;
    }
    Ok(picked)
}

/// Furthest point sampling of `count` surface points. Candidates come from
/// `seed`; the first pick is the candidate of largest norm.
pub fn furthest_point_sampling(
    mesh: &TriangleMesh,
    count: usize,
    seed: u64,
) -> Result<PointCloud, GeometryError> {
    if count < 1 {
        return Err(GeometryError::Parameter("point count must be >= 1".into()));
    }
    if mesh.num_faces() == 0 {
        return Err(GeometryError::Parameter("mesh has no faces".into()));
    }
    let candidates = surface_candidates(mesh, CANDIDATES_PER_POINT * count, seed);
    let mut first = 0;
    for (i, c) in candidates.iter().enumerate() {
        if norm(*c) > norm(candidates[first]) {
            first = i;
        }
    }
    let idx = farthest_point_subset(&candidates, count, first)?;
    Ok(PointCloud::new(idx.into_iter().map(|i| candidates[i]).collect()))
}
