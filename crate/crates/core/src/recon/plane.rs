use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::index::SpatialIndex;
use crate::geom::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneParams {
    pub k: usize,
    /// Largest accepted RMS distance of the neighbors to their plane, m.
    pub planarity_tol: f64,
    /// Neighbors farther than this reject the match, m.
    pub max_neighbor_dist: f64,
    /// Smallest accepted ratio of the two in-plane scatter eigenvalues.
    /// Nearly collinear neighborhoods (a single scan ring) leave the normal
    /// free to rotate about the line and are rejected.
    pub min_spread_ratio: f64,
}

impl Default for PlaneParams {
    fn default() -> Self {
        PlaneParams {
            k: 5,
            planarity_tol: 0.05,
            max_neighbor_dist: 2.0,
            min_spread_ratio: 1e-2,
        }
    }
}

/// Plane `n·x + d = 0` fitted to a map neighborhood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Vec3,
    pub offset: f64,
    /// RMS distance of the fitted neighbors to the plane.
    pub rms: f64,
}

impl Plane {
    pub fn distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) + self.offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rejection {
    TooFewPoints,
    TooFar,
    Degenerate,
    NotPlanar,
}

/// Total-least-squares plane through `pts`: the normal is the eigenvector of
/// the scatter matrix with the smallest eigenvalue.
pub fn fit_plane(pts: &[Vec3]) -> Result<Plane, Rejection> {
    fit_plane_with_spread(pts).map(|(p, _)| p)
}

/// Plane plus the ratio of the middle to the largest scatter eigenvalue.
fn fit_plane_with_spread(pts: &[Vec3]) -> Result<(Plane, f64), Rejection> {
    if pts.len() < 3 {
        return Err(Rejection::TooFewPoints);
    }
    let n = pts.len() as f64;
    let c = pts.iter().sum::<Vec3>() / n;
    let mut s = Matrix3::zeros();
    for p in pts {
        let d = p - c;
        s += d * d.transpose();
    }
    let eig = SymmetricEigen::new(s);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l0, l1) = (eig.eigenvalues[order[0]].max(0.0), eig.eigenvalues[order[1]]);
    // Collinear (or coincident) neighbors leave the normal undetermined.
    let scale = eig.eigenvalues[order[2]].max(f64::MIN_POSITIVE);
    if l1 <= 1e-10 * scale {
        return Err(Rejection::Degenerate);
    }
    let mut normal: Vec3 = eig.eigenvectors.column(order[0]).into();
    normal.normalize_mut();
    // Deterministic orientation: largest component positive.
    if normal[normal.iamax()] < 0.0 {
        normal = -normal;
    }
    let plane = Plane {
        normal,
        offset: -normal.dot(&c),
        rms: (l0 / n).sqrt(),
    };
    Ok((plane, l1 / scale))
}

/// Signed distance from `point` to the plane through its `k` nearest map
/// points, with the plane record.
pub fn point_to_plane_residual<M: SpatialIndex + ?Sized>(
    point: &Vec3,
    map: &M,
    params: &PlaneParams,
) -> Result<(f64, Plane), Rejection> {
    if map.len() < params.k {
        return Err(Rejection::TooFewPoints);
    }
    let nn = map.knn(point, params.k);
    if nn.last().map_or(true, |n| n.dist2 > params.max_neighbor_dist.powi(2)) {
        return Err(Rejection::TooFar);
    }
    let pts: Vec<Vec3> = nn.iter().map(|n| n.point).collect();
    let (plane, spread) = fit_plane_with_spread(&pts)?;
    if spread < params.min_spread_ratio {
        return Err(Rejection::Degenerate);
    }
    if plane.rms > params.planarity_tol {
        return Err(Rejection::NotPlanar);
    }
    Ok((plane.distance(point), plane))
}
