use serde::{Deserialize, Serialize};

use crate::geom::Vec3;

const EPS: f64 = 1e-9;

/// A finite planar polygon in world coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Facet {
    #[serde(default)]
    pub label: String,
    pub corners: Vec<Vec3>,
    #[serde(default)]
    pub reflection_loss_db: f64,
}

impl Facet {
    pub fn new(label: impl Into<String>, corners: Vec<Vec3>, reflection_loss_db: f64) -> Self {
        Facet {
            label: label.into(),
            corners,
            reflection_loss_db,
        }
    }

    /// Axis-aligned vertical rectangle spanning `a`→`b` on the ground track
    /// (z ignored) from `z0` up to `z1`.
    pub fn vertical(label: &str, a: Vec3, b: Vec3, z0: f64, z1: f64, loss_db: f64) -> Self {
        Facet::new(
            label,
            vec![
                Vec3::new(a.x, a.y, z0),
                Vec3::new(b.x, b.y, z0),
                Vec3::new(b.x, b.y, z1),
                Vec3::new(a.x, a.y, z1),
            ],
            loss_db,
        )
    }

    /// Newell normal; its norm is twice the polygon area.
    fn newell(&self) -> Vec3 {
        let n = self.corners.len();
        let mut acc = Vec3::zeros();
        for i in 0..n {
            let a = self.corners[i];
            let b = self.corners[(i + 1) % n];
            acc.x += (a.y - b.y) * (a.z + b.z);
            acc.y += (a.z - b.z) * (a.x + b.x);
            acc.z += (a.x - b.x) * (a.y + b.y);
        }
        acc
    }

    pub fn area(&self) -> f64 {
        if self.corners.len() < 3 {
            return 0.0;
        }
        0.5 * self.newell().norm()
    }

    pub fn normal(&self) -> Vec3 {
        self.newell().normalize()
    }

    pub fn centroid(&self) -> Vec3 {
        self.corners.iter().sum::<Vec3>() / self.corners.len() as f64
    }

    /// Largest distance of any corner from the fitted plane.
    pub fn planarity_error(&self) -> f64 {
        let n = self.normal();
        let c = self.centroid();
        self.corners
            .iter()
            .map(|p| (p - c).dot(&n).abs())
            .fold(0.0, f64::max)
    }

    pub fn validate(&self, idx: usize, errs: &mut Vec<String>) {
        if self.corners.len() < 3 {
            errs.push(format!("facet {idx} has fewer than 3 corners"));
            return;
        }
        if self.corners.iter().any(|c| !c.iter().all(|v| v.is_finite())) {
            errs.push(format!("facet {idx} has non-finite corners"));
            return;
        }
        if self.area() <= 0.0 {
            errs.push(format!("facet {idx} is degenerate (zero area)"));
            return;
        }
        let scale = self
            .corners
            .iter()
            .map(|p| (p - self.centroid()).norm())
            .fold(1.0, f64::max);
        if self.planarity_error() > 1e-6 * scale {
            errs.push(format!("facet {idx} is not planar"));
        }
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        (p - self.corners[0]).dot(&self.normal())
    }

    pub fn mirror(&self, p: &Vec3) -> Vec3 {
        let n = self.normal();
        p - 2.0 * (p - self.corners[0]).dot(&n) * n
    }

    /// Whether a point on the facet plane lies inside the polygon
    /// (boundary counts as inside).
    pub fn contains(&self, p: &Vec3) -> bool {
        self.contains_with_normal(p, &self.normal())
    }

    fn contains_with_normal(&self, p: &Vec3, n: &Vec3) -> bool {
        let u = (self.corners[1] - self.corners[0]).normalize();
        let w = n.cross(&u);
        let o = self.corners[0];
        let to2 = |q: &Vec3| {
            let d = q - o;
            (d.dot(&u), d.dot(&w))
        };
        let (px, py) = to2(p);
        let scale = self
            .corners
            .iter()
            .map(|c| {
                let (x, y) = to2(c);
                x.abs().max(y.abs())
            })
            .fold(1.0, f64::max);
        let tol = 1e-12 * scale;
        let mut inside = false;
        let k = self.corners.len();
        for i in 0..k {
            let (x1, y1) = to2(&self.corners[i]);
            let (x2, y2) = to2(&self.corners[(i + 1) % k]);
            // On-edge test.
            let ex = x2 - x1;
            let ey = y2 - y1;
            let len2 = ex * ex + ey * ey;
            if len2 > 0.0 {
                let t = (((px - x1) * ex + (py - y1) * ey) / len2).clamp(0.0, 1.0);
                let dx = x1 + t * ex - px;
                let dy = y1 + t * ey - py;
                if (dx * dx + dy * dy).sqrt() <= tol {
                    return true;
                }
            }
            if (y1 > py) != (y2 > py) {
                let xc = x1 + (py - y1) / (y2 - y1) * ex;
                if px < xc {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Distance along a unit-direction ray to the facet, if hit.
    pub fn intersect_ray(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        self.intersect_ray_within(origin, dir, f64::INFINITY)
    }

    /// As [`Facet::intersect_ray`], skipping the polygon test for plane hits
    /// at or beyond `limit`.
    pub(crate) fn intersect_ray_within(&self, origin: &Vec3, dir: &Vec3, limit: f64) -> Option<f64> {
        let n = self.normal();
        let denom = dir.dot(&n);
        if denom.abs() < 1e-15 {
            return None;
        }
        let t = (self.corners[0] - origin).dot(&n) / denom;
        if t <= EPS || t >= limit {
            return None;
        }
        let hit = origin + dir * t;
        self.contains_with_normal(&hit, &n).then_some(t)
    }

    /// Whether the open segment `a`→`b` passes through the facet. Touching at
    /// the endpoints does not count, so reflection points on the facet itself
    /// are never self-occluding.
    pub fn blocks_segment(&self, a: &Vec3, b: &Vec3) -> bool {
        let da = self.signed_distance(a);
        let db = self.signed_distance(b);
        let len = (b - a).norm();
        let tol = EPS * len.max(1.0);
        if (da > tol && db > tol) || (da < -tol && db < -tol) {
            return false;
        }
        if (da - db).abs() < 1e-15 {
            return false;
        }
        let s = da / (da - db);
        if s * len <= tol || (1.0 - s) * len <= tol {
            return false;
        }
        let p = a + (b - a) * s;
        self.contains(&p)
    }

    /// Closest point on the facet boundary to a ray, as the angle seen from
    /// the ray origin.
    pub fn angular_distance(&self, origin: &Vec3, dir: &Vec3) -> f64 {
        if self.intersect_ray(origin, dir).is_some() {
            return 0.0;
        }
        let k = self.corners.len();
        let mut best = f64::INFINITY;
        for i in 0..k {
            let a = self.corners[i];
            let b = self.corners[(i + 1) % k];
            // Sample the edge densely; facets are few and this is not hot.
            for s in 0..=64 {
                let q = a + (b - a) * (s as f64 / 64.0);
                let d = q - origin;
                if d.norm() > 0.0 {
                    best = best.min(crate::geom::angle_between(&d, dir));
                }
            }
        }
        best
    }
}
