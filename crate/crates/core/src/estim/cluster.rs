use serde::{Deserialize, Serialize};

use super::pdp::{noise_floor, Pdp};
use crate::geom::{db_to_lin, lin_to_db};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    /// A delay gap wider than this between retained bins opens a new cluster.
    pub delay_gap: f64,
    /// Margin over the median-based floor, dB.
    pub floor_margin_db: f64,
    /// A cluster survives only if its peak clears the floor by this much.
    pub min_peak_db: f64,
    /// Run the power-weighted k-means refinement after gap splitting.
    pub refine: bool,
    pub max_refine_iterations: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            delay_gap: 10e-9,
            floor_margin_db: 6.0,
            min_peak_db: 6.0,
            refine: true,
            max_refine_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterPoint {
    pub delay: f64,
    /// Linear power.
    pub power: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: usize,
    /// Power-weighted mean delay.
    pub centroid_delay: f64,
    /// Total member power (linear).
    pub power: f64,
    pub peak_power: f64,
    pub members: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    /// Cluster id per input point; `None` for points not retained.
    pub assignment: Vec<Option<usize>>,
    /// Ordered by centroid delay; `clusters[i].id == i`.
    pub clusters: Vec<Cluster>,
    pub floor_db: f64,
}

impl ClusterSet {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

/// Clusters the bins of a PDP above its noise floor.
pub fn cluster_pdp(pdp: &Pdp, params: &ClusterParams) -> ClusterSet {
    let floor = noise_floor(pdp, params.floor_margin_db);
    let pts: Vec<ClusterPoint> = pdp
        .delays
        .iter()
        .zip(&pdp.power)
        .map(|(&delay, &power)| ClusterPoint { delay, power })
        .collect();
    cluster_points(&pts, floor, params)
}

/// Clusters discrete points (e.g. estimated paths) against a given floor in dB.
pub fn cluster_points(points: &[ClusterPoint], floor_db: f64, params: &ClusterParams) -> ClusterSet {
    let floor = db_to_lin(floor_db);
    let peak_min = db_to_lin(floor_db + params.min_peak_db);
    let mut idx: Vec<usize> = (0..points.len())
        .filter(|&i| points[i].power > floor)
        .collect();
    idx.sort_by(|&a, &b| points[a].delay.total_cmp(&points[b].delay).then(a.cmp(&b)));

    let mut groups: Vec<Vec<usize>> = vec![];
    for &i in &idx {
        match groups.last_mut() {
            Some(g) if points[i].delay - points[*g.last().unwrap()].delay <= params.delay_gap => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups.retain(|g| g.iter().any(|&i| points[i].power >= peak_min));

    if params.refine && groups.len() > 1 {
        groups = refine(points, groups, params.max_refine_iterations);
    }

    let mut clusters: Vec<Cluster> = groups.iter().map(|g| summarize(points, g)).collect();
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.sort_by(|&a, &b| clusters[a].centroid_delay.total_cmp(&clusters[b].centroid_delay));
    let mut assignment = vec![None; points.len()];
    let mut sorted = Vec::with_capacity(clusters.len());
    for (id, &o) in order.iter().enumerate() {
        for &i in &groups[o] {
            assignment[i] = Some(id);
        }
        clusters[o].id = id;
        sorted.push(clusters[o]);
    }
    ClusterSet {
        assignment,
        clusters: sorted,
        floor_db: lin_to_db(floor),
    }
}

fn summarize(points: &[ClusterPoint], g: &[usize]) -> Cluster {
    let power: f64 = g.iter().map(|&i| points[i].power).sum();
    Cluster {
        id: 0,
        centroid_delay: g.iter().map(|&i| points[i].delay * points[i].power).sum::<f64>() / power,
        power,
        peak_power: g.iter().map(|&i| points[i].power).fold(0.0, f64::max),
        members: g.len(),
    }
}

/// Power-weighted k-means on delay, seeded by the gap partition. Stops when
/// every member is nearest its own centroid.
fn refine(points: &[ClusterPoint], mut groups: Vec<Vec<usize>>, max_iter: usize) -> Vec<Vec<usize>> {
    let members: Vec<usize> = groups.iter().flatten().copied().collect();
    for _ in 0..max_iter {
        let cents: Vec<f64> = groups.iter().map(|g| summarize(points, g).centroid_delay).collect();
        let mut next: Vec<Vec<usize>> = vec![vec![]; cents.len()];
        for &i in &members {
            let d = points[i].delay;
            let k = (0..cents.len())
                .min_by(|&a, &b| (d - cents[a]).abs().total_cmp(&(d - cents[b]).abs()).then(a.cmp(&b)))
                .unwrap();
            next[k].push(i);
        }
        next.retain(|g| !g.is_empty());
        for g in &mut next {
            g.sort_by(|&a, &b| points[a].delay.total_cmp(&points[b].delay).then(a.cmp(&b)));
        }
        if next == groups {
            break;
        }
        groups = next;
    }
    groups
}
