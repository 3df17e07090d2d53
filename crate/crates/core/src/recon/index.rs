use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use crate::geom::Vec3;

/// A k-nearest-neighbor result. Ordering is by squared distance, then by
/// insertion id, which makes every query result unique.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: usize,
    pub point: Vec3,
    pub dist2: f64,
}

impl Neighbor {
    fn key(&self) -> (f64, usize) {
        (self.dist2, self.id)
    }
}

impl Eq for Neighbor {}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.key(), other.key());
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
    }
}

/// Insert-only point index with exact kNN.
pub trait SpatialIndex {
    /// Inserts a point and returns its id (ids count up from 0).
    fn insert(&mut self, p: Vec3) -> usize;
    /// The `k` nearest points, nearest first.
    fn knn(&self, q: &Vec3, k: usize) -> Vec<Neighbor>;
    fn len(&self) -> usize;
    fn points(&self) -> Vec<Vec3>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn insert_all(&mut self, pts: &[Vec3]) {
        for p in pts {
            self.insert(*p);
        }
    }

    /// Axis-aligned bounds of all points.
    fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let pts = self.points();
        let first = *pts.first()?;
        Some(pts.iter().fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
    }
}

/// Bounded max-heap of the best `k` candidates.
struct Best {
    k: usize,
    heap: BinaryHeap<Neighbor>,
}

impl Best {
    fn new(k: usize) -> Self {
        Best {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    fn full(&self) -> bool {
        self.heap.len() >= self.k
    }

    fn worst(&self) -> f64 {
        if self.full() {
            self.heap.peek().map_or(f64::INFINITY, |n| n.dist2)
        } else {
            f64::INFINITY
        }
    }

    fn offer(&mut self, n: Neighbor) {
        if self.k == 0 {
            return;
        }
        if !self.full() {
            self.heap.push(n);
        } else if n < *self.heap.peek().unwrap() {
            self.heap.pop();
            self.heap.push(n);
        }
    }

    fn finish(self) -> Vec<Neighbor> {
        self.heap.into_sorted_vec()
    }
}

/// Exhaustive kNN over a slice, ids taken as slice positions.
pub fn brute_force_knn(points: &[Vec3], q: &Vec3, k: usize) -> Vec<Neighbor> {
    let mut best = Best::new(k);
    for (id, p) in points.iter().enumerate() {
        best.offer(Neighbor {
            id,
            point: *p,
            dist2: (p - q).norm_squared(),
        });
    }
    best.finish()
}

#[derive(Debug, Clone)]
struct Node {
    p: Vec3,
    id: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
    size: usize,
}

/// Incremental k-d tree. Subtrees whose children grow beyond `alpha` of
/// their size are rebuilt balanced (scapegoat rebalancing).
#[derive(Debug, Clone)]
pub struct KdTree {
    nodes: Vec<Node>,
    root: Option<usize>,
    alpha: f64,
    rebuilds: usize,
}

impl Default for KdTree {
    fn default() -> Self {
        Self::new(0.75)
    }
}

/// Subtrees smaller than this are never rebuilt.
const MIN_REBUILD: usize = 16;

impl KdTree {
    pub fn new(alpha: f64) -> Self {
        KdTree {
            nodes: vec![],
            root: None,
            alpha: alpha.clamp(0.5, 1.0),
            rebuilds: 0,
        }
    }

    /// Number of subtree rebuilds so far.
    pub fn rebuilds(&self) -> usize {
        self.rebuilds
    }

    pub fn depth(&self) -> usize {
        fn d(nodes: &[Node], n: Option<usize>) -> usize {
            n.map_or(0, |i| 1 + d(nodes, nodes[i].left).max(d(nodes, nodes[i].right)))
        }
        d(&self.nodes, self.root)
    }

    fn size(&self, n: Option<usize>) -> usize {
        n.map_or(0, |i| self.nodes[i].size)
    }

    fn collect(&self, n: Option<usize>, out: &mut Vec<usize>) {
        if let Some(i) = n {
            self.collect(self.nodes[i].left, out);
            out.push(i);
            self.collect(self.nodes[i].right, out);
        }
    }

    fn build(&mut self, idx: &mut [usize]) -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
        for &i in idx.iter() {
            lo = lo.inf(&self.nodes[i].p);
            hi = hi.sup(&self.nodes[i].p);
        }
        let axis = (hi - lo).imax();
        idx.sort_by(|&a, &b| {
            self.nodes[a].p[axis]
                .total_cmp(&self.nodes[b].p[axis])
                .then(self.nodes[a].id.cmp(&self.nodes[b].id))
        });
        let mid = idx.len() / 2;
        // Equal keys must not sit left of the median, since inserts send
        // ties right.
        let mut m = mid;
        while m > 0 && self.nodes[idx[m - 1]].p[axis] == self.nodes[idx[mid]].p[axis] {
            m -= 1;
        }
        let node = idx[m];
        let (l, r) = idx.split_at_mut(m);
        let left = self.build(l);
        let right = self.build(&mut r[1..]);
        let size = 1 + self.size(left) + self.size(right);
        let n = &mut self.nodes[node];
        n.axis = axis;
        n.left = left;
        n.right = right;
        n.size = size;
        Some(node)
    }

    fn rebuild(&mut self, at: usize, parent: Option<usize>) {
        let mut idx = vec![];
        self.collect(Some(at), &mut idx);
        let new = self.build(&mut idx);
        match parent {
            None => self.root = new,
            Some(p) => {
                if self.nodes[p].left == Some(at) {
                    self.nodes[p].left = new;
                } else {
                    self.nodes[p].right = new;
                }
            }
        }
        self.rebuilds += 1;
    }

    fn search(&self, n: Option<usize>, q: &Vec3, best: &mut Best) {
        let Some(i) = n else { return };
        let node = &self.nodes[i];
        best.offer(Neighbor {
            id: node.id,
            point: node.p,
            dist2: (node.p - q).norm_squared(),
        });
        let diff = q[node.axis] - node.p[node.axis];
        let (near, far) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.search(near, q, best);
        // `<=` keeps equal-distance candidates with smaller ids reachable.
        if diff * diff <= best.worst() {
            self.search(far, q, best);
        }
    }
}

impl SpatialIndex for KdTree {
    fn insert(&mut self, p: Vec3) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node {
            p,
            id,
            axis: 0,
            left: None,
            right: None,
            size: 1,
        });
        let Some(mut cur) = self.root else {
            self.root = Some(id);
            return id;
        };
        let mut path = vec![];
        loop {
            path.push(cur);
            let n = &self.nodes[cur];
            let go_left = p[n.axis] < n.p[n.axis];
            let next = if go_left { n.left } else { n.right };
            match next {
                Some(c) => cur = c,
                None => {
                    let axis = (n.axis + 1) % 3;
                    self.nodes[id].axis = axis;
                    if go_left {
                        self.nodes[cur].left = Some(id);
                    } else {
                        self.nodes[cur].right = Some(id);
                    }
                    break;
                }
            }
        }
        for &n in &path {
            self.nodes[n].size += 1;
        }
        for (k, &n) in path.iter().enumerate() {
            let node = &self.nodes[n];
            let heavy = self.size(node.left).max(self.size(node.right));
            if node.size >= MIN_REBUILD && heavy as f64 > self.alpha * node.size as f64 {
                let parent = if k == 0 { None } else { Some(path[k - 1]) };
                self.rebuild(n, parent);
                break;
            }
        }
        id
    }

    fn knn(&self, q: &Vec3, k: usize) -> Vec<Neighbor> {
        let mut best = Best::new(k);
        self.search(self.root, q, &mut best);
        best.finish()
    }

    fn len(&self) -> usize {
        self.nodes.len()
    }

    fn points(&self) -> Vec<Vec3> {
        self.nodes.iter().map(|n| n.p).collect()
    }
}

/// Uniform voxel hash with shell-by-shell kNN search.
#[derive(Debug, Clone)]
pub struct VoxelMap {
    size: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
    pts: Vec<Vec3>,
    lo: [i64; 3],
    hi: [i64; 3],
}

impl VoxelMap {
    pub fn new(voxel_size: f64) -> Self {
        VoxelMap {
            size: voxel_size,
            cells: HashMap::new(),
            pts: vec![],
            lo: [i64::MAX; 3],
            hi: [i64::MIN; 3],
        }
    }

    fn key(&self, p: &Vec3) -> [i64; 3] {
        [
            (p.x / self.size).floor() as i64,
            (p.y / self.size).floor() as i64,
            (p.z / self.size).floor() as i64,
        ]
    }
}

impl SpatialIndex for VoxelMap {
    fn insert(&mut self, p: Vec3) -> usize {
        let id = self.pts.len();
        let k = self.key(&p);
        for a in 0..3 {
            self.lo[a] = self.lo[a].min(k[a]);
            self.hi[a] = self.hi[a].max(k[a]);
        }
        self.pts.push(p);
        self.cells.entry(k).or_default().push(id);
        id
    }

    fn knn(&self, q: &Vec3, k: usize) -> Vec<Neighbor> {
        let mut best = Best::new(k);
        if self.pts.is_empty() || k == 0 {
            return vec![];
        }
        let c = self.key(q);
        let reach = (0..3)
            .map(|a| (c[a] - self.lo[a]).abs().max((self.hi[a] - c[a]).abs()))
            .max()
            .unwrap();
        for r in 0..=reach {
            for dx in -r..=r {
                for dy in -r..=r {
                    for dz in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        if let Some(ids) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                            for &id in ids {
                                best.offer(Neighbor {
                                    id,
                                    point: self.pts[id],
                                    dist2: (self.pts[id] - q).norm_squared(),
                                });
                            }
                        }
                    }
                }
            }
            // Anything in shell r + 1 or beyond is at least r · size away.
            let bound = r as f64 * self.size;
            if best.full() && best.worst() < bound * bound {
                break;
            }
        }
        best.finish()
    }

    fn len(&self) -> usize {
        self.pts.len()
    }

    fn points(&self) -> Vec<Vec3> {
        self.pts.clone()
    }
}
