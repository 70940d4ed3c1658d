//! Exact nearest-neighbour search with a 3-d tree.
//!
//! Queries return the point minimizing squared Euclidean distance; among equal
//! distances the lowest point index wins, matching a linear scan that keeps the
//! first minimum.

use super::{squared_distance, Point3, PointCloud};

const LEAF_SIZE: usize = 8;

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Immutable spatial index over one cloud; safe to query from many threads.
#[derive(Clone, Debug)]
pub struct NearestNeighborIndex {
    points: Vec<Point3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl NearestNeighborIndex {
    pub fn build(cloud: &PointCloud) -> Self {
        let points = cloud.points().to_vec();
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        build_node(&points, &mut order, 0, points.len(), &mut nodes);
        Self {
            points,
            order,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `(index, squared distance)` of the nearest cloud point to `query`.
    pub fn nearest(&self, query: &Point3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, query, &mut best);
        best
    }

    fn search(&self, node: usize, q: &Point3, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = squared_distance(q, &self.points[i]);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                // `<=` keeps equal-distance candidates reachable for the tie-break.
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn build_node(
    points: &[Point3],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let slice = &mut order[start..end];
    let axis = widest_axis(points, slice);
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
    });
    let value = points[slice[mid]][axis];
    nodes.push(Node::Leaf { start, end });
    let left = build_node(points, order, start, start + mid, nodes);
    let right = build_node(points, order, start + mid, end, nodes);
    nodes[id] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    id
}

fn widest_axis(points: &[Point3], idx: &[usize]) -> usize {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in idx {
        for k in 0..3 {
            lo[k] = lo[k].min(points[i][k]);
            hi[k] = hi[k].max(points[i][k]);
        }
    }
    (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_scan(points: &[Point3], q: &Point3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = squared_distance(q, p);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
        (0..n)
            .map(|_| [0; 3].map(|_| rng.random_range(-50.0..50.0)))
            .collect()
    }

    #[test]
    fn member_query_returns_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = random_points(&mut rng, 200);
        let index = NearestNeighborIndex::build(&PointCloud::new(pts.clone()).unwrap());
        for (i, p) in pts.iter().enumerate() {
            assert_eq!(index.nearest(p), (i, 0.0));
        }
    }

    #[test]
    fn matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts = random_points(&mut rng, 1000);
        let index = NearestNeighborIndex::build(&PointCloud::new(pts.clone()).unwrap());
        for q in random_points(&mut rng, 1000) {
            assert_eq!(index.nearest(&q), linear_scan(&pts, &q));
        }
    }

    #[test]
    fn coincident_points_resolve_to_lower_index() {
        let mut pts = vec![[1.0, 1.0, 1.0]; 3];
        pts.extend((0..40).map(|i| [i as f64, -3.0, 2.0]));
        pts.push([1.0, 1.0, 1.0]);
        let index = NearestNeighborIndex::build(&PointCloud::new(pts).unwrap());
        assert_eq!(index.nearest(&[1.0, 1.0, 1.0]), (0, 0.0));
    }

    #[test]
    fn grid_ties_match_linear_scan() {
        // Integer grid: many exactly-equal distances.
        let pts: Vec<Point3> = (0..6)
            .flat_map(|x| (0..6).flat_map(move |y| (0..6).map(move |z| [x as f64, y as f64, z as f64])))
            .collect();
        let index = NearestNeighborIndex::build(&PointCloud::new(pts.clone()).unwrap());
        for q in [[0.5, 0.5, 0.5], [2.5, 3.0, 1.5], [-1.0, 2.5, 2.5], [5.5, 5.5, 0.0]] {
            assert_eq!(index.nearest(&q), linear_scan(&pts, &q));
        }
    }
}
