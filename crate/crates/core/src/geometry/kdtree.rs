//! Static 3-d tree for exact nearest-neighbour queries.

use super::mesh::Point;

const LEAF_SIZE: usize = 8;

enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: Box<Node>, right: Box<Node> },
}

pub struct KdTree {
    points: Vec<Point>,
    order: Vec<usize>,
    root: Option<Node>,
}

impl KdTree {
    pub fn new(points: &[Point]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let root = (!points.is_empty()).then(|| build(points, &mut order, 0));
        KdTree {
            points: points.to_vec(),
            order,
            root,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and squared distance of the closest point; the lowest index wins ties.
    pub fn nearest(&self, query: &Point) -> Option<(usize, f64)> {
        let root = self.root.as_ref()?;
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(root, query, &mut best);
        Some(best)
    }

    fn search(&self, node: &Node, q: &Point, best: &mut (usize, f64)) {
        match node {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    let d = (self.points[i] - q).norm_squared();
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[*axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn build(points: &[Point], order: &mut [usize], offset: usize) -> Node {
    if order.len() <= LEAF_SIZE {
        return Node::Leaf {
            start: offset,
            end: offset + order.len(),
        };
    }
    let (lo, hi) = order.iter().fold(
        (Point::repeat(f64::INFINITY), Point::repeat(f64::NEG_INFINITY)),
        |(lo, hi), &i| (lo.inf(&points[i]), hi.sup(&points[i])),
    );
    let axis = (hi - lo).imax();
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    let value = points[order[mid]][axis];
    let (left, right) = order.split_at_mut(mid);
    Node::Split {
        axis,
        value,
        left: Box::new(build(points, left, offset)),
        right: Box::new(build(points, right, offset + mid)),
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut pts: Vec<Point> = (0..500)
            .map(|_| Point::new(rng.random(), rng.random(), rng.random()))
            .collect();
        // Duplicates exercise the tie-break.
        pts.extend_from_within(..50);
        pts.extend((0..40).map(|i| Point::new(0.5, (i % 4) as f64 * 0.25, 0.0)));
        let tree = KdTree::new(&pts);
        for _ in 0..400 {
            let q = Point::new(rng.random_range(-0.2..1.2), rng.random_range(-0.2..1.2), rng.random());
            let (idx, d) = tree.nearest(&q).unwrap();
            let mut expect = (usize::MAX, f64::INFINITY);
            for (i, p) in pts.iter().enumerate() {
                let dd = (p - q).norm_squared();
                if dd < expect.1 {
                    expect = (i, dd);
                }
            }
            assert_eq!((idx, d), expect);
        }
    }

    #[test]
    fn empty_tree_has_no_neighbour() {
        assert!(KdTree::new(&[]).nearest(&Point::zeros()).is_none());
    }
}
