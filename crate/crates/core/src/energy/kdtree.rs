use nalgebra::Vector3;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Balanced kd-tree over a point cloud with exact nearest-neighbour queries.
#[derive(Debug, Clone)]
pub struct PointIndex {
    points: Vec<Vector3<f64>>,
    /// Original index of each entry of `points`.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl PointIndex {
    /// `None` for an empty cloud.
    pub fn new(cloud: &[Vector3<f64>]) -> Option<Self> {
        if cloud.is_empty() {
            return None;
        }
        let mut order: Vec<usize> = (0..cloud.len()).collect();
        let mut nodes = Vec::new();
        build(cloud, &mut order, 0, cloud.len(), &mut nodes);
        let points = order.iter().map(|&i| cloud[i]).collect();
        Some(Self { points, order, nodes })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest point to `q`: `(original index, point, distance)`. Ties go to
    /// the smaller original index.
    pub fn nearest(&self, q: &Vector3<f64>) -> (usize, Vector3<f64>, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, q, &mut best);
        let pos = best.0;
        (self.order[pos], self.points[pos], best.1.sqrt())
    }

    fn search(&self, node: usize, q: &Vector3<f64>, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for pos in start..end {
                    let d = (self.points[pos] - q).norm_squared();
                    if d < best.1 || (d == best.1 && self.order[pos] < self.order.get(best.0).copied().unwrap_or(usize::MAX)) {
                        *best = (pos, d);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn build(cloud: &[Vector3<f64>], order: &mut [usize], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let slice = &mut order[start..end];
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for &i in slice.iter() {
        lo = lo.inf(&cloud[i]);
        hi = hi.sup(&cloud[i]);
    }
    let axis = (hi - lo).imax();
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| cloud[a][axis].total_cmp(&cloud[b][axis]).then(a.cmp(&b)));
    let value = cloud[slice[mid]][axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    // Left holds entries with coordinate <= value, right those >= value.
    let left = build(cloud, order, start, start + mid, nodes);
    let right = build(cloud, order, start + mid, end, nodes);
    nodes[id] = Node::Split { axis, value, left, right };
    id
}
