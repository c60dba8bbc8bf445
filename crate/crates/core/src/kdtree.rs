//! Exact nearest-neighbor search over integer voxel coordinates.
//!
//! Median-split k-d tree with leaf size 16. Distances are squared Euclidean
//! in exact i64 arithmetic, so equidistant candidates can be tie-broken by
//! the lexicographically smallest coordinate without any float fuzz.

#[derive(Debug)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: u32,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Debug)]
pub struct KdTree {
    // points re-ordered so leaves are contiguous; `order[i]` is the index of
    // points[i] in the original input slice
    points: Vec<[u32; 3]>,
    order: Vec<usize>,
    root: Node,
}

const LEAF_SIZE: usize = 16;

fn dist2(a: &[u32; 3], b: &[u32; 3]) -> i64 {
    let mut d = 0i64;
    for i in 0..3 {
        let delta = a[i] as i64 - b[i] as i64;
        d += delta * delta;
    }
    d
}

fn build(points: &mut [[u32; 3]], order: &mut [usize], offset: usize) -> Node {
    if points.len() <= LEAF_SIZE {
        return Node::Leaf {
            start: offset,
            end: offset + points.len(),
        };
    }
    // split the widest axis at its median
    let mut lo = [u32::MAX; 3];
    let mut hi = [0u32; 3];
    for p in points.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let axis = (0..3).max_by_key(|&a| hi[a] - lo[a]).unwrap();
    if hi[axis] == lo[axis] {
        // all points identical along every axis wide enough to split
        return Node::Leaf {
            start: offset,
            end: offset + points.len(),
        };
    }
    let mid = points.len() / 2;
    // sort-based median keeps the build deterministic
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by_key(|&i| (points[i][axis], points[i]));
    let permuted_pts: Vec<[u32; 3]> = idx.iter().map(|&i| points[i]).collect();
    let permuted_ord: Vec<usize> = idx.iter().map(|&i| order[i]).collect();
    points.copy_from_slice(&permuted_pts);
    order.copy_from_slice(&permuted_ord);

    let value = points[mid][axis];
    let (pl, pr) = points.split_at_mut(mid);
    let (ol, or) = order.split_at_mut(mid);
    Node::Split {
        axis,
        value,
        left: Box::new(build(pl, ol, offset)),
        right: Box::new(build(pr, or, offset + mid)),
    }
}

impl KdTree {
    /// Builds a tree over the given points. Panics on an empty slice.
    pub fn new(input: &[[u32; 3]]) -> Self {
        assert!(!input.is_empty(), "KdTree over empty point set");
        let mut points = input.to_vec();
        let mut order: Vec<usize> = (0..input.len()).collect();
        let root = build(&mut points, &mut order, 0);
        KdTree {
            points,
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

    /// Exact nearest neighbor; ties go to the lexicographically smallest
    /// coordinate. Returns (squared distance, coordinate, input index).
    pub fn nearest(&self, query: &[u32; 3]) -> (i64, [u32; 3], usize) {
        let mut best = (i64::MAX, [u32::MAX; 3], usize::MAX);
        self.nearest_rec(&self.root, query, &mut best);
        best
    }

    fn nearest_rec(&self, node: &Node, query: &[u32; 3], best: &mut (i64, [u32; 3], usize)) {
        match node {
            Node::Leaf { start, end } => {
                for i in *start..*end {
                    let d = dist2(&self.points[i], query);
                    let cand = (d, self.points[i], self.order[i]);
                    if d < best.0 || (d == best.0 && cand.1 < best.1) {
                        *best = cand;
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let q = query[*axis] as i64;
                let plane = *value as i64;
                let (near, far) = if q < plane {
                    (left, right)
                } else {
                    (right, left)
                };
                self.nearest_rec(near, query, best);
                let gap = q - plane;
                // visit the far side on equality too, so lexicographic ties
                // across the plane are still found
                if gap * gap <= best.0 {
                    self.nearest_rec(far, query, best);
                }
            }
        }
    }

    /// The `k` nearest neighbors as (squared distance, input index), sorted
    /// by distance then coordinate. Returns fewer when the tree is smaller
    /// than `k`.
    pub fn k_nearest(&self, query: &[u32; 3], k: usize) -> Vec<(i64, usize)> {
        assert!(k > 0);
        let mut heap: Vec<(i64, [u32; 3], usize)> = Vec::with_capacity(k + 1);
        self.knn_rec(&self.root, query, k, &mut heap);
        heap.sort_by_key(|e| (e.0, e.1));
        heap.into_iter().map(|(d, _, i)| (d, i)).collect()
    }

    fn knn_rec(
        &self,
        node: &Node,
        query: &[u32; 3],
        k: usize,
        heap: &mut Vec<(i64, [u32; 3], usize)>,
    ) {
        let worst = |heap: &Vec<(i64, [u32; 3], usize)>| {
            heap.iter().map(|e| e.0).max().unwrap_or(i64::MAX)
        };
        match node {
            Node::Leaf { start, end } => {
                for i in *start..*end {
                    let d = dist2(&self.points[i], query);
                    if heap.len() < k {
                        heap.push((d, self.points[i], self.order[i]));
                    } else if d < worst(heap) {
                        let w = heap
                            .iter()
                            .enumerate()
                            .max_by(|a, b| (a.1 .0, a.1 .1).cmp(&(b.1 .0, b.1 .1)))
                            .map(|(i, _)| i)
                            .unwrap();
                        heap[w] = (d, self.points[i], self.order[i]);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let q = query[*axis] as i64;
                let plane = *value as i64;
                let (near, far) = if q < plane {
                    (left, right)
                } else {
                    (right, left)
                };
                self.knn_rec(near, query, k, heap);
                let gap = q - plane;
                if heap.len() < k || gap * gap <= worst(heap) {
                    self.knn_rec(far, query, k, heap);
                }
            }
        }
    }
}

/// Brute-force nearest with the same tie rule; the oracle used in tests.
pub fn brute_force_nearest(points: &[[u32; 3]], query: &[u32; 3]) -> (i64, [u32; 3], usize) {
    let mut best = (i64::MAX, [u32::MAX; 3], usize::MAX);
    for (i, p) in points.iter().enumerate() {
        let d = dist2(p, query);
        if d < best.0 || (d == best.0 && *p < best.1) {
            best = (d, *p, i);
        }
    }
    best
}
