//! Static k-d tree over a point cloud with optional per-point additive offsets.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
struct Node {
    lo: Vec<f64>,
    hi: Vec<f64>,
    start: usize,
    end: usize,
    children: Option<(usize, usize)>,
    min_offset: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct KdTree {
    dim: usize,
    coords: Vec<f64>,
    order: Vec<usize>,
    nodes: Vec<Node>,
    offsets: Vec<f64>,
}

#[derive(PartialEq)]
struct Candidate(f64, usize);

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KdTree {
    pub(crate) fn new(dim: usize, coords: Vec<f64>) -> Self {
        let n = coords.len() / dim;
        let mut tree = KdTree { dim, coords, order: (0..n).collect(), nodes: Vec::new(), offsets: vec![0.0; n] };
        if n > 0 {
            tree.build(0, n);
        }
        tree
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let dim = self.dim;
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for &i in &self.order[start..end] {
            for r in 0..dim {
                let v = self.coords[i * dim + r];
                lo[r] = lo[r].min(v);
                hi[r] = hi[r].max(v);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node { lo, hi, start, end, children: None, min_offset: 0.0 });
        if end - start > LEAF_SIZE {
            let node = &self.nodes[id];
            let axis =
                (0..dim).max_by(|&a, &b| (node.hi[a] - node.lo[a]).total_cmp(&(node.hi[b] - node.lo[b]))).unwrap_or(0);
            let mid = start + (end - start) / 2;
            let coords = &self.coords;
            self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
                coords[a * dim + axis].total_cmp(&coords[b * dim + axis])
            });
            let left = self.build(start, mid);
            let right = self.build(mid, end);
            self.nodes[id].children = Some((left, right));
        }
        id
    }

    /// Replaces the per-point offsets used by [`KdTree::k_min_offset`].
    pub(crate) fn set_offsets(&mut self, offsets: &[f64]) {
        self.offsets.copy_from_slice(offsets);
        for id in (0..self.nodes.len()).rev() {
            let m = match self.nodes[id].children {
                Some((l, r)) => self.nodes[l].min_offset.min(self.nodes[r].min_offset),
                None => {
                    let node = &self.nodes[id];
                    self.order[node.start..node.end].iter().map(|&i| self.offsets[i]).fold(f64::INFINITY, f64::min)
                }
            };
            self.nodes[id].min_offset = m;
        }
    }

    fn box_dist(&self, id: usize, q: &[f64]) -> f64 {
        let node = &self.nodes[id];
        let mut d = 0.0;
        for (r, &v) in q.iter().enumerate().take(self.dim) {
            let gap = if v < node.lo[r] {
                node.lo[r] - v
            } else if v > node.hi[r] {
                v - node.hi[r]
            } else {
                0.0
            };
            d += gap * gap;
        }
        d
    }

    /// Indices of the `k` nearest points to `q`, nearest first.
    pub(crate) fn nearest(&self, q: &[f64], k: usize) -> Vec<usize> {
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        if self.nodes.is_empty() || k == 0 {
            return Vec::new();
        }
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let bound = if heap.len() == k { heap.peek().map_or(f64::INFINITY, |c| c.0) } else { f64::INFINITY };
            if self.box_dist(id, q) > bound {
                continue;
            }
            let node = &self.nodes[id];
            match node.children {
                Some((l, r)) => {
                    let (dl, dr) = (self.box_dist(l, q), self.box_dist(r, q));
                    if dl <= dr {
                        stack.push(r);
                        stack.push(l);
                    } else {
                        stack.push(l);
                        stack.push(r);
                    }
                }
                None => {
                    for &i in &self.order[node.start..node.end] {
                        let d = sq_dist(self.point(i), q);
                        if heap.len() < k {
                            heap.push(Candidate(d, i));
                        } else if d < heap.peek().map_or(f64::INFINITY, |c| c.0) {
                            heap.pop();
                            heap.push(Candidate(d, i));
                        }
                    }
                }
            }
        }
        let mut out = heap.into_sorted_vec();
        out.truncate(k);
        out.into_iter().map(|c| c.1).collect()
    }

    /// The `k` smallest values of `|q - x_j|^2 + offset_j`, smallest first.
    pub(crate) fn k_min_offset(&self, q: &[f64], k: usize) -> Vec<(usize, f64)> {
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        if self.nodes.is_empty() || k == 0 {
            return Vec::new();
        }
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let bound = if heap.len() == k { heap.peek().map_or(f64::INFINITY, |c| c.0) } else { f64::INFINITY };
            let node = &self.nodes[id];
            if self.box_dist(id, q) + node.min_offset >= bound {
                continue;
            }
            match node.children {
                Some((l, r)) => {
                    let bl = self.box_dist(l, q) + self.nodes[l].min_offset;
                    let br = self.box_dist(r, q) + self.nodes[r].min_offset;
                    if bl <= br {
                        stack.push(r);
                        stack.push(l);
                    } else {
                        stack.push(l);
                        stack.push(r);
                    }
                }
                None => {
                    for &i in &self.order[node.start..node.end] {
                        let v = sq_dist(self.point(i), q) + self.offsets[i];
                        if heap.len() < k {
                            heap.push(Candidate(v, i));
                        } else if v < heap.peek().map_or(f64::INFINITY, |c| c.0) {
                            heap.pop();
                            heap.push(Candidate(v, i));
                        }
                    }
                }
            }
        }
        heap.into_sorted_vec().into_iter().map(|c| (c.1, c.0)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    #[test]
    fn nearest_matches_linear_scan() {
        let mut rng = substream(7, &[]);
        let pts: Vec<f64> = (0..3 * 500).map(|_| rng.random()).collect();
        let tree = KdTree::new(3, pts.clone());
        for _ in 0..30 {
            let q: Vec<f64> = (0..3).map(|_| rng.random()).collect();
            let got = tree.nearest(&q, 7);
            let mut all: Vec<(f64, usize)> = (0..500).map(|i| (sq_dist(&pts[3 * i..3 * i + 3], &q), i)).collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0));
            let want: Vec<usize> = all[..7].iter().map(|p| p.1).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn offset_query_matches_linear_scan() {
        let mut rng = substream(8, &[]);
        let pts: Vec<f64> = (0..2 * 400).map(|_| rng.random()).collect();
        let offsets: Vec<f64> = (0..400).map(|_| rng.random::<f64>() - 0.5).collect();
        let mut tree = KdTree::new(2, pts.clone());
        tree.set_offsets(&offsets);
        for _ in 0..30 {
            let q: Vec<f64> = (0..2).map(|_| rng.random()).collect();
            let (j, v) = tree.k_min_offset(&q, 1)[0];
            let (bj, bv) = (0..400)
                .map(|i| (i, sq_dist(&pts[2 * i..2 * i + 2], &q) + offsets[i]))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            assert_eq!(j, bj);
            assert_eq!(v, bv);
            let top = tree.k_min_offset(&q, 5);
            let mut all: Vec<(usize, f64)> =
                (0..400).map(|i| (i, sq_dist(&pts[2 * i..2 * i + 2], &q) + offsets[i])).collect();
            all.sort_by(|a, b| a.1.total_cmp(&b.1));
            assert_eq!(top, all[..5].to_vec());
        }
    }
}
