//! Exact shortest-weight paths on a realized graph.
//!
//! Labels are compared as `(distance, hops, parent)`, so among equal-weight
//! paths the one with fewer edges wins, then the one through the smaller
//! parent index.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use thiserror::Error;

use crate::graphgen::WeightedGraph;

pub const NO_PARENT: u32 = u32::MAX;

#[derive(Debug, Error, PartialEq)]
pub enum FppError {
    #[error("source and target coincide ({0})")]
    SameVertex(u32),
    #[error("vertex {0} out of range")]
    BadVertex(u32),
    #[error("component of {vertex} has {size} vertices, fewer than {k}")]
    ComponentTooSmall { vertex: u32, size: usize, k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Label {
    pub dist: f64,
    pub hops: u32,
    pub parent: u32,
    pub vertex: u32,
}

impl Eq for Label {}

impl Ord for Label {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then(other.hops.cmp(&self.hops))
            .then(other.parent.cmp(&self.parent))
            .then(other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Label {
    /// Strictly better as a tentative label for the same vertex.
    fn improves(&self, dist: f64, hops: u32, parent: u32) -> bool {
        match self.dist.total_cmp(&dist) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => (self.hops, self.parent) < (hops, parent),
        }
    }
}

/// `P_n`, `H_n` and the path, or infinite weight when disconnected.
#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    pub weight: f64,
    pub hops: Option<u32>,
    pub path: Vec<u32>,
}

impl PathResult {
    pub fn connected(&self) -> bool {
        self.hops.is_some()
    }
}

/// Shortest-weight tree from one source.
#[derive(Debug, Clone, PartialEq)]
pub struct SsspTree {
    pub source: u32,
    pub dist: Vec<f64>,
    pub hops: Vec<u32>,
    pub parent: Vec<u32>,
    /// Vertices in the order they were settled.
    pub order: Vec<u32>,
}

impl SsspTree {
    pub fn reachable(&self, v: u32) -> bool {
        self.dist[v as usize].is_finite()
    }

    pub fn path_to(&self, v: u32) -> Vec<u32> {
        if !self.reachable(v) {
            return Vec::new();
        }
        let mut path = vec![v];
        let mut cur = v;
        while self.parent[cur as usize] != NO_PARENT {
            cur = self.parent[cur as usize];
            path.push(cur);
        }
        path.reverse();
        path
    }
}

fn dijkstra(g: &WeightedGraph, source: u32, target: Option<u32>) -> SsspTree {
    let n = g.n();
    let mut dist = vec![f64::INFINITY; n];
    let mut hops = vec![u32::MAX; n];
    let mut parent = vec![NO_PARENT; n];
    let mut settled = vec![false; n];
    let mut order = Vec::new();
    let mut heap = BinaryHeap::new();
    dist[source as usize] = 0.0;
    hops[source as usize] = 0;
    heap.push(Label {
        dist: 0.0,
        hops: 0,
        parent: NO_PARENT,
        vertex: source,
    });
    while let Some(Label {
        dist: d,
        hops: h,
        vertex: v,
        parent: p,
    }) = heap.pop()
    {
        let vi = v as usize;
        if settled[vi] || d != dist[vi] || h != hops[vi] || p != parent[vi] {
            continue;
        }
        settled[vi] = true;
        order.push(v);
        if Some(v) == target {
            break;
        }
        for &(u, w) in g.neighbors(v) {
            let ui = u as usize;
            if settled[ui] {
                continue;
            }
            let cand = Label {
                dist: d + w,
                hops: h + 1,
                parent: v,
                vertex: u,
            };
            if cand.improves(dist[ui], hops[ui], parent[ui]) {
                dist[ui] = cand.dist;
                hops[ui] = cand.hops;
                parent[ui] = v;
                heap.push(cand);
            }
        }
    }
    // unsettled vertices keep tentative labels only under early exit
    if target.is_some() {
        for v in 0..n {
            if !settled[v] {
                dist[v] = f64::INFINITY;
                hops[v] = u32::MAX;
                parent[v] = NO_PARENT;
            }
        }
    }
    SsspTree {
        source,
        dist,
        hops,
        parent,
        order,
    }
}

fn check_vertex(g: &WeightedGraph, v: u32) -> Result<(), FppError> {
    if (v as usize) < g.n() {
        Ok(())
    } else {
        Err(FppError::BadVertex(v))
    }
}

pub fn sssp_tree(g: &WeightedGraph, x: u32) -> Result<SsspTree, FppError> {
    check_vertex(g, x)?;
    Ok(dijkstra(g, x, None))
}

pub fn shortest_weight_path(g: &WeightedGraph, x: u32, y: u32) -> Result<PathResult, FppError> {
    check_vertex(g, x)?;
    check_vertex(g, y)?;
    if x == y {
        return Err(FppError::SameVertex(x));
    }
    let tree = dijkstra(g, x, Some(y));
    Ok(if tree.reachable(y) {
        PathResult {
            weight: tree.dist[y as usize],
            hops: Some(tree.hops[y as usize]),
            path: tree.path_to(y),
        }
    } else {
        PathResult {
            weight: f64::INFINITY,
            hops: None,
            path: Vec::new(),
        }
    })
}

/// The first `k` vertices reached from `x`, with their wetting times.
pub fn flooding_order(g: &WeightedGraph, x: u32, k: usize) -> Result<Vec<(u32, f64)>, FppError> {
    let tree = sssp_tree(g, x)?;
    if tree.order.len() < k {
        return Err(FppError::ComponentTooSmall {
            vertex: x,
            size: tree.order.len(),
            k,
        });
    }
    Ok(tree.order[..k].iter().map(|v| (*v, tree.dist[*v as usize])).collect())
}

/// Unweighted graph distances from `x`; `None` when unreachable.
pub fn bfs_distances(g: &WeightedGraph, x: u32) -> Result<Vec<Option<u32>>, FppError> {
    check_vertex(g, x)?;
    let mut dist = vec![None; g.n()];
    dist[x as usize] = Some(0);
    let mut queue = VecDeque::from([x]);
    while let Some(v) = queue.pop_front() {
        let d = dist[v as usize].unwrap_or(0);
        for &(u, _) in g.neighbors(v) {
            if dist[u as usize].is_none() {
                dist[u as usize] = Some(d + 1);
                queue.push_back(u);
            }
        }
    }
    Ok(dist)
}
