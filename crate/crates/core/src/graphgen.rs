//! Realizations of `G(n, kappa)`: typed vertices, Bernoulli edges with
//! probability `min(kappa/n, 1)` and i.i.d. Exp(1) edge weights.

use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::kernel::{FiniteKernel, TorusStepKernel};
use crate::rng::{exp_draw, open_unit, rng_from_seed, uniform_index, SimRng};

/// Above this many vertices pairs are sampled by geometric skipping.
pub const DENSE_LOOP_MAX_N: usize = 2_000;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("need at least 2 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("vertex set has {vs} types but the kernel has {kernel}")]
    TypeMismatch { vs: usize, kernel: usize },
    #[error("no component has two or more vertices")]
    NoConnectedPair,
    #[error("vertex {0} out of range")]
    BadVertex(u32),
}

/// Vertex types and per-type counts.
#[derive(Debug, Clone, PartialEq)]
pub struct TypedVertexSet {
    pub n: usize,
    pub types: Vec<u32>,
    pub counts: Vec<usize>,
}

impl TypedVertexSet {
    pub fn from_types(types: Vec<u32>, r: usize) -> Self {
        let mut counts = vec![0; r];
        for t in &types {
            counts[*t as usize] += 1;
        }
        Self {
            n: types.len(),
            types,
            counts,
        }
    }

    pub fn r(&self) -> usize {
        self.counts.len()
    }

    /// Vertices of each type, in increasing order.
    pub fn by_type(&self) -> Vec<Vec<u32>> {
        let mut out: Vec<Vec<u32>> = self.counts.iter().map(|c| Vec::with_capacity(*c)).collect();
        for (v, t) in self.types.iter().enumerate() {
            out[*t as usize].push(v as u32);
        }
        out
    }
}

/// Largest-remainder rounding of `n * mu`; ties go to the lower type index.
pub fn proportional_counts(mu: &[f64], n: usize) -> Vec<usize> {
    let quotas: Vec<f64> = mu.iter().map(|m| m * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..mu.len()).collect();
    order.sort_by(|a, b| {
        let ra = quotas[*a] - counts[*a] as f64;
        let rb = quotas[*b] - counts[*b] as f64;
        rb.total_cmp(&ra).then(a.cmp(b))
    });
    for t in order.into_iter().take(n.saturating_sub(assigned)) {
        counts[t] += 1;
    }
    counts
}

/// Deterministic proportional allocation followed by a seeded shuffle.
pub fn sample_vertices(kernel: &FiniteKernel, n: usize, seed: u64) -> Result<TypedVertexSet, GraphError> {
    if n < 2 {
        return Err(GraphError::TooFewVertices(n));
    }
    let counts = proportional_counts(&kernel.mu, n);
    let mut types: Vec<u32> = counts
        .iter()
        .enumerate()
        .flat_map(|(t, c)| std::iter::repeat_n(t as u32, *c))
        .collect();
    types.shuffle(&mut rng_from_seed(seed));
    Ok(TypedVertexSet::from_types(types, kernel.r))
}

/// Types drawn i.i.d. from `mu`.
pub fn sample_vertices_iid(kernel: &FiniteKernel, n: usize, seed: u64) -> Result<TypedVertexSet, GraphError> {
    if n < 2 {
        return Err(GraphError::TooFewVertices(n));
    }
    let mut rng = rng_from_seed(seed);
    let types = (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (t, m) in kernel.mu.iter().enumerate() {
                acc += m;
                if u < acc {
                    return t as u32;
                }
            }
            (kernel.r - 1) as u32
        })
        .collect();
    Ok(TypedVertexSet::from_types(types, kernel.r))
}

/// Vertex `i` sits at `(i + 1/2)/n` and has the type of its cell.
pub fn torus_vertices(torus: &TorusStepKernel, n: usize) -> Result<TypedVertexSet, GraphError> {
    if n < 2 {
        return Err(GraphError::TooFewVertices(n));
    }
    let types = (0..n).map(|i| torus.cell_of(torus_position(i, n)) as u32).collect();
    Ok(TypedVertexSet::from_types(types, torus.m_parts))
}

pub fn torus_position(i: usize, n: usize) -> f64 {
    (i as f64 + 0.5) / n as f64
}

/// Undirected graph with positive edge weights, stored as an edge list and a
/// compressed adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    pub vertices: TypedVertexSet,
    /// `(u, v, weight)` with `u < v`, sorted.
    pub edges: Vec<(u32, u32, f64)>,
    offsets: Vec<usize>,
    adjacency: Vec<(u32, f64)>,
}

impl WeightedGraph {
    /// Builds the graph; edges are normalized to `u < v` and sorted.
    /// Panics on self-loops, duplicates or non-positive weights.
    pub fn from_edges(vertices: TypedVertexSet, mut edges: Vec<(u32, u32, f64)>) -> Self {
        let n = vertices.n;
        for e in edges.iter_mut() {
            assert!(e.0 != e.1, "self-loop at {}", e.0);
            assert!(e.2 > 0.0, "non-positive weight {}", e.2);
            assert!((e.0 as usize) < n && (e.1 as usize) < n, "edge out of range");
            if e.0 > e.1 {
                std::mem::swap(&mut e.0, &mut e.1);
            }
        }
        edges.sort_by_key(|a| (a.0, a.1));
        assert!(
            edges.windows(2).all(|w| (w[0].0, w[0].1) != (w[1].0, w[1].1)),
            "duplicate edge"
        );
        let mut degree = vec![0usize; n + 1];
        for (u, v, _) in &edges {
            degree[*u as usize + 1] += 1;
            degree[*v as usize + 1] += 1;
        }
        for i in 0..n {
            degree[i + 1] += degree[i];
        }
        let offsets = degree;
        let mut fill = offsets.clone();
        let mut adjacency = vec![(0u32, 0.0f64); 2 * edges.len()];
        for (u, v, w) in &edges {
            adjacency[fill[*u as usize]] = (*v, *w);
            fill[*u as usize] += 1;
            adjacency[fill[*v as usize]] = (*u, *w);
            fill[*v as usize] += 1;
        }
        for i in 0..n {
            adjacency[offsets[i]..offsets[i + 1]].sort_by_key(|a| a.0);
        }
        Self {
            vertices,
            edges,
            offsets,
            adjacency,
        }
    }

    pub fn n(&self) -> usize {
        self.vertices.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Neighbors of `v` with edge weights, sorted by neighbor index.
    pub fn neighbors(&self, v: u32) -> &[(u32, f64)] {
        let v = v as usize;
        &self.adjacency[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn type_of(&self, v: u32) -> u32 {
        self.vertices.types[v as usize]
    }

    /// Text dump: `# n r seed` header, then one `u v weight` line per edge.
    pub fn write_dump<W: Write>(&self, seed: u64, mut out: W) -> io::Result<()> {
        writeln!(out, "# {} {} {}", self.n(), self.vertices.r(), seed)?;
        for (u, v, w) in &self.edges {
            writeln!(out, "{u} {v} {w}")?;
        }
        Ok(())
    }
}

fn edge_probability(kappa: f64, n: usize) -> f64 {
    (kappa / n as f64).min(1.0)
}

/// Independent edges with probability `min(kappa(t_i, t_j)/n, 1)` and Exp(1)
/// weights.
pub fn sample_graph(kernel: &FiniteKernel, vs: &TypedVertexSet, seed: u64) -> Result<WeightedGraph, GraphError> {
    if vs.r() != kernel.r {
        return Err(GraphError::TypeMismatch {
            vs: vs.r(),
            kernel: kernel.r,
        });
    }
    let mut rng = rng_from_seed(seed);
    let edges = if vs.n <= DENSE_LOOP_MAX_N {
        dense_edges(kernel, vs, &mut rng)
    } else {
        skipping_edges(kernel, vs, &mut rng)
    };
    Ok(WeightedGraph::from_edges(vs.clone(), edges))
}

fn dense_edges(kernel: &FiniteKernel, vs: &TypedVertexSet, rng: &mut SimRng) -> Vec<(u32, u32, f64)> {
    let n = vs.n;
    let mut edges = Vec::new();
    for i in 0..n {
        let ti = vs.types[i] as usize;
        for j in i + 1..n {
            let p = edge_probability(kernel.kappa[ti][vs.types[j] as usize], n);
            if rng.gen::<f64>() < p {
                edges.push((i as u32, j as u32, exp_draw(rng, 1.0)));
            }
        }
    }
    edges
}

/// Number of failures before the next success of a Bernoulli(p) sequence.
fn geometric_gap(rng: &mut SimRng, log_q: f64) -> u64 {
    let g = (open_unit(rng).ln() / log_q).floor();
    if g >= u64::MAX as f64 {
        u64::MAX
    } else {
        g as u64
    }
}

fn skipping_edges(kernel: &FiniteKernel, vs: &TypedVertexSet, rng: &mut SimRng) -> Vec<(u32, u32, f64)> {
    let n = vs.n;
    let groups = vs.by_type();
    let mut edges = Vec::new();
    for s in 0..kernel.r {
        for t in s..kernel.r {
            let p = edge_probability(kernel.kappa[s][t], n);
            if p <= 0.0 {
                continue;
            }
            let (gs, gt) = (&groups[s], &groups[t]);
            let total: u64 = if s == t {
                let k = gs.len() as u64;
                k * k.saturating_sub(1) / 2
            } else {
                gs.len() as u64 * gt.len() as u64
            };
            let log_q = (-p).ln_1p();
            let mut idx: u64 = 0;
            loop {
                if p < 1.0 {
                    let gap = geometric_gap(rng, log_q);
                    idx = idx.saturating_add(gap);
                }
                if idx >= total {
                    break;
                }
                let (a, b) = if s == t {
                    triangular_pair(idx, gs.len() as u64)
                } else {
                    (idx / gt.len() as u64, idx % gt.len() as u64)
                };
                let (u, v) = if s == t {
                    (gs[a as usize], gs[b as usize])
                } else {
                    (gs[a as usize], gt[b as usize])
                };
                edges.push((u, v, exp_draw(rng, 1.0)));
                idx += 1;
            }
        }
    }
    edges
}

/// Maps `idx` in `0..k(k-1)/2` to the pair `(a, b)`, `a < b`, in row order
/// `(0,1), (0,2), ..., (0,k-1), (1,2), ...`.
fn triangular_pair(idx: u64, k: u64) -> (u64, u64) {
    // row a starts at a*k - a(a+1)/2
    let start = |a: u64| a * k - a * (a + 1) / 2;
    let kf = k as f64;
    let disc = (2.0 * kf - 1.0).powi(2) - 8.0 * idx as f64;
    let mut a = ((2.0 * kf - 1.0 - disc.max(0.0).sqrt()) / 2.0).floor() as u64;
    a = a.min(k.saturating_sub(2));
    while a > 0 && start(a) > idx {
        a -= 1;
    }
    while a + 1 < k - 1 && start(a + 1) <= idx {
        a += 1;
    }
    let b = a + 1 + (idx - start(a));
    (a, b)
}

/// Pair `(G(n, kappa), G(n, kappa_bar_m))` on the same torus positions, driven
/// by one shared uniform per vertex pair; each common edge shares its weight.
#[derive(Debug, Clone)]
pub struct CoupledTorusGraphs {
    pub exact: WeightedGraph,
    pub step: WeightedGraph,
    /// Pairs present in exactly one of the two graphs.
    pub mismatches: usize,
}

pub fn sample_coupled_torus_graphs(
    torus: &TorusStepKernel,
    n: usize,
    seed: u64,
) -> Result<CoupledTorusGraphs, GraphError> {
    let vs = torus_vertices(torus, n)?;
    let mut rng = rng_from_seed(seed);
    let positions: Vec<f64> = (0..n).map(|i| torus_position(i, n)).collect();
    let cells: Vec<usize> = positions.iter().map(|x| torus.cell_of(*x)).collect();
    let (mut exact, mut step) = (Vec::new(), Vec::new());
    let mut mismatches = 0;
    for i in 0..n {
        for j in i + 1..n {
            let u: f64 = rng.gen();
            let pe = edge_probability(torus.exact(positions[i], positions[j]), n);
            let ps = edge_probability(torus.averaged[cells[i]][cells[j]], n);
            let (in_e, in_s) = (u < pe, u < ps);
            if !(in_e || in_s) {
                continue;
            }
            let w = exp_draw(&mut rng, 1.0);
            if in_e {
                exact.push((i as u32, j as u32, w));
            }
            if in_s {
                step.push((i as u32, j as u32, w));
            }
            if in_e != in_s {
                mismatches += 1;
            }
        }
    }
    Ok(CoupledTorusGraphs {
        exact: WeightedGraph::from_edges(vs.clone(), exact),
        step: WeightedGraph::from_edges(vs, step),
        mismatches,
    })
}

/// Union-find over the vertex set.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut v: u32) -> u32 {
        while self.parent[v as usize] != v {
            let p = self.parent[v as usize];
            self.parent[v as usize] = self.parent[p as usize];
            v = p;
        }
        v
    }

    pub fn union(&mut self, a: u32, b: u32) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra as usize] < self.size[rb as usize] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb as usize] = ra;
        self.size[ra as usize] += self.size[rb as usize];
    }
}

/// Component labels `0..count`, numbered by smallest member.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    pub labels: Vec<u32>,
    pub sizes: Vec<usize>,
    pub giant: u32,
}

impl Components {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn giant_size(&self) -> usize {
        self.sizes[self.giant as usize]
    }

    pub fn same(&self, a: u32, b: u32) -> bool {
        self.labels[a as usize] == self.labels[b as usize]
    }
}

pub fn components(g: &WeightedGraph) -> Components {
    let n = g.n();
    let mut uf = UnionFind::new(n);
    for (u, v, _) in &g.edges {
        uf.union(*u, *v);
    }
    let mut root_label = vec![u32::MAX; n];
    let mut labels = vec![0u32; n];
    let mut sizes = Vec::new();
    for v in 0..n as u32 {
        let r = uf.find(v) as usize;
        if root_label[r] == u32::MAX {
            root_label[r] = sizes.len() as u32;
            sizes.push(0);
        }
        labels[v as usize] = root_label[r];
        sizes[root_label[r] as usize] += 1;
    }
    let giant = sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map_or(0, |(i, _)| i as u32);
    Components { labels, sizes, giant }
}

/// A uniformly chosen ordered pair of distinct connected vertices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnectedPair {
    pub x: u32,
    pub y: u32,
    /// Proposals drawn, including the accepted one.
    pub attempts: u64,
}

pub fn sample_connected_pair(g: &WeightedGraph, seed: u64) -> Result<ConnectedPair, GraphError> {
    let comps = components(g);
    sample_connected_pair_with(&comps, &mut rng_from_seed(seed))
}

/// Rejection sampling of uniform distinct pairs until both ends share a
/// component.
pub fn sample_connected_pair_with<R: Rng + ?Sized>(
    comps: &Components,
    rng: &mut R,
) -> Result<ConnectedPair, GraphError> {
    let n = comps.labels.len();
    if n < 2 || comps.sizes.iter().all(|s| *s < 2) {
        return Err(GraphError::NoConnectedPair);
    }
    let mut attempts = 0;
    loop {
        attempts += 1;
        let x = uniform_index(rng, n);
        let mut y = uniform_index(rng, n - 1);
        if y >= x {
            y += 1;
        }
        if comps.same(x as u32, y as u32) {
            return Ok(ConnectedPair {
                x: x as u32,
                y: y as u32,
                attempts,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn er(c: f64) -> FiniteKernel {
        FiniteKernel::erdos_renyi(c).unwrap()
    }

    #[test]
    fn proportional_rounding() {
        assert_eq!(proportional_counts(&[0.5, 0.5], 10), vec![5, 5]);
        assert_eq!(proportional_counts(&[1.0], 7), vec![7]);
        assert_eq!(proportional_counts(&[1.0 / 3.0, 2.0 / 3.0], 100), vec![33, 67]);
        assert_eq!(proportional_counts(&[1.0 / 3.0; 3], 100), vec![34, 33, 33]);
    }

    #[test]
    fn vertices_need_two() {
        assert_eq!(sample_vertices(&er(2.0), 1, 0), Err(GraphError::TooFewVertices(1)));
    }

    #[test]
    fn iid_mode_has_all_types() {
        let k = FiniteKernel::new(vec![0.5, 0.5], vec![vec![1.0, 3.0], vec![3.0, 1.0]]).unwrap();
        let vs = sample_vertices_iid(&k, 1000, 3).unwrap();
        assert_eq!(vs.counts.iter().sum::<usize>(), 1000);
        assert!(vs.counts.iter().all(|c| *c > 400));
    }

    #[test]
    fn triangular_pairs_enumerate_in_order() {
        for k in 2..30u64 {
            let mut idx = 0;
            for a in 0..k {
                for b in a + 1..k {
                    assert_eq!(triangular_pair(idx, k), (a, b), "k={k} idx={idx}");
                    idx += 1;
                }
            }
        }
    }

    #[test]
    fn clamped_probability_gives_complete_graph() {
        let vs = sample_vertices(&er(150.0), 100, 1).unwrap();
        let g = sample_graph(&er(150.0), &vs, 2).unwrap();
        assert_eq!(g.edge_count(), 100 * 99 / 2);
    }

    #[test]
    fn skipping_with_full_probability_is_complete() {
        let n = DENSE_LOOP_MAX_N + 1;
        let k = er(1e9);
        let vs = sample_vertices(&k, n, 1).unwrap();
        let g = sample_graph(&k, &vs, 2).unwrap();
        assert_eq!(g.edge_count(), n * (n - 1) / 2);
    }

    #[test]
    fn adjacency_is_symmetric() {
        let k = er(3.0);
        let vs = sample_vertices(&k, 300, 1).unwrap();
        let g = sample_graph(&k, &vs, 9).unwrap();
        for (u, v, w) in &g.edges {
            assert!(g.neighbors(*u).contains(&(*v, *w)));
            assert!(g.neighbors(*v).contains(&(*u, *w)));
        }
        let deg: usize = (0..300).map(|v| g.neighbors(v).len()).sum();
        assert_eq!(deg, 2 * g.edge_count());
    }

    #[test]
    fn components_small_cases() {
        let vs = TypedVertexSet::from_types(vec![0; 3], 1);
        let path = WeightedGraph::from_edges(vs, vec![(0, 1, 1.0), (2, 1, 2.0)]);
        let c = components(&path);
        assert_eq!(c.count(), 1);
        assert_eq!(c.giant_size(), 3);

        let empty = WeightedGraph::from_edges(TypedVertexSet::from_types(vec![0; 5], 1), vec![]);
        let c = components(&empty);
        assert_eq!(c.sizes, vec![1; 5]);
        assert_eq!(sample_connected_pair(&empty, 0), Err(GraphError::NoConnectedPair));
    }

    #[test]
    fn connected_pair_stays_in_component() {
        let vs = TypedVertexSet::from_types(vec![0; 3], 1);
        let g = WeightedGraph::from_edges(vs, vec![(0, 1, 1.0)]);
        for seed in 0..50 {
            let p = sample_connected_pair(&g, seed).unwrap();
            assert!(matches!((p.x, p.y), (0, 1) | (1, 0)));
        }
        let k3 = WeightedGraph::from_edges(
            TypedVertexSet::from_types(vec![0; 3], 1),
            vec![(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)],
        );
        let p = sample_connected_pair(&k3, 4).unwrap();
        assert_eq!(p.attempts, 1);
        assert_ne!(p.x, p.y);
    }

    #[test]
    fn same_seed_same_graph() {
        let k = er(2.0);
        let vs = sample_vertices(&k, 3000, 5).unwrap();
        let a = sample_graph(&k, &vs, 6).unwrap();
        let b = sample_graph(&k, &vs, 6).unwrap();
        assert_eq!(a.edges, b.edges);
        let c = sample_graph(&k, &vs, 7).unwrap();
        assert_ne!(a.edges, c.edges);
    }

    #[test]
    fn dump_format() {
        let vs = TypedVertexSet::from_types(vec![0, 0], 1);
        let g = WeightedGraph::from_edges(vs, vec![(1, 0, 0.25)]);
        let mut buf = Vec::new();
        g.write_dump(42, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "# 2 1 42\n0 1 0.25\n");
    }
}
