//! Labeled branching processes: every particle carries a vertex label of its
//! type, drawn without replacement from the type's label pool, and a particle
//! whose label already died is thinned.
//!
//! Two modes are provided. [`LabeledFlow`] runs free, sampling binomial
//! offspring and labels itself; thinned particles stay in the process with a
//! flag that their descendants inherit, so the alive and split counts are
//! those of the full labeled process. [`run_graph_driven`] instead reads a
//! realized graph: children are the neighbors and lifetimes the edge weights,
//! and thinned particles are dropped the moment they would split.

use std::collections::BinaryHeap;

use rand::Rng;
use thiserror::Error;

use crate::ctbp::CountLaw;
use crate::fpp::{sssp_tree, Label, NO_PARENT};
use crate::graphgen::{sample_graph, sample_vertices, TypedVertexSet, WeightedGraph};
use crate::kernel::FiniteKernel;
use crate::rng::{exp_draw, rng_from_seed, uniform_index};

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("label {0} out of range")]
    BadLabel(u32),
    #[error("root label {0} is forbidden")]
    ForbiddenRoot(u32),
    #[error("vertex set has {vs} types but the kernel has {kernel}")]
    TypeMismatch { vs: usize, kernel: usize },
    #[error("tree is at split {current}, not {requested}")]
    NotCurrent { requested: usize, current: usize },
    #[error(transparent)]
    Graph(#[from] crate::graphgen::GraphError),
}

/// Per-type label universes with an active region that excludes forbidden
/// labels. Draws are partial Fisher–Yates shuffles of the active region.
#[derive(Debug, Clone)]
pub struct LabelPool {
    label_type: Vec<u32>,
    arrangement: Vec<Vec<u32>>,
    position: Vec<u32>,
    active: Vec<usize>,
}

impl LabelPool {
    pub fn new(vs: &TypedVertexSet) -> Self {
        let arrangement = vs.by_type();
        let mut position = vec![0u32; vs.n];
        for group in &arrangement {
            for (i, v) in group.iter().enumerate() {
                position[*v as usize] = i as u32;
            }
        }
        let active = arrangement.iter().map(Vec::len).collect();
        Self {
            label_type: vs.types.clone(),
            arrangement,
            position,
            active,
        }
    }

    pub fn n(&self) -> usize {
        self.label_type.len()
    }

    pub fn r(&self) -> usize {
        self.arrangement.len()
    }

    pub fn type_of(&self, label: u32) -> u32 {
        self.label_type[label as usize]
    }

    pub fn is_active(&self, label: u32) -> bool {
        let t = self.type_of(label) as usize;
        (self.position[label as usize] as usize) < self.active[t]
    }

    pub fn active_len(&self, t: usize) -> usize {
        self.active[t]
    }

    /// Labels of type `t` in the universe, active or not.
    pub fn universe(&self, t: usize) -> &[u32] {
        &self.arrangement[t]
    }

    fn swap(&mut self, t: usize, i: usize, j: usize) {
        if i == j {
            return;
        }
        let arr = &mut self.arrangement[t];
        arr.swap(i, j);
        self.position[arr[i] as usize] = i as u32;
        self.position[arr[j] as usize] = j as u32;
    }

    /// Removes `label` from the active region.
    pub fn forbid(&mut self, label: u32) {
        if !self.is_active(label) {
            return;
        }
        let t = self.type_of(label) as usize;
        let last = self.active[t] - 1;
        self.swap(t, self.position[label as usize] as usize, last);
        self.active[t] = last;
    }

    /// Number of labels of type `t` available to children of `parent`.
    pub fn trials(&self, t: usize, parent: u32) -> usize {
        let own = self.type_of(parent) as usize == t && self.is_active(parent);
        self.active[t] - usize::from(own)
    }

    /// `k` distinct uniform labels of type `t`, excluding `parent`.
    pub fn draw<R: Rng + ?Sized>(&mut self, t: usize, parent: u32, k: usize, rng: &mut R, out: &mut Vec<u32>) {
        let mut len = self.active[t];
        if self.type_of(parent) as usize == t && self.is_active(parent) {
            self.swap(t, self.position[parent as usize] as usize, len - 1);
            len -= 1;
        }
        assert!(k <= len, "cannot draw {k} labels from {len}");
        for i in 0..k {
            let j = i + uniform_index(rng, len - i);
            self.swap(t, i, j);
            out.push(self.arrangement[t][i]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledParticle {
    pub label: u32,
    pub ty: u32,
    pub generation: u32,
    /// Set on descendants of a thinned split.
    pub thinned: bool,
}

/// What happened at one split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitEvent {
    pub split: usize,
    pub tau: f64,
    pub particle: LabeledParticle,
    /// The label had died before, or an ancestor was thinned.
    pub thinned: bool,
}

/// Shortest-weight-tree state of a free-running labeled process.
#[derive(Debug, Clone)]
pub struct LabeledFlow {
    pool: LabelPool,
    prob: Vec<Vec<f64>>,
    pub alive: Vec<LabeledParticle>,
    /// `D(k)` with multiplicity, in order of death.
    pub dead_labels: Vec<u32>,
    dead: Vec<bool>,
    distinct_dead: usize,
    allowed: usize,
    /// `tau_0 = 0, ..., tau_k`.
    pub split_times: Vec<f64>,
    pub alive_by_type: Vec<u64>,
    pub thinned_alive_by_type: Vec<u64>,
    alive_multiplicity: Vec<u32>,
    pub distinct_alive_by_type: Vec<u64>,
    pub extinct: bool,
    pub exhausted: bool,
    children: Vec<u32>,
}

impl LabeledFlow {
    /// Starts a flow whose root `root_label` dies at time 0 (split 0).
    /// `forbidden` labels never appear as children.
    pub fn start<R: Rng + ?Sized>(
        kernel: &FiniteKernel,
        vs: &TypedVertexSet,
        root_label: u32,
        forbidden: &[u32],
        rng: &mut R,
    ) -> Result<Self, LabelError> {
        if vs.r() != kernel.r {
            return Err(LabelError::TypeMismatch {
                vs: vs.r(),
                kernel: kernel.r,
            });
        }
        let n = vs.n;
        for l in forbidden.iter().chain(std::iter::once(&root_label)) {
            if *l as usize >= n {
                return Err(LabelError::BadLabel(*l));
            }
        }
        let mut pool = LabelPool::new(vs);
        for l in forbidden {
            pool.forbid(*l);
        }
        if !pool.is_active(root_label) {
            return Err(LabelError::ForbiddenRoot(root_label));
        }
        let prob = (0..kernel.r)
            .map(|s| {
                (0..kernel.r)
                    .map(|t| (kernel.kappa[s][t] / n as f64).min(1.0))
                    .collect()
            })
            .collect();
        let allowed = (0..kernel.r).map(|t| pool.active_len(t)).sum();
        let r = kernel.r;
        let mut flow = Self {
            pool,
            prob,
            alive: Vec::new(),
            dead_labels: Vec::new(),
            dead: vec![false; n],
            distinct_dead: 0,
            allowed,
            split_times: vec![0.0],
            alive_by_type: vec![0; r],
            thinned_alive_by_type: vec![0; r],
            alive_multiplicity: vec![0; n],
            distinct_alive_by_type: vec![0; r],
            extinct: false,
            exhausted: false,
            children: Vec::new(),
        };
        let root = LabeledParticle {
            label: root_label,
            ty: vs.types[root_label as usize],
            generation: 0,
            thinned: false,
        };
        flow.split_particle(root, rng);
        if flow.alive.is_empty() {
            flow.extinct = true;
        }
        Ok(flow)
    }

    pub fn k(&self) -> usize {
        self.split_times.len() - 1
    }

    pub fn tau(&self) -> f64 {
        *self.split_times.last().unwrap_or(&0.0)
    }

    pub fn is_dead(&self, label: u32) -> bool {
        self.dead[label as usize]
    }

    pub fn alive_count(&self) -> usize {
        self.alive.len()
    }

    pub fn finished(&self) -> bool {
        self.extinct || self.exhausted
    }

    fn add_alive(&mut self, p: LabeledParticle) {
        let t = p.ty as usize;
        self.alive_by_type[t] += 1;
        if p.thinned {
            self.thinned_alive_by_type[t] += 1;
        }
        let m = &mut self.alive_multiplicity[p.label as usize];
        if *m == 0 {
            self.distinct_alive_by_type[t] += 1;
        }
        *m += 1;
        self.alive.push(p);
    }

    fn remove_alive(&mut self, idx: usize) -> LabeledParticle {
        let p = self.alive.swap_remove(idx);
        let t = p.ty as usize;
        self.alive_by_type[t] -= 1;
        if p.thinned {
            self.thinned_alive_by_type[t] -= 1;
        }
        let m = &mut self.alive_multiplicity[p.label as usize];
        *m -= 1;
        if *m == 0 {
            self.distinct_alive_by_type[t] -= 1;
        }
        p
    }

    /// Records the death of `p` and draws its children. Returns whether `p`
    /// was thinned.
    fn split_particle<R: Rng + ?Sized>(&mut self, p: LabeledParticle, rng: &mut R) -> bool {
        let thinned = p.thinned || self.dead[p.label as usize];
        self.dead_labels.push(p.label);
        if !self.dead[p.label as usize] {
            self.dead[p.label as usize] = true;
            self.distinct_dead += 1;
        }
        let s = p.ty as usize;
        let mut children = std::mem::take(&mut self.children);
        for t in 0..self.prob.len() {
            let trials = self.pool.trials(t, p.label);
            let law = CountLaw::Binomial {
                trials: trials as u64,
                p: self.prob[s][t],
            };
            let k = law.quantile(rng.gen()) as usize;
            children.clear();
            self.pool.draw(t, p.label, k, rng, &mut children);
            for &label in &children {
                self.add_alive(LabeledParticle {
                    label,
                    ty: t as u32,
                    generation: p.generation + 1,
                    thinned,
                });
            }
        }
        self.children = children;
        if self.distinct_dead >= self.allowed {
            self.exhausted = true;
        }
        thinned
    }

    /// Next split: Exp(S) waiting time, uniform particle.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<SplitEvent> {
        if self.exhausted {
            return None;
        }
        let s = self.alive.len();
        if s == 0 {
            self.extinct = true;
            return None;
        }
        let tau = self.tau() + exp_draw(rng, s as f64);
        let idx = uniform_index(rng, s);
        let p = self.remove_alive(idx);
        let thinned = self.split_particle(p, rng);
        self.split_times.push(tau);
        if self.alive.is_empty() {
            self.extinct = true;
        }
        Some(SplitEvent {
            split: self.k(),
            tau,
            particle: p,
            thinned,
        })
    }

    /// `thA^t(k) / A^t(k)` at the current split; `None` without type-`t`
    /// alive particles.
    pub fn thinned_alive_fraction(&self, k: usize, t: usize) -> Result<Option<f64>, LabelError> {
        self.require_current(k)?;
        let a = self.alive_by_type[t];
        Ok((a > 0).then(|| self.thinned_alive_by_type[t] as f64 / a as f64))
    }

    /// `(|A^t(k)|, S_k^t)`: distinct alive labels and alive particles of type
    /// `t` at the current split.
    pub fn multiple_label_count(&self, k: usize, t: usize) -> Result<(u64, u64), LabelError> {
        self.require_current(k)?;
        Ok((self.distinct_alive_by_type[t], self.alive_by_type[t]))
    }

    fn require_current(&self, k: usize) -> Result<(), LabelError> {
        if k == self.k() {
            Ok(())
        } else {
            Err(LabelError::NotCurrent {
                requested: k,
                current: self.k(),
            })
        }
    }

    pub fn pool(&self) -> &LabelPool {
        &self.pool
    }
}

/// Free-running labeled process from `root_label` for up to `m_max` splits.
pub fn run_labeled_bp(
    kernel: &FiniteKernel,
    vs: &TypedVertexSet,
    root_label: u32,
    m_max: usize,
    seed: u64,
    forbidden: &[u32],
) -> Result<LabeledFlow, LabelError> {
    let mut rng = rng_from_seed(seed);
    let mut flow = LabeledFlow::start(kernel, vs, root_label, forbidden, &mut rng)?;
    while flow.k() < m_max && flow.step(&mut rng).is_some() {}
    Ok(flow)
}

/// Thinned process read off a realized graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphFlow {
    pub root: u32,
    /// Split time of each label's first death; infinite if never reached.
    pub time: Vec<f64>,
    pub generation: Vec<u32>,
    pub parent: Vec<u32>,
    /// Labels in split order, root first.
    pub order: Vec<u32>,
    /// Particles dropped because their label had already died.
    pub thinned: usize,
}

impl GraphFlow {
    /// `tau_0, tau_1, ...`
    pub fn split_times(&self) -> Vec<f64> {
        self.order.iter().map(|v| self.time[*v as usize]).collect()
    }
}

/// Runs the thinned labeled process whose offspring are the neighbors in `g`
/// and whose lifetimes are the edge weights. Particles wait in a queue keyed by
/// `(death time, generation, parent label, label)`.
pub fn run_graph_driven(g: &WeightedGraph, root: u32, k_max: Option<usize>) -> Result<GraphFlow, LabelError> {
    let n = g.n();
    if root as usize >= n {
        return Err(LabelError::BadLabel(root));
    }
    let mut time = vec![f64::INFINITY; n];
    let mut generation = vec![u32::MAX; n];
    let mut parent = vec![NO_PARENT; n];
    let mut order = Vec::new();
    let mut thinned = 0;
    let mut queue = BinaryHeap::new();
    queue.push(Label {
        dist: 0.0,
        hops: 0,
        parent: NO_PARENT,
        vertex: root,
    });
    while let Some(p) = queue.pop() {
        let v = p.vertex as usize;
        if time[v].is_finite() {
            thinned += 1;
            continue;
        }
        if k_max.is_some_and(|k| order.len() > k) {
            break;
        }
        time[v] = p.dist;
        generation[v] = p.hops;
        parent[v] = p.parent;
        order.push(p.vertex);
        for &(u, w) in g.neighbors(p.vertex) {
            if time[u as usize].is_finite() {
                // born onto a dead label: thinned at birth
                thinned += 1;
                continue;
            }
            queue.push(Label {
                dist: p.dist + w,
                hops: p.hops + 1,
                parent: p.vertex,
                vertex: u,
            });
        }
    }
    Ok(GraphFlow {
        root,
        time,
        generation,
        parent,
        order,
        thinned,
    })
}

/// Vertex where the two explorations disagree.
#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub vertex: u32,
    pub dijkstra: (f64, u32),
    pub flow: (f64, u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingReport {
    pub n: usize,
    pub source: u32,
    pub reached: usize,
    pub mismatches: Vec<Mismatch>,
    /// Sorted wetting times equal the split times.
    pub wetting_times_match: bool,
}

impl EmbeddingReport {
    pub fn exact(&self) -> bool {
        self.mismatches.is_empty() && self.wetting_times_match
    }
}

/// Compares Dijkstra on `g` from `x` with the graph-driven thinned process.
pub fn compare_on_graph(g: &WeightedGraph, x: u32) -> Result<EmbeddingReport, LabelError> {
    let tree = sssp_tree(g, x).map_err(|_| LabelError::BadLabel(x))?;
    let flow = run_graph_driven(g, x, None)?;
    let mut mismatches = Vec::new();
    for v in 0..g.n() {
        let d = (tree.dist[v], tree.hops[v]);
        let f = (flow.time[v], flow.generation[v]);
        if d != f {
            mismatches.push(Mismatch {
                vertex: v as u32,
                dijkstra: d,
                flow: f,
            });
        }
    }
    let mut wet: Vec<f64> = tree.dist.iter().copied().filter(|d| d.is_finite()).collect();
    wet.sort_by(f64::total_cmp);
    Ok(EmbeddingReport {
        n: g.n(),
        source: x,
        reached: flow.order.len(),
        mismatches,
        wetting_times_match: wet == flow.split_times(),
    })
}

/// One shared realization: a graph, a uniform source, both explorations.
pub fn embedding_equivalence(kernel: &FiniteKernel, n: usize, seed: u64) -> Result<EmbeddingReport, LabelError> {
    let vs = sample_vertices(kernel, n, crate::rng::derive_seed(seed, "embedding/vertices", 0))?;
    let g = sample_graph(kernel, &vs, crate::rng::derive_seed(seed, "embedding/graph", 0))?;
    let mut rng = rng_from_seed(crate::rng::derive_seed(seed, "embedding/source", 0));
    let x = uniform_index(&mut rng, n) as u32;
    compare_on_graph(&g, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphgen::TypedVertexSet;

    fn er(c: f64) -> FiniteKernel {
        FiniteKernel::erdos_renyi(c).unwrap()
    }

    #[test]
    fn single_vertex_exhausts_immediately() {
        let vs = TypedVertexSet::from_types(vec![0], 1);
        let flow = run_labeled_bp(&er(2.0), &vs, 0, 10, 1, &[]).unwrap();
        assert!(flow.exhausted);
        assert_eq!(flow.k(), 0);
        assert!(flow.alive.is_empty());
    }

    #[test]
    fn pool_draws_are_distinct_and_exclude_parent() {
        let vs = TypedVertexSet::from_types(vec![0, 1, 0, 1, 0, 0], 2);
        let mut pool = LabelPool::new(&vs);
        pool.forbid(4);
        assert_eq!(pool.trials(0, 0), 2);
        assert_eq!(pool.trials(1, 0), 2);
        let mut rng = rng_from_seed(3);
        for _ in 0..100 {
            let mut out = Vec::new();
            pool.draw(0, 0, 2, &mut rng, &mut out);
            out.sort_unstable();
            assert_eq!(out, vec![2, 5]);
        }
    }

    #[test]
    fn repeated_label_is_thinned() {
        // complete graph on 3 vertices: after the root splits, every child set
        // contains a dead label
        let vs = TypedVertexSet::from_types(vec![0; 3], 1);
        let k = er(1e9);
        let mut rng = rng_from_seed(5);
        let mut flow = LabeledFlow::start(&k, &vs, 0, &[], &mut rng).unwrap();
        let mut events = Vec::new();
        while let Some(ev) = flow.step(&mut rng) {
            events.push(ev);
        }
        assert!(flow.exhausted);
        let mut seen = vec![0];
        let mut repeats = 0;
        for e in &events {
            if seen.contains(&e.particle.label) {
                assert!(e.thinned);
                repeats += 1;
            }
            seen.push(e.particle.label);
        }
        assert_eq!(repeats, events.len() - 2);
        let mut labels = flow.dead_labels.clone();
        labels.sort_unstable();
        labels.dedup();
        assert_eq!(labels, vec![0, 1, 2]);
        assert!(flow.alive.iter().all(|p| flow.is_dead(p.label)));
    }

    #[test]
    fn thinning_flags_follow_dead_labels() {
        let k = er(3.0);
        let vs = TypedVertexSet::from_types(vec![0; 30], 1);
        let mut rng = rng_from_seed(8);
        let mut flow = LabeledFlow::start(&k, &vs, 0, &[], &mut rng).unwrap();
        let mut seen = [false; 30];
        seen[0] = true;
        while let Some(ev) = flow.step(&mut rng) {
            let was_dead = seen[ev.particle.label as usize];
            assert_eq!(ev.thinned, ev.particle.thinned || was_dead);
            seen[ev.particle.label as usize] = true;
            if flow.k() > 200 {
                break;
            }
        }
    }

    #[test]
    fn forbidden_labels_never_appear() {
        let k = er(2.0);
        let vs = TypedVertexSet::from_types(vec![0; 200], 1);
        let forbidden: Vec<u32> = (0..50).collect();
        let flow = run_labeled_bp(&k, &vs, 100, 150, 4, &forbidden).unwrap();
        assert!(flow.dead_labels.iter().all(|l| *l >= 50));
        assert!(flow.alive.iter().all(|p| p.label >= 50));
        assert_eq!(
            run_labeled_bp(&k, &vs, 3, 10, 4, &forbidden).unwrap_err(),
            LabelError::ForbiddenRoot(3)
        );
    }

    #[test]
    fn first_split_has_no_thinning() {
        let k = er(2.0);
        let vs = TypedVertexSet::from_types(vec![0; 1000], 1);
        for seed in 0..20 {
            let flow = run_labeled_bp(&k, &vs, 0, 1, seed, &[]).unwrap();
            if flow.k() == 1 {
                assert_eq!(flow.thinned_alive_fraction(1, 0).unwrap().unwrap_or(0.0), 0.0);
                let (distinct, total) = flow.multiple_label_count(1, 0).unwrap();
                assert!(distinct <= total);
            }
        }
    }

    #[test]
    fn two_vertex_embedding() {
        let vs = TypedVertexSet::from_types(vec![0, 0], 1);
        let g = WeightedGraph::from_edges(vs, vec![(0, 1, 0.7)]);
        let flow = run_graph_driven(&g, 0, None).unwrap();
        assert_eq!((flow.time[1], flow.generation[1]), (0.7, 1));
        assert!(compare_on_graph(&g, 0).unwrap().exact());
    }

    #[test]
    fn embedding_on_small_graphs() {
        for seed in 0..30 {
            let report = embedding_equivalence(&er(2.0), 50, seed).unwrap();
            assert!(report.exact(), "{report:?}");
        }
    }
}
