//! Experiment configuration, seeded parallel replication, the experiment
//! recipes and their CSV / JSON / ECDF outputs.
//!
//! Replication `i` of an experiment draws all of its randomness from
//! `derive_seed(master, stream, i)`, and results are collected by index, so
//! rows do not depend on the number of workers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ctbp::{
    alive_dead_profile, check_summable_errors, coupled_bin_poi_run, estimate_w, generation_sample, mw_self_consistency,
    run_bp_surviving, OffspringLaw, RootStart,
};
use crate::fpp::shortest_weight_path;
use crate::graphgen::{
    components, proportional_counts, sample_connected_pair_with, sample_coupled_torus_graphs, sample_graph,
    sample_vertices, WeightedGraph,
};
use crate::kernel::{
    check_homogeneity, check_irreducibility, stationary_type_vector, survival_probability, BuiltKernel, FiniteKernel,
    KernelError, KernelSpec, DEFAULT_HOMOGENEITY_TOL,
};
use crate::labelbp::{embedding_equivalence, LabeledFlow};
use crate::rng::{derive_seed, rng_from_seed, sub_seed, uniform_index, SimRng};
use crate::stats::{self, EmpiricalSample, StatsError};
use crate::twoflow::{
    argmin_tail_check, collision_rate, connection_splits, default_a_n, geometric_dominance_check, gumbel_min_cdf,
    gumbel_min_draw, gumbel_min_mean, power_a_n, ppp_check, run_two_flow, write_two_flow_row, TwoFlowError,
    TwoFlowParams, TwoFlowResult, TWO_FLOW_CSV_HEADER,
};

/// Smallest `n` accepted by the dense setting.
pub const MIN_DENSE_N: usize = 100;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("refused: {0}")]
    Refused(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentName {
    HopcountClt,
    WeightLimit,
    DenseSetting,
    BpAsymptotics,
    CollisionPpp,
    GumbelMin,
    Embedding,
    ThinningBounds,
    CouplingError,
    StepKernelConvergence,
}

impl ExperimentName {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::HopcountClt => "hopcount_clt",
            Self::WeightLimit => "weight_limit",
            Self::DenseSetting => "dense_setting",
            Self::BpAsymptotics => "bp_asymptotics",
            Self::CollisionPpp => "collision_ppp",
            Self::GumbelMin => "gumbel_min",
            Self::Embedding => "embedding",
            Self::ThinningBounds => "thinning_bounds",
            Self::CouplingError => "coupling_error",
            Self::StepKernelConvergence => "step_kernel_convergence",
        }
    }

    fn needs_n(&self) -> bool {
        !matches!(self, Self::BpAsymptotics | Self::GumbelMin)
    }
}

/// A kernel given inline or as a path to a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KernelSource {
    File(PathBuf),
    Inline(KernelSpec),
}

/// Freeze size of the `x` flow.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum AnRule {
    #[default]
    Sqrt,
    Power {
        p: f64,
    },
}

impl AnRule {
    pub fn a_n(&self, n: usize) -> usize {
        match self {
            Self::Sqrt => default_a_n(n),
            Self::Power { p } => power_a_n(n, *p),
        }
    }
}

/// How `lambda_tilde` depends on `n`; the kernel is rescaled to match.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum KernelSequence {
    #[default]
    Fixed,
    /// `n^p`.
    Power { p: f64 },
    /// `ln n`.
    Log,
    /// `lambda_tilde + 1 / ln n`.
    InverseLog,
}

impl KernelSequence {
    pub fn lambda_n(&self, base: f64, n: usize) -> f64 {
        let nf = n as f64;
        match self {
            Self::Fixed => base,
            Self::Power { p } => nf.powf(*p),
            Self::Log => nf.ln(),
            Self::InverseLog => base + 1.0 / nf.ln(),
        }
    }

    pub fn diverges(&self) -> bool {
        match self {
            Self::Power { p } => *p > 0.0,
            Self::Log => true,
            Self::Fixed | Self::InverseLog => false,
        }
    }
}

/// `kappa (target + 1) / (base + 1)`: rows of `A` then sum to `target`.
pub fn scale_kernel(kernel: &FiniteKernel, base: f64, target: f64) -> Result<FiniteKernel, KernelError> {
    let f = (target + 1.0) / (base + 1.0);
    let kappa = kernel
        .kappa
        .iter()
        .map(|row| row.iter().map(|k| k * f).collect())
        .collect();
    FiniteKernel::new(kernel.mu.clone(), kappa)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    /// Splits of branching-process runs.
    pub m: usize,
    /// Collisions collected per two-flow run.
    pub i_max: usize,
    /// `k` values for argmin tails.
    pub k_grid: Vec<usize>,
    /// Split counts for thinning statistics; empty means `ceil(sqrt n)`.
    pub k_values: Vec<usize>,
    pub m_parts: Vec<usize>,
    pub summable_c: f64,
    /// Splits used for the `W` estimates of the composite weight sample.
    pub w_splits: usize,
    pub max_attempts: u64,
    pub mw_points: Vec<f64>,
    /// Types eligible for the generation sample; all when absent.
    pub generation_types: Option<Vec<u32>>,
    pub gumbel_i_max: usize,
    pub max_exp_m: usize,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            m: 10_000,
            i_max: 30,
            k_grid: (1..=8).collect(),
            k_values: Vec::new(),
            m_parts: Vec::new(),
            summable_c: 5.0,
            w_splits: 10_000,
            max_attempts: 1_000,
            mw_points: vec![-0.25, -0.5, -1.0],
            generation_types: None,
            gumbel_i_max: 60,
            max_exp_m: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentName,
    pub kernel: KernelSource,
    #[serde(default)]
    pub n_values: Vec<usize>,
    pub replications: usize,
    #[serde(default)]
    pub a_n: AnRule,
    #[serde(default)]
    pub kernel_sequence: KernelSequence,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub params: Params,
    /// Directory that relative kernel paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(
        experiment: ExperimentName,
        kernel: KernelSpec,
        n_values: Vec<usize>,
        replications: usize,
        seed: u64,
    ) -> Self {
        Self {
            experiment,
            kernel: KernelSource::Inline(kernel),
            n_values,
            replications,
            a_n: AnRule::default(),
            kernel_sequence: KernelSequence::default(),
            seed,
            workers: None,
            out: None,
            params: Params::default(),
            base_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let mut cfg = Self::from_json(&fs::read_to_string(path)?)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.replications == 0 {
            return Err(HarnessError::Config("replications must be at least 1".into()));
        }
        if self.experiment.needs_n() && self.n_values.is_empty() {
            return Err(HarnessError::Config(format!(
                "{} needs n_values",
                self.experiment.as_str()
            )));
        }
        if let Some(n) = self.n_values.iter().find(|n| **n < 4) {
            return Err(HarnessError::Config(format!("n = {n} is below 4")));
        }
        if self.workers == Some(0) {
            return Err(HarnessError::Config("workers must be positive".into()));
        }
        Ok(())
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec, HarnessError> {
        match &self.kernel {
            KernelSource::Inline(spec) => Ok(spec.clone()),
            KernelSource::File(p) => {
                let path = match &self.base_dir {
                    Some(base) if p.is_relative() => base.join(p),
                    _ => p.clone(),
                };
                Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
            }
        }
    }

    pub fn worker_count(&self) -> usize {
        self.workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Criterion {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    /// `"<="` or `">="`.
    pub relation: &'static str,
    pub pass: bool,
}

impl Criterion {
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            relation: "<=",
            pass: value <= threshold,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            relation: ">=",
            pass: value >= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub experiment: ExperimentName,
    pub seed: u64,
    pub accepted: usize,
    pub rejected: usize,
    pub rejections: BTreeMap<String, usize>,
    pub values: BTreeMap<String, f64>,
    pub criteria: Vec<Criterion>,
    pub wall_clock_seconds: f64,
}

impl Summary {
    pub fn all_pass(&self) -> bool {
        self.criteria.iter().all(|c| c.pass)
    }

    pub fn value(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }

    pub fn criterion(&self, name: &str) -> Option<&Criterion> {
        self.criteria.iter().find(|c| c.name == name)
    }
}

/// CSV rows without the header line.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: String,
    pub rows: Vec<String>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.rows.iter().map(|r| r.len() + 1).sum::<usize>() + self.header.len() + 1);
        s.push_str(&self.header);
        s.push('\n');
        for r in &self.rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub tables: Vec<Table>,
    pub summary: Summary,
    /// Samples exported as ECDF files, by statistic name.
    pub ecdfs: Vec<(String, Vec<f64>)>,
}

impl ExperimentResult {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

/// Runs `f(0), ..., f(reps - 1)` on `workers` threads, returning results in
/// index order.
pub fn replicate<T, F>(reps: usize, workers: usize, f: F) -> Result<Vec<T>, HarnessError>
where
    T: Send,
    F: Fn(u64) -> T + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    Ok(pool.install(|| (0..reps as u64).into_par_iter().map(&f).collect()))
}

/// Accumulates rows, values, criteria and rejections of one experiment.
struct Builder {
    experiment: ExperimentName,
    seed: u64,
    tables: Vec<Table>,
    values: BTreeMap<String, f64>,
    criteria: Vec<Criterion>,
    rejections: BTreeMap<String, usize>,
    accepted: usize,
    ecdfs: Vec<(String, Vec<f64>)>,
    start: Instant,
}

impl Builder {
    fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            experiment: cfg.experiment,
            seed: cfg.seed,
            tables: Vec::new(),
            values: BTreeMap::new(),
            criteria: Vec::new(),
            rejections: BTreeMap::new(),
            accepted: 0,
            ecdfs: Vec::new(),
            start: Instant::now(),
        }
    }

    fn value(&mut self, key: impl Into<String>, v: f64) {
        self.values.insert(key.into(), v);
    }

    fn criterion(&mut self, c: Criterion) {
        self.values.insert(c.name.clone(), c.value);
        self.criteria.push(c);
    }

    /// Splits outcomes into accepted values and counted rejection reasons.
    fn accept<T>(&mut self, outcomes: Vec<Result<T, String>>) -> Vec<(u64, T)> {
        let mut ok = Vec::new();
        for (i, o) in outcomes.into_iter().enumerate() {
            match o {
                Ok(v) => ok.push((i as u64, v)),
                Err(reason) => *self.rejections.entry(reason).or_insert(0) += 1,
            }
        }
        self.accepted += ok.len();
        ok
    }

    fn table(&mut self, name: &str, header: &str, rows: Vec<String>) {
        self.tables.push(Table {
            name: name.to_string(),
            header: header.to_string(),
            rows,
        });
    }

    fn ecdf(&mut self, name: impl Into<String>, values: Vec<f64>) {
        self.ecdfs.push((name.into(), values));
    }

    fn finish(self) -> ExperimentResult {
        let rejected = self.rejections.values().sum();
        ExperimentResult {
            tables: self.tables,
            summary: Summary {
                experiment: self.experiment,
                seed: self.seed,
                accepted: self.accepted,
                rejected,
                rejections: self.rejections,
                values: self.values,
                criteria: self.criteria,
                wall_clock_seconds: self.start.elapsed().as_secs_f64(),
            },
            ecdfs: self.ecdfs,
        }
    }
}

fn twoflow_reason(e: &TwoFlowError) -> String {
    match e {
        TwoFlowError::XFlowDied(..) => "x_flow_died",
        TwoFlowError::YFlowDied(..) => "y_flow_died",
        TwoFlowError::SplitCap(..) => "split_cap",
        TwoFlowError::NoCollision => "no_collision",
        _ => "two_flow_error",
    }
    .to_string()
}

fn sample_type<R: Rng + ?Sized>(mu: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (t, m) in mu.iter().enumerate() {
        acc += m;
        if u < acc {
            return t;
        }
    }
    mu.len() - 1
}

fn jitter(rng: &mut SimRng) -> f64 {
    rng.gen::<f64>() - 0.5
}

/// Kernel for graph size `n` under the configured sequence rule.
fn kernel_at(cfg: &ExperimentConfig, built: &BuiltKernel, n: usize) -> Result<(FiniteKernel, f64), HarnessError> {
    let base = built.lambda_tilde();
    let target = cfg.kernel_sequence.lambda_n(base, n);
    if target == base {
        return Ok((built.kernel.clone(), base));
    }
    Ok((scale_kernel(&built.kernel, base, target)?, target))
}

/// Builds the kernel and refuses non-homogeneous, reducible or subcritical
/// input.
fn supercritical_kernel(cfg: &ExperimentConfig) -> Result<BuiltKernel, HarnessError> {
    let built = cfg.kernel_spec()?.build()?;
    let hom = check_homogeneity(&built.offspring, DEFAULT_HOMOGENEITY_TOL);
    if !hom.pass {
        return Err(HarnessError::Refused(format!(
            "kernel is not homogeneous and supercritical (lambda_tilde {}, row deviation {})",
            hom.lambda_tilde, hom.max_deviation
        )));
    }
    if !check_irreducibility(&built.offspring, built.kernel.r.max(4)) {
        return Err(HarnessError::Refused("kernel is not irreducible".into()));
    }
    Ok(built)
}

/// KS distance of standardized jittered integer statistics against Phi.
fn ks_normal(z: &[f64]) -> f64 {
    stats::ks_against(z, stats::cdf_normal).unwrap_or(f64::NAN)
}

fn ks_two(a: &[f64], b: &[f64]) -> f64 {
    stats::ks_two_sample_values(a, b).unwrap_or(f64::NAN)
}

fn column<T, F: Fn(&T) -> f64>(rows: &[(u64, T)], f: F) -> Vec<f64> {
    rows.iter().map(|(_, r)| f(r)).collect()
}

/// Weight and hopcount between a uniform connected pair of one graph.
struct GraphSample {
    p_n: f64,
    h_n: u32,
}

fn graph_route(kernel: &FiniteKernel, n: usize, seed: u64) -> Result<GraphSample, String> {
    let vs = sample_vertices(kernel, n, derive_seed(seed, "vertices", 0)).map_err(|_| "vertices".to_string())?;
    let g = sample_graph(kernel, &vs, derive_seed(seed, "graph", 0)).map_err(|_| "graph".to_string())?;
    path_between_uniform_pair(&g, derive_seed(seed, "pair", 0))
}

fn path_between_uniform_pair(g: &WeightedGraph, seed: u64) -> Result<GraphSample, String> {
    let comps = components(g);
    let pair =
        sample_connected_pair_with(&comps, &mut rng_from_seed(seed)).map_err(|_| "no_connected_pair".to_string())?;
    let path = shortest_weight_path(g, pair.x, pair.y).map_err(|e| e.to_string())?;
    Ok(GraphSample {
        p_n: path.weight,
        h_n: path.hops.unwrap_or(0),
    })
}

fn twoflow_params(cfg: &ExperimentConfig, n: usize, lambda_tilde: f64) -> TwoFlowParams {
    TwoFlowParams {
        a_n: cfg.a_n.a_n(n),
        i_max: cfg.params.i_max,
        lambda_tilde,
        max_attempts: cfg.params.max_attempts,
    }
}

fn bp_route(kernel: &FiniteKernel, n: usize, params: TwoFlowParams, seed: u64) -> Result<TwoFlowResult, String> {
    let vs = sample_vertices(kernel, n, derive_seed(seed, "vertices", 0)).map_err(|_| "vertices".to_string())?;
    run_two_flow(kernel, &vs, params, derive_seed(seed, "twoflow", 0)).map_err(|e| twoflow_reason(&e))
}

pub fn run_hopcount_clt(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let built = supercritical_kernel(cfg)?;
    let mut b = Builder::new(cfg);
    let mut rows = Vec::new();
    for &n in &cfg.n_values {
        let (kernel, lt) = kernel_at(cfg, &built, n)?;
        let params = twoflow_params(cfg, n, lt);
        let ln = (n as f64).ln();
        let c = (lt + 1.0) / lt * ln;
        let stream = format!("hopcount_clt/{n}");
        let outcomes = replicate(cfg.replications, cfg.worker_count(), |i| {
            let s = derive_seed(cfg.seed, &stream, i);
            let g = graph_route(&kernel, n, s)?;
            let t = bp_route(&kernel, n, params, s)?;
            let mut rng = rng_from_seed(derive_seed(s, "jitter", 0));
            let (ug, ub) = (jitter(&mut rng), jitter(&mut rng));
            Ok((g, t.p_n, t.h_n, ug, ub))
        })?;
        let ok = b.accept(outcomes);
        let z = |h: u32, u: f64, centre: f64| (h as f64 + u - centre) / c.sqrt();
        for (i, (g, bp, bh, ug, ub)) in &ok {
            rows.push(format!(
                "{i},{n},{lt},{},{},{bp},{bh},{},{}",
                g.p_n,
                g.h_n,
                z(g.h_n, *ug, c),
                z(*bh, *ub, c)
            ));
        }
        let zg = column(&ok, |r| z(r.0.h_n, r.3, c));
        let zb = column(&ok, |r| z(r.2, r.4, c));
        let zc = column(&ok, |r| z(r.0.h_n, r.3, ln));
        let zraw = column(&ok, |r| (r.0.h_n as f64 - c) / c.sqrt());
        let gh = column(&ok, |r| r.0.h_n as f64);
        let bh = column(&ok, |r| r.2 as f64);
        let gp = column(&ok, |r| r.0.p_n);
        let bpv = column(&ok, |r| r.1);
        b.value(format!("hop_mean_graph_n{n}"), stats::moments(&gh).mean);
        b.value(format!("hop_mean_bp_n{n}"), stats::moments(&bh).mean);
        b.value(format!("hop_variance_graph_n{n}"), stats::moments(&gh).variance);
        b.value(format!("centering_n{n}"), c);
        b.value(format!("hop_ks_graph_raw_n{n}"), ks_normal(&zraw));
        b.value(format!("hop_ks_bp_n{n}"), ks_normal(&zb));
        b.criterion(Criterion::at_most(format!("hop_ks_graph_n{n}"), ks_normal(&zg), 0.06));
        b.criterion(Criterion::at_least(
            format!("hop_ks_control_n{n}"),
            ks_normal(&zc),
            0.15,
        ));
        b.criterion(Criterion::at_most(
            format!("route_ks_weight_n{n}"),
            ks_two(&gp, &bpv),
            0.08,
        ));
        b.criterion(Criterion::at_most(
            format!("route_ks_hopcount_n{n}"),
            ks_two(&gh, &bh),
            0.08,
        ));
        b.ecdf(format!("hop_z_graph_n{n}"), zg);
        b.ecdf(format!("hop_z_bp_n{n}"), zb);
    }
    b.table(
        "hopcount_clt",
        "run_id,n,lambda_n,graph_Pn,graph_Hn,bp_Pn,bp_Hn,z_graph,z_bp",
        rows,
    );
    Ok(b.finish())
}

/// `-(1/l) ln(wx wy) - X/l + (1/l) ln(l (l + 1))`.
pub fn composite_weight(wx: f64, wy: f64, x: f64, lambda_tilde: f64) -> f64 {
    let l = lambda_tilde;
    (-(wx * wy).ln() - x + (l * (l + 1.0)).ln()) / l
}

pub fn run_weight_limit(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let built = supercritical_kernel(cfg)?;
    let mut b = Builder::new(cfg);
    let mut rows = Vec::new();
    let mut means = Vec::new();
    for &n in &cfg.n_values {
        let (kernel, lt) = kernel_at(cfg, &built, n)?;
        let law = OffspringLaw::poisson(&kernel.offspring_matrix());
        let ln = (n as f64).ln();
        let stream = format!("weight_limit/{n}");
        let p = &cfg.params;
        let outcomes = replicate(cfg.replications, cfg.worker_count(), |i| {
            let s = derive_seed(cfg.seed, &stream, i);
            let g = graph_route(&kernel, n, s)?;
            let mut rng = rng_from_seed(derive_seed(s, "composite", 0));
            let mut w = [0.0; 2];
            for (j, slot) in w.iter_mut().enumerate() {
                let t = sample_type(&kernel.mu, &mut rng);
                let run = run_bp_surviving(
                    &law,
                    t,
                    p.w_splits,
                    derive_seed(s, "w", j as u64),
                    RootStart::Immediate,
                    p.max_attempts,
                )
                .map_err(|_| "w_flow_died".to_string())?;
                *slot = estimate_w(&run.state, lt).w_hat;
            }
            let x = stats::sample_gumbel(&mut rng);
            Ok((g, w[0], w[1], x))
        })?;
        let ok = b.accept(outcomes);
        let centered = |g: &GraphSample| g.p_n - ln / lt;
        for (i, (g, wx, wy, x)) in &ok {
            rows.push(format!(
                "{i},{n},{lt},{},{},{},{wx},{wy},{x},{}",
                g.p_n,
                g.h_n,
                centered(g),
                composite_weight(*wx, *wy, *x, lt)
            ));
        }
        let cp = column(&ok, |r| centered(&r.0));
        let comp = column(&ok, |r| composite_weight(r.1, r.2, r.3, lt));
        let mc = stats::moments(&cp);
        means.push((n, mc.mean));
        b.value(format!("weight_mean_n{n}"), mc.mean);
        b.value(format!("weight_variance_n{n}"), mc.variance);
        b.value(format!("composite_mean_n{n}"), stats::moments(&comp).mean);
        b.value(format!("composite_variance_n{n}"), stats::moments(&comp).variance);
        b.criterion(Criterion::at_most(
            format!("composite_ks_n{n}"),
            ks_two(&cp, &comp),
            0.08,
        ));
        b.ecdf(format!("weight_centered_n{n}"), cp);
        b.ecdf(format!("weight_composite_n{n}"), comp);
    }
    if means.len() >= 2 {
        let drift = means.windows(2).map(|w| (w[1].1 - w[0].1).abs()).fold(0.0, f64::max);
        b.criterion(Criterion::at_most("location_drift", drift, 0.1));
    }
    b.table(
        "weight_limit",
        "run_id,n,lambda_n,Pn,Hn,centered_Pn,wx_hat,wy_hat,X,composite",
        rows,
    );
    Ok(b.finish())
}

pub fn run_dense_setting(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    if !cfg.kernel_sequence.diverges() {
        return Err(HarnessError::Refused(
            "dense setting needs an increasing lambda_n rule".into(),
        ));
    }
    if let Some(n) = cfg.n_values.iter().find(|n| **n < MIN_DENSE_N) {
        return Err(HarnessError::Refused(format!(
            "n = {n} is too small for the dense setting"
        )));
    }
    let built = supercritical_kernel(cfg)?;
    let mut b = Builder::new(cfg);
    let mut rows = Vec::new();
    for &n in &cfg.n_values {
        let (kernel, lt) = kernel_at(cfg, &built, n)?;
        let ln = (n as f64).ln();
        let c = (lt + 1.0) / lt * ln;
        let stream = format!("dense_setting/{n}");
        let outcomes = replicate(cfg.replications, cfg.worker_count(), |i| {
            let s = derive_seed(cfg.seed, &stream, i);
            let g = graph_route(&kernel, n, s)?;
            let u = jitter(&mut rng_from_seed(derive_seed(s, "jitter", 0)));
            Ok((g, u))
        })?;
        let ok = b.accept(outcomes);
        let scaled = |g: &GraphSample| lt * g.p_n - ln;
        let z = |h: u32, u: f64, centre: f64| (h as f64 + u - centre) / ln.sqrt();
        for (i, (g, u)) in &ok {
            rows.push(format!(
                "{i},{n},{lt},{},{},{},{},{}",
                g.p_n,
                g.h_n,
                scaled(g),
                z(g.h_n, *u, c),
                z(g.h_n, *u, ln)
            ));
        }
        let w = column(&ok, |r| scaled(&r.0));
        let zh = column(&ok, |r| z(r.0.h_n, r.1, c));
        let zl = column(&ok, |r| z(r.0.h_n, r.1, ln));
        let mw = stats::moments(&w);
        let pi2 = std::f64::consts::PI.powi(2);
        b.value(format!("lambda_n_n{n}"), lt);
        b.value(format!("weight_mean_n{n}"), mw.mean);
        b.value(format!("weight_variance_n{n}"), mw.variance);
        b.value(format!("hop_ks_log_centering_n{n}"), ks_normal(&zl));
        b.value(
            format!("centering_shift_n{n}"),
            stats::moments(&zl).mean - stats::moments(&zh).mean,
        );
        b.value(format!("lambda_over_sqrt_log_n{n}"), lt / ln.sqrt());
        b.criterion(Criterion::at_most(
            format!("weight_mean_error_n{n}"),
            (mw.mean - stats::EULER_GAMMA).abs(),
            0.15,
        ));
        b.criterion(Criterion::at_most(
            format!("weight_variance_error_n{n}"),
            (mw.variance - pi2 / 2.0).abs(),
            0.6,
        ));
        b.criterion(Criterion::at_most(format!("hop_ks_n{n}"), ks_normal(&zh), 0.06));
        b.ecdf(format!("dense_weight_n{n}"), w);
        b.ecdf(format!("dense_hop_z_n{n}"), zh);
    }
    b.table(
        "dense_setting",
        "run_id,n,lambda_n,Pn,Hn,scaled_Pn,z_hop,z_hop_log",
        rows,
    );
    Ok(b.finish())
}

pub fn run_bp_asymptotics(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let built = supercritical_kernel(cfg)?;
    let lt = built.lambda_tilde();
    let law = OffspringLaw::poisson(&built.offspring);
    let pi = stationary_type_vector(&built.offspring)?.pi;
    let r = built.kernel.r;
    let p = &cfg.params;
    let m = p.m;
    let types: Vec<u32> = p.generation_types.clone().unwrap_or_else(|| (0..r as u32).collect());
    if types.iter().any(|t| *t as usize >= r) {
        return Err(HarnessError::Config("generation type out of range".into()));
    }
    let mut b = Builder::new(cfg);
    let c = (lt + 1.0) / lt * (m as f64).ln();
    let outcomes = replicate(cfg.replications, cfg.worker_count(), |i| {
        let s = derive_seed(cfg.seed, "bp_asymptotics", i);
        let mut rng = rng_from_seed(derive_seed(s, "root", 0));
        let root = sample_type(&built.kernel.mu, &mut rng);
        let run = run_bp_surviving(
            &law,
            root,
            m,
            derive_seed(s, "run", 0),
            RootStart::Lifetime,
            p.max_attempts,
        )
        .map_err(|_| "no_survivor".to_string())?;
        let st = &run.state;
        let profile = alive_dead_profile(st, m).map_err(|e| e.to_string())?;
        let g = generation_sample(st, m, &types, &mut rng).map_err(|e| e.to_string())?;
        let u = jitter(&mut rng);
        let w = estimate_w(st, lt).w_hat;
        let tau_gap = (st.tau() - (m as f64).ln() / lt + (w / lt).ln() / lt).abs();
        let summable = check_summable_errors(std::slice::from_ref(st), lt, p.summable_c, m) == 1.0;
        Ok((
            run.attempts,
            st.tau(),
            st.alive_count(),
            w,
            g,
            u,
            tau_gap,
            summable,
            profile,
        ))
    })?;
    let ok = b.accept(outcomes);
    let mut rows = Vec::with_capacity(ok.len());
    for (i, (attempts, tau, s_m, w, g, u, gap, summable, prof)) in &ok {
        let mut row = format!(
            "{i},{},{m},{tau},{s_m},{w},{g},{attempts},{},{gap},{summable}",
            *attempts == 1,
            (*g as f64 + u - c) / c.sqrt()
        );
        for v in prof.alive.iter().chain(&prof.dead) {
            let _ = write!(row, ",{v}");
        }
        rows.push(row);
    }
    let mut header = "run_id,survived,m,tau_m,S_m,w_hat,G_sample,attempts,z_generation,tau_gap,summable".to_string();
    for t in 0..r {
        let _ = write!(header, ",S_t{t}");
    }
    for t in 0..r {
        let _ = write!(header, ",N_t{t}");
    }
    let total = ok.len() as f64;

    let rho = survival_probability(lt, 1e-15)?;
    let survived = ok.iter().filter(|(_, r)| r.0 == 1).count() as f64 / total;
    let se = (rho * (1.0 - rho) / total).sqrt();
    b.value("rho", rho);
    b.value("survival_frequency", survived);
    b.value("survival_se", se);
    b.criterion(Criterion::at_most(
        "survival_error_in_se",
        (survived - rho).abs() / se,
        3.0,
    ));

    let w_all = column(&ok, |r| if r.0 == 1 { r.3 } else { 0.0 });
    let mw = stats::moments(&w_all);
    b.value("w_mean_all", mw.mean);
    b.value("w_mean_se", mw.se_mean);
    b.criterion(Criterion::at_most(
        "w_mean_error_in_se",
        (mw.mean - 1.0).abs() / mw.se_mean,
        3.0,
    ));
    let gap_ok = ok.iter().filter(|(_, r)| r.6 < 0.05).count() as f64 / total;
    b.criterion(Criterion::at_least("tau_limit_fraction", gap_ok, 0.9));

    let mw_points = mw_self_consistency(&w_all, lt, &p.mw_points);
    for pt in &mw_points {
        b.value(format!("mw_lhs_t{}", pt.t), pt.lhs);
        b.value(format!("mw_rhs_t{}", pt.t), pt.rhs);
    }
    let worst = mw_points.iter().map(|pt| pt.gap()).fold(0.0, f64::max);
    b.criterion(Criterion::at_most("mw_max_gap", worst, 0.02));

    let within = |prof: &crate::ctbp::TypeProfile| {
        (0..r).all(|t| {
            (prof.alive[t] as f64 / (lt * m as f64) - pi[t]).abs() <= 0.05
                && (prof.dead[t] as f64 / m as f64 - pi[t]).abs() <= 0.05
        })
    };
    let prof_ok = ok.iter().filter(|(_, r)| within(&r.8)).count() as f64 / total;
    b.criterion(Criterion::at_least("type_profile_fraction", prof_ok, 0.9));
    let s_ok = ok
        .iter()
        .filter(|(_, r)| (r.2 as f64 / (lt * m as f64) - 1.0).abs() <= 0.1)
        .count() as f64
        / total;
    b.criterion(Criterion::at_least("alive_total_fraction", s_ok, 0.95));

    let z = column(&ok, |r| (r.4 as f64 + r.5 - c) / c.sqrt());
    let zc = column(&ok, |r| (r.4 as f64 + r.5 - (m as f64).ln()) / c.sqrt());
    let zraw = column(&ok, |r| (r.4 as f64 - c) / c.sqrt());
    b.value("generation_ks_raw", ks_normal(&zraw));
    b.value("generation_mean_z", stats::moments(&z).mean);
    b.criterion(Criterion::at_most("generation_ks", ks_normal(&z), 0.05));
    b.criterion(Criterion::at_least("generation_ks_control", ks_normal(&zc), 0.15));

    let summable = ok.iter().filter(|(_, r)| r.7).count() as f64 / total;
    b.criterion(Criterion::at_least("summable_fraction", summable, 0.99));

    b.ecdf("generation_z", z);
    b.ecdf("w_hat_all", w_all);
    b.table("bp_asymptotics", &header, rows);
    Ok(b.finish())
}

pub fn run_collision_ppp(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let built = supercritical_kernel(cfg)?;
    let mut b = Builder::new(cfg);
    let mut rows = Vec::new();
    for &n in &cfg.n_values {
        let (kernel, lt) = kernel_at(cfg, &built, n)?;
        let pi = stationary_type_vector(&kernel.offspring_matrix())?.pi;
        let rate = collision_rate(lt, &pi, &kernel.mu);
        let params = twoflow_params(cfg, n, lt);
        let a_n = params.a_n;
        let stream = format!("collision_ppp/{n}");
        let outcomes = replicate(cfg.replications, cfg.worker_count(), |i| {
            let s = derive_seed(cfg.seed, &stream, i);
            let t = bp_route(&kernel, n, params, s)?;
            let u: f64 = rng_from_seed(derive_seed(s, "jitter", 0)).gen();
            Ok((t, u))
        })?;
        let ok = b.accept(outcomes);
        for (i, (t, _)) in &ok {
            let mut line = Vec::new();
            write_two_flow_row(*i, t, &mut line)?;
            let mut row = String::from_utf8_lossy(&line).trim_end().to_string();
            let c = t.chosen();
            let split = |k: usize| t.collisions.get(k).map_or(String::new(), |c| c.split.to_string());
            let _ = write!(
                row,
                ",{},{},{},{},{},{},{}",
                split(1),
                split(2),
                c.thinned_x,
                c.thinned_y,
                c.label_rank.0,
                c.label_rank.1,
                t.x_alive
            );
            rows.push(row);
        }
        let results: Vec<TwoFlowResult> = ok.iter().map(|(_, (t, _))| t.clone()).collect();
        let rescaled: Vec<Vec<f64>> = results.iter().map(|r| r.rescaled_splits()).collect();
        b.value(format!("rate_n{n}"), rate);
        b.value(format!("a_n_n{n}"), a_n as f64);
        match ppp_check(&rescaled, rate, 3) {
            Ok(rep) => {
                b.value(format!("rate_estimate_n{n}"), rep.rate_estimate);
                b.value(format!("ks_c2_n{n}"), rep.ks_by_index[1]);
                b.criterion(Criterion::at_most(format!("ks_c1_n{n}"), rep.ks_by_index[0], 0.05));
                b.criterion(Criterion::at_most(format!("ks_c3_n{n}"), rep.ks_by_index[2], 0.05));
                b.criterion(Criterion::at_most(format!("ks_gap_n{n}"), rep.gap_ks, 0.05));
                b.criterion(Criterion::at_most(
                    format!("gap_correlation_n{n}"),
                    rep.gap_correlation.abs(),
                    0.05,
                ));
            }
            Err(_) => {
                b.criterion(Criterion::at_least(
                    format!("ppp_runs_n{n}"),
                    results.len() as f64,
                    500.0,
                ));
            }
        }
        let argmins: Vec<usize> = results.iter().map(|r| r.argmin).collect();
        let tails = argmin_tail_check(&argmins, lt, &cfg.params.k_grid);
        let mut worst: f64 = f64::NEG_INFINITY;
        for row in &tails {
            b.value(format!("argmin_tail_k{}_n{n}", row.k), row.empirical);
            worst = worst.max((row.empirical - row.bound) / row.se.max(f64::MIN_POSITIVE));
        }
        if !tails.is_empty() {
            b.criterion(Criterion::at_most(format!("argmin_tail_excess_in_se_n{n}"), worst, 3.0));
        }
        let con = connection_splits(&results);
        let dom = geometric_dominance_check(&con, lt, derive_seed(cfg.seed, &stream, u64::MAX))
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        b.value(format!("dominance_prob_greater_n{n}"), dom.prob_greater);
        b.value(format!("connection_mean_n{n}"), dom.mean_connection);
        b.value(format!("dominating_mean_n{n}"), dom.mean_dominating);
        b.criterion(Criterion::at_most(
            format!("dominance_excess_n{n}"),
            (dom.prob_greater - 0.5) / dom.prob_se,
            3.0,
        ));

        let thinned = results
            .iter()
            .filter(|r| r.chosen().thinned_x || r.chosen().thinned_y)
            .count() as f64
            / results.len() as f64;
        let nf = n as f64;
        let an = a_n as f64;
        let bound = (lt + 1.0) / lt * (an / nf + nf / (nf - an) * dom.mean_connection / an);
        b.value(format!("thinned_collision_bound_n{n}"), bound);
        b.criterion(Criterion::at_most(
            format!("thinned_collision_fraction_n{n}"),
            thinned,
            1.2 * bound,
        ));

        for t in 0..kernel.r {
            let pairs: Vec<(f64, f64)> = results
                .iter()
                .filter(|r| r.chosen().ty as usize == t)
                .map(|r| (r.chosen().gen_x as f64, r.chosen().gen_y as f64))
                .collect();
            if pairs.len() < 10 {
                continue;
            }
            let (gx, gy): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let corr = stats::correlation(&gx, &gy);
            b.criterion(Criterion::at_most(
                format!("generation_correlation_t{t}_n{n}"),
                corr.abs() * (gx.len() as f64).sqrt(),
                3.0,
            ));
        }

        let mut counts = [0u64; 10];
        for (_, (t, u)) in &ok {
            let (rank, size) = t.chosen().label_rank;
            let v = (rank as f64 + u) / size as f64;
            counts[((v * 10.0) as usize).min(9)] += 1;
        }
        // chi-square 99% quantile with 9 degrees of freedom
        b.criterion(Criterion::at_most(
            format!("label_uniformity_chi2_n{n}"),
            stats::chi_square_uniform(&counts),
            21.666,
        ));

        b.ecdf(format!("c1_rescaled_n{n}"), rescaled.iter().map(|r| r[0]).collect());
        b.ecdf(format!("connection_rescaled_n{n}"), con);
    }
    b.table(
        "collision_ppp",
        &format!("{TWO_FLOW_CSV_HEADER},C2,C3,thinned_x,thinned_y,label_rank,label_count,S_x"),
        rows,
    );
    Ok(b.finish())
}

pub fn run_gumbel_min(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let built = supercritical_kernel(cfg)?;
    let lt = built.lambda_tilde();
    let p = &cfg.params;
    let mut b = Builder::new(cfg);
    let outcomes = replicate(cfg.replications, cfg.worker_count(), |i| {
        let s = derive_seed(cfg.seed, "gumbel_min", i);
        let (v, a) = gumbel_min_draw(lt, p.gumbel_i_max, &mut rng_from_seed(s));
        let (ve, _) = gumbel_min_draw(lt, 2 * p.gumbel_i_max, &mut rng_from_seed(s));
        Ok::<_, String>((v, a, ve))
    })?;
    let ok = b.accept(outcomes);
    let rows = ok.iter().map(|(i, (v, a, ve))| format!("{i},{v},{a},{ve}")).collect();
    let v = column(&ok, |r| r.0);
    let ve = column(&ok, |r| r.2);
    let mv = stats::moments(&v);
    let target = gumbel_min_mean(lt);
    b.value("min_mean", mv.mean);
    b.value("min_mean_target", target);
    b.criterion(Criterion::at_most("min_mean_error", (mv.mean - target).abs(), 0.01));
    let sample = EmpiricalSample::new(v.clone())?;
    b.criterion(Criterion::at_most(
        "min_ks",
        stats::ks_statistic(&sample, |z| gumbel_min_cdf(z, lt)),
        0.01,
    ));
    b.criterion(Criterion::at_most(
        "truncation_effect",
        (stats::moments(&ve).mean - mv.mean).abs(),
        1e-3,
    ));
    let argmins: Vec<usize> = ok.iter().map(|(_, r)| r.1).collect();
    let tails = argmin_tail_check(&argmins, lt, &p.k_grid);
    let mut worst: f64 = f64::NEG_INFINITY;
    for row in &tails {
        b.value(format!("argmin_tail_k{}", row.k), row.empirical);
        worst = worst.max((row.empirical - row.bound) / row.se.max(f64::MIN_POSITIVE));
    }
    if !tails.is_empty() {
        b.criterion(Criterion::at_most("argmin_tail_excess_in_se", worst, 3.0));
    }

    let me = stats::max_exp_identity_check(p.max_exp_m, cfg.replications, derive_seed(cfg.seed, "max_exp", 0))?;
    b.value("max_exp_critical", me.critical);
    b.value("harmonic_number", me.harmonic_number);
    b.value("max_exp_maximum_mean", me.maximum_mean.mean);
    b.criterion(Criterion::at_most("max_exp_ks", me.ks, me.critical));
    if cfg.replications >= 10_000 {
        let gs = stats::gumbel_sum_moments(cfg.replications, derive_seed(cfg.seed, "gumbel_sum", 0))?;
        b.value("gumbel_sum_mean", gs.sum.mean);
        b.value("gumbel_sum_variance", gs.sum.variance);
        b.criterion(Criterion::at_most(
            "gumbel_sum_mean_error_in_se",
            (gs.sum.mean - gs.target_mean).abs() / gs.sum.se_mean,
            3.0,
        ));
        b.criterion(Criterion::at_most(
            "gumbel_sum_variance_error_in_se",
            (gs.sum.variance - gs.target_variance).abs() / gs.sum.se_variance,
            3.0,
        ));
    }
    b.ecdf("gumbel_min", v);
    b.table("gumbel_min", "draw,min,argmin,min_extended", rows);
    Ok(b.finish())
}

pub fn run_embedding(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let built = cfg.kernel_spec()?.build()?;
    let mut b = Builder::new(cfg);
    let mut rows = Vec::new();
    let mut mismatches = 0usize;
    let mut wetting = 0usize;
    for &n in &cfg.n_values {
        let stream = format!("embedding/{n}");
        let outcomes = replicate(cfg.replications, cfg.worker_count(), |i| {
            embedding_equivalence(&built.kernel, n, derive_seed(cfg.seed, &stream, i)).map_err(|e| e.to_string())
        })?;
        for (i, rep) in b.accept(outcomes) {
            mismatches += rep.mismatches.len();
            wetting += usize::from(!rep.wetting_times_match);
            rows.push(format!(
                "{i},{n},{},{},{},{}",
                rep.source,
                rep.reached,
                rep.mismatches.len(),
                rep.wetting_times_match
            ));
        }
    }
    b.criterion(Criterion::at_most("vertex_mismatches", mismatches as f64, 0.0));
    b.criterion(Criterion::at_most("wetting_time_mismatches", wetting as f64, 0.0));
    b.table(
        "embedding",
        "run_id,n,source,reached,mismatches,wetting_times_match",
        rows,
    );
    Ok(b.finish())
}

/// Per-type statistics of one labeled flow at one `k`.
struct ThinningRow {
    k: usize,
    ty: usize,
    fraction: Option<f64>,
    distinct: u64,
    total: u64,
}

pub fn run_thinning_bounds(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let built = supercritical_kernel(cfg)?;
    let mut b = Builder::new(cfg);
    let mut rows = Vec::new();
    for &n in &cfg.n_values {
        let (kernel, lt) = kernel_at(cfg, &built, n)?;
        let pi = stationary_type_vector(&kernel.offspring_matrix())?.pi;
        let mut ks = if cfg.params.k_values.is_empty() {
            vec![default_a_n(n)]
        } else {
            cfg.params.k_values.clone()
        };
        ks.sort_unstable();
        ks.dedup();
        let k_max = *ks.last().unwrap_or(&1);
        if k_max >= n {
            return Err(HarnessError::Config(format!("k = {k_max} must be below n = {n}")));
        }
        let stream = format!("thinning_bounds/{n}");
        let outcomes = replicate(cfg.replications, cfg.worker_count(), |i| {
            let s = derive_seed(cfg.seed, &stream, i);
            let vs = sample_vertices(&kernel, n, derive_seed(s, "vertices", 0)).map_err(|e| e.to_string())?;
            let root = uniform_index(&mut rng_from_seed(derive_seed(s, "root", 0)), n) as u32;
            for attempt in 0..cfg.params.max_attempts {
                let mut rng = rng_from_seed(sub_seed(derive_seed(s, "flow", 0), attempt));
                let mut flow = LabeledFlow::start(&kernel, &vs, root, &[], &mut rng).map_err(|e| e.to_string())?;
                let mut out = Vec::new();
                for &k in &ks {
                    while flow.k() < k && flow.step(&mut rng).is_some() {}
                    if flow.k() < k || flow.alive_count() == 0 {
                        break;
                    }
                    for t in 0..kernel.r {
                        let fraction = flow.thinned_alive_fraction(k, t).map_err(|e| e.to_string())?;
                        let (distinct, total) = flow.multiple_label_count(k, t).map_err(|e| e.to_string())?;
                        out.push(ThinningRow {
                            k,
                            ty: t,
                            fraction,
                            distinct,
                            total,
                        });
                    }
                }
                if out.len() == ks.len() * kernel.r {
                    return Ok(out);
                }
            }
            Err("flow_died".to_string())
        })?;
        let ok = b.accept(outcomes);
        for (i, rs) in &ok {
            for r in rs {
                rows.push(format!(
                    "{i},{n},{},{},{},{},{}",
                    r.k,
                    r.ty,
                    r.fraction.map_or(String::new(), |f| f.to_string()),
                    r.distinct,
                    r.total
                ));
            }
        }
        for &k in &ks {
            for t in 0..kernel.r {
                let sel: Vec<&ThinningRow> = ok
                    .iter()
                    .flat_map(|(_, rs)| rs.iter())
                    .filter(|r| r.k == k && r.ty == t)
                    .collect();
                let fr: Vec<f64> = sel.iter().filter_map(|r| r.fraction).collect();
                let deficit: Vec<f64> = sel
                    .iter()
                    .filter(|r| r.total > 0)
                    .map(|r| (r.total - r.distinct) as f64 / r.total as f64)
                    .collect();
                let kn = k as f64 / n as f64;
                let bound = (lt + 1.0) / lt * kn;
                let predicted = lt * pi[t] / (2.0 * kernel.mu[t]) * kn;
                let mean_fr = stats::moments(&fr).mean;
                let mean_def = stats::moments(&deficit).mean;
                let tag = format!("k{k}_t{t}_n{n}");
                b.value(format!("thinned_bound_{tag}"), bound);
                b.value(format!("deficit_predicted_{tag}"), predicted);
                b.value(format!("deficit_mean_{tag}"), mean_def);
                b.criterion(Criterion::at_most(
                    format!("thinned_fraction_{tag}"),
                    mean_fr,
                    1.2 * bound,
                ));
                let ratio = mean_def / predicted;
                b.criterion(Criterion::at_most(
                    format!("deficit_ratio_{tag}"),
                    ratio.max(1.0 / ratio),
                    1.5,
                ));
            }
        }
    }
    b.table(
        "thinning_bounds",
        "run_id,n,k,type,thinned_fraction,distinct,total",
        rows,
    );
    Ok(b.finish())
}

pub fn run_coupling_error(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let built = supercritical_kernel(cfg)?;
    let lt = built.lambda_tilde();
    let m = cfg.params.m;
    let mut b = Builder::new(cfg);
    let mut rows = Vec::new();
    for &n in &cfg.n_values {
        if m > n {
            return Err(HarnessError::Config(format!("m = {m} exceeds n = {n}")));
        }
        let counts = proportional_counts(&built.kernel.mu, n);
        let stream = format!("coupling_error/{n}");
        let outcomes = replicate(cfg.replications, cfg.worker_count(), |i| {
            let s = derive_seed(cfg.seed, &stream, i);
            let root = sample_type(&built.kernel.mu, &mut rng_from_seed(derive_seed(s, "root", 0)));
            let run = coupled_bin_poi_run(&built.kernel, &counts, n, root, m, derive_seed(s, "run", 0))
                .map_err(|e| e.to_string())?;
            let identical = run.bin == run.poi;
            Ok((run.decouple_split, identical))
        })?;
        let ok = b.accept(outcomes);
        for (i, (d, _)) in &ok {
            rows.push(format!(
                "{i},{n},{m},{},{}",
                d.is_some(),
                d.map_or(String::new(), |d| d.to_string())
            ));
        }
        let freq = ok.iter().filter(|(_, r)| r.0.is_some()).count() as f64 / ok.len() as f64;
        let bound = m as f64 / n as f64 * (lt + 1.0) * built.kernel.max_kappa();
        let broken = ok.iter().filter(|(_, r)| r.0.is_none() && !r.1).count();
        b.value(format!("decouple_bound_n{n}"), bound);
        b.criterion(Criterion::at_most(
            format!("decouple_frequency_n{n}"),
            freq,
            1.2 * bound,
        ));
        b.criterion(Criterion::at_most(
            format!("coupled_trajectory_mismatches_n{n}"),
            broken as f64,
            0.0,
        ));
    }
    b.table("coupling_error", "run_id,n,m,decoupled,decouple_split", rows);
    Ok(b.finish())
}

pub fn run_step_kernel_convergence(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let spec = cfg.kernel_spec()?;
    let KernelSpec::TorusStep { m_parts, .. } = &spec else {
        return Err(HarnessError::Config(
            "step kernel convergence needs a torus_step kernel".into(),
        ));
    };
    let parts = if cfg.params.m_parts.is_empty() {
        vec![*m_parts]
    } else {
        cfg.params.m_parts.clone()
    };
    let mut b = Builder::new(cfg);
    let mut rows = Vec::new();
    for &n in &cfg.n_values {
        let mut prev: Option<(usize, f64, Vec<f64>)> = None;
        let mut increases = 0usize;
        for &mp in &parts {
            let mut s = spec.clone();
            if let KernelSpec::TorusStep { m_parts, .. } = &mut s {
                *m_parts = mp;
            }
            let built = s.build()?;
            let torus = built
                .torus
                .clone()
                .ok_or_else(|| HarnessError::Config("missing torus kernel".into()))?;
            let eps = torus.max_deviation(64);
            let stream = format!("step_kernel_convergence/{n}");
            let outcomes = replicate(cfg.replications, cfg.worker_count(), |i| {
                let seed = derive_seed(cfg.seed, &stream, i);
                let pair = sample_coupled_torus_graphs(&torus, n, derive_seed(seed, "graphs", 0))
                    .map_err(|e| e.to_string())?;
                let he = path_between_uniform_pair(&pair.exact, derive_seed(seed, "pair", 0))
                    .ok()
                    .map(|g| g.h_n);
                let hs = path_between_uniform_pair(&pair.step, derive_seed(seed, "pair", 0))
                    .ok()
                    .map(|g| g.h_n);
                Ok::<_, String>((pair.mismatches, he, hs))
            })?;
            let ok = b.accept(outcomes);
            let opt = |h: Option<u32>| h.map_or(String::new(), |h| h.to_string());
            for (i, (mm, he, hs)) in &ok {
                rows.push(format!("{i},{n},{mp},{eps},{mm},{},{}", opt(*he), opt(*hs)));
            }
            let mm = column(&ok, |r| r.0 as f64);
            let mmm = stats::moments(&mm);
            let bound = n as f64 * eps;
            let tag = format!("m{mp}_n{n}");
            b.value(format!("eps_{tag}"), eps);
            b.value(format!("mismatch_bound_{tag}"), bound);
            b.value(format!("mismatch_se_{tag}"), mmm.se_mean);
            let slack = if mmm.se_mean.is_finite() {
                3.0 * mmm.se_mean
            } else {
                0.0
            };
            b.criterion(Criterion::at_most(
                format!("mismatch_mean_{tag}"),
                mmm.mean,
                bound + slack,
            ));
            let hs: Vec<f64> = ok.iter().filter_map(|(_, r)| r.2.map(f64::from)).collect();
            if let Some((pm, pmean, ph)) = &prev {
                if mmm.mean > *pmean {
                    increases += 1;
                }
                if !hs.is_empty() && !ph.is_empty() {
                    b.value(format!("hop_drift_ks_m{pm}_m{mp}_n{n}"), ks_two(ph, &hs));
                }
            }
            prev = Some((mp, mmm.mean, hs));
        }
        if parts.len() > 1 {
            b.criterion(Criterion::at_most(
                format!("mismatch_increases_n{n}"),
                increases as f64,
                0.0,
            ));
        }
    }
    b.table(
        "step_kernel_convergence",
        "run_id,n,m_parts,eps_m,mismatches,H_exact,H_step",
        rows,
    );
    Ok(b.finish())
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    match cfg.experiment {
        ExperimentName::HopcountClt => run_hopcount_clt(cfg),
        ExperimentName::WeightLimit => run_weight_limit(cfg),
        ExperimentName::DenseSetting => run_dense_setting(cfg),
        ExperimentName::BpAsymptotics => run_bp_asymptotics(cfg),
        ExperimentName::CollisionPpp => run_collision_ppp(cfg),
        ExperimentName::GumbelMin => run_gumbel_min(cfg),
        ExperimentName::Embedding => run_embedding(cfg),
        ExperimentName::ThinningBounds => run_thinning_bounds(cfg),
        ExperimentName::CouplingError => run_coupling_error(cfg),
        ExperimentName::StepKernelConvergence => run_step_kernel_convergence(cfg),
    }
}

/// Writes `<table>.csv`, `<experiment>.json` and `<experiment>_<stat>.ecdf`.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for t in &result.tables {
        let p = dir.join(format!("{}.csv", t.name));
        fs::write(&p, t.to_csv())?;
        written.push(p);
    }
    let name = result.summary.experiment.as_str();
    let p = dir.join(format!("{name}.json"));
    fs::write(&p, serde_json::to_string_pretty(&result.summary)?)?;
    written.push(p);
    for (stat, values) in &result.ecdfs {
        if values.is_empty() {
            continue;
        }
        let p = dir.join(format!("{name}_{stat}.ecdf"));
        let mut buf = Vec::new();
        EmpiricalSample::new(values.clone())?.write_ecdf(&mut buf)?;
        fs::write(&p, buf)?;
        written.push(p);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteEntry {
    pub index: usize,
    pub experiment: Option<String>,
    pub summary: Option<Summary>,
    pub error: Option<String>,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.summary.as_ref().is_some_and(Summary::all_pass)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub entries: Vec<SuiteEntry>,
    pub all_pass: bool,
    /// `experiment/criterion` names that failed, plus entries that errored.
    pub failures: Vec<String>,
}

/// Runs every entry; an entry that does not parse or fails to run is reported
/// and skipped. Outputs go to each entry's `out` directory when set.
pub fn run_suite(entries: &[serde_json::Value], workers: Option<usize>) -> SuiteReport {
    let mut out = Vec::new();
    let mut failures = Vec::new();
    for (index, v) in entries.iter().enumerate() {
        let parsed = serde_json::from_value::<ExperimentConfig>(v.clone()).map_err(HarnessError::from);
        let experiment = v.get("experiment").and_then(|e| e.as_str()).map(str::to_string);
        let outcome = parsed.and_then(|mut cfg| {
            if workers.is_some() {
                cfg.workers = workers;
            }
            let res = run_experiment(&cfg)?;
            if let Some(dir) = &cfg.out {
                write_outputs(&res, dir)?;
            }
            Ok(res.summary)
        });
        let entry = match outcome {
            Ok(summary) => {
                for c in summary.criteria.iter().filter(|c| !c.pass) {
                    failures.push(format!("{}/{}", summary.experiment.as_str(), c.name));
                }
                SuiteEntry {
                    index,
                    experiment,
                    summary: Some(summary),
                    error: None,
                }
            }
            Err(e) => {
                failures.push(format!("entry {index}: {e}"));
                SuiteEntry {
                    index,
                    experiment,
                    summary: None,
                    error: Some(e.to_string()),
                }
            }
        };
        out.push(entry);
    }
    SuiteReport {
        all_pass: failures.is_empty(),
        entries: out,
        failures,
    }
}
