//! Connection of two labeled flows.
//!
//! The flow from `x` is frozen after `a_n` splits. The flow from `y` then runs
//! on the labels not yet dead in the `x` flow, and every time it kills a label
//! that is alive in the frozen `x` flow a possible collision edge is recorded
//! with a fresh Exp(1) residual lifetime. The shortest weight is
//! `tau_x + min_i (tau_{C_i} + E_i)`.

use std::io::{self, Write};

use rand::Rng;
use thiserror::Error;

use crate::graphgen::TypedVertexSet;
use crate::kernel::FiniteKernel;
use crate::labelbp::{LabelError, LabeledFlow, LabeledParticle};
use crate::rng::{derive_seed, exp_draw, open_unit, rng_from_seed, sub_seed, uniform_index};
use crate::stats::{self, EmpiricalSample, StatsError};

pub const DEFAULT_MAX_ATTEMPTS: u64 = 1_000;
pub const MIN_PPP_RUNS: usize = 500;

#[derive(Debug, Error, PartialEq)]
pub enum TwoFlowError {
    #[error("flow from x did not reach {0} splits in {1} attempts")]
    XFlowDied(usize, u64),
    #[error("flow from y did not produce {0} collisions in {1} attempts")]
    YFlowDied(usize, u64),
    #[error("split cap {0} reached before {1} collisions")]
    SplitCap(usize, usize),
    #[error("no collision recorded")]
    NoCollision,
    #[error("invalid parameters: {0}")]
    Invalid(&'static str),
    #[error("need at least {MIN_PPP_RUNS} runs, got {0}")]
    TooFewRuns(usize),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// One possible collision edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionRecord {
    /// 1-based.
    pub index: usize,
    /// Split of the `y` flow at which the label died.
    pub split: usize,
    pub tau: f64,
    pub residual: f64,
    pub label: u32,
    pub ty: u32,
    /// Generation of the dead `x`-side endpoint.
    pub gen_x: u32,
    pub gen_y: u32,
    pub thinned_x: bool,
    pub thinned_y: bool,
    /// Rank of the label among the distinct alive `x` labels of its type, and
    /// their number.
    pub label_rank: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoFlowResult {
    pub n: usize,
    pub a_n: usize,
    pub x: u32,
    pub y: u32,
    pub tau_x: f64,
    /// `S^x_{a_n}`.
    pub x_alive: usize,
    pub collisions: Vec<CollisionRecord>,
    /// 1-based index of the minimizing collision.
    pub argmin: usize,
    pub p_n: f64,
    pub h_n: u32,
    pub wx_hat: f64,
    pub wy_hat: f64,
    pub y_splits: usize,
    pub attempts_x: u64,
    pub attempts_y: u64,
}

impl TwoFlowResult {
    pub fn chosen(&self) -> &CollisionRecord {
        &self.collisions[self.argmin - 1]
    }

    /// `C^(i) a_n / n` for every recorded collision.
    pub fn rescaled_splits(&self) -> Vec<f64> {
        self.collisions
            .iter()
            .map(|c| c.split as f64 * self.a_n as f64 / self.n as f64)
            .collect()
    }
}

/// `P_n`, `H_n` and the terms they are made of.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathStatistics {
    pub p_n: f64,
    pub h_n: u32,
    pub argmin: usize,
    pub tau_x: f64,
    /// `min_i (tau_{C_i} + E_i)`.
    pub min_term: f64,
}

pub fn assemble_path_statistics(tau_x: f64, collisions: &[CollisionRecord]) -> Result<PathStatistics, TwoFlowError> {
    let (i, best) = collisions
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1.tau + a.1.residual).total_cmp(&(b.1.tau + b.1.residual)))
        .ok_or(TwoFlowError::NoCollision)?;
    let min_term = best.tau + best.residual;
    Ok(PathStatistics {
        p_n: tau_x + min_term,
        h_n: best.gen_x + best.gen_y + 1,
        argmin: i + 1,
        tau_x,
        min_term,
    })
}

/// `a_n = ceil(sqrt(n))`.
pub fn default_a_n(n: usize) -> usize {
    (n as f64).sqrt().ceil() as usize
}

/// `a_n = ceil(n^p)`.
pub fn power_a_n(n: usize, p: f64) -> usize {
    (n as f64).powf(p).ceil() as usize
}

/// Split cap for the `y` flow: `20 (n / a_n) (i_max / lambda_tilde)`.
pub fn split_cap(n: usize, a_n: usize, i_max: usize, lambda_tilde: f64) -> usize {
    (20.0 * (n as f64 / a_n as f64) * (i_max as f64 / lambda_tilde)).ceil() as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoFlowParams {
    pub a_n: usize,
    pub i_max: usize,
    pub lambda_tilde: f64,
    pub max_attempts: u64,
}

/// Alive `x` particles grouped by label.
struct FrozenAlive {
    by_label: Vec<LabeledParticle>,
    distinct: Vec<bool>,
    /// Sorted distinct alive labels, per type.
    distinct_by_type: Vec<Vec<u32>>,
}

impl FrozenAlive {
    fn new(flow: &LabeledFlow, n: usize, r: usize) -> Self {
        let mut by_label = flow.alive.clone();
        by_label.sort_by_key(|p| (p.label, p.generation, p.thinned));
        let mut distinct = vec![false; n];
        let mut distinct_by_type = vec![Vec::new(); r];
        for p in &by_label {
            if !distinct[p.label as usize] {
                distinct[p.label as usize] = true;
                distinct_by_type[p.ty as usize].push(p.label);
            }
        }
        Self {
            by_label,
            distinct,
            distinct_by_type,
        }
    }

    fn particles(&self, label: u32) -> &[LabeledParticle] {
        let lo = self.by_label.partition_point(|p| p.label < label);
        let hi = self.by_label.partition_point(|p| p.label <= label);
        &self.by_label[lo..hi]
    }
}

/// Runs both flows. `x` and `y` are uniform vertices, `y` outside the dead
/// labels of the frozen `x` flow; both flows are conditioned on survival by
/// rerunning with sub-seeds.
pub fn run_two_flow(
    kernel: &FiniteKernel,
    vs: &TypedVertexSet,
    params: TwoFlowParams,
    seed: u64,
) -> Result<TwoFlowResult, TwoFlowError> {
    let TwoFlowParams {
        a_n,
        i_max,
        lambda_tilde,
        max_attempts,
    } = params;
    let n = vs.n;
    if a_n == 0 || i_max == 0 || a_n >= n {
        return Err(TwoFlowError::Invalid("need 1 <= a_n < n and i_max >= 1"));
    }
    let mut pick = rng_from_seed(derive_seed(seed, "twoflow/endpoints", 0));
    let x = uniform_index(&mut pick, n) as u32;

    let x_seed = derive_seed(seed, "twoflow/x", 0);
    let mut frozen = None;
    for attempt in 0..max_attempts {
        let mut rng = rng_from_seed(sub_seed(x_seed, attempt));
        let mut flow = LabeledFlow::start(kernel, vs, x, &[], &mut rng)?;
        while flow.k() < a_n && flow.step(&mut rng).is_some() {}
        if flow.k() == a_n && flow.alive_count() > 0 {
            frozen = Some((flow, attempt + 1));
            break;
        }
    }
    let (xflow, attempts_x) = frozen.ok_or(TwoFlowError::XFlowDied(a_n, max_attempts))?;
    let tau_x = xflow.tau();
    let alive_x = FrozenAlive::new(&xflow, n, kernel.r);
    let mut forbidden: Vec<u32> = xflow.dead_labels.clone();
    forbidden.sort_unstable();
    forbidden.dedup();

    let y = loop {
        let v = uniform_index(&mut pick, n) as u32;
        if !xflow.is_dead(v) {
            break v;
        }
    };

    let cap = split_cap(n, a_n, i_max, lambda_tilde);
    let y_seed = derive_seed(seed, "twoflow/y", 0);
    let res_seed = derive_seed(seed, "twoflow/residual", 0);
    for attempt in 0..max_attempts {
        let mut rng = rng_from_seed(sub_seed(y_seed, attempt));
        let mut res_rng = rng_from_seed(sub_seed(res_seed, attempt));
        let mut flow = LabeledFlow::start(kernel, vs, y, &forbidden, &mut rng)?;
        let mut collided = vec![false; n];
        let mut collisions = Vec::new();
        let root = LabeledParticle {
            label: y,
            ty: vs.types[y as usize],
            generation: 0,
            thinned: false,
        };
        let mut record =
            |split: usize, tau: f64, p: LabeledParticle, thinned_y: bool, collisions: &mut Vec<CollisionRecord>| {
                let l = p.label;
                if !alive_x.distinct[l as usize] || collided[l as usize] {
                    return;
                }
                collided[l as usize] = true;
                let candidates = alive_x.particles(l);
                let xp = candidates[uniform_index(&mut res_rng, candidates.len())];
                let same_type = &alive_x.distinct_by_type[p.ty as usize];
                let rank = same_type.partition_point(|v| *v < l);
                collisions.push(CollisionRecord {
                    index: collisions.len() + 1,
                    split,
                    tau,
                    residual: exp_draw(&mut res_rng, 1.0),
                    label: l,
                    ty: p.ty,
                    gen_x: xp.generation - 1,
                    gen_y: p.generation,
                    thinned_x: xp.thinned,
                    thinned_y,
                    label_rank: (rank, same_type.len()),
                });
            };
        record(0, 0.0, root, false, &mut collisions);
        while collisions.len() < i_max && flow.k() < cap {
            match flow.step(&mut rng) {
                Some(ev) => record(ev.split, ev.tau, ev.particle, ev.thinned, &mut collisions),
                None => break,
            }
        }
        if collisions.len() >= i_max {
            let stats = assemble_path_statistics(tau_x, &collisions)?;
            let wy_hat = (-lambda_tilde * flow.tau()).exp() * flow.alive_count() as f64;
            return Ok(TwoFlowResult {
                n,
                a_n,
                x,
                y,
                tau_x,
                x_alive: xflow.alive_count(),
                collisions,
                argmin: stats.argmin,
                p_n: stats.p_n,
                h_n: stats.h_n,
                wx_hat: (-lambda_tilde * tau_x).exp() * xflow.alive_count() as f64,
                wy_hat,
                y_splits: flow.k(),
                attempts_x,
                attempts_y: attempt + 1,
            });
        }
        if flow.k() >= cap {
            return Err(TwoFlowError::SplitCap(cap, i_max));
        }
    }
    Err(TwoFlowError::YFlowDied(i_max, max_attempts))
}

pub const TWO_FLOW_CSV_HEADER: &str = "run_id,n,a_n,tau_x,C1,Ccon,argmin,Pn,Hn,col_type,Gx,Gy,wx_hat,wy_hat";

pub fn write_two_flow_row<W: Write>(run_id: u64, r: &TwoFlowResult, mut out: W) -> io::Result<()> {
    let c = r.chosen();
    writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        run_id,
        r.n,
        r.a_n,
        r.tau_x,
        r.collisions[0].split,
        c.split,
        r.argmin,
        r.p_n,
        r.h_n,
        c.ty,
        c.gen_x,
        c.gen_y,
        r.wx_hat,
        r.wy_hat
    )
}

/// Goodness of fit of the rescaled collision splits to a Poisson process.
#[derive(Debug, Clone, PartialEq)]
pub struct PppReport {
    pub runs: usize,
    /// `lambda_tilde * sum_s pi_s^2 / mu_s`.
    pub rate: f64,
    /// Maximum-likelihood rate from the first `k` arrivals.
    pub rate_estimate: f64,
    /// KS distance of `C^(i) a_n / n` against Gamma(i, rate), `i = 1..`.
    pub ks_by_index: Vec<f64>,
    /// KS distance of the first gap against Exp(rate).
    pub gap_ks: f64,
    /// Correlation of the first arrival with the first gap.
    pub gap_correlation: f64,
}

/// `rescaled[run][i]` holds `C^(i+1) a_n / n`.
pub fn ppp_check(rescaled: &[Vec<f64>], rate: f64, indices: usize) -> Result<PppReport, TwoFlowError> {
    let runs = rescaled.len();
    if runs < MIN_PPP_RUNS {
        return Err(TwoFlowError::TooFewRuns(runs));
    }
    if rescaled.iter().any(|r| r.len() < indices.max(2)) {
        return Err(TwoFlowError::Invalid("every run needs the requested arrivals"));
    }
    let mut ks_by_index = Vec::with_capacity(indices);
    for i in 0..indices {
        let col: Vec<f64> = rescaled.iter().map(|r| r[i]).collect();
        let shape = (i + 1) as f64;
        let d = stats::ks_against(&col, |x| stats::cdf_gamma(x, shape, rate).unwrap_or(f64::NAN))?;
        ks_by_index.push(d);
    }
    let first: Vec<f64> = rescaled.iter().map(|r| r[0]).collect();
    let gaps: Vec<f64> = rescaled.iter().map(|r| r[1] - r[0]).collect();
    let gap_ks = stats::ks_against(&gaps, |x| stats::cdf_exp(x, rate).unwrap_or(f64::NAN))?;
    let k = indices.max(1);
    let total: f64 = rescaled.iter().map(|r| r[k - 1]).sum();
    Ok(PppReport {
        runs,
        rate,
        rate_estimate: (k * runs) as f64 / total,
        ks_by_index,
        gap_ks,
        gap_correlation: stats::correlation(&first, &gaps),
    })
}

/// `lambda_tilde * sum_s pi_s^2 / mu_s`.
pub fn collision_rate(lambda_tilde: f64, pi: &[f64], mu: &[f64]) -> f64 {
    lambda_tilde * pi.iter().zip(mu).map(|(p, m)| p * p / m).sum::<f64>()
}

/// `min_i {(1/lambda) ln P_i + E_i}` over the first `i_max` points of a PPP(1),
/// together with the 1-based minimizing index.
pub fn gumbel_min_draw<R: Rng + ?Sized>(lambda_tilde: f64, i_max: usize, rng: &mut R) -> (f64, usize) {
    let mut p = 0.0;
    let mut best = (f64::INFINITY, 0);
    for i in 1..=i_max {
        p += -open_unit(rng).ln();
        let v = p.ln() / lambda_tilde - open_unit(rng).ln();
        if v < best.0 {
            best = (v, i);
        }
    }
    best
}

pub fn gumbel_min_sampler(lambda_tilde: f64, i_max: usize, draws: usize, seed: u64) -> Vec<(f64, usize)> {
    let mut rng = rng_from_seed(seed);
    (0..draws)
        .map(|_| gumbel_min_draw(lambda_tilde, i_max, &mut rng))
        .collect()
}

/// Limit law of the minimum: `P(min >= z) = exp(-e^{lambda z} / (lambda + 1))`.
pub fn gumbel_min_cdf(z: f64, lambda_tilde: f64) -> f64 {
    -(-(lambda_tilde * z).exp() / (lambda_tilde + 1.0)).exp_m1()
}

/// Mean of the limit law: `(ln(lambda + 1) - gamma) / lambda`.
pub fn gumbel_min_mean(lambda_tilde: f64) -> f64 {
    ((lambda_tilde + 1.0).ln() - stats::EULER_GAMMA) / lambda_tilde
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailRow {
    pub k: usize,
    pub empirical: f64,
    pub bound: f64,
    /// `sqrt(bound (1 - bound) / N)`.
    pub se: f64,
}

impl TailRow {
    pub fn passes(&self) -> bool {
        self.empirical <= self.bound + 3.0 * self.se
    }
}

/// Empirical `P(argmin > k)` against `(lambda/(lambda+1))^k`.
pub fn argmin_tail_check(argmins: &[usize], lambda_tilde: f64, k_grid: &[usize]) -> Vec<TailRow> {
    let total = argmins.len() as f64;
    let q = lambda_tilde / (lambda_tilde + 1.0);
    k_grid
        .iter()
        .map(|&k| {
            let bound = q.powi(k as i32);
            let empirical = argmins.iter().filter(|a| **a > k).count() as f64 / total;
            TailRow {
                k,
                empirical,
                bound,
                se: (bound * (1.0 - bound) / total).sqrt(),
            }
        })
        .collect()
}

/// Draws of `sum_{i <= N} E_i`, `N ~ Geo(1/(lambda+1))` on `{1, 2, ...}`.
pub fn dominating_sums(lambda_tilde: f64, draws: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    let p = 1.0 / (lambda_tilde + 1.0);
    (0..draws)
        .map(|_| {
            let mut sum = exp_draw(&mut rng, 1.0);
            while rng.gen::<f64>() >= p {
                sum += exp_draw(&mut rng, 1.0);
            }
            sum
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DominanceReport {
    /// Estimate of `P(P_con > D)`.
    pub prob_greater: f64,
    pub prob_se: f64,
    pub mean_connection: f64,
    pub mean_dominating: f64,
    pub mean_se: f64,
}

impl DominanceReport {
    pub fn passes(&self) -> bool {
        self.prob_greater <= 0.5 + 3.0 * self.prob_se
            && self.mean_connection <= self.mean_dominating + 3.0 * self.mean_se
    }
}

/// One-sided comparison of the rescaled connection split with the dominating
/// geometric sum.
pub fn geometric_dominance_check(
    connection: &[f64],
    lambda_tilde: f64,
    seed: u64,
) -> Result<DominanceReport, TwoFlowError> {
    if connection.is_empty() {
        return Err(StatsError::EmptySample.into());
    }
    let dom = dominating_sums(lambda_tilde, connection.len().max(10_000), seed);
    let (n1, n2) = (connection.len() as f64, dom.len() as f64);
    let mc = stats::moments(connection);
    let md = stats::moments(&dom);
    Ok(DominanceReport {
        prob_greater: stats::prob_greater(connection, &dom),
        prob_se: ((n1 + n2 + 1.0) / (12.0 * n1 * n2)).sqrt(),
        mean_connection: mc.mean,
        mean_dominating: md.mean,
        mean_se: (mc.se_mean.powi(2) + md.se_mean.powi(2)).sqrt(),
    })
}

/// Empirical sample of `argmin`-indexed rescaled connection splits.
pub fn connection_splits(results: &[TwoFlowResult]) -> Vec<f64> {
    results
        .iter()
        .map(|r| r.chosen().split as f64 * r.a_n as f64 / r.n as f64)
        .collect()
}

/// KS distance of a finished sample against the minimum's limit law.
pub fn gumbel_min_ks(values: &[f64], lambda_tilde: f64) -> Result<f64, TwoFlowError> {
    let sample = EmpiricalSample::new(values.to_vec())?;
    Ok(stats::ks_statistic(&sample, |z| gumbel_min_cdf(z, lambda_tilde)))
}
