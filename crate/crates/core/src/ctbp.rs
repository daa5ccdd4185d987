//! Continuous-time multi-type branching processes with Poisson or binomial
//! offspring.
//!
//! Particles live Exp(1) lifetimes, so with `S` particles alive the next split
//! comes after an Exp(`S`) time and hits a uniformly chosen particle. The
//! simulation is driven by split index: each split consumes two uniforms
//! (waiting time, particle choice) followed by one uniform per child type,
//! which is fed through an inverse CDF. Two processes driven by the same
//! uniforms therefore stay identical until their offspring laws disagree.

use std::io::{self, Write};

use rand::Rng;
use thiserror::Error;

use serde::Serialize;

use crate::kernel::{gauss_legendre, FiniteKernel, MeanOffspringMatrix};
use crate::rng::{rng_from_seed, sub_seed, SimRng};

#[derive(Debug, Error, PartialEq)]
pub enum BpError {
    #[error("split {requested} is beyond the trajectory ({available} splits)")]
    BeyondTrajectory { requested: usize, available: usize },
    #[error("no alive particle of the requested types")]
    EmptyAliveSet,
    #[error("generation sample requested at split {requested}, state is at {current}")]
    NotCurrent { requested: usize, current: usize },
    #[error("no surviving run in {0} attempts")]
    NoSurvivor(u64),
    #[error("offspring mean {0} too large for inverse-CDF sampling")]
    MeanTooLarge(f64),
    #[error("root type {0} out of range")]
    BadRootType(usize),
}

/// Offspring count distribution for one `(parent type, child type)` pair.
#[derive(Debug, Clone, PartialEq)]
pub enum CountLaw {
    Poisson { mean: f64 },
    Binomial { trials: u64, p: f64 },
    Fixed(u32),
}

/// Largest mean handled by the inverse-CDF samplers.
pub const MAX_OFFSPRING_MEAN: f64 = 500.0;

impl CountLaw {
    pub fn mean(&self) -> f64 {
        match self {
            CountLaw::Poisson { mean } => *mean,
            CountLaw::Binomial { trials, p } => *trials as f64 * p,
            CountLaw::Fixed(k) => *k as f64,
        }
    }

    /// Smallest `k` with `F(k) > u`, for `u` in `[0, 1)`.
    pub fn quantile(&self, u: f64) -> u32 {
        match *self {
            CountLaw::Fixed(k) => k,
            CountLaw::Poisson { mean } => {
                if mean <= 0.0 {
                    return 0;
                }
                let mut k = 0u32;
                let mut pmf = (-mean).exp();
                let mut cdf = pmf;
                while cdf <= u {
                    k += 1;
                    pmf *= mean / k as f64;
                    if pmf == 0.0 && k as f64 > mean {
                        break;
                    }
                    cdf += pmf;
                }
                k
            }
            CountLaw::Binomial { trials, p } => {
                if p <= 0.0 || trials == 0 {
                    return 0;
                }
                if p >= 1.0 {
                    return trials as u32;
                }
                let ratio = p / (1.0 - p);
                let mut k = 0u64;
                let mut pmf = (trials as f64 * (-p).ln_1p()).exp();
                let mut cdf = pmf;
                while cdf <= u && k < trials {
                    pmf *= (trials - k) as f64 / (k + 1) as f64 * ratio;
                    k += 1;
                    if pmf == 0.0 && k as f64 > trials as f64 * p {
                        break;
                    }
                    cdf += pmf;
                }
                k as u32
            }
        }
    }
}

/// Per-pair offspring laws, `laws[s][t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OffspringLaw {
    pub laws: Vec<Vec<CountLaw>>,
}

impl OffspringLaw {
    /// Poisson(`lambda[s][t]`) type-`t` children for a type-`s` parent.
    pub fn poisson(m: &MeanOffspringMatrix) -> Self {
        Self {
            laws: m
                .lambda
                .iter()
                .map(|row| row.iter().map(|l| CountLaw::Poisson { mean: *l }).collect())
                .collect(),
        }
    }

    /// Bin(`n_t - delta_st`, `min(kappa[s][t]/n, 1)`).
    pub fn binomial(kernel: &FiniteKernel, counts: &[usize], n: usize) -> Self {
        let r = kernel.r;
        Self {
            laws: (0..r)
                .map(|s| {
                    (0..r)
                        .map(|t| CountLaw::Binomial {
                            trials: (counts[t] - usize::from(s == t)) as u64,
                            p: (kernel.kappa[s][t] / n as f64).min(1.0),
                        })
                        .collect()
                })
                .collect(),
        }
    }

    /// Every type-`s` particle has exactly `children[s][t]` type-`t` children.
    pub fn deterministic(children: Vec<Vec<u32>>) -> Self {
        Self {
            laws: children
                .into_iter()
                .map(|row| row.into_iter().map(CountLaw::Fixed).collect())
                .collect(),
        }
    }

    pub fn r(&self) -> usize {
        self.laws.len()
    }

    pub fn mean_matrix(&self) -> Vec<Vec<f64>> {
        self.laws
            .iter()
            .map(|row| row.iter().map(CountLaw::mean).collect())
            .collect()
    }

    pub fn validate(&self) -> Result<(), BpError> {
        for l in self.laws.iter().flatten() {
            if l.mean() > MAX_OFFSPRING_MEAN {
                return Err(BpError::MeanTooLarge(l.mean()));
            }
        }
        Ok(())
    }
}

/// How the root enters the process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RootStart {
    /// The root lives an Exp(1) lifetime like every other particle.
    Lifetime,
    /// The root splits at time 0 (split 0); used when the root is a vertex
    /// that is wet from the start.
    Immediate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Particle {
    pub ty: u32,
    pub generation: u32,
    pub id: u32,
    pub parent: u32,
}

pub const ROOT_PARENT: u32 = u32::MAX;

/// One realization of the process.
#[derive(Debug, Clone, PartialEq)]
pub struct BpState {
    pub r: usize,
    pub root_type: u32,
    pub root_start: RootStart,
    pub alive: Vec<Particle>,
    pub alive_by_type: Vec<u64>,
    pub dead_by_type: Vec<u64>,
    /// `tau_0 = 0, tau_1, ..., tau_m`.
    pub split_times: Vec<f64>,
    /// `S_0, ..., S_m`.
    pub alive_history: Vec<u64>,
    /// Type of each dead particle in order of death.
    pub death_types: Vec<u32>,
    child_offsets: Vec<u32>,
    child_types: Vec<u32>,
    next_id: u32,
    pub extinct: bool,
}

/// Uniforms consumed by one split.
#[derive(Debug, Clone)]
pub struct SplitUniforms {
    pub time: f64,
    pub choice: f64,
    pub counts: Vec<f64>,
}

impl SplitUniforms {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, r: usize) -> Self {
        Self {
            time: rng.gen(),
            choice: rng.gen(),
            counts: (0..r).map(|_| rng.gen()).collect(),
        }
    }
}

impl BpState {
    pub fn new(r: usize, root_type: u32, root_start: RootStart) -> Self {
        let mut state = Self {
            r,
            root_type,
            root_start,
            alive: vec![Particle {
                ty: root_type,
                generation: 0,
                id: 0,
                parent: ROOT_PARENT,
            }],
            alive_by_type: vec![0; r],
            dead_by_type: vec![0; r],
            split_times: vec![0.0],
            alive_history: vec![1],
            death_types: Vec::new(),
            child_offsets: vec![0],
            child_types: Vec::new(),
            next_id: 1,
            extinct: false,
        };
        state.alive_by_type[root_type as usize] = 1;
        state
    }

    /// Number of splits after time 0 (the immediate root split is split 0).
    pub fn m(&self) -> usize {
        self.split_times.len() - 1
    }

    pub fn alive_count(&self) -> u64 {
        self.alive.len() as u64
    }

    pub fn tau(&self) -> f64 {
        *self.split_times.last().unwrap_or(&0.0)
    }

    fn kill_and_reproduce(&mut self, idx: usize, law: &OffspringLaw, counts_u: &[f64]) -> Vec<u32> {
        let p = self.alive.swap_remove(idx);
        let s = p.ty as usize;
        self.alive_by_type[s] -= 1;
        self.dead_by_type[s] += 1;
        self.death_types.push(p.ty);
        let mut drawn = Vec::with_capacity(self.r);
        for (t, u) in counts_u.iter().enumerate() {
            let k = law.laws[s][t].quantile(*u);
            drawn.push(k);
            for _ in 0..k {
                self.alive.push(Particle {
                    ty: t as u32,
                    generation: p.generation + 1,
                    id: self.next_id,
                    parent: p.id,
                });
                self.next_id = self.next_id.wrapping_add(1);
                self.child_types.push(t as u32);
            }
            self.alive_by_type[t] += u64::from(k);
        }
        self.child_offsets.push(self.child_types.len() as u32);
        drawn
    }

    /// Splits the root at time 0; only meaningful before any other split.
    pub fn split_root_now(&mut self, law: &OffspringLaw, counts_u: &[f64]) -> Vec<u32> {
        debug_assert!(self.death_types.is_empty());
        let drawn = self.kill_and_reproduce(0, law, counts_u);
        self.alive_history[0] = self.alive_count();
        if self.alive.is_empty() {
            self.extinct = true;
        }
        drawn
    }

    /// Performs one split from the given uniforms. Returns the offspring counts
    /// per type, or `None` if the process is already extinct.
    pub fn step_with(&mut self, law: &OffspringLaw, u: &SplitUniforms) -> Option<Vec<u32>> {
        let s = self.alive.len();
        if s == 0 {
            self.extinct = true;
            return None;
        }
        let dt = -(1.0 - u.time).ln() / s as f64;
        let idx = ((u.choice * s as f64) as usize).min(s - 1);
        let tau = self.tau() + dt;
        let drawn = self.kill_and_reproduce(idx, law, &u.counts);
        self.split_times.push(tau);
        self.alive_history.push(self.alive_count());
        if self.alive.is_empty() {
            self.extinct = true;
        }
        Some(drawn)
    }

    pub fn step<R: Rng + ?Sized>(&mut self, law: &OffspringLaw, rng: &mut R) -> Option<Vec<u32>> {
        if self.alive.is_empty() {
            self.extinct = true;
            return None;
        }
        let u = SplitUniforms::draw(rng, self.r);
        self.step_with(law, &u)
    }

    /// Index into `death_types` of the particle dying at split `j`.
    fn death_index(&self, j: usize) -> usize {
        match self.root_start {
            RootStart::Lifetime => j - 1,
            RootStart::Immediate => j,
        }
    }
}

/// Simulates until `m_max` splits or extinction.
pub fn run_bp(
    law: &OffspringLaw,
    root_type: usize,
    m_max: usize,
    seed: u64,
    root: RootStart,
) -> Result<BpState, BpError> {
    if root_type >= law.r() {
        return Err(BpError::BadRootType(root_type));
    }
    law.validate()?;
    let mut rng = rng_from_seed(seed);
    Ok(run_bp_with(law, root_type, m_max, &mut rng, root))
}

fn run_bp_with(law: &OffspringLaw, root_type: usize, m_max: usize, rng: &mut SimRng, root: RootStart) -> BpState {
    let r = law.r();
    let mut state = BpState::new(r, root_type as u32, root);
    if root == RootStart::Immediate {
        let us: Vec<f64> = (0..r).map(|_| rng.gen()).collect();
        state.split_root_now(law, &us);
    }
    while state.m() < m_max && state.step(law, rng).is_some() {}
    state
}

/// A run conditioned to reach `m_max` splits, by rejection.
#[derive(Debug, Clone)]
pub struct SurvivingRun {
    pub state: BpState,
    pub attempts: u64,
}

/// Reruns with `sub_seed(seed, attempt)` until a run reaches `m_max` splits.
pub fn run_bp_surviving(
    law: &OffspringLaw,
    root_type: usize,
    m_max: usize,
    seed: u64,
    root: RootStart,
    max_attempts: u64,
) -> Result<SurvivingRun, BpError> {
    for attempt in 0..max_attempts {
        let state = run_bp(law, root_type, m_max, sub_seed(seed, attempt), root)?;
        if state.m() >= m_max {
            return Ok(SurvivingRun {
                state,
                attempts: attempt + 1,
            });
        }
    }
    Err(BpError::NoSurvivor(max_attempts))
}

/// Per-type alive and dead counts after split `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeProfile {
    pub alive: Vec<u64>,
    pub dead: Vec<u64>,
}

pub fn alive_dead_profile(state: &BpState, m: usize) -> Result<TypeProfile, BpError> {
    if m > state.m() {
        return Err(BpError::BeyondTrajectory {
            requested: m,
            available: state.m(),
        });
    }
    let mut alive = vec![0i64; state.r];
    let mut dead = vec![0u64; state.r];
    alive[state.root_type as usize] = 1;
    let deaths = match state.root_start {
        RootStart::Lifetime => m,
        RootStart::Immediate => (m + 1).min(state.death_types.len()),
    };
    for d in 0..deaths {
        let s = state.death_types[d] as usize;
        alive[s] -= 1;
        dead[s] += 1;
        let (a, b) = (state.child_offsets[d] as usize, state.child_offsets[d + 1] as usize);
        for t in &state.child_types[a..b] {
            alive[*t as usize] += 1;
        }
    }
    Ok(TypeProfile {
        alive: alive.into_iter().map(|a| a as u64).collect(),
        dead,
    })
}

/// Generation of a uniformly chosen alive particle whose type lies in
/// `types`. Only the current split can be sampled.
pub fn generation_sample<R: Rng + ?Sized>(
    state: &BpState,
    m: usize,
    types: &[u32],
    rng: &mut R,
) -> Result<u32, BpError> {
    if m != state.m() {
        return Err(BpError::NotCurrent {
            requested: m,
            current: state.m(),
        });
    }
    let eligible: Vec<&Particle> = state.alive.iter().filter(|p| types.contains(&p.ty)).collect();
    if eligible.is_empty() {
        return Err(BpError::EmptyAliveSet);
    }
    let i = crate::rng::uniform_index(rng, eligible.len());
    Ok(eligible[i].generation)
}

/// `e^{-lambda_tilde tau_m} S_m` at the last split, 0 after extinction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleEstimate {
    pub w_hat: f64,
    pub m_used: usize,
    pub survived: bool,
}

pub fn estimate_w(state: &BpState, lambda_tilde: f64) -> MartingaleEstimate {
    let survived = !state.alive.is_empty();
    MartingaleEstimate {
        w_hat: if survived {
            (-lambda_tilde * state.tau()).exp() * state.alive_count() as f64
        } else {
            0.0
        },
        m_used: state.m(),
        survived,
    }
}

/// Empirical moment generating function of `w` at `t`.
pub fn empirical_mgf(w: &[f64], t: f64) -> f64 {
    w.iter().map(|x| (t * x).exp()).sum::<f64>() / w.len() as f64
}

/// Right-hand side of the functional equation for `M_W`, with `M_W` replaced
/// by the empirical transform of `w`:
/// `int_0^1 exp{(lambda + 1)(M(t u^lambda) - 1)} du` (substituting `u = e^{-y}`).
pub fn mw_equation_rhs(w: &[f64], t: f64, lambda_tilde: f64, quad_points: usize) -> f64 {
    let (nodes, weights) = gauss_legendre(quad_points);
    nodes
        .iter()
        .zip(&weights)
        .map(|(x, wt)| {
            let u = 0.5 * (x + 1.0);
            let m = empirical_mgf(w, t * u.powf(lambda_tilde));
            0.5 * wt * ((lambda_tilde + 1.0) * (m - 1.0)).exp()
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MwPoint {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
}

impl MwPoint {
    pub fn gap(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

/// Both sides of the `M_W` equation at each `t`; `w` holds the estimates of
/// all runs, zeros included.
pub fn mw_self_consistency(w: &[f64], lambda_tilde: f64, ts: &[f64]) -> Vec<MwPoint> {
    ts.iter()
        .map(|&t| MwPoint {
            t,
            lhs: empirical_mgf(w, t),
            rhs: mw_equation_rhs(w, t, lambda_tilde, 64),
        })
        .collect()
}

/// Binomial and Poisson processes driven by the same uniforms.
#[derive(Debug, Clone)]
pub struct CoupledRun {
    pub bin: BpState,
    pub poi: BpState,
    /// First split at which the offspring counts differed.
    pub decouple_split: Option<usize>,
}

pub fn coupled_bin_poi_run(
    kernel: &FiniteKernel,
    counts: &[usize],
    n: usize,
    root_type: usize,
    m_max: usize,
    seed: u64,
) -> Result<CoupledRun, BpError> {
    if root_type >= kernel.r {
        return Err(BpError::BadRootType(root_type));
    }
    let bin_law = OffspringLaw::binomial(kernel, counts, n);
    let poi_law = OffspringLaw::poisson(&kernel.offspring_matrix());
    bin_law.validate()?;
    poi_law.validate()?;
    let r = kernel.r;
    let mut rng = rng_from_seed(seed);
    let mut bin = BpState::new(r, root_type as u32, RootStart::Lifetime);
    let mut poi = bin.clone();
    let mut decouple_split = None;
    for j in 1..=m_max {
        if bin.alive.is_empty() && poi.alive.is_empty() {
            break;
        }
        let u = SplitUniforms::draw(&mut rng, r);
        let a = if bin.m() < m_max {
            bin.step_with(&bin_law, &u)
        } else {
            None
        };
        let b = if poi.m() < m_max {
            poi.step_with(&poi_law, &u)
        } else {
            None
        };
        if decouple_split.is_none() && a != b {
            decouple_split = Some(j);
        }
    }
    Ok(CoupledRun {
        bin,
        poi,
        decouple_split,
    })
}

/// Smallest split index checked by [`check_summable_errors`].
pub fn summable_cutoff(m: usize) -> usize {
    let ll = (m as f64).ln().ln();
    let c = if ll.is_finite() { ll.ceil() as usize } else { 0 };
    c.max(3)
}

/// Fraction of runs reaching `m` with `|S_j - lambda_tilde j| <= C sqrt(j ln j)`
/// for every `j` in `[max(3, ceil(ln ln m)), m]`. Runs that stop before `m`
/// are ignored.
pub fn check_summable_errors(states: &[BpState], lambda_tilde: f64, c: f64, m: usize) -> f64 {
    let j0 = summable_cutoff(m);
    let mut total = 0usize;
    let mut good = 0usize;
    for s in states.iter().filter(|s| s.m() >= m) {
        total += 1;
        let ok = (j0..=m).all(|j| {
            let jf = j as f64;
            (s.alive_history[j] as f64 - lambda_tilde * jf).abs() <= c * (jf * jf.ln()).sqrt()
        });
        if ok {
            good += 1;
        }
    }
    if total == 0 {
        f64::NAN
    } else {
        good as f64 / total as f64
    }
}

/// Normalized waiting times `S_{j-1} (tau_j - tau_{j-1})`, Exp(1) under the
/// model.
pub fn normalized_gaps(state: &BpState) -> Vec<f64> {
    (1..=state.m())
        .map(|j| state.alive_history[j - 1] as f64 * (state.split_times[j] - state.split_times[j - 1]))
        .collect()
}

impl BpState {
    /// Offspring counts of the particle dying at split `j`, by type.
    pub fn offspring_at(&self, j: usize) -> Vec<u32> {
        let d = self.death_index(j);
        let mut out = vec![0; self.r];
        let (a, b) = (self.child_offsets[d] as usize, self.child_offsets[d + 1] as usize);
        for t in &self.child_types[a..b] {
            out[*t as usize] += 1;
        }
        out
    }
}

/// One line of the trajectory summary CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub run_id: u64,
    pub survived: bool,
    pub m: usize,
    pub tau_m: f64,
    pub s_m: u64,
    pub w_hat: f64,
    pub g_sample: Option<u32>,
}

pub const TRAJECTORY_CSV_HEADER: &str = "run_id,survived,m,tau_m,S_m,w_hat,G_sample";

pub fn write_trajectory_csv<W: Write>(rows: &[TrajectoryRow], mut out: W) -> io::Result<()> {
    writeln!(out, "{TRAJECTORY_CSV_HEADER}")?;
    for r in rows {
        let g = r.g_sample.map_or(String::new(), |g| g.to_string());
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.run_id, r.survived, r.m, r.tau_m, r.s_m, r.w_hat, g
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::build_finite_kernel;

    fn er_law(c: f64) -> OffspringLaw {
        let (_, m) = build_finite_kernel(vec![1.0], vec![vec![c]]).unwrap();
        OffspringLaw::poisson(&m)
    }

    #[test]
    fn mw_equation_for_point_masses() {
        // W = 0 gives M = 1 on both sides
        let zeros = vec![0.0; 10];
        let p = mw_self_consistency(&zeros, 1.0, &[-0.5])[0];
        assert!((p.lhs - 1.0).abs() < 1e-15 && (p.rhs - 1.0).abs() < 1e-12);
        // W = 1: rhs = int_0^1 exp{2(e^{t u} - 1)} du
        let ones = vec![1.0; 3];
        let rhs = mw_equation_rhs(&ones, -1.0, 1.0, 64);
        let mut reference = 0.0;
        let steps = 200_000;
        for i in 0..steps {
            let u = (i as f64 + 0.5) / steps as f64;
            reference += (2.0 * ((-u).exp() - 1.0)).exp() / steps as f64;
        }
        assert!((rhs - reference).abs() < 1e-9);
    }

    #[test]
    fn poisson_quantile_matches_cdf() {
        let law = CountLaw::Poisson { mean: 2.0 };
        let e2 = (-2.0f64).exp();
        assert_eq!(law.quantile(0.0), 0);
        assert_eq!(law.quantile(e2 * 0.999), 0);
        assert_eq!(law.quantile(e2 * 1.001), 1);
        assert_eq!(law.quantile(3.0 * e2 * 1.001), 2);
        assert_eq!(CountLaw::Poisson { mean: 0.0 }.quantile(0.9), 0);
    }

    #[test]
    fn binomial_quantile_edges() {
        assert_eq!(CountLaw::Binomial { trials: 5, p: 1.0 }.quantile(0.3), 5);
        assert_eq!(CountLaw::Binomial { trials: 5, p: 0.0 }.quantile(0.3), 0);
        // Bin(2, 1/2): F(0) = 1/4, F(1) = 3/4
        let b = CountLaw::Binomial { trials: 2, p: 0.5 };
        assert_eq!(b.quantile(0.2), 0);
        assert_eq!(b.quantile(0.5), 1);
        assert_eq!(b.quantile(0.8), 2);
        assert_eq!(b.quantile(1.0 - 1e-17), 2);
    }

    #[test]
    fn single_child_chain() {
        let law = OffspringLaw::deterministic(vec![vec![1]]);
        let s = run_bp(&law, 0, 50, 3, RootStart::Lifetime).unwrap();
        assert!(s.alive_history.iter().all(|a| *a == 1));
        assert_eq!(s.alive[0].generation, 50);
        assert_eq!(generation_sample(&s, 50, &[0], &mut rng_from_seed(1)).unwrap(), 50);
    }

    #[test]
    fn conservation_and_increasing_times() {
        let law = er_law(2.0);
        let s = run_bp(&law, 0, 2000, 11, RootStart::Lifetime).unwrap();
        for j in 1..=s.m() {
            let d: u32 = s.offspring_at(j).iter().sum();
            assert_eq!(s.alive_history[j] as i64, s.alive_history[j - 1] as i64 + d as i64 - 1);
            assert!(s.split_times[j] > s.split_times[j - 1]);
        }
        let total_dead: u64 = s.dead_by_type.iter().sum();
        assert_eq!(total_dead as usize, s.m());
        for p in &s.alive {
            assert!(p.generation >= 1 || s.m() == 0);
        }
    }

    #[test]
    fn profile_at_zero_and_current() {
        let (_, m) = build_finite_kernel(vec![0.5, 0.5], vec![vec![1.0, 3.0], vec![3.0, 1.0]]).unwrap();
        let law = OffspringLaw::poisson(&m);
        let s = run_bp(&law, 1, 500, 2, RootStart::Lifetime).unwrap();
        let p0 = alive_dead_profile(&s, 0).unwrap();
        assert_eq!(p0.alive, vec![0, 1]);
        assert_eq!(p0.dead, vec![0, 0]);
        let pm = alive_dead_profile(&s, s.m()).unwrap();
        assert_eq!(pm.alive, s.alive_by_type);
        assert_eq!(pm.dead, s.dead_by_type);
        assert!(alive_dead_profile(&s, s.m() + 1).is_err());
    }

    #[test]
    fn immediate_root_splits_at_zero() {
        let law = OffspringLaw::deterministic(vec![vec![3]]);
        let s = run_bp(&law, 0, 4, 0, RootStart::Immediate).unwrap();
        assert_eq!(s.alive_history, vec![3, 5, 7, 9, 11]);
        assert_eq!(s.split_times[0], 0.0);
        assert_eq!(s.dead_by_type, vec![5]);
        assert_eq!(alive_dead_profile(&s, 0).unwrap().alive, vec![3]);
        assert_eq!(alive_dead_profile(&s, 4).unwrap().alive, vec![11]);
    }

    #[test]
    fn extinction_gives_zero_w() {
        let law = OffspringLaw::deterministic(vec![vec![0]]);
        let s = run_bp(&law, 0, 10, 0, RootStart::Lifetime).unwrap();
        assert!(s.extinct);
        assert_eq!(s.m(), 1);
        let w = estimate_w(&s, 1.0);
        assert_eq!(w.w_hat, 0.0);
        assert!(!w.survived);
        assert!(matches!(
            run_bp_surviving(&law, 0, 10, 0, RootStart::Lifetime, 5),
            Err(BpError::NoSurvivor(5))
        ));
    }

    #[test]
    fn generation_sample_errors() {
        let law = er_law(2.0);
        let s = run_bp(&law, 0, 0, 1, RootStart::Lifetime).unwrap();
        let mut rng = rng_from_seed(0);
        assert_eq!(generation_sample(&s, 0, &[0], &mut rng).unwrap(), 0);
        assert!(matches!(
            generation_sample(&s, 3, &[0], &mut rng),
            Err(BpError::NotCurrent { .. })
        ));
        assert_eq!(generation_sample(&s, 0, &[1], &mut rng), Err(BpError::EmptyAliveSet));
    }

    #[test]
    fn deterministic_two_children_summable() {
        let law = OffspringLaw::deterministic(vec![vec![2]]);
        let s = run_bp(&law, 0, 1000, 0, RootStart::Lifetime).unwrap();
        assert!(s.alive_history.iter().enumerate().all(|(j, a)| *a == j as u64 + 1));
        let states = vec![s];
        assert_eq!(check_summable_errors(&states, 1.0, 1.0, 1000), 1.0);
        assert_eq!(check_summable_errors(&states, 1.0, 0.0, 1000), 0.0);
        assert_eq!(summable_cutoff(100_000), 3);
    }

    #[test]
    fn coupled_identical_without_decoupling() {
        let (k, _) = build_finite_kernel(vec![0.5, 0.5], vec![vec![1.0, 3.0], vec![3.0, 1.0]]).unwrap();
        let n = 1_000_000;
        let counts = [n / 2, n / 2];
        let mut checked = 0;
        for seed in 0..200 {
            let c = coupled_bin_poi_run(&k, &counts, n, 0, 100, seed).unwrap();
            if c.decouple_split.is_none() {
                assert_eq!(c.bin.split_times, c.poi.split_times);
                assert_eq!(c.bin.alive, c.poi.alive);
                checked += 1;
            }
        }
        assert!(checked > 150);
    }

    #[test]
    fn trajectory_csv_layout() {
        let rows = vec![TrajectoryRow {
            run_id: 3,
            survived: true,
            m: 10,
            tau_m: 1.5,
            s_m: 11,
            w_hat: 0.25,
            g_sample: None,
        }];
        let mut buf = Vec::new();
        write_trajectory_csv(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "run_id,survived,m,tau_m,S_m,w_hat,G_sample\n3,true,10,1.5,11,0.25,\n"
        );
    }
}
