//! Distribution functions, goodness-of-fit statistics and the small identity
//! samplers used by the verification suite.
//!
//! The normal CDF is routed through the regularized incomplete gamma function
//! (`erf(z) = P(1/2, z^2)`), which in turn uses the Lanczos log-gamma, a power
//! series below `x < a + 1` and a modified Lentz continued fraction above.

use std::io::{self, Write};

use rand::Rng;
use thiserror::Error;

use crate::rng::{open_unit, rng_from_seed};

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("sample is empty")]
    EmptySample,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

const GAMMA_EPS: f64 = 1e-16;
const GAMMA_MAX_ITER: usize = 10_000;

fn gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut del = sum;
    for _ in 0..GAMMA_MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * GAMMA_EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..GAMMA_MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < GAMMA_EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x < a + 1.0 {
        gamma_series(a, x)
    } else {
        1.0 - gamma_continued_fraction(a, x)
    }
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 - P(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x < a + 1.0 {
        1.0 - gamma_series(a, x)
    } else {
        gamma_continued_fraction(a, x)
    }
}

/// Standard normal CDF.
pub fn cdf_normal(x: f64) -> f64 {
    let half_sq = 0.5 * x * x;
    if x >= 0.0 {
        0.5 + 0.5 * gamma_p(0.5, half_sq)
    } else {
        0.5 * gamma_q(0.5, half_sq)
    }
}

/// Standard Gumbel CDF `exp(-e^{-x})`.
pub fn cdf_gumbel(x: f64) -> f64 {
    (-(-x).exp()).exp()
}

pub fn cdf_exp(x: f64, rate: f64) -> Result<f64, StatsError> {
    if !(rate > 0.0) {
        return Err(StatsError::InvalidParameter("exponential rate must be positive"));
    }
    Ok(if x <= 0.0 { 0.0 } else { -(-rate * x).exp_m1() })
}

/// Gamma(shape, rate) CDF.
pub fn cdf_gamma(x: f64, shape: f64, rate: f64) -> Result<f64, StatsError> {
    if !(shape > 0.0) || !(rate > 0.0) {
        return Err(StatsError::InvalidParameter("gamma shape and rate must be positive"));
    }
    Ok(gamma_p(shape, rate * x))
}

/// Inverse standard normal CDF (Acklam's rational approximation followed by
/// one Halley step against [`cdf_normal`]).
pub fn quantile_normal(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let p_low = 0.02425;
    let x = if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = cdf_normal(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Standard Gumbel draw, `-ln(-ln U)`.
pub fn sample_gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return -(-u.ln()).ln();
        }
    }
}

/// A sorted sample of finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSample {
    values: Vec<f64>,
}

impl EmpiricalSample {
    pub fn new(mut values: Vec<f64>) -> Result<Self, StatsError> {
        if values.is_empty() {
            return Err(StatsError::EmptySample);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Right-continuous empirical CDF at `x`.
    pub fn ecdf(&self, x: f64) -> f64 {
        let k = self.values.partition_point(|v| *v <= x);
        k as f64 / self.values.len() as f64
    }

    /// Writes `x F(x)` rows, one per order statistic.
    pub fn write_ecdf<W: Write>(&self, mut out: W) -> io::Result<()> {
        let n = self.values.len() as f64;
        for (i, x) in self.values.iter().enumerate() {
            writeln!(out, "{} {}", x, (i + 1) as f64 / n)?;
        }
        Ok(())
    }
}

/// One-sample Kolmogorov–Smirnov distance `sup |F_n - F|`.
pub fn ks_statistic<F: Fn(f64) -> f64>(sample: &EmpiricalSample, cdf: F) -> f64 {
    let n = sample.len() as f64;
    sample
        .values()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            let above = (i + 1) as f64 / n - f;
            let below = f - i as f64 / n;
            above.max(below)
        })
        .fold(0.0, f64::max)
}

/// Convenience wrapper: builds the sample and computes the KS distance.
pub fn ks_against<F: Fn(f64) -> f64>(values: &[f64], cdf: F) -> Result<f64, StatsError> {
    let sample = EmpiricalSample::new(values.to_vec())?;
    Ok(ks_statistic(&sample, cdf))
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ks_two_sample(a: &EmpiricalSample, b: &EmpiricalSample) -> f64 {
    let (xa, xb) = (a.values(), b.values());
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

pub fn ks_two_sample_values(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    Ok(ks_two_sample(
        &EmpiricalSample::new(a.to_vec())?,
        &EmpiricalSample::new(b.to_vec())?,
    ))
}

/// 95% one-sample KS critical value (asymptotic).
pub fn ks_critical_95(n: usize) -> f64 {
    1.36 / (n as f64).sqrt()
}

/// 95% two-sample KS critical value (asymptotic).
pub fn ks_two_sample_critical_95(n: usize, m: usize) -> f64 {
    1.36 * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// Mean, unbiased variance and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub se_mean: f64,
    /// Standard error of the sample variance, from the fourth central moment.
    pub se_variance: f64,
}

pub fn moments(values: &[f64]) -> Moments {
    let n = values.len();
    if n == 0 {
        return Moments {
            n,
            mean: f64::NAN,
            variance: f64::NAN,
            se_mean: f64::NAN,
            se_variance: f64::NAN,
        };
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let (m2, m4) = values.iter().fold((0.0, 0.0), |(m2, m4), v| {
        let d = v - mean;
        let d2 = d * d;
        (m2 + d2, m4 + d2 * d2)
    });
    let variance = if n > 1 { m2 / (nf - 1.0) } else { 0.0 };
    let pop_var = m2 / nf;
    let mu4 = m4 / nf;
    Moments {
        n,
        mean,
        variance,
        se_mean: (variance / nf).sqrt(),
        se_variance: ((mu4 - pop_var * pop_var).max(0.0) / nf).sqrt(),
    }
}

/// Pearson correlation coefficient.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let mx = moments(x).mean;
    let my = moments(y).mean;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Estimate of `P(X > Y) + P(X = Y)/2` for independent draws (the normalized
/// Mann–Whitney statistic).
pub fn prob_greater(x: &[f64], y: &[f64]) -> f64 {
    let mut ys = y.to_vec();
    ys.sort_by(f64::total_cmp);
    let total: f64 = x
        .iter()
        .map(|&v| {
            let below = ys.partition_point(|w| *w < v);
            let upto = ys.partition_point(|w| *w <= v);
            below as f64 + 0.5 * (upto - below) as f64
        })
        .sum();
    total / (x.len() as f64 * ys.len() as f64)
}

/// Pearson chi-square statistic of `counts` against equal cell probabilities.
pub fn chi_square_uniform(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum()
}

/// Result of comparing `Σ_{i≤m} E_i/i` against the maximum of `m` Exp(1).
#[derive(Debug, Clone, PartialEq)]
pub struct MaxExpReport {
    pub m: usize,
    pub reps: usize,
    pub ks: f64,
    pub critical: f64,
    pub harmonic_sum_mean: Moments,
    pub maximum_mean: Moments,
    /// `H_m = Σ 1/i`, the exact mean of both variables.
    pub harmonic_number: f64,
}

impl MaxExpReport {
    pub fn passes(&self) -> bool {
        self.ks <= self.critical
    }
}

/// Draws `reps` values of `Σ_{i=1}^m E_i / i` and, from an independent stream,
/// `reps` maxima of `m` Exp(1) variables, and compares the two samples.
pub fn max_exp_identity_check(m: usize, reps: usize, seed: u64) -> Result<MaxExpReport, StatsError> {
    if m == 0 || reps == 0 {
        return Err(StatsError::InvalidParameter("m and reps must be positive"));
    }
    let mut rng_sum = rng_from_seed(crate::rng::derive_seed(seed, "max_exp/sum", 0));
    let mut rng_max = rng_from_seed(crate::rng::derive_seed(seed, "max_exp/max", 0));
    let sums: Vec<f64> = (0..reps)
        .map(|_| (1..=m).map(|i| -open_unit(&mut rng_sum).ln() / i as f64).sum())
        .collect();
    let maxima: Vec<f64> = (0..reps)
        .map(|_| (0..m).map(|_| -open_unit(&mut rng_max).ln()).fold(0.0, f64::max))
        .collect();
    let ks = ks_two_sample_values(&sums, &maxima)?;
    Ok(MaxExpReport {
        m,
        reps,
        ks,
        critical: ks_two_sample_critical_95(reps, reps),
        harmonic_sum_mean: moments(&sums),
        maximum_mean: moments(&maxima),
        harmonic_number: (1..=m).map(|i| 1.0 / i as f64).sum(),
    })
}

/// Monte Carlo moments of `Y1 + Y2 - Y3` for i.i.d. standard Gumbel `Y_i`,
/// plus the `Y1 - Y2` symmetry control.
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelSumMoments {
    pub sum: Moments,
    pub difference: Moments,
    pub target_mean: f64,
    pub target_variance: f64,
}

pub fn gumbel_sum_moments(reps: usize, seed: u64) -> Result<GumbelSumMoments, StatsError> {
    if reps < 10_000 {
        return Err(StatsError::InvalidParameter("reps must be at least 10^4"));
    }
    let mut rng = rng_from_seed(seed);
    let mut sums = Vec::with_capacity(reps);
    let mut diffs = Vec::with_capacity(reps);
    for _ in 0..reps {
        let y1 = sample_gumbel(&mut rng);
        let y2 = sample_gumbel(&mut rng);
        let y3 = sample_gumbel(&mut rng);
        sums.push(y1 + y2 - y3);
        diffs.push(y1 - y2);
    }
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    Ok(GumbelSumMoments {
        sum: moments(&sums),
        difference: moments(&diffs),
        target_mean: EULER_GAMMA,
        target_variance: pi2 / 2.0,
    })
}
