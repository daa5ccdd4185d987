//! Finite-type kernels, torus step kernels and their spectral quantities.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_HOMOGENEITY_TOL: f64 = 1e-9;
const MU_SUM_TOL: f64 = 1e-12;
const POWER_ITER_TOL: f64 = 1e-14;
const POWER_ITER_CAP: usize = 100_000;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("kernel must have at least one type")]
    Empty,
    #[error("dimension mismatch: mu has {mu} entries but kappa is {rows}x{cols}")]
    Dimension { mu: usize, rows: usize, cols: usize },
    #[error("mu[{0}] must be strictly positive")]
    NonPositiveMass(usize),
    #[error("mu sums to {0}, expected 1")]
    MassSum(f64),
    #[error("kappa[{0}][{1}] is negative or not finite")]
    BadEntry(usize, usize),
    #[error("kappa is not symmetric at ({0}, {1})")]
    Asymmetric(usize, usize),
    #[error("lambda_tilde must be positive, got {0}")]
    Subcritical(f64),
    #[error("power iteration did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error("profile takes a negative value ({0}) at z = {1}")]
    NegativeProfile(f64, f64),
    #[error("invalid torus parameters: {0}")]
    Torus(&'static str),
}

/// Type count `r`, type measure `mu` and symmetric kernel `kappa`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteKernel {
    pub r: usize,
    pub mu: Vec<f64>,
    pub kappa: Vec<Vec<f64>>,
}

/// `lambda[s][t] = kappa[s][t] * mu[t]`, `A = lambda - I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanOffspringMatrix {
    pub lambda: Vec<Vec<f64>>,
    pub a_matrix: Vec<Vec<f64>>,
    /// First row sum of `A`.
    pub lambda_tilde: f64,
}

impl FiniteKernel {
    pub fn new(mu: Vec<f64>, kappa: Vec<Vec<f64>>) -> Result<Self, KernelError> {
        let r = mu.len();
        if r == 0 {
            return Err(KernelError::Empty);
        }
        if kappa.len() != r || kappa.iter().any(|row| row.len() != r) {
            return Err(KernelError::Dimension {
                mu: r,
                rows: kappa.len(),
                cols: kappa.first().map_or(0, Vec::len),
            });
        }
        for (t, m) in mu.iter().enumerate() {
            if !(*m > 0.0) || !m.is_finite() {
                return Err(KernelError::NonPositiveMass(t));
            }
        }
        let total: f64 = mu.iter().sum();
        if (total - 1.0).abs() > MU_SUM_TOL {
            return Err(KernelError::MassSum(total));
        }
        for s in 0..r {
            for t in 0..r {
                let k = kappa[s][t];
                if !k.is_finite() || k < 0.0 {
                    return Err(KernelError::BadEntry(s, t));
                }
            }
        }
        for s in 0..r {
            for t in s + 1..r {
                if kappa[s][t] != kappa[t][s] {
                    return Err(KernelError::Asymmetric(s, t));
                }
            }
        }
        Ok(Self { r, mu, kappa })
    }

    /// Erdős–Rényi kernel: one type, `kappa = c`.
    pub fn erdos_renyi(c: f64) -> Result<Self, KernelError> {
        Self::new(vec![1.0], vec![vec![c]])
    }

    pub fn offspring_matrix(&self) -> MeanOffspringMatrix {
        let r = self.r;
        let lambda: Vec<Vec<f64>> = (0..r)
            .map(|s| (0..r).map(|t| self.kappa[s][t] * self.mu[t]).collect())
            .collect();
        let a_matrix: Vec<Vec<f64>> = lambda
            .iter()
            .enumerate()
            .map(|(s, row)| {
                row.iter()
                    .enumerate()
                    .map(|(t, v)| if s == t { v - 1.0 } else { *v })
                    .collect()
            })
            .collect();
        let lambda_tilde = a_matrix[0].iter().sum();
        MeanOffspringMatrix {
            lambda,
            a_matrix,
            lambda_tilde,
        }
    }

    pub fn max_kappa(&self) -> f64 {
        self.kappa.iter().flatten().copied().fold(0.0, f64::max)
    }
}

/// Validates `mu`, `kappa` and returns the kernel with its derived matrices.
pub fn build_finite_kernel(
    mu: Vec<f64>,
    kappa: Vec<Vec<f64>>,
) -> Result<(FiniteKernel, MeanOffspringMatrix), KernelError> {
    let kernel = FiniteKernel::new(mu, kappa)?;
    let m = kernel.offspring_matrix();
    Ok((kernel, m))
}

impl MeanOffspringMatrix {
    pub fn r(&self) -> usize {
        self.lambda.len()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.a_matrix.iter().map(|row| row.iter().sum()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HomogeneityReport {
    pub pass: bool,
    pub lambda_tilde: f64,
    pub max_deviation: f64,
}

pub fn check_homogeneity(m: &MeanOffspringMatrix, tol: f64) -> HomogeneityReport {
    let max_deviation = m
        .row_sums()
        .iter()
        .map(|s| (s - m.lambda_tilde).abs())
        .fold(0.0, f64::max);
    HomogeneityReport {
        pass: max_deviation <= tol && m.lambda_tilde > 0.0,
        lambda_tilde: m.lambda_tilde,
        max_deviation,
    }
}

/// Passes iff some power `(I + lambda)^k`, `1 <= k <= k_max`, is entrywise
/// strictly positive.
pub fn check_irreducibility(m: &MeanOffspringMatrix, k_max: usize) -> bool {
    let r = m.r();
    let step: Vec<Vec<bool>> = (0..r)
        .map(|s| (0..r).map(|t| s == t || m.lambda[s][t] > 0.0).collect())
        .collect();
    let mut reach = step.clone();
    for _ in 0..k_max {
        if reach.iter().flatten().all(|b| *b) {
            return true;
        }
        let next: Vec<Vec<bool>> = (0..r)
            .map(|s| (0..r).map(|t| (0..r).any(|u| reach[s][u] && step[u][t])).collect())
            .collect();
        reach = next;
    }
    false
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryVector {
    pub pi: Vec<f64>,
    /// `max_t |(pi A)_t - lambda_tilde pi_t|`.
    pub residual: f64,
    pub iterations: usize,
}

/// Normalized left Perron vector of `A`, by power iteration on `(lambda)^T`.
pub fn stationary_type_vector(m: &MeanOffspringMatrix) -> Result<StationaryVector, KernelError> {
    let r = m.r();
    let mut v = vec![1.0 / r as f64; r];
    let mut iterations = 0;
    loop {
        iterations += 1;
        // Left multiplication by lambda + I keeps the iteration aperiodic.
        let mut next: Vec<f64> = (0..r)
            .map(|t| v[t] + (0..r).map(|s| v[s] * m.lambda[s][t]).sum::<f64>())
            .collect();
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        let change = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs() / a.abs().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        v = next;
        if change <= POWER_ITER_TOL {
            break;
        }
        if iterations >= POWER_ITER_CAP {
            return Err(KernelError::NoConvergence(iterations));
        }
    }
    let residual = left_residual(m, &v);
    Ok(StationaryVector {
        pi: v,
        residual,
        iterations,
    })
}

/// `max_t |(v A)_t - lambda_tilde v_t|`.
pub fn left_residual(m: &MeanOffspringMatrix, v: &[f64]) -> f64 {
    let r = m.r();
    (0..r)
        .map(|t| {
            let va: f64 = (0..r).map(|s| v[s] * m.a_matrix[s][t]).sum();
            (va - m.lambda_tilde * v[t]).abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatorNorm {
    /// `lambda_tilde + 1`.
    pub norm: f64,
    /// Largest singular value of `D^{1/2} kappa D^{1/2}`, `D = diag(mu)`.
    pub singular_value: f64,
}

impl OperatorNorm {
    pub fn discrepancy(&self) -> f64 {
        (self.norm - self.singular_value).abs()
    }
}

/// Norm of `T_kappa` on `L^2(mu)`, with an SVD cross-check.
pub fn operator_norm(kernel: &FiniteKernel, m: &MeanOffspringMatrix) -> OperatorNorm {
    let r = kernel.r;
    let b = DMatrix::from_fn(r, r, |s, t| {
        kernel.mu[s].sqrt() * kernel.kappa[s][t] * kernel.mu[t].sqrt()
    });
    let singular_value = b.singular_values().max();
    OperatorNorm {
        norm: m.lambda_tilde + 1.0,
        singular_value,
    }
}

/// Maximal root of `rho = 1 - exp(-(lambda_tilde + 1) rho)`.
pub fn survival_probability(lambda_tilde: f64, tol: f64) -> Result<f64, KernelError> {
    if !(lambda_tilde > 0.0) {
        return Err(KernelError::Subcritical(lambda_tilde));
    }
    let c = lambda_tilde + 1.0;
    let mut rho = 1.0f64;
    for _ in 0..100_000_000u64 {
        let next = -(-c * rho).exp_m1();
        let done = (next - rho).abs() <= tol;
        rho = next;
        if done {
            return Ok(rho);
        }
    }
    Err(KernelError::NoConvergence(100_000_000))
}

/// Even, period-one profile `h` on the circle, evaluated at torus distance
/// `d` in `[0, 1/2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// `h(d) = 1{d < 0.25}`.
    Indicator,
    /// `h(d) = d^2`.
    Quadratic,
    /// Values on an equispaced grid of `[0, 1/2]`, linearly interpolated.
    Table(Vec<f64>),
}

impl Profile {
    pub fn eval(&self, d: f64) -> f64 {
        match self {
            Profile::Indicator => {
                if d < 0.25 {
                    1.0
                } else {
                    0.0
                }
            }
            Profile::Quadratic => d * d,
            Profile::Table(values) => {
                if values.len() == 1 {
                    return values[0];
                }
                let x = (d / 0.5).clamp(0.0, 1.0) * (values.len() - 1) as f64;
                let i = (x.floor() as usize).min(values.len() - 2);
                let f = x - i as f64;
                values[i] * (1.0 - f) + values[i + 1] * f
            }
        }
    }
}

/// Distance on the unit circle.
pub fn torus_distance(x: f64, y: f64) -> f64 {
    let d = (x - y).rem_euclid(1.0);
    d.min(1.0 - d)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TorusStepKernel {
    pub m_parts: usize,
    pub scale: f64,
    pub profile: Profile,
    /// `averaged[i][j]`: mean of `scale * h(d(x, y))` over cell `i` x cell `j`.
    pub averaged: Vec<Vec<f64>>,
}

impl TorusStepKernel {
    /// Exact kernel value `scale * h(d(x, y))`.
    pub fn exact(&self, x: f64, y: f64) -> f64 {
        self.scale * self.profile.eval(torus_distance(x, y))
    }

    pub fn cell_of(&self, x: f64) -> usize {
        ((x * self.m_parts as f64) as usize).min(self.m_parts - 1)
    }

    /// `sup |scale h(d(x,y)) - averaged[i][j]|` over all cell pairs, probed on
    /// `probes` points of each difference interval.
    pub fn max_deviation(&self, probes: usize) -> f64 {
        let m = self.m_parts;
        let w = 1.0 / m as f64;
        let mut eps: f64 = 0.0;
        // circulant: row 0 suffices
        for k in 0..m {
            let c = k as f64 * w;
            for p in 0..=probes {
                let z = c - w + 2.0 * w * p as f64 / probes as f64;
                let exact = self.scale * self.profile.eval(torus_distance(z, 0.0));
                eps = eps.max((exact - self.averaged[0][k]).abs());
            }
        }
        eps
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(q: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; q];
    let mut weights = vec![0.0; q];
    let pi = std::f64::consts::PI;
    for i in 0..q.div_ceil(2) {
        let mut x = (pi * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=q {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = q as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[q - 1 - i] = x;
        let wgt = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = wgt;
        weights[q - 1 - i] = wgt;
    }
    (nodes, weights)
}

/// Cell-averaged step kernel of `scale * h(d(x, y))` over `m_parts` equal
/// cells.
///
/// The double average over a cell pair depends only on `c = (j - i)/m`; with
/// `s = y - x - c` having triangular density on `[-w, w]`, it reduces to a
/// one-dimensional integral, done by Gauss–Legendre with `quad_points` nodes on
/// each half of the triangle.
pub fn build_torus_step_kernel(
    profile: Profile,
    scale: f64,
    m_parts: usize,
    quad_points: usize,
) -> Result<(TorusStepKernel, FiniteKernel, MeanOffspringMatrix), KernelError> {
    if m_parts == 0 {
        return Err(KernelError::Torus("m_parts must be at least 1"));
    }
    if quad_points == 0 {
        return Err(KernelError::Torus("quad_points must be at least 1"));
    }
    if !(scale >= 0.0) || !scale.is_finite() {
        return Err(KernelError::Torus("scale must be finite and nonnegative"));
    }
    if let Profile::Table(values) = &profile {
        if values.is_empty() {
            return Err(KernelError::Torus("table profile needs at least one value"));
        }
        for (i, v) in values.iter().enumerate() {
            if !(*v >= 0.0) || !v.is_finite() {
                let z = if values.len() > 1 {
                    0.5 * i as f64 / (values.len() - 1) as f64
                } else {
                    0.0
                };
                return Err(KernelError::NegativeProfile(*v, z));
            }
        }
    }
    let m = m_parts;
    let w = 1.0 / m as f64;
    let (nodes, weights) = gauss_legendre(quad_points);
    let circulant: Vec<f64> = (0..m)
        .map(|k| {
            let c = k as f64 * w;
            let mut acc = 0.0;
            for (x, g) in nodes.iter().zip(&weights) {
                // s in [-w, 0] and [0, w]; density (1 - |s|/w)/w, Jacobian w/2
                for s in [0.5 * w * (x - 1.0), 0.5 * w * (x + 1.0)] {
                    let dens = (1.0 - s.abs() / w) / w;
                    let h = profile.eval(torus_distance(c + s, 0.0));
                    acc += g * 0.5 * w * dens * h;
                }
            }
            scale * acc
        })
        .collect();
    if let Some((k, v)) = circulant.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(KernelError::NegativeProfile(*v, k as f64 * w));
    }
    let mut averaged: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..m).map(|j| circulant[(j + m - i) % m]).collect())
        .collect();
    // k and m - k agree only up to rounding

    for i in 0..m {
        for j in i + 1..m {
            let v = 0.5 * (averaged[i][j] + averaged[j][i]);
            averaged[i][j] = v;
            averaged[j][i] = v;
        }
    }
    let kernel = FiniteKernel::new(vec![w; m], averaged.clone())?;
    let om = kernel.offspring_matrix();
    Ok((
        TorusStepKernel {
            m_parts: m,
            scale,
            profile,
            averaged,
        },
        kernel,
        om,
    ))
}

/// JSON kernel description, tagged by `"type"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelSpec {
    Finite {
        mu: Vec<f64>,
        kappa: Vec<Vec<f64>>,
    },
    TorusStep {
        profile: ProfileName,
        scale: f64,
        m_parts: usize,
        #[serde(default)]
        table: Option<Vec<f64>>,
        #[serde(default)]
        quad_points: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileName {
    Indicator,
    Quadratic,
    Table,
}

pub const DEFAULT_QUAD_POINTS: usize = 32;

/// A validated kernel together with its derived quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltKernel {
    pub kernel: FiniteKernel,
    pub offspring: MeanOffspringMatrix,
    pub torus: Option<TorusStepKernel>,
}

impl BuiltKernel {
    pub fn lambda_tilde(&self) -> f64 {
        self.offspring.lambda_tilde
    }
}

impl KernelSpec {
    pub fn build(&self) -> Result<BuiltKernel, KernelError> {
        match self {
            KernelSpec::Finite { mu, kappa } => {
                let (kernel, offspring) = build_finite_kernel(mu.clone(), kappa.clone())?;
                Ok(BuiltKernel {
                    kernel,
                    offspring,
                    torus: None,
                })
            }
            KernelSpec::TorusStep {
                profile,
                scale,
                m_parts,
                table,
                quad_points,
            } => {
                let profile = match profile {
                    ProfileName::Indicator => Profile::Indicator,
                    ProfileName::Quadratic => Profile::Quadratic,
                    ProfileName::Table => {
                        Profile::Table(table.clone().ok_or(KernelError::Torus("table profile needs a table"))?)
                    }
                };
                let (torus, kernel, offspring) =
                    build_torus_step_kernel(profile, *scale, *m_parts, quad_points.unwrap_or(DEFAULT_QUAD_POINTS))?;
                Ok(BuiltKernel {
                    kernel,
                    offspring,
                    torus: Some(torus),
                })
            }
        }
    }
}

/// Summary printed by `kernel-check`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelCheck {
    pub r: usize,
    pub lambda_tilde: f64,
    pub homogeneous: bool,
    pub max_row_deviation: f64,
    pub irreducible: bool,
    pub pi_residual: Option<f64>,
    pub mu_residual: f64,
    pub operator_norm: f64,
    pub singular_value: f64,
    pub rho: Option<f64>,
}

pub fn kernel_check(built: &BuiltKernel) -> KernelCheck {
    let m = &built.offspring;
    let hom = check_homogeneity(m, DEFAULT_HOMOGENEITY_TOL);
    let irreducible = check_irreducibility(m, built.kernel.r.max(4));
    let pi_residual = if hom.pass && irreducible {
        stationary_type_vector(m).ok().map(|s| s.residual)
    } else {
        None
    };
    let norm = operator_norm(&built.kernel, m);
    KernelCheck {
        r: built.kernel.r,
        lambda_tilde: m.lambda_tilde,
        homogeneous: hom.pass,
        max_row_deviation: hom.max_deviation,
        irreducible,
        pi_residual,
        mu_residual: left_residual(m, &built.kernel.mu),
        operator_norm: norm.norm,
        singular_value: norm.singular_value,
        rho: survival_probability(m.lambda_tilde, 1e-15).ok(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_type() -> (FiniteKernel, MeanOffspringMatrix) {
        build_finite_kernel(vec![0.5, 0.5], vec![vec![1.0, 3.0], vec![3.0, 1.0]]).unwrap()
    }

    #[test]
    fn erdos_renyi_matrices() {
        let (_, m) = build_finite_kernel(vec![1.0], vec![vec![2.0]]).unwrap();
        assert_eq!(m.lambda, vec![vec![2.0]]);
        assert_eq!(m.a_matrix, vec![vec![1.0]]);
        assert_eq!(m.lambda_tilde, 1.0);
    }

    #[test]
    fn two_type_matrices() {
        let (_, m) = two_type();
        assert_eq!(m.lambda, vec![vec![0.5, 1.5], vec![1.5, 0.5]]);
        assert_eq!(m.row_sums(), vec![1.0, 1.0]);
        assert_eq!(m.lambda_tilde, 1.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(
            FiniteKernel::new(vec![0.5, 0.5], vec![vec![1.0, 2.0], vec![3.0, 1.0]]),
            Err(KernelError::Asymmetric(0, 1))
        );
        assert_eq!(
            FiniteKernel::new(vec![1.0, 0.0], vec![vec![1.0, 1.0], vec![1.0, 1.0]]),
            Err(KernelError::NonPositiveMass(1))
        );
        assert_eq!(
            FiniteKernel::new(vec![1.0], vec![vec![f64::NAN]]),
            Err(KernelError::BadEntry(0, 0))
        );
        assert_eq!(
            FiniteKernel::new(vec![1.0], vec![vec![-1.0]]),
            Err(KernelError::BadEntry(0, 0))
        );
        assert!(matches!(
            FiniteKernel::new(vec![0.5], vec![vec![1.0]]),
            Err(KernelError::MassSum(_))
        ));
    }

    fn from_a(a: Vec<Vec<f64>>) -> MeanOffspringMatrix {
        let lambda: Vec<Vec<f64>> = a
            .iter()
            .enumerate()
            .map(|(s, row)| {
                row.iter()
                    .enumerate()
                    .map(|(t, v)| if s == t { v + 1.0 } else { *v })
                    .collect()
            })
            .collect();
        let lambda_tilde = a[0].iter().sum();
        MeanOffspringMatrix {
            lambda,
            a_matrix: a,
            lambda_tilde,
        }
    }

    #[test]
    fn homogeneity_examples() {
        let pass = check_homogeneity(&from_a(vec![vec![-0.5, 1.5], vec![1.5, -0.5]]), 1e-12);
        assert!(pass.pass);
        assert_eq!(pass.lambda_tilde, 1.0);
        assert!(!check_homogeneity(&from_a(vec![vec![1.0, 0.0], vec![0.0, 2.0]]), 1e-12).pass);
        assert!(!check_homogeneity(&from_a(vec![vec![-0.2]]), 1e-12).pass);
    }

    #[test]
    fn irreducibility_examples() {
        let m = |l: Vec<Vec<f64>>| MeanOffspringMatrix {
            a_matrix: l.clone(),
            lambda: l,
            lambda_tilde: 1.0,
        };
        assert!(check_irreducibility(&m(vec![vec![0.5, 1.5], vec![1.5, 0.5]]), 4));
        assert!(!check_irreducibility(&m(vec![vec![2.0, 0.0], vec![0.0, 2.0]]), 4));
        assert!(check_irreducibility(&m(vec![vec![0.0, 1.0], vec![1.0, 0.0]]), 4));
        // path 0 - 1 - 2 needs two steps
        let path = vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]];
        assert!(!check_irreducibility(&m(path.clone()), 1));
        assert!(check_irreducibility(&m(path), 2));
    }

    #[test]
    fn stationary_vector_is_mu() {
        let (_, m) = two_type();
        let s = stationary_type_vector(&m).unwrap();
        assert!((s.pi[0] - 0.5).abs() < 1e-12 && (s.pi[1] - 0.5).abs() < 1e-12);
        assert!(s.residual < 1e-10);
        let (_, er) = build_finite_kernel(vec![1.0], vec![vec![2.0]]).unwrap();
        assert_eq!(stationary_type_vector(&er).unwrap().pi, vec![1.0]);

        // unequal masses, homogeneous: mu = (1/4, 3/4), row sums of lambda = 3
        let (k, m) = build_finite_kernel(vec![0.25, 0.75], vec![vec![3.0, 3.0], vec![3.0, 3.0]]).unwrap();
        assert!(check_homogeneity(&m, 1e-12).pass);
        let s = stationary_type_vector(&m).unwrap();
        for (p, mu) in s.pi.iter().zip(&k.mu) {
            assert!((p - mu).abs() < 1e-8);
        }
    }

    #[test]
    fn operator_norm_cross_check() {
        let (k, m) = two_type();
        let n = operator_norm(&k, &m);
        assert_eq!(n.norm, 2.0);
        assert!(n.discrepancy() < 1e-8, "{n:?}");
        let (k, m) = build_finite_kernel(vec![1.0], vec![vec![2.0]]).unwrap();
        assert_eq!(operator_norm(&k, &m).norm, 2.0);
    }

    #[test]
    fn survival_probability_values() {
        let rho = survival_probability(1.0, 1e-15).unwrap();
        assert!((rho - 0.796_812_130_020_020_2).abs() < 1e-12);
        assert!(survival_probability(0.0, 1e-12).is_err());
        assert!(survival_probability(-1.0, 1e-12).is_err());
        assert!(survival_probability(1e-3, 1e-15).unwrap() < 0.01);
    }

    #[test]
    fn survival_monotone_in_lambda() {
        let grid = [0.1, 0.5, 1.0, 2.0, 5.0];
        // brentq oracle for 1 - exp(-(l+1) r) = r
        let oracle = [
            0.176_134_143_631_807_1,
            0.582_811_643_865_811_6,
            0.796_812_130_020_020_2,
            0.940_479_790_707_359_5,
            0.997_483_537_733_767_1,
        ];
        let vals: Vec<f64> = grid.iter().map(|l| survival_probability(*l, 1e-15).unwrap()).collect();
        for w in vals.windows(2) {
            assert!(w[0] < w[1]);
        }
        for (v, o) in vals.iter().zip(oracle) {
            assert!((v - o).abs() < 1e-10, "{v} vs {o}");
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
        // x^14 integrates to 2/15
        let v: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((v - 2.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn indicator_step_kernel_by_hand() {
        let (t, k, m) = build_torus_step_kernel(Profile::Indicator, 4.0, 8, 32).unwrap();
        let want = [4.0, 4.0, 2.0, 0.0, 0.0, 0.0, 2.0, 4.0];
        for (got, want) in t.averaged[0].iter().zip(want) {
            assert!((got - want).abs() < 1e-12, "{:?}", t.averaged[0]);
        }
        assert_eq!(k.r, 8);
        assert!((m.lambda_tilde - 1.0).abs() < 1e-12);
        assert!(check_homogeneity(&m, 1e-12).pass);
    }

    #[test]
    fn quadratic_step_kernel_closed_form() {
        // E[(c + s)^2] for triangular s on [-w, w]: c^2 + w^2/6, except at the
        // folds c = 0 (E s^2) and c = 1/2 (E (1/2 - |s|)^2).
        let m = 16;
        let w = 1.0 / m as f64;
        let (t, _, om) = build_torus_step_kernel(Profile::Quadratic, 24.0, m, 32).unwrap();
        for k in 0..m {
            let kk = k.min(m - k);
            let c = kk as f64 * w;
            let want = if kk == 0 {
                w * w / 6.0
            } else if 2 * kk == m {
                0.25 - w / 3.0 + w * w / 6.0
            } else {
                c * c + w * w / 6.0
            };
            assert!((t.averaged[0][k] - 24.0 * want).abs() < 1e-8, "k={k}");
        }
        assert!((om.lambda_tilde - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_profile_is_erdos_renyi() {
        let (t, _, _) = build_torus_step_kernel(Profile::Table(vec![1.0, 1.0]), 3.0, 5, 8).unwrap();
        assert!(t.averaged.iter().flatten().all(|v| (v - 3.0).abs() < 1e-12));
        assert!(t.max_deviation(16) < 1e-12);
    }

    #[test]
    fn fine_partition_recovers_profile() {
        let (t, _, _) = build_torus_step_kernel(Profile::Indicator, 4.0, 1024, 32).unwrap();
        let c = t.cell_of(0.1);
        assert!((t.averaged[c][c] - 4.0).abs() < 1e-3);
    }

    #[test]
    fn negative_table_rejected() {
        assert!(matches!(
            build_torus_step_kernel(Profile::Table(vec![1.0, -0.5]), 1.0, 4, 8),
            Err(KernelError::NegativeProfile(..))
        ));
    }

    #[test]
    fn kernel_spec_json() {
        let spec: KernelSpec = serde_json::from_str(r#"{"type":"finite","mu":[1.0],"kappa":[[2.0]]}"#).unwrap();
        assert_eq!(spec.build().unwrap().lambda_tilde(), 1.0);
        let spec: KernelSpec =
            serde_json::from_str(r#"{"type":"torus_step","profile":"indicator","scale":4.0,"m_parts":8}"#).unwrap();
        let built = spec.build().unwrap();
        assert!((built.lambda_tilde() - 1.0).abs() < 1e-12);
        assert!(built.torus.is_some());
    }
}
