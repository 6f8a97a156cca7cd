//! Domain types shared across the toolkit and the negative log-posterior.
//!
//! Matrices are dense `nalgebra::DMatrix<f64>`. Per-edge quantities (shrinkage
//! exponents, baselines, prior strengths) are stored as flat vectors over the
//! strict upper triangle in row-major order: (0,1), (0,2), ..., (0,p-1), (1,2), ...

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Off-diagonal entries with magnitude at or below this are treated as absent edges.
pub const DEFAULT_ZERO_TOL: f64 = 1e-8;

const SYMMETRY_TOL: f64 = 1e-12;

/// Number of unordered node pairs.
pub fn n_pairs(p: usize) -> usize {
    p * p.saturating_sub(1) / 2
}

/// Iterates the strict upper triangle in the canonical flattening order.
pub fn upper_pairs(p: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..p).flat_map(move |j| (j + 1..p).map(move |k| (j, k)))
}

/// Position of pair `(j, k)` (j < k) in the flattened vector.
pub fn pair_index(p: usize, j: usize, k: usize) -> usize {
    debug_assert!(j < k && k < p);
    j * (2 * p - j - 1) / 2 + (k - j - 1)
}

pub fn flatten_upper(m: &DMatrix<f64>) -> Vec<f64> {
    upper_pairs(m.nrows()).map(|(j, k)| m[(j, k)]).collect()
}

/// Inverse of [`flatten_upper`] for symmetric matrices with zero diagonal.
pub fn unflatten_upper(values: &[f64], p: usize) -> Result<DMatrix<f64>> {
    if values.len() != n_pairs(p) {
        return Err(Error::input(format!(
            "expected {} upper-triangular values for p={p}, got {}",
            n_pairs(p),
            values.len()
        )));
    }
    let mut m = DMatrix::zeros(p, p);
    for ((j, k), &v) in upper_pairs(p).zip(values) {
        m[(j, k)] = v;
        m[(k, j)] = v;
    }
    Ok(m)
}

pub(crate) fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let p = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..p {
        for k in j + 1..p {
            worst = worst.max((m[(j, k)] - m[(k, j)]).abs());
        }
    }
    worst
}

fn check_square(m: &DMatrix<f64>, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::input(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
        let (r, c) = (pos % m.nrows(), pos / m.nrows());
        return Err(Error::input(format!("{what} has a non-finite entry at ({r}, {c})")));
    }
    Ok(m.nrows())
}

/// Log-determinant through a Cholesky factorisation; `None` if `m` is not positive definite.
pub fn log_det_pd(m: &DMatrix<f64>) -> Option<f64> {
    let chol = Cholesky::new(m.clone())?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..m.nrows() {
        let d = l[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        acc += d.ln();
    }
    Some(2.0 * acc)
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    log_det_pd(m).is_some()
}

/// T×p observation matrix; rows are time points, columns are regions.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesData {
    values: DMatrix<f64>,
    region_labels: Option<Vec<String>>,
}

impl TimeSeriesData {
    pub fn new(values: DMatrix<f64>, region_labels: Option<Vec<String>>) -> Result<Self> {
        let (t, p) = values.shape();
        if t < 2 || p < 2 {
            return Err(Error::input(format!(
                "time series needs at least 2 time points and 2 regions, got {t}x{p}"
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!(
                "time series has a non-finite entry at row {}, column {}",
                pos % t + 1,
                pos / t + 1
            )));
        }
        if let Some(labels) = &region_labels {
            if labels.len() != p {
                return Err(Error::input(format!(
                    "{} region labels supplied for {p} columns",
                    labels.len()
                )));
            }
        }
        Ok(Self {
            values,
            region_labels,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn region_labels(&self) -> Option<&[String]> {
        self.region_labels.as_deref()
    }

    pub fn n_time(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_regions(&self) -> usize {
        self.values.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleCovariance {
    s: DMatrix<f64>,
    n_obs: usize,
}

impl SampleCovariance {
    pub fn new(s: DMatrix<f64>, n_obs: usize) -> Result<Self> {
        check_square(&s, "sample covariance")?;
        if n_obs == 0 {
            return Err(Error::input("sample covariance needs a positive observation count"));
        }
        let asym = max_asymmetry(&s);
        if asym > SYMMETRY_TOL * (1.0 + s.amax()) {
            return Err(Error::input(format!(
                "sample covariance is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        if let Some(i) = (0..s.nrows()).find(|&i| s[(i, i)] < 0.0) {
            return Err(Error::input(format!("sample covariance has negative variance at {i}")));
        }
        Ok(Self { s, n_obs })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn dim(&self) -> usize {
        self.s.nrows()
    }
}

/// `S = (1/T) Σ_t y_t y_t'`, optionally after removing column means.
pub fn sample_covariance(y: &TimeSeriesData, center: bool) -> SampleCovariance {
    let t = y.n_time();
    let mut x = y.values().clone();
    if center {
        for mut col in x.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
    }
    let mut s = x.tr_mul(&x) / t as f64;
    // tr_mul can leave rounding-level asymmetry
    let p = s.nrows();
    for j in 0..p {
        for k in j + 1..p {
            let v = 0.5 * (s[(j, k)] + s[(k, j)]);
            s[(j, k)] = v;
            s[(k, j)] = v;
        }
    }
    SampleCovariance { s, n_obs: t }
}

/// Structural connectivity strengths in [0, 1], symmetric with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralPrior {
    p: DMatrix<f64>,
}

impl StructuralPrior {
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        let n = check_square(&p, "structural prior")?;
        if max_asymmetry(&p) > SYMMETRY_TOL {
            return Err(Error::input("structural prior must be symmetric"));
        }
        for i in 0..n {
            if p[(i, i)] != 0.0 {
                return Err(Error::input(format!(
                    "structural prior diagonal must be zero (entry {i} is {})",
                    p[(i, i)]
                )));
            }
        }
        if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::input(format!("structural prior entry {v} outside [0, 1]")));
        }
        Ok(Self { p })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            p: DMatrix::zeros(dim, dim),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn upper(&self) -> Vec<f64> {
        flatten_upper(&self.p)
    }

    pub fn is_all_zero(&self) -> bool {
        self.p.iter().all(|&v| v == 0.0)
    }
}

/// A symmetric positive-definite precision matrix together with its edge support.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionEstimate {
    omega: DMatrix<f64>,
    edge_set: Vec<(usize, usize)>,
    zero_tol: f64,
}

impl PrecisionEstimate {
    pub fn new(omega: DMatrix<f64>) -> Result<Self> {
        Self::with_zero_tol(omega, DEFAULT_ZERO_TOL)
    }

    pub fn with_zero_tol(omega: DMatrix<f64>, zero_tol: f64) -> Result<Self> {
        check_square(&omega, "precision matrix")?;
        let asym = max_asymmetry(&omega);
        if asym > SYMMETRY_TOL * (1.0 + omega.amax()) {
            return Err(Error::Domain(format!(
                "precision matrix is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        if !is_positive_definite(&omega) {
            return Err(Error::Domain("precision matrix is not positive definite".into()));
        }
        let edge_set = support(&omega, zero_tol);
        Ok(Self {
            omega,
            edge_set,
            zero_tol,
        })
    }

    pub fn identity(p: usize) -> Self {
        Self {
            omega: DMatrix::identity(p, p),
            edge_set: Vec::new(),
            zero_tol: DEFAULT_ZERO_TOL,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.omega
    }

    pub fn edge_set(&self) -> &[(usize, usize)] {
        &self.edge_set
    }

    pub fn zero_tol(&self) -> f64 {
        self.zero_tol
    }

    pub fn dim(&self) -> usize {
        self.omega.nrows()
    }

    pub fn n_edges(&self) -> usize {
        self.edge_set.len()
    }

    pub fn log_det(&self) -> f64 {
        log_det_pd(&self.omega).expect("validated positive definite")
    }
}

/// Off-diagonal support `{(j,k): j<k, |m_jk| > zero_tol}`, sorted.
pub fn support(m: &DMatrix<f64>, zero_tol: f64) -> Vec<(usize, usize)> {
    upper_pairs(m.nrows())
        .filter(|&(j, k)| m[(j, k)].abs() > zero_tol)
        .collect()
}

/// Full parameter block except the precision matrix: per-edge log-shrinkage,
/// baselines, SC coupling and the fixed hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageState {
    pub alpha: Vec<f64>,
    pub mu: Vec<f64>,
    /// SC coupling. Zero only in the SC-free mode, where the Gamma prior on it is dropped.
    pub eta: f64,
    pub nu: f64,
    pub sigma2_lambda: f64,
    pub sigma2_mu: f64,
    pub mu0: f64,
    pub a_eta: f64,
    pub b_eta: f64,
}

impl ShrinkageState {
    pub fn validate(&self, p: usize) -> Result<()> {
        let m = n_pairs(p);
        if self.alpha.len() != m || self.mu.len() != m {
            return Err(Error::input(format!(
                "shrinkage vectors must have length {m} for p={p} (alpha {}, mu {})",
                self.alpha.len(),
                self.mu.len()
            )));
        }
        let positive = [
            ("nu", self.nu),
            ("sigma2_lambda", self.sigma2_lambda),
            ("sigma2_mu", self.sigma2_mu),
            ("a_eta", self.a_eta),
            ("b_eta", self.b_eta),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::input(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::input(format!("eta must be non-negative, got {}", self.eta)));
        }
        if self.alpha.iter().chain(&self.mu).any(|v| !v.is_finite()) || !self.mu0.is_finite() {
            return Err(Error::input("shrinkage state has non-finite entries"));
        }
        Ok(())
    }

    /// Prior centre `μ_jk − η p_jk` of each log-shrinkage.
    pub fn alpha_center(&self, prior_upper: &[f64]) -> Vec<f64> {
        self.mu
            .iter()
            .zip(prior_upper)
            .map(|(mu, pjk)| mu - self.eta * pjk)
            .collect()
    }
}

/// Partial correlations `r_jk = −ω_jk / sqrt(ω_jj ω_kk)` with unit diagonal.
pub fn partial_correlation(omega: &PrecisionEstimate) -> Result<DMatrix<f64>> {
    partial_correlation_matrix(omega.matrix())
}

pub(crate) fn partial_correlation_matrix(omega: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = omega.nrows();
    let d: Vec<f64> = (0..p).map(|i| omega[(i, i)]).collect();
    if let Some(i) = d.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Invariant(format!(
            "precision diagonal entry {i} is not positive ({})",
            d[i]
        )));
    }
    let mut r = DMatrix::identity(p, p);
    for j in 0..p {
        for k in j + 1..p {
            let v = (-omega[(j, k)] / (d[j] * d[k]).sqrt()).clamp(-1.0, 1.0);
            r[(j, k)] = v;
            r[(k, j)] = v;
        }
    }
    Ok(r)
}

/// Additive pieces of the negative log-posterior, exposed for diagnostics and tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectiveTerms {
    pub neg_log_det: f64,
    pub trace: f64,
    pub offdiag_penalty: f64,
    pub diag_penalty: f64,
    pub alpha_prior: f64,
    pub mu_prior: f64,
    pub eta_prior: f64,
    pub nu_constant: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.neg_log_det
            + self.trace
            + self.offdiag_penalty
            + self.diag_penalty
            + self.alpha_prior
            + self.mu_prior
            + self.eta_prior
            + self.nu_constant
    }
}

fn check_dims(p: usize, state: &ShrinkageState, s: &SampleCovariance, prior: &StructuralPrior) -> Result<()> {
    if s.dim() != p || prior.dim() != p {
        return Err(Error::input(format!(
            "dimension mismatch: omega {p}, covariance {}, prior {}",
            s.dim(),
            prior.dim()
        )));
    }
    state.validate(p)
}

pub fn objective_terms(
    omega: &DMatrix<f64>,
    state: &ShrinkageState,
    s: &SampleCovariance,
    prior: &StructuralPrior,
) -> Result<ObjectiveTerms> {
    let p = omega.nrows();
    check_dims(p, state, s, prior)?;
    let log_det = log_det_pd(omega)
        .ok_or_else(|| Error::Domain("objective evaluated at a non-positive-definite matrix".into()))?;
    let trace = s.matrix().component_mul(omega).sum();

    let prior_upper = prior.upper();
    let s2l = state.sigma2_lambda;
    let mut offdiag_penalty = 0.0;
    let mut alpha_prior = 0.0;
    let mut mu_prior = 0.0;
    for (idx, (j, k)) in upper_pairs(p).enumerate() {
        let a = state.alpha[idx];
        offdiag_penalty += a.exp() * omega[(j, k)].abs();
        let r = a - (state.mu[idx] - state.eta * prior_upper[idx]);
        alpha_prior += r * r / (2.0 * s2l);
        let dm = state.mu[idx] - state.mu0;
        mu_prior += dm * dm / (2.0 * state.sigma2_mu);
    }
    let diag_sum: f64 = (0..p).map(|i| omega[(i, i)].abs()).sum();
    let eta_prior = if state.eta > 0.0 {
        -(state.a_eta - 1.0) * state.eta.ln() + state.b_eta * state.eta
    } else {
        0.0
    };

    Ok(ObjectiveTerms {
        neg_log_det: -log_det,
        trace,
        offdiag_penalty: state.nu * offdiag_penalty,
        diag_penalty: 0.5 * state.nu * diag_sum,
        alpha_prior,
        mu_prior,
        eta_prior,
        nu_constant: -(p as f64) * (0.5 * state.nu).ln(),
    })
}

/// Negative log-posterior `F(Θ)`, the quantity minimised by the MAP optimiser.
pub fn objective(
    omega: &PrecisionEstimate,
    state: &ShrinkageState,
    s: &SampleCovariance,
    prior: &StructuralPrior,
) -> Result<f64> {
    objective_terms(omega.matrix(), state, s, prior).map(|t| t.total())
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

pub(crate) fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
}
