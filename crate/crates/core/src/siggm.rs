//! Block-coordinate MAP estimation of the structurally informed GGM.
//!
//! Each outer cycle minimises the negative log-posterior [`crate::model::objective`] over one
//! block at a time: Ω (weighted graphical lasso), μ and η (closed forms), then α (damped
//! Newton with a diagonal Hessian). Every block step is a descent step, so the objective
//! trace is monotone; a violation beyond rounding is reported as an internal error.

use log::warn;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    self, n_pairs, PrecisionEstimate, SampleCovariance, ShrinkageState, StructuralPrior,
};
use crate::wglasso::{self, PenaltyWeights, SolverOptions};

pub const DEFAULT_MU0: f64 = 0.0;
pub const DEFAULT_SIGMA2_MU: f64 = 5.0;
/// Gamma(36, 6) has mean 6 and variance 1.
pub const DEFAULT_A_ETA: f64 = 36.0;
pub const DEFAULT_B_ETA: f64 = 6.0;
pub const ETA_FLOOR: f64 = 1e-6;
pub const SIGMA2_LAMBDA_FLOOR: f64 = 0.01;
/// Structural strengths at or below this are left out of the η initialiser.
pub const ETA_INIT_MIN_PRIOR: f64 = 0.01;
/// Tolerated objective increase between outer cycles, relative to `max(1, |F|)`.
pub const MONOTONE_SLACK: f64 = 1e-8;

const INIT_GRID_LEN: usize = 8;
const INIT_GRID_RATIO: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    #[default]
    Full,
    /// SC-free variant: η fixed at zero and the structural prior ignored.
    EtaZero,
    /// α fixed at `μ0 − η̄ p_jk`; only Ω is estimated.
    ParametricBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct HyperOverrides {
    pub mu0: Option<f64>,
    pub sigma2_mu: Option<f64>,
    pub a_eta: Option<f64>,
    pub b_eta: Option<f64>,
    pub sigma2_lambda: Option<f64>,
    /// Hold every μ_jk at μ0 instead of drawing and updating it.
    pub fixed_mu: bool,
    /// Hold η at this value instead of initialising and updating it.
    pub fixed_eta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonOptions {
    pub step_shrink: f64,
    pub armijo_c: f64,
    pub max_backtracks: usize,
    pub max_steps: usize,
    pub grad_tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            step_shrink: 0.5,
            armijo_c: 1e-4,
            max_backtracks: 50,
            max_steps: 10,
            grad_tol: 1e-6,
        }
    }
}

/// How the non-Ω blocks are updated within an outer cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShrinkageStep {
    /// Exact joint minimisation over (α, μ, η) given Ω ([`update_shrinkage`]).
    #[default]
    Joint,
    /// μ-step, η-step, then damped Newton on α.
    Sequential,
}

/// A single ν, an explicit grid, or an automatically calibrated grid of `n` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NuSpec {
    Value(f64),
    Grid(Vec<f64>),
    Auto { auto: usize },
}

impl Default for NuSpec {
    fn default() -> Self {
        NuSpec::Auto { auto: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub nu: NuSpec,
    pub epsilon: f64,
    pub max_outer: usize,
    pub mode: FitMode,
    pub hyper_overrides: HyperOverrides,
    pub newton: NewtonOptions,
    pub shrinkage_step: ShrinkageStep,
    pub solver: SolverOptions,
    /// η̄ used by the parametric baseline.
    pub baseline_eta: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            nu: NuSpec::default(),
            epsilon: 1e-4,
            max_outer: 200,
            mode: FitMode::Full,
            hyper_overrides: HyperOverrides::default(),
            newton: NewtonOptions::default(),
            shrinkage_step: ShrinkageStep::default(),
            solver: SolverOptions::default(),
            baseline_eta: DEFAULT_A_ETA / DEFAULT_B_ETA,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn with_nu(mut self, nu: f64) -> Self {
        self.nu = NuSpec::Value(nu);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::input("epsilon must be positive"));
        }
        if self.max_outer == 0 {
            return Err(Error::input("max_outer must be at least 1"));
        }
        match &self.nu {
            NuSpec::Value(v) if !(*v > 0.0 && v.is_finite()) => {
                return Err(Error::input(format!("nu must be positive, got {v}")))
            }
            NuSpec::Grid(g) => {
                if g.is_empty() {
                    return Err(Error::input("nu grid is empty"));
                }
                if g.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return Err(Error::input("nu grid values must be positive"));
                }
                if g.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::input("nu grid must be strictly increasing"));
                }
            }
            NuSpec::Auto { auto } if *auto < 2 => {
                return Err(Error::input("automatic nu grid needs at least 2 points"))
            }
            _ => {}
        }
        let h = &self.hyper_overrides;
        for (name, v) in [
            ("sigma2_mu", h.sigma2_mu),
            ("a_eta", h.a_eta),
            ("b_eta", h.b_eta),
            ("sigma2_lambda", h.sigma2_lambda),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::input(format!("{name} override must be positive, got {v}")));
                }
            }
        }
        if let Some(eta) = h.fixed_eta {
            if !(eta >= 0.0 && eta.is_finite()) {
                return Err(Error::input("fixed_eta must be non-negative"));
            }
        }
        if !(self.baseline_eta >= 0.0) {
            return Err(Error::input("baseline_eta must be non-negative"));
        }
        Ok(())
    }

    fn mu0(&self) -> f64 {
        self.hyper_overrides.mu0.unwrap_or(DEFAULT_MU0)
    }

    fn a_eta(&self) -> f64 {
        self.hyper_overrides.a_eta.unwrap_or(DEFAULT_A_ETA)
    }

    fn b_eta(&self) -> f64 {
        self.hyper_overrides.b_eta.unwrap_or(DEFAULT_B_ETA)
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub omega: PrecisionEstimate,
    pub state: ShrinkageState,
    pub objective_trace: Vec<f64>,
    pub n_iter: usize,
    pub converged: bool,
    pub bic: f64,
    /// Mode actually used (full mode degrades to `EtaZero` for an all-zero prior).
    pub mode: FitMode,
}

impl FitResult {
    pub fn nu(&self) -> f64 {
        self.state.nu
    }
}

#[derive(Debug, Clone)]
pub struct PathResult {
    /// Fits in order of decreasing ν (sparsest first).
    pub fits: Vec<FitResult>,
    pub selected: usize,
}

impl PathResult {
    pub fn best(&self) -> &FitResult {
        &self.fits[self.selected]
    }
}

/// `T·[−log|Ω| + tr(SΩ)] + log(T)·|E|`.
pub fn bic(s: &SampleCovariance, omega: &PrecisionEstimate) -> f64 {
    let t = s.n_obs() as f64;
    let fit = -omega.log_det() + s.matrix().component_mul(omega.matrix()).sum();
    t * fit + t.ln() * omega.n_edges() as f64
}

fn effective_mode(mode: FitMode, prior: &StructuralPrior) -> FitMode {
    if mode == FitMode::Full && prior.is_all_zero() {
        warn!("structural prior is all zero; fitting without it (eta = 0)");
        FitMode::EtaZero
    } else {
        mode
    }
}

fn check_dims(s: &SampleCovariance, prior: &StructuralPrior) -> Result<()> {
    if s.dim() != prior.dim() {
        return Err(Error::input(format!(
            "covariance is {0}x{0} but structural prior is {1}x{1}",
            s.dim(),
            prior.dim()
        )));
    }
    if s.dim() < 2 {
        return Err(Error::input("need at least two regions"));
    }
    Ok(())
}

/// Largest off-diagonal |S_jk|: the smallest uniform penalty giving an empty graph.
pub fn max_offdiag_abs(s: &SampleCovariance) -> f64 {
    model::upper_pairs(s.dim())
        .map(|(j, k)| s.matrix()[(j, k)].abs())
        .fold(0.0, f64::max)
}

/// Plain graphical lasso with a uniform off-diagonal penalty, fitted over a descending grid
/// of penalties and selected by BIC (ties toward the larger penalty).
#[derive(Debug, Clone)]
pub struct GlassoSelection {
    pub penalty: f64,
    pub omega: PrecisionEstimate,
    pub path: Vec<(f64, PrecisionEstimate)>,
}

pub fn glasso_bic_path(
    s: &SampleCovariance,
    penalties: &[f64],
    diag_penalty: impl Fn(f64) -> f64,
    solver: &SolverOptions,
    warm: Option<&PrecisionEstimate>,
) -> Result<GlassoSelection> {
    let p = s.dim();
    let mut path = Vec::with_capacity(penalties.len());
    let mut prev = warm.cloned();
    let mut best: Option<(f64, usize)> = None;
    for &pen in penalties {
        let w = PenaltyWeights::uniform(p, pen, diag_penalty(pen))?;
        let om = wglasso::solve(s, &w, solver, prev.as_ref())?;
        let score = bic(s, &om);
        if best.is_none_or(|(b, _)| score < b) {
            best = Some((score, path.len()));
        }
        prev = Some(om.clone());
        path.push((pen, om));
    }
    let (_, idx) = best.ok_or_else(|| Error::input("empty penalty grid"))?;
    Ok(GlassoSelection {
        penalty: path[idx].0,
        omega: path[idx].1.clone(),
        path,
    })
}

/// Log-spaced grid from `hi` down to `hi / ratio`.
pub fn log_grid_desc(hi: f64, ratio: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    (0..n)
        .map(|i| hi * ratio.powf(-(i as f64) / (n - 1) as f64))
        .collect()
}

fn initial_glasso(
    s: &SampleCovariance,
    nu: f64,
    solver: &SolverOptions,
    warm: Option<&PrecisionEstimate>,
) -> Result<(f64, PrecisionEstimate)> {
    let hi = max_offdiag_abs(s).max(1e-6);
    let grid = log_grid_desc(hi, INIT_GRID_RATIO, INIT_GRID_LEN);
    let sel = glasso_bic_path(s, &grid, |_| 0.5 * nu, solver, warm)?;
    Ok((sel.penalty, sel.omega))
}

/// Starting point of the MAP iteration for a given ν.
///
/// Ω₀ is a plain graphical-lasso fit (uniform off-diagonal penalty L, diagonal ν/2) chosen by
/// BIC; every α_jk starts at `log λ₀` with `λ₀ = 2L/ν`, the value that reproduces that fit
/// as the Ω-subproblem. μ is drawn from its prior with the configured seed, η₀ averages the
/// σ²_λ = 0 solutions `(μ_jk − log λ₀)/p_jk` and σ²_λ is the mean squared residual at η₀.
pub fn initialize(
    s: &SampleCovariance,
    prior: &StructuralPrior,
    cfg: &FitConfig,
    nu: f64,
) -> Result<(PrecisionEstimate, ShrinkageState)> {
    initialize_warm(s, prior, cfg, nu, None)
}

fn initialize_warm(
    s: &SampleCovariance,
    prior: &StructuralPrior,
    cfg: &FitConfig,
    nu: f64,
    warm: Option<&PrecisionEstimate>,
) -> Result<(PrecisionEstimate, ShrinkageState)> {
    cfg.validate()?;
    check_dims(s, prior)?;
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::input(format!("nu must be positive, got {nu}")));
    }
    let p = s.dim();
    let m = n_pairs(p);
    let mode = effective_mode(cfg.mode, prior);
    let h = &cfg.hyper_overrides;
    let mu0 = cfg.mu0();
    let (a_eta, b_eta) = (cfg.a_eta(), cfg.b_eta());
    let sigma2_mu = h.sigma2_mu.unwrap_or(DEFAULT_SIGMA2_MU);
    let prior_upper = prior.upper();

    if mode == FitMode::ParametricBaseline {
        let eta = h.fixed_eta.unwrap_or(cfg.baseline_eta);
        let state = ShrinkageState {
            alpha: prior_upper.iter().map(|pjk| mu0 - eta * pjk).collect(),
            mu: vec![mu0; m],
            eta,
            nu,
            sigma2_lambda: h.sigma2_lambda.unwrap_or(1.0),
            sigma2_mu,
            mu0,
            a_eta,
            b_eta,
        };
        let omega = match warm {
            Some(w) => w.clone(),
            None => diagonal_precision(s, nu),
        };
        return Ok((omega, state));
    }

    let (penalty, omega) = initial_glasso(s, nu, &cfg.solver, warm)?;
    let alpha0 = (2.0 * penalty / nu).ln();

    let mu: Vec<f64> = if h.fixed_mu {
        vec![mu0; m]
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(mu0, sigma2_mu.sqrt())
            .map_err(|e| Error::input(format!("invalid baseline prior: {e}")))?;
        (0..m).map(|_| normal.sample(&mut rng)).collect()
    };

    let eta = match (mode, h.fixed_eta) {
        (FitMode::EtaZero, _) => 0.0,
        (_, Some(eta)) => eta,
        _ => initial_eta(alpha0, &mu, &prior_upper, a_eta, b_eta),
    };
    let used_prior: &[f64] = if mode == FitMode::EtaZero { &[] } else { &prior_upper };

    let sigma2_lambda = match h.sigma2_lambda {
        Some(v) => v,
        None => {
            let mean_sq = (0..m)
                .map(|i| {
                    let pjk = used_prior.get(i).copied().unwrap_or(0.0);
                    let r = alpha0 - mu[i] + eta * pjk;
                    r * r
                })
                .sum::<f64>()
                / m as f64;
            mean_sq.max(SIGMA2_LAMBDA_FLOOR)
        }
    };

    let state = ShrinkageState {
        alpha: vec![alpha0; m],
        mu,
        eta,
        nu,
        sigma2_lambda,
        sigma2_mu,
        mu0,
        a_eta,
        b_eta,
    };
    Ok((omega, state))
}

fn diagonal_precision(s: &SampleCovariance, nu: f64) -> PrecisionEstimate {
    let p = s.dim();
    let om = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 / (s.matrix()[(i, i)] + 0.5 * nu) } else { 0.0 });
    PrecisionEstimate::new(om).expect("positive diagonal")
}

/// η₀ from the σ²_λ = 0 relation `log λ₀ = μ_jk − η p_jk`, averaged over edges with
/// non-negligible structural support and clamped to `[0.01, 2·a/b]`.
pub fn initial_eta(log_lambda0: f64, mu: &[f64], prior_upper: &[f64], a_eta: f64, b_eta: f64) -> f64 {
    let (sum, count) = mu
        .iter()
        .zip(prior_upper)
        .filter(|(_, &pjk)| pjk > ETA_INIT_MIN_PRIOR)
        .fold((0.0, 0usize), |(s, c), (mu, pjk)| (s + (mu - log_lambda0) / pjk, c + 1));
    if count == 0 {
        return a_eta / b_eta;
    }
    (sum / count as f64).clamp(0.01, 2.0 * a_eta / b_eta)
}

/// Ω-step: weighted graphical lasso with `w_jk = ν·½e^{α_jk}` and diagonal `ν/2`.
pub fn update_omega(
    s: &SampleCovariance,
    state: &ShrinkageState,
    warm: &PrecisionEstimate,
    solver: &SolverOptions,
) -> Result<PrecisionEstimate> {
    let w = PenaltyWeights::from_shrinkage(&state.alpha, state.nu, s.dim())?;
    wglasso::solve(s, &w, solver, Some(warm))
}

/// μ-step: `μ_jk ← (σ²_μ(α_jk + η p_jk) + σ²_λ μ0) / (σ²_μ + σ²_λ)`.
pub fn update_mu(state: &ShrinkageState, prior_upper: &[f64]) -> Vec<f64> {
    let (s2m, s2l) = (state.sigma2_mu, state.sigma2_lambda);
    state
        .alpha
        .iter()
        .zip(prior_upper)
        .map(|(a, pjk)| (s2m * (a + state.eta * pjk) + s2l * state.mu0) / (s2m + s2l))
        .collect()
}

/// η-step: positive root of `γη² + βη + ρ = 0`, the stationarity condition of the objective
/// in η, with `β = b + Σ(α−μ)p/σ²_λ`, `γ = Σp²/σ²_λ` and `ρ = −(a − 1)`.
pub fn update_eta(state: &ShrinkageState, prior_upper: &[f64]) -> f64 {
    let s2l = state.sigma2_lambda;
    let cross: f64 = state
        .alpha
        .iter()
        .zip(&state.mu)
        .zip(prior_upper)
        .map(|((a, mu), p)| (a - mu) * p)
        .sum();
    eta_root(state, prior_upper, cross, s2l)
}

/// Positive root of `γη² + βη − (a−1)` with `γ = Σp²/v` and `β = b + cross/v`.
fn eta_root(state: &ShrinkageState, prior_upper: &[f64], cross: f64, v: f64) -> f64 {
    let gamma = prior_upper.iter().map(|p| p * p).sum::<f64>() / v;
    let mode = ((state.a_eta - 1.0) / state.b_eta).max(ETA_FLOOR);
    if gamma <= 0.0 {
        warn!("structural prior has no support; eta falls back to its prior mode");
        return mode;
    }
    let beta = state.b_eta + cross / v;
    let rho = -(state.a_eta - 1.0);
    let disc = (beta * beta - 4.0 * gamma * rho).max(0.0);
    // Rationalised root avoids cancellation when β ≫ 0.
    let root = if beta > 0.0 {
        -2.0 * rho / (beta + disc.sqrt())
    } else {
        (-beta + disc.sqrt()) / (2.0 * gamma)
    };
    if !(root > ETA_FLOOR) {
        warn!("eta update hit the boundary ({root:.3e}); clamping to {ETA_FLOOR:e}");
        return ETA_FLOOR;
    }
    root
}

/// α-subobjective `ν Σ e^{α}|ω| + Σ (α − c)² / (2σ²_λ)` with `c = μ − η p`.
pub fn alpha_subobjective(alpha: &[f64], abs_omega: &[f64], center: &[f64], nu: f64, sigma2_lambda: f64) -> f64 {
    alpha
        .iter()
        .zip(abs_omega)
        .zip(center)
        .map(|((a, w), c)| nu * a.exp() * w + (a - c) * (a - c) / (2.0 * sigma2_lambda))
        .sum()
}

/// Newton gradient and diagonal Hessian of the α-subobjective, both scaled by σ²_λ:
/// `g = νσ²_λ|ω|e^{α} + (α − c)`, `h = νσ²_λ|ω|e^{α} + 1`.
pub fn alpha_newton_terms(alpha: &[f64], abs_omega: &[f64], center: &[f64], nu: f64, sigma2_lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let mut g = Vec::with_capacity(alpha.len());
    let mut h = Vec::with_capacity(alpha.len());
    for ((a, w), c) in alpha.iter().zip(abs_omega).zip(center) {
        let curv = nu * sigma2_lambda * w * a.exp();
        g.push(curv + (a - c));
        h.push(curv + 1.0);
    }
    (g, h)
}

#[derive(Debug, Clone)]
pub struct AlphaUpdate {
    pub alpha: Vec<f64>,
    pub steps: usize,
    /// Backtracking failed to find a decrease; α was left at the last accepted value.
    pub stalled: bool,
}

pub fn upper_abs(omega: &PrecisionEstimate) -> Vec<f64> {
    model::upper_pairs(omega.dim())
        .map(|(j, k)| omega.matrix()[(j, k)].abs())
        .collect()
}

/// α-step: damped Newton iterations until `max|g| < grad_tol` or `max_steps`.
pub fn update_alpha(
    state: &ShrinkageState,
    omega: &PrecisionEstimate,
    prior_upper: &[f64],
    opts: &NewtonOptions,
) -> AlphaUpdate {
    let abs_omega = upper_abs(omega);
    let center = state.alpha_center(prior_upper);
    let (nu, s2l) = (state.nu, state.sigma2_lambda);
    let mut alpha = state.alpha.clone();
    let mut f = alpha_subobjective(&alpha, &abs_omega, &center, nu, s2l);
    let mut steps = 0;
    let mut stalled = false;

    for _ in 0..opts.max_steps {
        let (g, h) = alpha_newton_terms(&alpha, &abs_omega, &center, nu, s2l);
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < opts.grad_tol {
            break;
        }
        let dir: Vec<f64> = g.iter().zip(&h).map(|(g, h)| -g / h).collect();
        // true gradient is g/σ²_λ
        let slope: f64 = g.iter().zip(&dir).map(|(g, d)| g * d).sum::<f64>() / s2l;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..opts.max_backtracks {
            let trial: Vec<f64> = alpha.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let f_trial = alpha_subobjective(&trial, &abs_omega, &center, nu, s2l);
            if f_trial.is_finite() && f_trial <= f + opts.armijo_c * step * slope {
                alpha = trial;
                f = f_trial;
                accepted = true;
                break;
            }
            step *= opts.step_shrink;
        }
        if !accepted {
            stalled = true;
            break;
        }
        steps += 1;
    }
    AlphaUpdate { alpha, steps, stalled }
}

/// `W(e^l)` on the principal branch, evaluated without forming `e^l` so that large
/// arguments cannot overflow.
pub fn lambert_w_of_exp(l: f64) -> f64 {
    if l < 1.0 {
        // Halley on w·e^w = z
        let z = l.exp();
        let mut w = z.ln_1p();
        for _ in 0..50 {
            let ew = w.exp();
            let f = w * ew - z;
            let wp1 = w + 1.0;
            let dw = f / (ew * wp1 - (wp1 + 1.0) * f / (2.0 * wp1));
            w -= dw;
            if dw.abs() <= 1e-15 * (1.0 + w.abs()) {
                break;
            }
        }
        w
    } else {
        // Newton on w + ln w = l
        let mut w = l - l.ln();
        for _ in 0..50 {
            let dw = (w + w.ln() - l) / (1.0 + 1.0 / w);
            w -= dw;
            if dw.abs() <= 1e-15 * w {
                break;
            }
        }
        w
    }
}

/// Exact minimiser of the objective over (α, μ) — and η when `free_eta` — for fixed Ω.
///
/// For fixed α and η the μ-step is explicit; substituting it turns the α-terms of edge e
/// into `A e^{α} + (α − c)²/(2S)` with `A = ν|ω_e|`, `S = σ²_μ + σ²_λ` and `c = μ0 − η p_e`,
/// whose minimiser is `α = c − W(A S e^{c})`. The remaining profile in η is convex with
/// derivative `b − (a−1)/η − Σ W_e p_e / S`, increasing in η, and is solved by safeguarded
/// Newton.
pub fn update_shrinkage(
    state: &ShrinkageState,
    omega: &PrecisionEstimate,
    prior_upper: &[f64],
    free_eta: bool,
) -> ShrinkageState {
    let total = state.sigma2_mu + state.sigma2_lambda;
    let log_scale: Vec<f64> = upper_abs(omega)
        .iter()
        .map(|w| if *w > 0.0 { (state.nu * w * total).ln() } else { f64::NEG_INFINITY })
        .collect();
    let w_at = |eta: f64, e: usize| {
        let l = log_scale[e] + state.mu0 - eta * prior_upper[e];
        if l == f64::NEG_INFINITY {
            0.0
        } else {
            lambert_w_of_exp(l)
        }
    };
    let eta = if free_eta {
        solve_profile_eta(state, prior_upper, total, &w_at)
    } else {
        state.eta
    };
    let alpha: Vec<f64> = (0..prior_upper.len())
        .map(|e| state.mu0 - eta * prior_upper[e] - w_at(eta, e))
        .collect();
    let mut next = ShrinkageState {
        alpha,
        eta,
        ..state.clone()
    };
    next.mu = update_mu(&next, prior_upper);
    next
}

fn solve_profile_eta(
    state: &ShrinkageState,
    prior_upper: &[f64],
    total: f64,
    w_at: &dyn Fn(f64, usize) -> f64,
) -> f64 {
    let support: Vec<usize> = (0..prior_upper.len()).filter(|&e| prior_upper[e] > 0.0).collect();
    if support.is_empty() {
        warn!("structural prior has no support; eta falls back to its prior mode");
        return ((state.a_eta - 1.0) / state.b_eta).max(ETA_FLOOR);
    }
    // derivative and curvature of the profile objective in η
    let terms = |eta: f64| {
        let (mut d, mut c) = (state.b_eta - (state.a_eta - 1.0) / eta, (state.a_eta - 1.0) / (eta * eta));
        for &e in &support {
            let w = w_at(eta, e);
            let p = prior_upper[e];
            d -= w * p / total;
            c += p * p * w / ((1.0 + w) * total);
        }
        (d, c)
    };
    let mut lo = ETA_FLOOR;
    if terms(lo).0 >= 0.0 {
        return ETA_FLOOR;
    }
    let mut hi = state.eta.max(1.0);
    while terms(hi).0 < 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    let mut eta = state.eta.clamp(lo, hi);
    for _ in 0..200 {
        let (d, c) = terms(eta);
        if d < 0.0 {
            lo = eta;
        } else {
            hi = eta;
        }
        let newton = eta - d / c;
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - eta).abs() <= 1e-14 * eta || hi - lo <= 1e-14 * hi {
            return next;
        }
        eta = next;
    }
    eta
}

/// Fits one ν (taken from `cfg.nu`, which must be a single value).
pub fn fit(s: &SampleCovariance, prior: &StructuralPrior, cfg: &FitConfig) -> Result<FitResult> {
    let NuSpec::Value(nu) = cfg.nu else {
        return Err(Error::input("fit needs a scalar nu; use fit_path for grids"));
    };
    fit_at(s, prior, cfg, nu, None)
}

const INEXACT_OMEGA_TOL: f64 = 1e-3;
const INEXACT_OMEGA_SCALE: f64 = 1e-2;

fn fit_at(
    s: &SampleCovariance,
    prior: &StructuralPrior,
    cfg: &FitConfig,
    nu: f64,
    warm: Option<&PrecisionEstimate>,
) -> Result<FitResult> {
    let mode = effective_mode(cfg.mode, prior);
    let zero_prior;
    let prior = if mode == FitMode::EtaZero {
        zero_prior = StructuralPrior::zeros(prior.dim());
        &zero_prior
    } else {
        prior
    };
    let (mut omega, mut state) = initialize_warm(s, prior, &FitConfig { mode, ..cfg.clone() }, nu, warm)?;
    let prior_upper = prior.upper();
    let h = &cfg.hyper_overrides;

    let mut f = model::objective(&omega, &state, s, prior)?;
    let mut trace = vec![f];
    let mut converged = false;
    let mut n_iter = 0;
    // Ω-steps start inexact and tighten with the outer progress; each is still a descent step
    // from the warm iterate, and convergence is only declared after an exact Ω-step
    let mut omega_solver = cfg.solver;
    omega_solver.tol = cfg.solver.tol.max(INEXACT_OMEGA_TOL);

    for iter in 0..cfg.max_outer {
        n_iter = iter + 1;
        omega = update_omega(s, &state, &omega, &omega_solver)?;
        if mode != FitMode::ParametricBaseline {
            let free_eta = mode == FitMode::Full && h.fixed_eta.is_none();
            if h.fixed_mu || cfg.shrinkage_step == ShrinkageStep::Sequential {
                if !h.fixed_mu {
                    state.mu = update_mu(&state, &prior_upper);
                }
                if free_eta {
                    state.eta = update_eta(&state, &prior_upper);
                }
                let au = update_alpha(&state, &omega, &prior_upper, &cfg.newton);
                if au.stalled {
                    warn!("alpha line search stalled at outer iteration {n_iter}");
                }
                state.alpha = au.alpha;
            } else {
                state = update_shrinkage(&state, &omega, &prior_upper, free_eta);
            }
        }
        let f_new = model::objective(&omega, &state, s, prior)?;
        if f_new > f + MONOTONE_SLACK * f.abs().max(1.0) {
            return Err(Error::Internal(format!(
                "objective increased from {f} to {f_new} at outer iteration {n_iter}"
            )));
        }
        trace.push(f_new);
        let change = (f - f_new).abs();
        f = f_new;
        let exact = omega_solver.tol <= cfg.solver.tol;
        if change < cfg.epsilon * f_new.abs() {
            if exact {
                converged = true;
                break;
            }
            omega_solver.tol = cfg.solver.tol;
        } else {
            let rel = change / f_new.abs().max(1.0);
            omega_solver.tol = (rel * INEXACT_OMEGA_SCALE).clamp(cfg.solver.tol, omega_solver.tol);
        }
    }

    let bic = bic(s, &omega);
    Ok(FitResult {
        omega,
        state,
        objective_trace: trace,
        n_iter,
        converged,
        bic,
        mode,
    })
}

/// Fits every ν of the grid from largest to smallest, warm-starting the solver from the
/// previous fit, and selects the BIC minimiser (ties toward larger ν).
pub fn fit_path(s: &SampleCovariance, prior: &StructuralPrior, cfg: &FitConfig) -> Result<PathResult> {
    cfg.validate()?;
    check_dims(s, prior)?;
    let grid: Vec<f64> = match &cfg.nu {
        NuSpec::Value(v) => vec![*v],
        NuSpec::Grid(g) => g.iter().rev().copied().collect(),
        NuSpec::Auto { auto } => calibrate_nu_grid(s, prior, cfg, *auto)?,
    };
    fit_grid(s, prior, cfg, &grid)
}

fn fit_grid(s: &SampleCovariance, prior: &StructuralPrior, cfg: &FitConfig, grid_desc: &[f64]) -> Result<PathResult> {
    let mut fits: Vec<FitResult> = Vec::with_capacity(grid_desc.len());
    for &nu in grid_desc {
        let warm = fits.last().map(|f| f.omega.clone());
        let fit = fit_at(s, prior, cfg, nu, warm.as_ref())?;
        if let Some(prev) = fits.last() {
            if fit.omega.n_edges() < prev.omega.n_edges() {
                warn!(
                    "edge count fell from {} to {} as nu decreased to {nu:.4e}",
                    prev.omega.n_edges(),
                    fit.omega.n_edges()
                );
            }
        }
        fits.push(fit);
    }
    let selected = select_by_bic(&fits);
    Ok(PathResult { fits, selected })
}

/// Index of the smallest BIC; fits are ordered by decreasing ν so the first minimum wins ties.
pub fn select_by_bic(fits: &[FitResult]) -> usize {
    let mut best = 0;
    for (i, f) in fits.iter().enumerate() {
        if f.bic < fits[best].bic {
            best = i;
        }
    }
    best
}

fn density(fit: &FitResult) -> f64 {
    fit.omega.n_edges() as f64 / n_pairs(fit.omega.dim()) as f64
}

/// Log-spaced ν grid (descending) whose sparsest end has edge density ≤ 1% and whose densest
/// end has density ≥ 30%, located by expanding two bracketing pre-fits.
pub fn calibrate_nu_grid(s: &SampleCovariance, prior: &StructuralPrior, cfg: &FitConfig, n: usize) -> Result<Vec<f64>> {
    const SPARSE: f64 = 0.01;
    const DENSE: f64 = 0.30;
    const FACTOR: f64 = 3.0;
    const MAX_TRIES: usize = 8;
    // bracketing only needs the approximate density, so the pre-fits are truncated
    const PREFIT_OUTER: usize = 5;
    let base = max_offdiag_abs(s).max(1e-6);
    let pre = FitConfig {
        max_outer: cfg.max_outer.min(PREFIT_OUTER),
        ..cfg.clone()
    };
    let cfg = &pre;

    let mut hi = 2.0 * base;
    for _ in 0..MAX_TRIES {
        if density(&fit_at(s, prior, cfg, hi, None)?) <= SPARSE {
            break;
        }
        hi *= FACTOR;
    }
    let mut lo = 0.1 * base;
    for _ in 0..MAX_TRIES {
        if density(&fit_at(s, prior, cfg, lo, None)?) >= DENSE {
            break;
        }
        lo /= FACTOR;
    }
    if lo >= hi {
        lo = hi / 100.0;
    }
    Ok(log_grid_desc(hi, hi / lo, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn state(m: usize) -> ShrinkageState {
        ShrinkageState {
            alpha: vec![0.0; m],
            mu: vec![0.0; m],
            eta: 2.0,
            nu: 1.0,
            sigma2_lambda: 1.0,
            sigma2_mu: 5.0,
            mu0: 0.0,
            a_eta: 36.0,
            b_eta: 6.0,
        }
    }

    #[test]
    fn gamma_hyperparameters_match_moments() {
        // E = a/b = 6, Var = a/b² = 1
        assert_abs_diff_eq!(DEFAULT_A_ETA / DEFAULT_B_ETA, 6.0);
        assert_abs_diff_eq!(DEFAULT_A_ETA / (DEFAULT_B_ETA * DEFAULT_B_ETA), 1.0);
        assert_eq!(DEFAULT_SIGMA2_MU, 5.0);
        assert_eq!(DEFAULT_MU0, 0.0);
    }

    #[test]
    fn mu_update_examples() {
        let st = state(1);
        let mu = update_mu(&st, &[0.5]);
        assert_abs_diff_eq!(mu[0], 5.0 / 6.0, epsilon = 1e-12);

        let mut strong = state(1);
        strong.sigma2_mu = 1e-12;
        strong.mu0 = 0.7;
        assert_abs_diff_eq!(update_mu(&strong, &[0.5])[0], 0.7, epsilon = 1e-9);

        let mut exact = state(1);
        exact.sigma2_lambda = 1e-12;
        exact.alpha = vec![-0.3];
        assert_abs_diff_eq!(update_mu(&exact, &[0.5])[0], -0.3 + 2.0 * 0.5, epsilon = 1e-9);
    }

    #[test]
    fn eta_update_single_edge() {
        let st = state(1);
        let eta = update_eta(&st, &[1.0]);
        assert_abs_diff_eq!(eta, (-6.0 + 176f64.sqrt()) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eta, 3.6333, epsilon = 1e-4);
    }

    #[test]
    fn eta_update_is_block_minimiser() {
        let mut st = state(4);
        st.sigma2_lambda = 3.7;
        st.alpha = vec![-1.0, 0.5, 0.2, -2.0];
        st.mu = vec![0.3, -0.1, 0.0, 1.0];
        let pu = [0.9, 0.1, 0.5, 0.7];
        let eta = update_eta(&st, &pu);
        let obj = |e: f64| {
            let r: f64 = (0..4).map(|i| (st.alpha[i] - st.mu[i] + e * pu[i]).powi(2)).sum();
            r / (2.0 * st.sigma2_lambda) - (st.a_eta - 1.0) * e.ln() + st.b_eta * e
        };
        for d in [1e-4, -1e-4] {
            assert!(obj(eta + d) > obj(eta));
        }
    }

    #[test]
    fn eta_boundary_and_fallback() {
        let mut st = state(1);
        st.a_eta = 1.0;
        assert_eq!(update_eta(&st, &[1.0]), ETA_FLOOR);
        let st = state(2);
        assert_abs_diff_eq!(update_eta(&st, &[0.0, 0.0]), 35.0 / 6.0);
    }

    #[test]
    fn eta_discriminant_dominates_beta_squared() {
        for beta_shift in [-50.0, -1.0, 0.0, 3.0, 100.0] {
            let mut st = state(1);
            st.alpha = vec![beta_shift];
            let eta = update_eta(&st, &[1.0]);
            assert!(eta > 0.0);
        }
    }

    #[test]
    fn alpha_zero_edges_hit_prior_center() {
        let st = ShrinkageState {
            alpha: vec![3.0, -2.0, 0.5],
            mu: vec![0.2, -0.4, 1.0],
            ..state(3)
        };
        let om = PrecisionEstimate::identity(3);
        let pu = [0.1, 0.5, 0.9];
        let up = update_alpha(&st, &om, &pu, &NewtonOptions::default());
        for (a, c) in up.alpha.iter().zip(st.alpha_center(&pu)) {
            assert_abs_diff_eq!(*a, c, epsilon = 1e-12);
        }
        let (g, _) = alpha_newton_terms(&up.alpha, &[0.0; 3], &st.alpha_center(&pu), 1.0, 1.0);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn alpha_matches_bisection_oracle() {
        // scalar problem: ν e^{a} w + (a − c)²/(2σ²)
        for (nu, w, c, s2) in [(1.0, 0.5, 0.0, 1.0), (3.0, 0.05, 2.0, 5.0), (0.2, 1.4, -1.0, 0.3), (10.0, 0.8, 1.5, 8.0)] {
            let deriv = |a: f64| nu * w * f64::exp(a) + (a - c) / s2;
            let (mut lo, mut hi) = (c - s2 * nu * w * f64::exp(c) - 1.0, c);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if deriv(mid) > 0.0 {
                    hi = mid
                } else {
                    lo = mid
                }
            }
            let oracle = 0.5 * (lo + hi);
            let mut st = state(1);
            st.alpha = vec![c];
            st.mu = vec![c];
            st.eta = 0.0;
            st.nu = nu;
            st.sigma2_lambda = s2;
            let om = PrecisionEstimate::new(DMatrix::from_row_slice(2, 2, &[2.0, w, w, 2.0])).unwrap();
            let opts = NewtonOptions { max_steps: 100, grad_tol: 1e-13, ..Default::default() };
            let up = update_alpha(&st, &om, &[0.0], &opts);
            assert_abs_diff_eq!(up.alpha[0], oracle, epsilon = 1e-8);
        }
    }

    #[test]
    fn alpha_step_never_increases_subobjective() {
        let mut st = state(3);
        st.alpha = vec![-8.0, 6.0, 0.0];
        st.nu = 4.0;
        st.sigma2_lambda = 20.0;
        let om = PrecisionEstimate::new(DMatrix::from_row_slice(3, 3, &[2.0, 0.9, -0.4, 0.9, 2.0, 0.3, -0.4, 0.3, 2.0])).unwrap();
        let pu = [0.2, 0.8, 0.0];
        let before = alpha_subobjective(&st.alpha, &upper_abs(&om), &st.alpha_center(&pu), st.nu, st.sigma2_lambda);
        let up = update_alpha(&st, &om, &pu, &NewtonOptions { max_steps: 1, ..Default::default() });
        let after = alpha_subobjective(&up.alpha, &upper_abs(&om), &st.alpha_center(&pu), st.nu, st.sigma2_lambda);
        assert!(after <= before);
    }

    #[test]
    fn sigma2_lambda_hits_floor_on_exact_relation() {
        let s = SampleCovariance::new(DMatrix::identity(3, 3), 50).unwrap();
        let prior = StructuralPrior::new(DMatrix::from_row_slice(3, 3, &[0.0, 0.5, 0.5, 0.5, 0.0, 0.5, 0.5, 0.5, 0.0])).unwrap();
        let cfg = FitConfig {
            hyper_overrides: HyperOverrides { fixed_mu: true, fixed_eta: Some(0.0), ..Default::default() },
            ..Default::default()
        };
        // S = I gives an empty glasso graph for every penalty; the BIC picks the largest,
        // max|S_offdiag| floored at 1e-6. Choose ν so that log λ₀ = μ0 = 0 exactly.
        let nu = 2.0 * 1e-6;
        let (_, st) = initialize(&s, &prior, &cfg, nu).unwrap();
        assert_abs_diff_eq!(st.alpha[0], 0.0, epsilon = 1e-15);
        assert_eq!(st.sigma2_lambda, SIGMA2_LAMBDA_FLOOR);
    }

    #[test]
    fn all_zero_prior_degrades_to_eta_zero() {
        let s = SampleCovariance::new(DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.2, 0.5, 1.0, 0.1, 0.2, 0.1, 1.0]), 50).unwrap();
        let cfg = FitConfig::default().with_nu(0.2);
        let r = fit(&s, &StructuralPrior::zeros(3), &cfg).unwrap();
        assert_eq!(r.mode, FitMode::EtaZero);
        assert_eq!(r.state.eta, 0.0);
    }

    #[test]
    fn config_validation() {
        let bad = FitConfig { nu: NuSpec::Grid(vec![0.2, 0.1]), ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = FitConfig { epsilon: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let ok = FitConfig { nu: NuSpec::Grid(vec![0.1, 0.2]), ..Default::default() };
        assert!(ok.validate().is_ok());
        let json = serde_json::to_string(&ok).unwrap();
        let back: FitConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ok);
        let auto: FitConfig = serde_json::from_str(r#"{"nu": {"auto": 5}, "mode": "eta_zero"}"#).unwrap();
        assert_eq!(auto.nu, NuSpec::Auto { auto: 5 });
        assert_eq!(auto.mode, FitMode::EtaZero);
    }

    #[test]
    fn lambert_w_solves_defining_equation() {
        assert_abs_diff_eq!(lambert_w_of_exp(1.0), 1.0, epsilon = 1e-15);
        assert_eq!(lambert_w_of_exp(f64::NEG_INFINITY), 0.0);
        for l in [-700.0, -40.0, -3.0, -0.5, 0.0, 0.99, 1.01, 4.0, 60.0, 800.0, 1e6] {
            let w = lambert_w_of_exp(l);
            // w e^w = e^l  ⇔  ln w + w = l
            assert!(w > 0.0 && (w.ln() + w - l).abs() <= 1e-12 * l.abs().max(1.0), "l = {l}, w = {w}");
        }
    }

    fn perturbed_objective(omega: &PrecisionEstimate, st: &ShrinkageState, prior: &StructuralPrior) -> f64 {
        let s = SampleCovariance::new(DMatrix::identity(omega.dim(), omega.dim()), 10).unwrap();
        model::objective(omega, st, &s, prior).unwrap()
    }

    #[test]
    fn shrinkage_step_is_stationary_in_every_coordinate() {
        let omega = PrecisionEstimate::new(DMatrix::from_row_slice(
            4,
            4,
            &[2.0, 0.4, 0.0, -0.3, 0.4, 2.0, 0.2, 0.0, 0.0, 0.2, 2.0, 0.5, -0.3, 0.0, 0.5, 2.0],
        ))
        .unwrap();
        let prior = StructuralPrior::new(DMatrix::from_row_slice(
            4,
            4,
            &[0.0, 0.9, 0.2, 0.0, 0.9, 0.0, 0.6, 0.4, 0.2, 0.6, 0.0, 0.8, 0.0, 0.4, 0.8, 0.0],
        ))
        .unwrap();
        let pu = prior.upper();
        for free_eta in [true, false] {
            let mut st = state(6);
            st.nu = 0.7;
            st.sigma2_lambda = 2.5;
            st.mu0 = -0.4;
            st.alpha = vec![1.0, -2.0, 0.3, 0.0, 2.0, -1.0];
            st.mu = vec![0.5, 0.1, -0.2, 0.0, 1.0, 0.3];
            let next = update_shrinkage(&st, &omega, &pu, free_eta);
            let f0 = perturbed_objective(&omega, &next, &prior);
            assert!(f0 <= perturbed_objective(&omega, &st, &prior));
            let h = 1e-5;
            let fd = |bump: &dyn Fn(&mut ShrinkageState, f64)| {
                let (mut up, mut dn) = (next.clone(), next.clone());
                bump(&mut up, h);
                bump(&mut dn, -h);
                (perturbed_objective(&omega, &up, &prior) - perturbed_objective(&omega, &dn, &prior)) / (2.0 * h)
            };
            for e in 0..6 {
                assert!(fd(&|s, d| s.alpha[e] += d).abs() < 1e-6, "alpha {e}");
                assert!(fd(&|s, d| s.mu[e] += d).abs() < 1e-6, "mu {e}");
            }
            if free_eta {
                assert!(fd(&|s, d| s.eta += d).abs() < 1e-6);
            } else {
                assert_eq!(next.eta, st.eta);
            }
        }
    }

    #[test]
    fn shrinkage_step_without_support_uses_prior_mode() {
        let st = state(3);
        let next = update_shrinkage(&st, &PrecisionEstimate::identity(3), &[0.0; 3], true);
        assert_abs_diff_eq!(next.eta, 35.0 / 6.0);
        // zero |ω| leaves α at the prior centre and μ at its update
        for (a, m) in next.alpha.iter().zip(&next.mu) {
            assert_abs_diff_eq!(*a, 0.0);
            assert_abs_diff_eq!(*m, 0.0);
        }
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid_desc(2.0, 100.0, 5);
        assert_abs_diff_eq!(g[0], 2.0);
        assert_abs_diff_eq!(g[4], 0.02, epsilon = 1e-15);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
    }
}
