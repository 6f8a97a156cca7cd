//! Weighted graphical lasso.
//!
//! Minimises `−log|Ω| + tr(SΩ) + Σ_{j,k} w_jk |ω_jk|` over positive-definite Ω, where the
//! penalty sum runs over the full matrix (each off-diagonal pair is counted twice). With this
//! convention the stationarity condition reads `(Ω⁻¹ − S)_jk = w_jk sign(ω_jk)` for nonzero
//! entries and `|(Ω⁻¹ − S)_jk| ≤ w_jk` at zeros.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, max_asymmetry, upper_pairs, PrecisionEstimate, SampleCovariance};

/// Largest dimension accepted by [`solve_reference`].
pub const REFERENCE_MAX_DIM: usize = 30;

const ARMIJO_SIGMA: f64 = 1e-3;
const MAX_HALVINGS: usize = 60;
const MAX_SWEEPS: usize = 100;
/// Inner sweeps stop once no coordinate moves by more than this fraction of the largest
/// entry of the direction built so far.
const SWEEP_REL_TOL: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyWeights {
    w: DMatrix<f64>,
}

impl PenaltyWeights {
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        if w.nrows() != w.ncols() {
            return Err(Error::input("penalty weights must be square"));
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::input("penalty weights must be finite and non-negative"));
        }
        if max_asymmetry(&w) > 1e-12 * (1.0 + w.amax()) {
            return Err(Error::input("penalty weights must be symmetric"));
        }
        Ok(Self { w })
    }

    /// Same weight on every off-diagonal entry and a separate diagonal weight.
    pub fn uniform(p: usize, offdiag: f64, diag: f64) -> Result<Self> {
        Self::new(DMatrix::from_fn(p, p, |i, j| if i == j { diag } else { offdiag }))
    }

    /// `w_jk = ν·½e^{α_jk}` off the diagonal and `ν/2` on it.
    pub fn from_shrinkage(alpha: &[f64], nu: f64, p: usize) -> Result<Self> {
        if alpha.len() != model::n_pairs(p) {
            return Err(Error::input("alpha length does not match dimension"));
        }
        let mut w = DMatrix::from_element(p, p, 0.5 * nu);
        for ((j, k), a) in upper_pairs(p).zip(alpha) {
            let v = 0.5 * nu * a.exp();
            w[(j, k)] = v;
            w[(k, j)] = v;
        }
        Self::new(w)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    CoordinateDescent,
    QuadraticApproximation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// First-order tolerance: the max-norm of the minimum-norm subgradient at termination.
    pub tol: f64,
    pub max_iter: usize,
    pub algorithm: Algorithm,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 500,
            algorithm: Algorithm::QuadraticApproximation,
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::input("solver needs tol > 0 and max_iter >= 1"));
        }
        Ok(())
    }
}

/// Solution plus the per-iteration objective values.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub omega: PrecisionEstimate,
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
    pub subgradient: f64,
}

/// Penalised negative log-likelihood; `None` outside the PD cone.
pub fn penalized_objective(s: &DMatrix<f64>, w: &DMatrix<f64>, omega: &DMatrix<f64>) -> Option<f64> {
    let log_det = model::log_det_pd(omega)?;
    let trace = s.component_mul(omega).sum();
    let penalty: f64 = w.iter().zip(omega.iter()).map(|(a, b)| a * b.abs()).sum();
    Some(-log_det + trace + penalty)
}

/// Same value as [`penalized_objective`] for an already factorised `omega`.
fn smooth_plus_penalty(s: &DMatrix<f64>, w: &DMatrix<f64>, omega: &DMatrix<f64>, chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    let log_det: f64 = 2.0 * (0..omega.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
    let mut rest = 0.0;
    for ((&sv, &wv), &x) in s.iter().zip(w.iter()).zip(omega.iter()) {
        rest += sv * x + wv * x.abs();
    }
    -log_det + rest
}

/// Max-norm of the minimum-norm subgradient given `sigma = Ω⁻¹`.
pub fn subgradient_norm(s: &DMatrix<f64>, w: &DMatrix<f64>, omega: &DMatrix<f64>, sigma: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for ((&sv, &wv), (&x, &sg)) in s.iter().zip(w.iter()).zip(omega.iter().zip(sigma.iter())) {
        let g = sv - sg;
        let v = if x != 0.0 {
            (g + wv * x.signum()).abs()
        } else {
            (g.abs() - wv).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

/// Checks the first-order conditions of `omega` directly (inverting it).
pub fn optimality_gap(s: &SampleCovariance, w: &PenaltyWeights, omega: &PrecisionEstimate) -> f64 {
    let sigma = model::cholesky(omega.matrix())
        .expect("validated positive definite")
        .inverse();
    subgradient_norm(s.matrix(), w.matrix(), omega.matrix(), &sigma)
}

fn check_inputs(s: &SampleCovariance, w: &PenaltyWeights) -> Result<usize> {
    let p = s.dim();
    if w.dim() != p {
        return Err(Error::input(format!(
            "penalty weights are {}x{} but covariance is {p}x{p}",
            w.dim(),
            w.dim()
        )));
    }
    for i in 0..p {
        if !(s.matrix()[(i, i)] + w.matrix()[(i, i)] > 0.0) {
            return Err(Error::input(format!(
                "variable {i} has zero variance and zero diagonal penalty; problem is unbounded"
            )));
        }
    }
    Ok(p)
}

fn diagonal_start(s: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let p = s.nrows();
    DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 / (s[(i, i)] + w[(i, i)]) } else { 0.0 })
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Solves the weighted graphical lasso with the configured algorithm.
pub fn solve(
    s: &SampleCovariance,
    w: &PenaltyWeights,
    opts: &SolverOptions,
    warm_start: Option<&PrecisionEstimate>,
) -> Result<PrecisionEstimate> {
    solve_detailed(s, w, opts, warm_start).map(|r| r.omega)
}

pub fn solve_detailed(
    s: &SampleCovariance,
    w: &PenaltyWeights,
    opts: &SolverOptions,
    warm_start: Option<&PrecisionEstimate>,
) -> Result<SolveReport> {
    opts.validate()?;
    let p = check_inputs(s, w)?;
    if let Some(ws) = warm_start {
        if ws.dim() != p {
            return Err(Error::input("warm start has the wrong dimension"));
        }
    }
    match opts.algorithm {
        Algorithm::QuadraticApproximation => quadratic_approximation(s.matrix(), w.matrix(), opts, warm_start),
        Algorithm::CoordinateDescent => block_coordinate_descent(s.matrix(), w.matrix(), opts, warm_start)
            .or_else(|_| block_coordinate_descent(s.matrix(), w.matrix(), opts, None)),
    }
}

/// Second-order solver: Newton directions from a Lasso model of the smooth part, solved by
/// coordinate descent over the free set, followed by an Armijo line search that halves the
/// step until the iterate stays positive definite.
fn quadratic_approximation(
    s: &DMatrix<f64>,
    w: &DMatrix<f64>,
    opts: &SolverOptions,
    warm_start: Option<&PrecisionEstimate>,
) -> Result<SolveReport> {
    let p = s.nrows();
    let mut x = warm_start
        .map(|ws| ws.matrix().clone())
        .unwrap_or_else(|| diagonal_start(s, w));
    let chol = match model::cholesky(&x) {
        Some(c) => c,
        None => {
            x = diagonal_start(s, w);
            model::cholesky(&x).ok_or_else(|| Error::Internal("diagonal start not PD".into()))?
        }
    };
    let mut sigma = chol.inverse();
    let mut f = penalized_objective(s, w, &x).ok_or_else(|| Error::Internal("start not PD".into()))?;
    let mut trace = vec![f];

    let mut d = DMatrix::<f64>::zeros(p, p);
    let mut u = DMatrix::<f64>::zeros(p, p);
    let mut zeroed = vec![false; p * p];
    let mut free: Vec<(usize, usize)> = Vec::with_capacity(p * (p + 1) / 2);
    let mut viol = subgradient_norm(s, w, &x, &sigma);
    let mut iterations = 0;

    for iter in 0..opts.max_iter {
        if viol <= opts.tol {
            break;
        }
        iterations = iter + 1;

        free.clear();
        for j in 0..p {
            for i in 0..=j {
                let g = s[(i, j)] - sigma[(i, j)];
                if x[(i, j)] != 0.0 || g.abs() > w[(i, j)] {
                    free.push((i, j));
                }
            }
        }

        d.fill(0.0);
        u.fill(0.0);
        zeroed.iter_mut().for_each(|z| *z = false);
        {
            // Raw column-major slices. Σ is symmetric, so its rows are read as columns, and
            // V = ΣD is kept instead of DΣ so that each update writes two contiguous columns.
            let sg = sigma.as_slice();
            let sv = s.as_slice();
            let xv = x.as_slice();
            let wv = w.as_slice();
            let dv = d.as_mut_slice();
            let vv = u.as_mut_slice();
            for _ in 0..MAX_SWEEPS {
                let mut max_step: f64 = 0.0;
                let mut d_max: f64 = 0.0;
                for &(i, j) in &free {
                    let col_j = &sg[j * p..(j + 1) * p];
                    // (ΣDΣ)_ij = Σ_k V_ik Σ_kj
                    let wdw: f64 = vv[i..].iter().step_by(p).zip(col_j).map(|(a, b)| a * b).sum();
                    let ij = i + j * p;
                    let sij = sg[ij];
                    let a = if i == j { sij * sij } else { sij * sij + sg[i + i * p] * sg[j + j * p] };
                    let b = sv[ij] - sij + wdw;
                    let c = xv[ij] + dv[ij];
                    let target = soft_threshold(c - b / a, wv[ij] / a);
                    let step = target - c;
                    if step == 0.0 {
                        d_max = d_max.max(dv[ij].abs());
                        continue;
                    }
                    max_step = max_step.max(step.abs());
                    dv[ij] += step;
                    d_max = d_max.max(dv[ij].abs());
                    zeroed[ij] = target == 0.0;
                    // V += step·(Σ e_i e_jᵀ + Σ e_j e_iᵀ): column j gains Σ_{:,i}, column i gains Σ_{:,j}
                    let col_i = &sg[i * p..(i + 1) * p];
                    for (v, s) in vv[j * p..(j + 1) * p].iter_mut().zip(col_i) {
                        *v += step * s;
                    }
                    if i != j {
                        let ji = j + i * p;
                        dv[ji] += step;
                        zeroed[ji] = target == 0.0;
                        for (v, s) in vv[i * p..(i + 1) * p].iter_mut().zip(col_j) {
                            *v += step * s;
                        }
                    }
                }
                if max_step <= SWEEP_REL_TOL * d_max || d_max == 0.0 {
                    break;
                }
            }
        }

        // Directional derivative of the composite objective.
        let mut delta = 0.0;
        for idx in 0..p * p {
            let g = s[idx] - sigma[idx];
            delta += g * d[idx] + w[idx] * ((x[idx] + d[idx]).abs() - x[idx].abs());
        }
        if !(delta < 0.0) {
            break;
        }

        // Near the optimum objective changes fall below rounding of f itself.
        let rounding = 1e-14 * f.abs().max(1.0);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial = DMatrix::from_fn(p, p, |i, j| {
                let idx = i + j * p;
                if zeroed[idx] {
                    (1.0 - step) * x[idx]
                } else {
                    x[idx] + step * d[idx]
                }
            });
            if let Some(chol) = model::cholesky(&trial) {
                let f_new = smooth_plus_penalty(s, w, &trial, &chol);
                if f_new <= f + ARMIJO_SIGMA * step * delta + rounding {
                    accepted = Some((trial, chol, f_new));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((trial, chol, f_new)) = accepted else {
            break;
        };
        x = trial;
        sigma = chol.inverse();
        f = f_new;
        trace.push(f);
        viol = subgradient_norm(s, w, &x, &sigma);
    }

    finish(x, sigma, s, w, opts.tol, iterations, trace)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for j in 0..p {
        for k in j + 1..p {
            let v = 0.5 * (m[(j, k)] + m[(k, j)]);
            m[(j, k)] = v;
            m[(k, j)] = v;
        }
    }
}

fn finish(
    x: DMatrix<f64>,
    sigma: DMatrix<f64>,
    s: &DMatrix<f64>,
    w: &DMatrix<f64>,
    tol: f64,
    iterations: usize,
    objective_trace: Vec<f64>,
) -> Result<SolveReport> {
    let viol = subgradient_norm(s, w, &x, &sigma);
    if viol > 10.0 * tol {
        return Err(Error::Convergence {
            message: "weighted graphical lasso stopped short of the first-order tolerance".into(),
            iterations,
            subgradient: viol,
            last_iterate: Box::new(x),
        });
    }
    Ok(SolveReport {
        omega: PrecisionEstimate::new(x)?,
        iterations,
        objective_trace,
        subgradient: viol,
    })
}

/// Row-by-row block coordinate descent (one weighted Lasso per column of the covariance
/// estimate), with a final Newton-free recovery of the precision matrix.
fn block_coordinate_descent(
    s: &DMatrix<f64>,
    w: &DMatrix<f64>,
    opts: &SolverOptions,
    warm_start: Option<&PrecisionEstimate>,
) -> Result<SolveReport> {
    let p = s.nrows();
    // cov is the running estimate of Ω⁻¹; column j of beta holds the regression of j on the rest
    let mut beta = DMatrix::<f64>::zeros(p, p);
    let mut cov = match warm_start.and_then(|ws| model::cholesky(ws.matrix()).map(|c| (ws.matrix(), c.inverse()))) {
        Some((om, sigma)) => {
            for j in 0..p {
                for k in 0..p {
                    if k != j {
                        beta[(k, j)] = -om[(k, j)] / om[(j, j)];
                    }
                }
            }
            sigma
        }
        None => s.clone(),
    };
    // the diagonal is fixed at its optimal value from the first pass on
    for i in 0..p {
        cov[(i, i)] = s[(i, i)] + w[(i, i)];
    }
    if warm_start.is_some() && model::cholesky(&cov).is_none() {
        // the warm covariance lost definiteness with the new diagonal; start cold
        cov = s.clone();
        for i in 0..p {
            cov[(i, i)] = s[(i, i)] + w[(i, i)];
        }
        beta.fill(0.0);
    }
    let mut trace = Vec::new();
    let mut iterations = 0;
    let inner_tol = opts.tol * 1e-2;
    let mut v = vec![0.0; p];

    let recover = |cov: &DMatrix<f64>, beta: &DMatrix<f64>| {
        let mut omega = DMatrix::<f64>::zeros(p, p);
        for j in 0..p {
            let mut dot = 0.0;
            for k in 0..p {
                if k != j {
                    dot += cov[(k, j)] * beta[(k, j)];
                }
            }
            let ojj = 1.0 / (cov[(j, j)] - dot);
            omega[(j, j)] = ojj;
            for k in 0..p {
                if k != j {
                    omega[(k, j)] = -beta[(k, j)] * ojj;
                }
            }
        }
        symmetrize(&mut omega);
        omega
    };

    for iter in 0..opts.max_iter {
        iterations = iter + 1;
        let mut max_change = 0.0f64;
        for j in 0..p {
            // Lasso: min ½βᵀC₁₁β − βᵀs₁₂ + Σ w_kj|β_k|, tracking v = C₁₁β incrementally
            v.iter_mut().for_each(|x| *x = 0.0);
            for l in (0..p).filter(|&l| l != j && beta[(l, j)] != 0.0) {
                let b = beta[(l, j)];
                for (vk, c) in v.iter_mut().zip(cov.column(l).iter()) {
                    *vk += c * b;
                }
            }
            let mut full_sweep = true;
            for _ in 0..100_000 {
                let mut inner_change = 0.0f64;
                for k in 0..p {
                    let old = beta[(k, j)];
                    if k == j || (!full_sweep && old == 0.0) {
                        continue;
                    }
                    let ckk = cov[(k, k)];
                    let r = s[(k, j)] - (v[k] - ckk * old);
                    let new = soft_threshold(r, w[(k, j)]) / ckk;
                    let delta = new - old;
                    if delta != 0.0 {
                        inner_change = inner_change.max(delta.abs());
                        beta[(k, j)] = new;
                        for (vl, c) in v.iter_mut().zip(cov.column(k).iter()) {
                            *vl += c * delta;
                        }
                    }
                }
                if inner_change < inner_tol {
                    if full_sweep {
                        break;
                    }
                    full_sweep = true;
                } else {
                    full_sweep = false;
                }
            }
            for k in 0..p {
                if k == j {
                    continue;
                }
                max_change = max_change.max((v[k] - cov[(k, j)]).abs());
                cov[(k, j)] = v[k];
                cov[(j, k)] = v[k];
            }
        }
        let omega = recover(&cov, &beta);
        if let Some(f) = penalized_objective(s, w, &omega) {
            trace.push(f);
        }
        if max_change < inner_tol {
            break;
        }
    }

    let x = recover(&cov, &beta);
    let sigma = model::cholesky(&x)
        .ok_or_else(|| Error::Convergence {
            message: "block coordinate descent produced a non-PD iterate".into(),
            iterations,
            subgradient: f64::INFINITY,
            last_iterate: Box::new(x.clone()),
        })?
        .inverse();
    finish(x, sigma, s, w, opts.tol, iterations, trace)
}

/// Slow reference solver: cyclic exact minimisation over one symmetric entry at a time, with
/// the covariance re-inverted from scratch after every update. Only for `p ≤ 30`.
pub fn solve_reference(s: &SampleCovariance, w: &PenaltyWeights, tol: f64) -> Result<PrecisionEstimate> {
    let p = check_inputs(s, w)?;
    if p > REFERENCE_MAX_DIM {
        return Err(Error::input(format!(
            "reference solver is limited to p <= {REFERENCE_MAX_DIM}, got {p}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::input("tolerance must be positive"));
    }
    let (sm, wm) = (s.matrix(), w.matrix());
    let mut x = diagonal_start(sm, wm);
    let invert = |x: &DMatrix<f64>| {
        x.clone()
            .try_inverse()
            .ok_or_else(|| Error::Internal("reference iterate became singular".into()))
    };
    let mut cov = invert(&x)?;

    const MAX_SWEEPS_REF: usize = 200_000;
    for _ in 0..MAX_SWEEPS_REF {
        if subgradient_norm(sm, wm, &x, &cov) <= tol {
            return PrecisionEstimate::new(x);
        }
        for i in 0..p {
            let t = 1.0 / (sm[(i, i)] + wm[(i, i)]) - 1.0 / cov[(i, i)];
            x[(i, i)] += t;
            cov = invert(&x)?;
        }
        for (i, j) in upper_pairs(p) {
            let t = best_offdiag_move(x[(i, j)], sm[(i, j)], wm[(i, j)], cov[(i, j)], cov[(i, i)], cov[(j, j)]);
            if t != 0.0 {
                let v = x[(i, j)] + t;
                let v = if v.abs() < 1e-15 { 0.0 } else { v };
                x[(i, j)] = v;
                x[(j, i)] = v;
                cov = invert(&x)?;
            }
        }
    }
    Err(Error::Convergence {
        message: "reference solver exhausted its sweep budget".into(),
        iterations: MAX_SWEEPS_REF,
        subgradient: subgradient_norm(sm, wm, &x, &cov),
        last_iterate: Box::new(x),
    })
}

/// Exact minimiser of `−log(1 + 2c t + d t²) + 2 s t + 2 w |x + t|` with
/// `d = c² − a b < 0`, the restriction of the objective to a symmetric pair update.
fn best_offdiag_move(x: f64, s: f64, w: f64, c: f64, a: f64, b: f64) -> f64 {
    let d = c * c - a * b;
    let q = |t: f64| 1.0 + 2.0 * c * t + d * t * t;
    let phi = |t: f64| -q(t).ln() + 2.0 * s * t + 2.0 * w * (x + t).abs();
    let mut best = (-x, phi(-x));
    for sign in [1.0, -1.0] {
        let r = s + sign * w;
        let roots: Vec<f64> = if r == 0.0 {
            vec![-c / d]
        } else {
            let (qa, qb, qc) = (r * d, 2.0 * r * c - d, r - c);
            let disc = qb * qb - 4.0 * qa * qc;
            if disc < 0.0 {
                vec![]
            } else {
                let sq = disc.sqrt();
                vec![(-qb + sq) / (2.0 * qa), (-qb - sq) / (2.0 * qa)]
            }
        };
        for t in roots {
            if q(t) > 0.0 && sign * (x + t) > 0.0 {
                let v = phi(t);
                if v < best.1 {
                    best = (t, v);
                }
            }
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn cov(m: DMatrix<f64>) -> SampleCovariance {
        SampleCovariance::new(m, 100).unwrap()
    }

    fn random_instance(p: usize, seed: u64) -> (SampleCovariance, PenaltyWeights) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = 3 * p;
        let y = DMatrix::from_fn(t, p, |_, _| StandardNormal.sample(&mut rng));
        let mut s = y.tr_mul(&y) / t as f64;
        symmetrize(&mut s);
        let mut w = DMatrix::zeros(p, p);
        for j in 0..p {
            w[(j, j)] = rng.random_range(0.0..0.3);
            for k in j + 1..p {
                let v = rng.random_range(0.02..0.5);
                w[(j, k)] = v;
                w[(k, j)] = v;
            }
        }
        (cov(s), PenaltyWeights::new(w).unwrap())
    }

    #[test]
    fn identity_covariance_gives_no_edges() {
        let s = cov(DMatrix::identity(6, 6));
        for wv in [0.01, 0.3, 2.0] {
            let w = PenaltyWeights::uniform(6, wv, 0.0).unwrap();
            let om = solve(&s, &w, &SolverOptions::default(), None).unwrap();
            assert!(om.edge_set().is_empty());
        }
    }

    #[test]
    fn two_by_two_threshold_rule() {
        let s = cov(DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]));
        let w = PenaltyWeights::uniform(2, 0.4, 0.0).unwrap();
        let om = solve(&s, &w, &SolverOptions::default(), None).unwrap();
        assert_eq!(om.matrix()[(0, 1)], 0.0);

        let w = PenaltyWeights::uniform(2, 0.2, 0.0).unwrap();
        let om = solve(&s, &w, &SolverOptions::default(), None).unwrap();
        assert!(om.matrix()[(0, 1)] < 0.0);
        // Σ_12 = S_12 − w_12 at the optimum
        let sigma = om.matrix().clone().try_inverse().unwrap();
        assert_abs_diff_eq!(sigma[(0, 1)], 0.1, epsilon = 1e-6);
    }

    #[test]
    fn diagonal_covariance_closed_form() {
        let s = cov(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 0.5])));
        let w = PenaltyWeights::new(DMatrix::from_fn(3, 3, |i, j| if i == j { 0.1 * (i + 1) as f64 } else { 0.2 })).unwrap();
        for om in [
            solve_reference(&s, &w, 1e-12).unwrap(),
            solve(&s, &w, &SolverOptions::default(), None).unwrap(),
        ] {
            for i in 0..3 {
                let expected = 1.0 / (s.matrix()[(i, i)] + w.matrix()[(i, i)]);
                assert_abs_diff_eq!(om.matrix()[(i, i)], expected, epsilon = 1e-10);
            }
            assert!(om.edge_set().is_empty());
        }
    }

    #[test]
    fn unpenalized_is_inverse_covariance() {
        let (s, _) = random_instance(5, 3);
        let w = PenaltyWeights::uniform(5, 0.0, 0.0).unwrap();
        let inv = s.matrix().clone().try_inverse().unwrap();
        let om = solve_reference(&s, &w, 1e-12).unwrap();
        assert_abs_diff_eq!(om.matrix(), &inv, epsilon = 1e-8);
        let om = solve(&s, &w, &SolverOptions { tol: 1e-10, ..Default::default() }, None).unwrap();
        assert_abs_diff_eq!(om.matrix(), &inv, epsilon = 1e-8);
    }

    #[test]
    fn all_algorithms_agree_with_reference() {
        for seed in 0..20 {
            let p = 3 + (seed as usize % 6);
            let (s, w) = random_instance(p, 100 + seed);
            let reference = solve_reference(&s, &w, 1e-10).unwrap();
            for algorithm in [Algorithm::QuadraticApproximation, Algorithm::CoordinateDescent] {
                let opts = SolverOptions { tol: 1e-9, max_iter: 2000, algorithm };
                let om = solve(&s, &w, &opts, None).unwrap();
                let diff = (om.matrix() - reference.matrix()).amax();
                assert!(diff < 1e-6, "seed {seed} {algorithm:?}: diff {diff}");
                assert!(optimality_gap(&s, &w, &om) <= 10.0 * opts.tol);
            }
        }
    }

    #[test]
    fn objective_never_increases() {
        for seed in 0..10 {
            let (s, w) = random_instance(8, seed);
            let report = solve_detailed(&s, &w, &SolverOptions::default(), None).unwrap();
            for pair in report.objective_trace.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-12 * pair[0].abs().max(1.0), "{pair:?}");
            }
        }
    }

    #[test]
    fn warm_start_converges_to_same_point() {
        let (s, w) = random_instance(7, 42);
        let opts = SolverOptions { tol: 1e-9, ..Default::default() };
        let cold = solve(&s, &w, &opts, None).unwrap();
        let w2 = PenaltyWeights::new(w.matrix() * 1.3).unwrap();
        let other = solve(&s, &w2, &opts, None).unwrap();
        let warm = solve(&s, &w, &opts, Some(&other)).unwrap();
        assert_abs_diff_eq!(cold.matrix(), warm.matrix(), epsilon = 1e-7);
    }

    #[test]
    fn reference_rejects_large_dimension() {
        let s = cov(DMatrix::identity(31, 31));
        let w = PenaltyWeights::uniform(31, 0.1, 0.1).unwrap();
        assert!(matches!(solve_reference(&s, &w, 1e-8), Err(Error::Input(_))));
    }

    #[test]
    fn mismatched_dimensions_are_input_errors() {
        let s = cov(DMatrix::identity(3, 3));
        let w = PenaltyWeights::uniform(4, 0.1, 0.1).unwrap();
        assert!(matches!(solve(&s, &w, &SolverOptions::default(), None), Err(Error::Input(_))));
        assert!(PenaltyWeights::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.5, 0.0])).is_err());
        assert!(PenaltyWeights::new(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0])).is_err());
    }

    #[test]
    fn shrinkage_weights_layout() {
        let w = PenaltyWeights::from_shrinkage(&[0.0, 1.0, 2.0], 2.0, 3).unwrap();
        let m = w.matrix();
        assert_abs_diff_eq!(m[(0, 0)], 1.0);
        assert_abs_diff_eq!(m[(0, 1)], 1.0);
        assert_abs_diff_eq!(m[(2, 0)], 1.0f64.exp());
        assert_abs_diff_eq!(m[(1, 2)], 2.0f64.exp());
    }
}
