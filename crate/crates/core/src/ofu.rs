//! OFU-MNL: optimistic assortment selection for contextual MNL bandits with uniform
//! revenues.
//!
//! Each period the learner fits the ridge-regularized MLE `θ̂_t` on past assortments,
//! builds the confidence set
//!
//! ```text
//! C_t(δ) = {θ : ‖g_t(θ) − g_t(θ̂_t)‖_{H_t(θ)⁻¹} ≤ γ_t(δ)},
//! g_t(θ) = Σ_s Σ_{j∈S_s} q_{s,j}(S_s, θ) x_{s,j} + λ_t θ,
//! ```
//!
//! and offers the `K` items with the largest optimistic utility. The per-item argmax
//! over `C_t(δ)` is replaced by its closed form over the ellipsoid
//! `{‖θ − θ̂_t‖_{H_t(θ̂_t)} ≤ (1 + √(6K) W) γ_t(δ)}`, which contains `C_t(δ) ∩ B(0, W)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{check_dim, Error, Result};
use crate::mnl::{softmax_with_outside, ChoiceDesign, ContextMatrix, ProbVector, PurchaseOutcome};

pub const DEFAULT_MLE_TOL: f64 = 1e-8;
pub const MAX_MLE_ITERATIONS: usize = 100;

/// `λ_1 = 1`, `λ_t = d ln(tK)` for `t ≥ 2`.
pub fn lambda_schedule(t: usize, d: usize, k: usize) -> f64 {
    if t <= 1 {
        1.0
    } else {
        d as f64 * ((t * k) as f64).ln()
    }
}

/// Default confidence level `δ = 1/(K² T²)`.
pub fn default_delta(k: usize, horizon: usize) -> f64 {
    let kt = (k * horizon) as f64;
    1.0 / (kt * kt)
}

/// `γ_t(δ) = √λ (W + ½) + (2d/√λ) ln((4/δ)(1 + 2tK/(dλ)))`.
pub fn gamma_radius(t: usize, d: usize, k: usize, lambda: f64, delta: f64, w: f64) -> f64 {
    let sl = lambda.sqrt();
    let inner = (4.0 / delta) * (1.0 + 2.0 * (t * k) as f64 / (d as f64 * lambda));
    sl * (w + 0.5) + 2.0 * d as f64 / sl * inner.ln()
}

/// Inflation `1 + √(6K) W` turning the `g`-space radius into an `H`-norm radius.
pub fn radius_inflation(k: usize, w: f64) -> f64 {
    1.0 + (6.0 * k as f64).sqrt() * w
}

/// One past period: the features of the offered items and the customer's choice.
#[derive(Debug, Clone, PartialEq)]
pub struct AssortmentRecord {
    design: ChoiceDesign,
    outcome: PurchaseOutcome,
}

impl AssortmentRecord {
    /// `outcome` indexes the offered items in the order of `offered` (0 = no purchase).
    pub fn new(candidates: &ContextMatrix, offered: &[usize], outcome: PurchaseOutcome) -> Result<Self> {
        let design = ChoiceDesign::assortment(candidates, offered)?;
        if outcome.chosen() > offered.len() {
            return Err(Error::invalid(format!(
                "outcome {} out of range for an assortment of {}",
                outcome.chosen(),
                offered.len()
            )));
        }
        Ok(AssortmentRecord { design, outcome })
    }

    pub fn design(&self) -> &ChoiceDesign {
        &self.design
    }

    pub fn outcome(&self) -> PurchaseOutcome {
        self.outcome
    }
}

/// Past assortments. Besides the records, features are kept in one flat row-major
/// buffer so likelihood sweeps over long histories do not allocate.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssortmentHistory {
    records: Vec<AssortmentRecord>,
    dim: usize,
    rows: Vec<f64>,
    /// (first row, number of items, chosen index) per record.
    spans: Vec<(usize, usize, usize)>,
}

/// Which quantities one likelihood sweep accumulates.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Sweep {
    Objective,
    GMap,
    GradientHessian,
}

struct SweepResult {
    value: f64,
    vector: DVector<f64>,
    hessian: Option<DMatrix<f64>>,
}

impl AssortmentHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: AssortmentRecord) {
        let f = record.design.features();
        if self.records.is_empty() {
            self.dim = f.ncols();
        }
        debug_assert_eq!(self.dim, f.ncols());
        let first = self.rows.len() / self.dim.max(1);
        for j in 0..f.nrows() {
            self.rows.extend(f.row(j).iter());
        }
        self.spans.push((first, f.nrows(), record.outcome.chosen()));
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[AssortmentRecord] {
        &self.records
    }

    fn check_theta(&self, theta: &DVector<f64>) -> Result<()> {
        if !self.records.is_empty() {
            check_dim("theta", self.dim, theta.len())?;
        }
        Ok(())
    }

    /// `Σ_s Σ_{j∈S_s} y_{s,j} x_{s,j}`.
    pub fn purchased_feature_sum(&self, d: usize) -> DVector<f64> {
        let mut sum = DVector::zeros(d);
        for r in &self.records {
            if r.outcome.chosen() > 0 {
                sum += r.design.feature(r.outcome.chosen() - 1);
            }
        }
        sum
    }

    /// One pass over the history at `θ`, including the ridge term.
    fn sweep(&self, theta: &DVector<f64>, lambda: f64, what: Sweep) -> Result<SweepResult> {
        self.check_theta(theta)?;
        let d = theta.len();
        let th = theta.as_slice();
        let mut value = 0.5 * lambda * theta.norm_squared();
        let mut vector = theta * lambda;
        let mut hess = (what == Sweep::GradientHessian).then(|| vec![0.0; d * d]);
        let mut u = Vec::new();
        let mut mean = vec![0.0; d];
        for &(first, n, chosen) in &self.spans {
            let rows = &self.rows[first * d..(first + n) * d];
            u.clear();
            u.extend(rows.chunks_exact(d).map(|x| x.iter().zip(th).map(|(a, b)| a * b).sum::<f64>()));
            let m = u.iter().copied().fold(0.0f64, f64::max);
            let mut z = (-m).exp();
            for v in u.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            if what == Sweep::Objective {
                let uc = if chosen == 0 {
                    0.0
                } else {
                    rows[(chosen - 1) * d..chosen * d].iter().zip(th).map(|(a, b)| a * b).sum()
                };
                value += m + z.ln() - uc;
                continue;
            }
            mean.iter_mut().for_each(|v| *v = 0.0);
            for (j, x) in rows.chunks_exact(d).enumerate() {
                let q = u[j] / z;
                for (mi, xi) in mean.iter_mut().zip(x) {
                    *mi += q * xi;
                }
                if let Some(h) = hess.as_mut() {
                    for a in 0..d {
                        let qa = q * x[a];
                        for b in a..d {
                            h[a * d + b] += qa * x[b];
                        }
                    }
                }
            }
            for (v, mi) in vector.iter_mut().zip(&mean) {
                *v += mi;
            }
            if let Some(h) = hess.as_mut() {
                for a in 0..d {
                    for b in a..d {
                        h[a * d + b] -= mean[a] * mean[b];
                    }
                }
                if chosen > 0 {
                    for (v, xi) in vector.iter_mut().zip(&rows[(chosen - 1) * d..chosen * d]) {
                        *v -= xi;
                    }
                }
            }
        }
        let hessian = hess.map(|h| {
            DMatrix::from_fn(d, d, |a, b| {
                let (i, j) = if a <= b { (a, b) } else { (b, a) };
                h[i * d + j] + if a == b { lambda } else { 0.0 }
            })
        });
        Ok(SweepResult { value, vector, hessian })
    }

    /// Regularized negative log-likelihood `L^λ(θ)`.
    pub fn objective(&self, theta: &DVector<f64>, lambda: f64) -> Result<f64> {
        Ok(self.sweep(theta, lambda, Sweep::Objective)?.value)
    }

    /// Gradient and Hessian of `L^λ` at `θ`.
    pub fn gradient_hessian(&self, theta: &DVector<f64>, lambda: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let r = self.sweep(theta, lambda, Sweep::GradientHessian)?;
        Ok((r.vector, r.hessian.expect("requested")))
    }
}

/// `g_t(θ) = Σ_s Σ_{j∈S_s} q_{s,j}(S_s, θ) x_{s,j} + λ θ`.
pub fn g_map(theta: &DVector<f64>, history: &AssortmentHistory, lambda: f64) -> Result<DVector<f64>> {
    Ok(history.sweep(theta, lambda, Sweep::GMap)?.vector)
}

/// `H_t(θ)`: the Hessian of `L^λ` at `θ`.
pub fn regularized_hessian(theta: &DVector<f64>, history: &AssortmentHistory, lambda: f64) -> Result<DMatrix<f64>> {
    Ok(history.gradient_hessian(theta, lambda)?.1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleFit {
    pub theta: DVector<f64>,
    pub gradient_norm: f64,
    pub iterations: usize,
    /// `H_t(θ̂)` at the returned point.
    pub hessian: DMatrix<f64>,
}

/// Minimizes `L^λ` by damped Newton with Armijo backtracking.
pub fn fit_mle(
    history: &AssortmentHistory,
    d: usize,
    lambda: f64,
    tol: f64,
    warm_start: Option<&DVector<f64>>,
) -> Result<MleFit> {
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("ridge parameter must be positive, got {lambda}")));
    }
    let mut theta = match warm_start {
        Some(w) => {
            check_dim("warm start", d, w.len())?;
            w.clone()
        }
        None => DVector::zeros(d),
    };
    history.check_theta(&theta)?;
    let mut f = history.objective(&theta, lambda)?;
    for it in 0..=MAX_MLE_ITERATIONS {
        let (g, h) = history.gradient_hessian(&theta, lambda)?;
        let gnorm = g.norm();
        if gnorm <= tol {
            return Ok(MleFit {
                theta,
                gradient_norm: gnorm,
                iterations: it,
                hessian: h,
            });
        }
        if it == MAX_MLE_ITERATIONS {
            return Err(Error::NoConvergence {
                what: "regularized MLE",
                iterations: MAX_MLE_ITERATIONS,
                residual: gnorm,
            });
        }
        let dir = h
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("MLE Hessian"))?
            .solve(&g);
        let slope = g.dot(&dir);
        let mut step = 1.0;
        loop {
            let cand = &theta - &dir * step;
            let fc = history.objective(&cand, lambda)?;
            // The slack absorbs rounding in large objectives near the optimum, where the
            // exact decrease is below the resolution of `f`.
            let slack = 8.0 * f64::EPSILON * f.abs().max(1.0);
            if fc <= f - 1e-4 * step * slope + slack || step < 1e-10 {
                theta = cand;
                f = fc;
                break;
            }
            step *= 0.5;
        }
    }
    unreachable!("loop returns on the last iteration")
}

/// The confidence set `C_t(δ)` around the MLE.
#[derive(Debug, Clone)]
pub struct ConfidenceSet {
    pub theta_hat: DVector<f64>,
    /// `H_t(θ̂_t)`.
    pub hessian: DMatrix<f64>,
    /// `γ_t(δ)`.
    pub radius: f64,
    /// `1 + √(6K) W`.
    pub inflation: f64,
    pub lambda: f64,
    pub t: usize,
    chol: Cholesky<f64, Dyn>,
}

impl ConfidenceSet {
    pub fn new(theta_hat: DVector<f64>, hessian: DMatrix<f64>, radius: f64, inflation: f64, lambda: f64, t: usize) -> Result<Self> {
        check_dim("confidence set Hessian", theta_hat.len(), hessian.nrows())?;
        if !(radius > 0.0) {
            return Err(Error::invalid(format!("confidence radius must be positive, got {radius}")));
        }
        let chol = hessian
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("confidence set Hessian"))?;
        Ok(ConfidenceSet {
            theta_hat,
            hessian,
            radius,
            inflation,
            lambda,
            t,
            chol,
        })
    }

    /// `r = inflation · γ_t(δ)`, the radius of the optimistic ellipsoid in `H`-norm.
    pub fn ellipsoid_radius(&self) -> f64 {
        self.inflation * self.radius
    }

    /// `‖θ − θ̂‖_{H}`.
    pub fn ellipsoid_distance(&self, theta: &DVector<f64>) -> f64 {
        let diff = theta - &self.theta_hat;
        diff.dot(&(&self.hessian * &diff)).max(0.0).sqrt()
    }

    /// `xᵀθ̂ + r ‖x‖_{H⁻¹}`, the largest `xᵀθ` over the optimistic ellipsoid.
    pub fn optimistic_utility(&self, x: &DVector<f64>) -> f64 {
        let hx = self.chol.solve(x);
        x.dot(&self.theta_hat) + self.ellipsoid_radius() * x.dot(&hx).max(0.0).sqrt()
    }
}

/// Fits `θ̂_t` on `history`, evaluates `H_t(θ̂_t)` and `γ_t(δ)` with `λ_t = d ln(tK)`.
#[allow(clippy::too_many_arguments)]
pub fn build_confidence_set(
    history: &AssortmentHistory,
    t: usize,
    d: usize,
    k: usize,
    delta: f64,
    w: f64,
    mle_tol: f64,
    warm_start: Option<&DVector<f64>>,
) -> Result<ConfidenceSet> {
    let lambda = lambda_schedule(t, d, k);
    let fit = fit_mle(history, d, lambda, mle_tol, warm_start)?;
    confidence_set_at(history, fit.theta, Some(fit.hessian), t, d, k, delta, w)
}

/// `hessian`, when given, must be `H_t(θ̂)` with the period-`t` ridge.
#[allow(clippy::too_many_arguments)]
fn confidence_set_at(
    history: &AssortmentHistory,
    theta_hat: DVector<f64>,
    hessian: Option<DMatrix<f64>>,
    t: usize,
    d: usize,
    k: usize,
    delta: f64,
    w: f64,
) -> Result<ConfidenceSet> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1], got {delta}")));
    }
    let lambda = lambda_schedule(t, d, k);
    let hessian = match hessian {
        Some(h) => h,
        None => regularized_hessian(&theta_hat, history, lambda)?,
    };
    let radius = gamma_radius(t, d, k, lambda, delta, w);
    ConfidenceSet::new(theta_hat, hessian, radius, radius_inflation(k, w), lambda, t)
}

/// `‖g_t(θ) − g_t(θ̂_t)‖_{H_t(θ)⁻¹}`.
pub fn confidence_distance(theta: &DVector<f64>, cs: &ConfidenceSet, history: &AssortmentHistory) -> Result<f64> {
    let diff = g_map(theta, history, cs.lambda)? - g_map(&cs.theta_hat, history, cs.lambda)?;
    let h = regularized_hessian(theta, history, cs.lambda)?;
    let sol = h
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("H_t(θ)"))?
        .solve(&diff);
    Ok(diff.dot(&sol).max(0.0).sqrt())
}

/// Exact membership test `θ ∈ C_t(δ)`, with `H_t` re-evaluated at `θ`.
pub fn in_confidence_set(theta: &DVector<f64>, cs: &ConfidenceSet, history: &AssortmentHistory) -> Result<bool> {
    Ok(confidence_distance(theta, cs, history)? <= cs.radius)
}

/// `θ̂ + r H⁻¹x / ‖x‖_{H⁻¹}`, the maximizer of `xᵀθ` over `{‖θ − θ̂‖_H ≤ r}`.
pub fn optimistic_param(x: &DVector<f64>, cs: &ConfidenceSet) -> DVector<f64> {
    let hx = cs.chol.solve(x);
    let norm = x.dot(&hx).max(0.0).sqrt();
    if norm == 0.0 {
        return cs.theta_hat.clone();
    }
    &cs.theta_hat + hx * (cs.ellipsoid_radius() / norm)
}

/// Indices of the `k` largest scores, best first; ties go to the lower index.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// The `K` candidates with the largest optimistic utility `x_jᵀθ̃_j`.
pub fn select_assortment(candidates: &ContextMatrix, cs: &ConfidenceSet, k: usize) -> Result<Vec<usize>> {
    check_dim("candidate features", cs.theta_hat.len(), candidates.dim())?;
    if k == 0 || k > candidates.len() {
        return Err(Error::invalid(format!(
            "assortment size {k} must lie in 1..={}",
            candidates.len()
        )));
    }
    let scores: Vec<f64> = (0..candidates.len())
        .map(|j| cs.optimistic_utility(&candidates.row(j)))
        .collect();
    Ok(top_k_indices(&scores, k))
}

/// Choice probabilities when each offered item `j` has its own parameter `θ̃_j`.
pub fn generalized_probs(candidates: &ContextMatrix, assortment: &[usize], per_item: &[DVector<f64>]) -> Result<ProbVector> {
    check_dim("per-item parameters", assortment.len(), per_item.len())?;
    let sub = candidates.select(assortment)?;
    let mut u = DVector::zeros(assortment.len());
    for (j, theta) in per_item.iter().enumerate() {
        check_dim("per-item parameter", sub.dim(), theta.len())?;
        u[j] = sub.row(j).dot(theta);
    }
    Ok(softmax_with_outside(&u))
}

/// The revenue-optimal assortment under uniform revenues: top-`K` true utilities.
pub fn optimal_assortment(theta: &DVector<f64>, candidates: &ContextMatrix, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > candidates.len() {
        return Err(Error::invalid(format!(
            "assortment size {k} must lie in 1..={}",
            candidates.len()
        )));
    }
    let utilities = candidates.scores(theta)?;
    Ok(top_k_indices(utilities.as_slice(), k))
}

/// `κ*_{2,t} = Σ_{j∈S*} q_j(S*, θ*) q_0(S*, θ*)`.
pub fn kappa_star_t(theta_true: &DVector<f64>, candidates: &ContextMatrix, k: usize) -> Result<f64> {
    let best = optimal_assortment(theta_true, candidates, k)?;
    let q = ChoiceDesign::assortment(candidates, &best)?.probs(theta_true)?;
    Ok(q.outside_products().sum())
}

/// Running minimum of `q_j q_0` over realized assortments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalKappa {
    min: f64,
}

impl Default for EmpiricalKappa {
    fn default() -> Self {
        EmpiricalKappa { min: f64::INFINITY }
    }
}

impl EmpiricalKappa {
    pub fn update(&mut self, q: &ProbVector) -> f64 {
        for v in q.outside_products() {
            self.min = self.min.min(v);
        }
        self.min
    }

    /// `+∞` before the first update.
    pub fn value(&self) -> f64 {
        self.min
    }
}

pub fn empirical_kappa2<'a>(probs: impl IntoIterator<Item = &'a ProbVector>) -> f64 {
    let mut acc = EmpiricalKappa::default();
    for q in probs {
        acc.update(q);
    }
    acc.value()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfuConfig {
    /// Assortment size `K`.
    pub k: usize,
    pub delta: f64,
    pub w: f64,
    pub mle_tol: f64,
    /// Refit the MLE every `refit_every` periods (1 = every period).
    pub refit_every: usize,
}

impl OfuConfig {
    pub fn new(k: usize, w: f64, horizon: usize) -> Self {
        OfuConfig {
            k,
            delta: default_delta(k, horizon),
            w,
            mle_tol: DEFAULT_MLE_TOL,
            refit_every: 1,
        }
    }
}

/// OFU-MNL learner state.
#[derive(Debug, Clone)]
pub struct OfuMnl {
    cfg: OfuConfig,
    d: usize,
    history: AssortmentHistory,
    theta_hat: DVector<f64>,
    last: Option<ConfidenceSet>,
}

impl OfuMnl {
    pub fn new(cfg: OfuConfig, d: usize) -> Result<Self> {
        if cfg.k == 0 || d == 0 || cfg.refit_every == 0 {
            return Err(Error::invalid("OFU-MNL needs K ≥ 1, d ≥ 1 and refit_every ≥ 1"));
        }
        if !(cfg.w > 0.0) {
            return Err(Error::invalid(format!("W must be positive, got {}", cfg.w)));
        }
        Ok(OfuMnl {
            cfg,
            d,
            history: AssortmentHistory::new(),
            theta_hat: DVector::zeros(d),
            last: None,
        })
    }

    pub fn history(&self) -> &AssortmentHistory {
        &self.history
    }

    /// Confidence set used for the most recent selection.
    pub fn confidence_set(&self) -> Option<&ConfidenceSet> {
        self.last.as_ref()
    }

    pub fn theta_hat(&self) -> &DVector<f64> {
        &self.theta_hat
    }

    /// Chooses `S_t` for the candidates of period `t = |history| + 1`.
    pub fn select(&mut self, candidates: &ContextMatrix) -> Result<Vec<usize>> {
        let t = self.history.len() + 1;
        let lambda = lambda_schedule(t, self.d, self.cfg.k);
        let mut hessian = None;
        if (t - 1) % self.cfg.refit_every == 0 {
            let fit = fit_mle(&self.history, self.d, lambda, self.cfg.mle_tol, Some(&self.theta_hat))?;
            self.theta_hat = fit.theta;
            hessian = Some(fit.hessian);
        }
        let cs = confidence_set_at(
            &self.history,
            self.theta_hat.clone(),
            hessian,
            t,
            self.d,
            self.cfg.k,
            self.cfg.delta,
            self.cfg.w,
        )?;
        let chosen = select_assortment(candidates, &cs, self.cfg.k)?;
        self.last = Some(cs);
        Ok(chosen)
    }

    pub fn observe(&mut self, candidates: &ContextMatrix, offered: &[usize], outcome: PurchaseOutcome) -> Result<()> {
        if offered.len() != self.cfg.k {
            return Err(Error::invalid(format!(
                "offered {} items, expected K = {}",
                offered.len(),
                self.cfg.k
            )));
        }
        self.history.push(AssortmentRecord::new(candidates, offered, outcome)?);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn radius_examples() {
        let r = gamma_radius(1, 2, 1, 1.0, 0.05, 1.0);
        assert!((r - (1.5 + 4.0 * 160f64.ln())).abs() < 1e-12);
        assert!((r - 21.801).abs() < 1e-3);

        // δ = 4(1 + 2tK/(dλ)) zeroes the log term.
        let (t, d, k, lambda, w) = (3, 2, 2, 1.7, 1.3);
        let delta = 4.0 * (1.0 + 2.0 * (t * k) as f64 / (d as f64 * lambda));
        assert!((gamma_radius(t, d, k, lambda, delta, w) - lambda.sqrt() * (w + 0.5)).abs() < 1e-12);

        assert!(gamma_radius(20, 3, 2, 2.0, 0.1, 1.0) > gamma_radius(10, 3, 2, 2.0, 0.1, 1.0));
    }

    #[test]
    fn lambda_and_delta_defaults() {
        assert_eq!(lambda_schedule(1, 3, 4), 1.0);
        assert!((lambda_schedule(5, 3, 4) - 3.0 * 20f64.ln()).abs() < 1e-14);
        assert!((default_delta(3, 100) - 1.0 / 90000.0).abs() < 1e-18);
    }

    #[test]
    fn empty_history_fits_zero() {
        let h = AssortmentHistory::new();
        let fit = fit_mle(&h, 3, 1.0, 1e-10, None).unwrap();
        assert_eq!(fit.theta, DVector::zeros(3));
        let cs = build_confidence_set(&h, 1, 3, 2, 0.1, 1.0, 1e-10, None).unwrap();
        assert_eq!(cs.hessian, DMatrix::identity(3, 3));
        assert!(fit_mle(&h, 3, 0.0, 1e-10, None).is_err());
    }

    #[test]
    fn symmetric_record_with_no_purchase() {
        // Items e1 and e2, outside option chosen: θ̂ must load equally on both.
        let ctx = ContextMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let mut h = AssortmentHistory::new();
        h.push(AssortmentRecord::new(&ctx, &[0, 1], PurchaseOutcome::no_purchase()).unwrap());
        let fit = fit_mle(&h, 2, 1.0, 1e-12, None).unwrap();
        assert!((fit.theta[0] - fit.theta[1]).abs() < 1e-12);
        assert!(fit.theta[0] < 0.0);

        // Hand computation of H at θ̂ = (a, a): q1 = q2 = e^a/(1+2e^a) =: q,
        // H = λI + diag(q, q) − q² 11ᵀ.
        let a = fit.theta[0];
        let q = a.exp() / (1.0 + 2.0 * a.exp());
        let want = DMatrix::from_row_slice(2, 2, &[1.0 + q - q * q, -q * q, -q * q, 1.0 + q - q * q]);
        let hess = regularized_hessian(&fit.theta, &h, 1.0).unwrap();
        assert!((hess - want).norm() < 1e-12);
    }

    #[test]
    fn fused_sweep_matches_per_record_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = 4;
        let mut h = AssortmentHistory::new();
        for _ in 0..60 {
            let rows: Vec<Vec<f64>> = (0..6)
                .map(|_| {
                    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    v.iter().map(|x| x / n).collect()
                })
                .collect();
            let ctx = ContextMatrix::from_rows(&rows).unwrap();
            let size = rng.random_range(1..=4);
            let offered: Vec<usize> = (0..size).map(|i| (i * 2 + rng.random_range(0..2)) % 6).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
            let chosen = rng.random_range(0..=offered.len());
            h.push(AssortmentRecord::new(&ctx, &offered, PurchaseOutcome::new(chosen, offered.len()).unwrap()).unwrap());
        }
        let theta = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
        let lambda = 1.7;
        let (mut f, mut g, mut hs, mut gm) = (
            0.5 * lambda * theta.norm_squared(),
            &theta * lambda,
            DMatrix::identity(d, d) * lambda,
            &theta * lambda,
        );
        for r in h.records() {
            f += r.design().log_loss(&theta, r.outcome()).unwrap();
            g += r.design().gradient(&theta, r.outcome()).unwrap();
            hs += r.design().hessian(&theta).unwrap();
            let q = r.design().probs(&theta).unwrap();
            for j in 0..r.design().len() {
                gm += r.design().feature(j) * q.item(j + 1);
            }
        }
        assert!((h.objective(&theta, lambda).unwrap() - f).abs() < 1e-10 * f.abs());
        let (g2, h2) = h.gradient_hessian(&theta, lambda).unwrap();
        assert!((g2 - g).norm() < 1e-10);
        assert!((h2 - hs).norm() < 1e-10);
        assert!((g_map(&theta, &h, lambda).unwrap() - gm).norm() < 1e-10);
        // The gradient of L^λ is g_t(θ) minus the purchased-feature sum.
        let diff = g_map(&theta, &h, lambda).unwrap() - h.purchased_feature_sum(d) - h.gradient_hessian(&theta, lambda).unwrap().0;
        assert!(diff.norm() < 1e-10);
        assert!(h.objective(&DVector::zeros(d + 1), lambda).is_err());
    }

    #[test]
    fn g_map_examples() {
        let h = AssortmentHistory::new();
        let theta = DVector::from_vec(vec![0.3, -0.2]);
        assert!((g_map(&theta, &h, 2.5).unwrap() - &theta * 2.5).norm() < 1e-15);

        let ctx = ContextMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]]).unwrap();
        let mut h = AssortmentHistory::new();
        h.push(AssortmentRecord::new(&ctx, &[0, 1, 2], PurchaseOutcome::new(2, 3).unwrap()).unwrap());
        let g = g_map(&DVector::zeros(2), &h, 1.0).unwrap();
        let want = (ctx.row(0) + ctx.row(1) + ctx.row(2)) / 4.0;
        assert!((g - want).norm() < 1e-15);
    }

    #[test]
    fn optimistic_param_examples() {
        let cs = ConfidenceSet::new(DVector::zeros(2), DMatrix::identity(2, 2), 2.0, 1.0, 1.0, 1).unwrap();
        let th = optimistic_param(&DVector::from_vec(vec![1.0, 0.0]), &cs);
        assert!((th - DVector::from_vec(vec![2.0, 0.0])).norm() < 1e-15);
        let cs2 = ConfidenceSet::new(DVector::from_vec(vec![0.5, 0.1]), DMatrix::identity(2, 2), 2.0, 1.0, 1.0, 1).unwrap();
        assert_eq!(optimistic_param(&DVector::zeros(2), &cs2), cs2.theta_hat);
    }

    #[test]
    fn optimistic_param_dominates_ellipsoid_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let b = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            let h = b.transpose() * &b + DMatrix::identity(3, 3) * 0.2;
            let center = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let cs = ConfidenceSet::new(center.clone(), h.clone(), 0.7, 1.3, 1.0, 1).unwrap();
            let x = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let best = x.dot(&optimistic_param(&x, &cs));
            assert!((best - cs.optimistic_utility(&x)).abs() < 1e-12);
            let r = cs.ellipsoid_radius();
            let mut accepted = 0;
            while accepted < 1000 {
                let bound = 5.0;
                let th = DVector::from_fn(3, |_, _| rng.random_range(-bound..bound)) + &center;
                let diff = &th - &center;
                if diff.dot(&(&h * &diff)).sqrt() <= r {
                    accepted += 1;
                    assert!(x.dot(&th) <= best + 1e-12);
                }
            }
        }
    }

    #[test]
    fn top_k_examples() {
        assert_eq!(top_k_indices(&[3.0, 1.0, 2.0], 2), vec![0, 2]);
        assert_eq!(top_k_indices(&[1.0, 1.0, 1.0, 1.0], 2), vec![0, 1]);
        assert_eq!(top_k_indices(&[0.5, 2.0, 1.0], 3), vec![1, 2, 0]);
    }

    #[test]
    fn kappa_star_examples() {
        let one = ContextMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!((kappa_star_t(&DVector::zeros(2), &one, 1).unwrap() - 0.25).abs() < 1e-15);
        let two = ContextMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((kappa_star_t(&DVector::zeros(2), &two, 2).unwrap() - 2.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn empirical_kappa_is_a_running_minimum() {
        let q1 = softmax_with_outside(&DVector::zeros(1));
        assert!((empirical_kappa2([&q1]) - 0.25).abs() < 1e-15);
        let q2 = softmax_with_outside(&DVector::from_vec(vec![2.0, -1.0]));
        let mut acc = EmpiricalKappa::default();
        let a = acc.update(&q1);
        let b = acc.update(&q2);
        assert!(b <= a);
        let direct = q2.outside_products().chain(q1.outside_products()).fold(f64::INFINITY, f64::min);
        assert_eq!(b, direct);
    }

    #[test]
    fn generalized_probs_reduce_to_mnl_with_a_common_parameter() {
        let ctx = ContextMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]]).unwrap();
        let theta = DVector::from_vec(vec![0.4, -1.1]);
        let s = [2, 0];
        let a = generalized_probs(&ctx, &s, &[theta.clone(), theta.clone()]).unwrap();
        let b = crate::mnl::purchase_probs_assortment(&theta, &ctx, &s).unwrap();
        assert_eq!(a, b);
    }
}
