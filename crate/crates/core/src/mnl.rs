//! Multinomial-logit choice model: purchase probabilities, log loss, gradients and
//! Hessians for both the pricing and the assortment problem.
//!
//! Every choice situation reduces to a [`ChoiceDesign`]: a set of offered items with
//! feature rows `z_j` and utility offsets `o_j`, so that item `j` has utility
//! `u_j = z_jᵀw + o_j` under parameter `w`, and the outside option has utility 0.
//!
//! * pricing with learned sensitivities: `z_j = [x_j, -p_j x_j]`, `w = (θ, α)`, `o_j = 0`;
//! * pricing with a known constant sensitivity `c`: `z_j = x_j`, `w = θ`, `o_j = -c p_j`;
//! * assortments: `z_j = x_j` for `j ∈ S`, `w = θ`, `o_j = 0`.
//!
//! Probabilities are kept in natural scale. At feasible parameters utilities are bounded
//! by `W (1 + p_max)`, far from the underflow range, and the softmax subtracts the
//! largest utility before exponentiating.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg;

/// Slack allowed on `‖x‖₂ ≤ 1` when validating features.
pub const FEATURE_NORM_TOL: f64 = 1e-12;

/// A product/customer feature vector with Euclidean norm at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(DVector<f64>);

impl FeatureVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        Self::from_vector(DVector::from_vec(coords))
    }

    pub fn from_vector(v: DVector<f64>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::invalid("feature vector must have at least one coordinate"));
        }
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("feature vector has non-finite coordinates"));
        }
        let norm = v.norm();
        if norm > 1.0 + FEATURE_NORM_TOL {
            return Err(Error::invalid(format!("feature vector norm {norm} exceeds 1")));
        }
        Ok(FeatureVector(v))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// The `k × d` matrix of feature rows observed in one period.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextMatrix {
    rows: DMatrix<f64>,
}

impl ContextMatrix {
    pub fn new(rows: Vec<FeatureVector>) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::invalid("context must contain at least one row"))?;
        let d = first.dim();
        let mut m = DMatrix::zeros(rows.len(), d);
        for (i, r) in rows.iter().enumerate() {
            check_dim("context row", d, r.dim())?;
            m.set_row(i, &r.as_vector().transpose());
        }
        Ok(ContextMatrix { rows: m })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let rows = rows
            .iter()
            .map(|r| FeatureVector::new(r.clone()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows)
    }

    /// Validates every row of an already assembled matrix.
    pub fn from_matrix(rows: DMatrix<f64>) -> Result<Self> {
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return Err(Error::invalid("context must be a non-empty matrix"));
        }
        for r in rows.row_iter() {
            FeatureVector::from_vector(r.transpose())?;
        }
        Ok(ContextMatrix { rows })
    }

    /// Number of rows `k_t`.
    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn row(&self, j: usize) -> DVector<f64> {
        self.rows.row(j).transpose()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.rows
    }

    /// `X w`, one score per row.
    pub fn scores(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("parameter vector", self.dim(), w.len())?;
        Ok(&self.rows * w)
    }

    /// Sub-context made of the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<ContextMatrix> {
        if indices.is_empty() {
            return Err(Error::invalid("selection must be nonempty"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!(
                "row index {bad} out of range for context with {} rows",
                self.len()
            )));
        }
        Ok(ContextMatrix {
            rows: self.rows.select_rows(indices),
        })
    }
}

/// True (or estimated) pricing parameters `γ = (θ, α)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PricingParams {
    pub theta: DVector<f64>,
    pub alpha: DVector<f64>,
}

impl PricingParams {
    pub fn new(theta: DVector<f64>, alpha: DVector<f64>) -> Result<Self> {
        check_dim("alpha", theta.len(), alpha.len())?;
        Ok(PricingParams { theta, alpha })
    }

    /// Splits a stacked `2d` vector into `(θ, α)`.
    pub fn from_stacked(v: &DVector<f64>) -> Result<Self> {
        if v.len() % 2 != 0 || v.is_empty() {
            return Err(Error::invalid(format!(
                "stacked parameter length {} is not a positive even number",
                v.len()
            )));
        }
        let d = v.len() / 2;
        Ok(PricingParams {
            theta: v.rows(0, d).into_owned(),
            alpha: v.rows(d, d).into_owned(),
        })
    }

    pub fn stacked(&self) -> DVector<f64> {
        let d = self.dim();
        let mut v = DVector::zeros(2 * d);
        v.rows_mut(0, d).copy_from(&self.theta);
        v.rows_mut(d, d).copy_from(&self.alpha);
        v
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn norm(&self) -> f64 {
        (self.theta.norm_squared() + self.alpha.norm_squared()).sqrt()
    }

    /// Checks `‖γ‖ ≤ W` and `xᵀα ≥ L` for every row, up to `tol`.
    pub fn is_feasible(&self, ctx: &ContextMatrix, w: f64, l: f64, tol: f64) -> Result<bool> {
        let sens = ctx.scores(&self.alpha)?;
        Ok(self.norm() <= w + tol && sens.iter().all(|&s| s >= l - tol))
    }
}

/// Index of the chosen alternative: 0 is the outside option, `j ≥ 1` the `j`-th offered item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PurchaseOutcome(usize);

impl PurchaseOutcome {
    pub fn new(chosen: usize, items: usize) -> Result<Self> {
        if chosen > items {
            return Err(Error::invalid(format!(
                "outcome {chosen} out of range for {items} offered items"
            )));
        }
        Ok(PurchaseOutcome(chosen))
    }

    pub fn no_purchase() -> Self {
        PurchaseOutcome(0)
    }

    pub fn chosen(self) -> usize {
        self.0
    }

    /// One-hot encoding over `{0, …, items}`.
    pub fn one_hot(self, items: usize) -> DVector<f64> {
        let mut y = DVector::zeros(items + 1);
        if self.0 <= items {
            y[self.0] = 1.0;
        }
        y
    }
}

/// Choice probabilities; entry 0 is the outside option.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(DVector<f64>);

impl ProbVector {
    /// Validates a probability vector `[q_0, q_1, …, q_k]` (non-negative, sums to one
    /// within `1e-9`, at least one item).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::invalid("a probability vector needs the outside option and at least one item"));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::invalid("probabilities must be finite and non-negative"));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("probabilities sum to {s}, not 1")));
        }
        Ok(ProbVector(DVector::from_vec(probs)))
    }

    /// Normalizes non-negative weights into a probability vector.
    pub fn from_unnormalized(weights: &[f64]) -> ProbVector {
        let s: f64 = weights.iter().sum();
        ProbVector(DVector::from_iterator(weights.len(), weights.iter().map(|w| w / s)))
    }

    pub fn outside(&self) -> f64 {
        self.0[0]
    }

    /// Probability of the `j`-th offered item, `j ≥ 1`.
    pub fn item(&self, j: usize) -> f64 {
        self.0[j]
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    /// Number of offered items (length minus the outside option).
    pub fn items(&self) -> usize {
        self.0.len() - 1
    }

    /// `q_j q_0` for every offered item.
    pub fn outside_products(&self) -> impl Iterator<Item = f64> + '_ {
        let q0 = self.outside();
        self.0.iter().skip(1).map(move |q| q * q0)
    }

    /// Sum of the item probabilities, i.e. the expected number of purchases.
    pub fn purchase_mass(&self) -> f64 {
        self.0.iter().skip(1).sum()
    }
}

/// Softmax over `(0, u_1, …, u_k)` with the maximum utility subtracted first.
pub fn softmax_with_outside(utilities: &DVector<f64>) -> ProbVector {
    let m = utilities.iter().copied().fold(0.0f64, f64::max);
    let mut p = DVector::zeros(utilities.len() + 1);
    p[0] = (-m).exp();
    for (j, u) in utilities.iter().enumerate() {
        p[j + 1] = (u - m).exp();
    }
    let z = p.sum();
    ProbVector(p / z)
}

/// `log(1 + Σ exp(u_j))` computed without overflow.
fn log_partition(utilities: &DVector<f64>) -> f64 {
    let m = utilities.iter().copied().fold(0.0f64, f64::max);
    let s = (-m).exp() + utilities.iter().map(|u| (u - m).exp()).sum::<f64>();
    m + s.ln()
}

/// Feature rows and utility offsets of one MNL choice situation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceDesign {
    features: DMatrix<f64>,
    offsets: DVector<f64>,
}

impl ChoiceDesign {
    pub fn new(features: DMatrix<f64>, offsets: DVector<f64>) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::invalid("choice design needs at least one item"));
        }
        check_dim("utility offsets", features.nrows(), offsets.len())?;
        Ok(ChoiceDesign { features, offsets })
    }

    pub fn without_offsets(features: DMatrix<f64>) -> Result<Self> {
        let k = features.nrows();
        Self::new(features, DVector::zeros(k))
    }

    /// Augmented features `x̃_j = [x_j, -p_j x_j]` for learned price sensitivities.
    pub fn pricing(ctx: &ContextMatrix, prices: &[f64]) -> Result<Self> {
        check_dim("prices", ctx.len(), prices.len())?;
        if prices.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("prices must be finite"));
        }
        let (k, d) = (ctx.len(), ctx.dim());
        let mut z = DMatrix::zeros(k, 2 * d);
        for j in 0..k {
            let x = ctx.matrix().row(j);
            z.view_mut((j, 0), (1, d)).copy_from(&x);
            z.view_mut((j, d), (1, d)).copy_from(&(x * -prices[j]));
        }
        Self::without_offsets(z)
    }

    /// Features `x_j` with offsets `-c p_j` for a known constant price sensitivity `c`.
    pub fn known_sensitivity(ctx: &ContextMatrix, prices: &[f64], sensitivity: f64) -> Result<Self> {
        check_dim("prices", ctx.len(), prices.len())?;
        if prices.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("prices must be finite"));
        }
        let offsets = DVector::from_iterator(prices.len(), prices.iter().map(|p| -sensitivity * p));
        Self::new(ctx.matrix().clone(), offsets)
    }

    /// Rows of the offered assortment `S` (in the given order).
    pub fn assortment(ctx: &ContextMatrix, assortment: &[usize]) -> Result<Self> {
        let sub = ctx.select(assortment)?;
        Self::without_offsets(sub.rows)
    }

    /// Number of offered items.
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    /// Dimension of the parameter vector.
    pub fn param_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn feature(&self, j: usize) -> DVector<f64> {
        self.features.row(j).transpose()
    }

    pub fn max_feature_norm(&self) -> f64 {
        self.features
            .row_iter()
            .map(|r| r.norm())
            .fold(0.0, f64::max)
    }

    pub fn utilities(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("parameter vector", self.param_dim(), w.len())?;
        Ok(&self.features * w + &self.offsets)
    }

    pub fn probs(&self, w: &DVector<f64>) -> Result<ProbVector> {
        Ok(softmax_with_outside(&self.utilities(w)?))
    }

    fn check_outcome(&self, outcome: PurchaseOutcome) -> Result<()> {
        if outcome.chosen() > self.len() {
            return Err(Error::invalid(format!(
                "outcome {} out of range for {} offered items",
                outcome.chosen(),
                self.len()
            )));
        }
        Ok(())
    }

    /// Negative log-likelihood `-log q_chosen(w)`.
    pub fn log_loss(&self, w: &DVector<f64>, outcome: PurchaseOutcome) -> Result<f64> {
        self.check_outcome(outcome)?;
        let u = self.utilities(w)?;
        let chosen = match outcome.chosen() {
            0 => 0.0,
            j => u[j - 1],
        };
        Ok(log_partition(&u) - chosen)
    }

    /// `Σ_j (q_j - y_j) z_j`.
    pub fn gradient(&self, w: &DVector<f64>, outcome: PurchaseOutcome) -> Result<DVector<f64>> {
        self.check_outcome(outcome)?;
        let q = self.probs(w)?;
        Ok(self.gradient_from_probs(&q, outcome))
    }

    pub(crate) fn gradient_from_probs(&self, q: &ProbVector, outcome: PurchaseOutcome) -> DVector<f64> {
        let mut resid = DVector::from_iterator(self.len(), q.as_slice()[1..].iter().copied());
        if outcome.chosen() > 0 {
            resid[outcome.chosen() - 1] -= 1.0;
        }
        self.features.tr_mul(&resid)
    }

    /// `Σ_j q_j z_j z_jᵀ − (Σ_j q_j z_j)(Σ_j q_j z_j)ᵀ`.
    pub fn hessian(&self, w: &DVector<f64>) -> Result<DMatrix<f64>> {
        let q = self.probs(w)?;
        Ok(self.hessian_from_probs(&q))
    }

    pub(crate) fn hessian_from_probs(&self, q: &ProbVector) -> DMatrix<f64> {
        // Centered covariance form: PSD by construction and free of the cancellation in
        // `Σ q_j z_j z_jᵀ − m mᵀ` when one outcome dominates.
        let qi = DVector::from_iterator(self.len(), q.as_slice()[1..].iter().copied());
        let mean = self.features.tr_mul(&qi);
        let mut centered = self.features.clone();
        let mut weighted = self.features.clone();
        for (j, (mut c, mut wr)) in centered.row_iter_mut().zip(weighted.row_iter_mut()).enumerate() {
            c -= mean.transpose();
            wr.copy_from(&(&c * qi[j]));
        }
        let h = centered.tr_mul(&weighted) + &mean * mean.transpose() * q.outside();
        linalg::symmetrize(&h)
    }

    /// `Σ_j z_j z_jᵀ`.
    pub fn gram(&self) -> DMatrix<f64> {
        self.features.tr_mul(&self.features)
    }

    /// `Σ_j q_j q_0 z_j z_jᵀ`, the lower side of the Hessian sandwich.
    pub fn outside_weighted_gram(&self, w: &DVector<f64>) -> Result<DMatrix<f64>> {
        let q = self.probs(w)?;
        let mut weighted = self.features.clone();
        for (j, mut row) in weighted.row_iter_mut().enumerate() {
            row *= q.item(j + 1) * q.outside();
        }
        Ok(self.features.tr_mul(&weighted))
    }
}

/// Eq. (1) purchase probabilities under `γ = (θ, α)` at the posted prices.
pub fn purchase_probs_pricing(
    params: &PricingParams,
    ctx: &ContextMatrix,
    prices: &[f64],
) -> Result<ProbVector> {
    check_dim("params", ctx.dim(), params.dim())?;
    ChoiceDesign::pricing(ctx, prices)?.probs(&params.stacked())
}

/// Purchase probabilities when assortment `S` (indices into `ctx`) is offered.
pub fn purchase_probs_assortment(
    theta: &DVector<f64>,
    ctx: &ContextMatrix,
    assortment: &[usize],
) -> Result<ProbVector> {
    ChoiceDesign::assortment(ctx, assortment)?.probs(theta)
}

pub fn log_loss_pricing(
    params: &PricingParams,
    ctx: &ContextMatrix,
    prices: &[f64],
    outcome: PurchaseOutcome,
) -> Result<f64> {
    check_dim("params", ctx.dim(), params.dim())?;
    ChoiceDesign::pricing(ctx, prices)?.log_loss(&params.stacked(), outcome)
}

/// Gradient of the pricing log loss with respect to the stacked `(θ, α)`.
pub fn grad_log_loss_pricing(
    params: &PricingParams,
    ctx: &ContextMatrix,
    prices: &[f64],
    outcome: PurchaseOutcome,
) -> Result<DVector<f64>> {
    check_dim("params", ctx.dim(), params.dim())?;
    ChoiceDesign::pricing(ctx, prices)?.gradient(&params.stacked(), outcome)
}

pub fn hessian_log_loss_pricing(
    params: &PricingParams,
    ctx: &ContextMatrix,
    prices: &[f64],
) -> Result<DMatrix<f64>> {
    check_dim("params", ctx.dim(), params.dim())?;
    ChoiceDesign::pricing(ctx, prices)?.hessian(&params.stacked())
}

pub fn log_loss_assortment(
    theta: &DVector<f64>,
    ctx: &ContextMatrix,
    assortment: &[usize],
    outcome: PurchaseOutcome,
) -> Result<f64> {
    ChoiceDesign::assortment(ctx, assortment)?.log_loss(theta, outcome)
}

pub fn grad_log_loss_assortment(
    theta: &DVector<f64>,
    ctx: &ContextMatrix,
    assortment: &[usize],
    outcome: PurchaseOutcome,
) -> Result<DVector<f64>> {
    ChoiceDesign::assortment(ctx, assortment)?.gradient(theta, outcome)
}

pub fn hessian_assortment(
    theta: &DVector<f64>,
    ctx: &ContextMatrix,
    assortment: &[usize],
) -> Result<DMatrix<f64>> {
    ChoiceDesign::assortment(ctx, assortment)?.hessian(theta)
}

/// Self-concordant-like constant `(1 + p_max)·√(6k)` of a `k`-item log loss.
///
/// With `p_max = 0` this is the assortment constant `√(6k)` (unit-norm features).
pub fn self_concordance_constant(k: usize, p_max: f64) -> f64 {
    (1.0 + p_max) * (6.0 * k as f64).sqrt()
}

/// Outcome of a Hessian-comparison check between two parameter points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfConcordanceCheck {
    /// Smallest eigenvalue of `∇²f(y) − e^{−M‖y−x‖}∇²f(x)`.
    pub margin: f64,
    /// Larger spectral norm of `∇²f(x)` and `∇²f(y)`, the rounding scale of `margin`.
    pub scale: f64,
    pub holds: bool,
}

/// Verifies `e^{−M_f‖y−x‖₂} ∇²f(x) ⪯ ∇²f(y)` for the log loss of `design`.
///
/// `rel_tol` is applied relative to the larger spectral norm of the two Hessians;
/// when `∇²f(x)` vanishes the margin is rounding noise of `∇²f(y)` alone.
pub fn check_self_concordance(
    design: &ChoiceDesign,
    x: &DVector<f64>,
    y: &DVector<f64>,
    m_f: f64,
    rel_tol: f64,
) -> Result<SelfConcordanceCheck> {
    let hx = design.hessian(x)?;
    let hy = design.hessian(y)?;
    let factor = (-m_f * (y - x).norm()).exp();
    let margin = linalg::min_eigenvalue(&(&hy - &hx * factor));
    let scale = linalg::spectral_norm_sym(&hx).max(linalg::spectral_norm_sym(&hy));
    Ok(SelfConcordanceCheck {
        margin,
        scale,
        holds: margin >= -rel_tol * scale.max(f64::MIN_POSITIVE),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_row(rng: &mut impl Rng, d: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = rng.random_range(0.2..1.0) / n;
        v.into_iter().map(|x| x * scale).collect()
    }

    fn random_instance(rng: &mut impl Rng) -> (PricingParams, ContextMatrix, Vec<f64>) {
        let d = rng.random_range(1..=4);
        let k = rng.random_range(1..=4);
        let rows: Vec<Vec<f64>> = (0..k).map(|_| unit_row(rng, d)).collect();
        let ctx = ContextMatrix::from_rows(&rows).unwrap();
        let theta = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let alpha = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let prices = (0..k).map(|_| rng.random_range(0.0..3.0)).collect();
        (PricingParams::new(theta, alpha).unwrap(), ctx, prices)
    }

    // Central finite differences, written against the scalar loss only.
    fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, w: &DVector<f64>, h: f64) -> DVector<f64> {
        DVector::from_fn(w.len(), |i, _| {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[i] += h;
            wm[i] -= h;
            (f(&wp) - f(&wm)) / (2.0 * h)
        })
    }

    fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1e-3)
    }

    #[test]
    fn pricing_probs_examples() {
        let ctx = ContextMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let zero = PricingParams::new(DVector::zeros(2), DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let q = purchase_probs_pricing(&zero, &ctx, &[0.0]).unwrap();
        assert_eq!(q.as_slice(), &[0.5, 0.5]);

        let ctx2 = ContextMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let q = purchase_probs_pricing(&zero, &ctx2, &[0.0, 0.0]).unwrap();
        for p in q.as_slice() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }

        let params = PricingParams::new(DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let q = purchase_probs_pricing(&params, &ctx, &[0.5]).unwrap();
        let expected = 0.5f64.exp() / (1.0 + 0.5f64.exp());
        assert!((q.item(1) - expected).abs() < 1e-15);
    }

    #[test]
    fn assortment_probs_examples() {
        let ctx = ContextMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]]).unwrap();
        let q = purchase_probs_assortment(&DVector::zeros(2), &ctx, &[0, 1, 2]).unwrap();
        for p in q.as_slice() {
            assert!((p - 0.25).abs() < 1e-15);
        }
        let q = purchase_probs_assortment(&DVector::zeros(2), &ctx, &[2]).unwrap();
        assert_eq!(q.as_slice(), &[0.5, 0.5]);

        let theta = DVector::from_vec(vec![1.0, 0.0]);
        let q = purchase_probs_assortment(&theta, &ctx, &[0, 1]).unwrap();
        let e = std::f64::consts::E;
        let z = 2.0 + e;
        let expected = [1.0 / z, e / z, 1.0 / z];
        for (p, want) in q.as_slice().iter().zip(expected) {
            assert!((p - want).abs() < 1e-15);
        }
    }

    #[test]
    fn assortment_errors() {
        let ctx = ContextMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(purchase_probs_assortment(&DVector::zeros(2), &ctx, &[]).is_err());
        assert!(purchase_probs_assortment(&DVector::zeros(2), &ctx, &[1]).is_err());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let ctx = ContextMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let params = PricingParams::new(DVector::zeros(3), DVector::zeros(3)).unwrap();
        assert!(matches!(
            purchase_probs_pricing(&params, &ctx, &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        let params = PricingParams::new(DVector::zeros(2), DVector::zeros(2)).unwrap();
        assert!(purchase_probs_pricing(&params, &ctx, &[0.0, 1.0]).is_err());
        assert!(PricingParams::new(DVector::zeros(2), DVector::zeros(1)).is_err());
    }

    #[test]
    fn feature_norm_is_enforced() {
        assert!(FeatureVector::new(vec![0.8, 0.7]).is_err());
        assert!(FeatureVector::new(vec![0.6, 0.8]).is_ok());
        assert!(ContextMatrix::from_rows(&[]).is_err());
    }

    #[test]
    fn log_loss_examples() {
        let ctx = ContextMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let zero = PricingParams::new(DVector::zeros(2), DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let loss = log_loss_pricing(&zero, &ctx, &[0.0], PurchaseOutcome::new(1, 1).unwrap()).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (params, ctx, prices) = random_instance(&mut rng);
            let q = purchase_probs_pricing(&params, &ctx, &prices).unwrap();
            for c in 0..=ctx.len() {
                let loss = log_loss_pricing(&params, &ctx, &prices, PurchaseOutcome::new(c, ctx.len()).unwrap()).unwrap();
                assert!(loss >= 0.0 && loss.is_finite());
                assert!((loss + q.as_slice()[c].ln()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_hand_expansion_single_product() {
        let ctx = ContextMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let params = PricingParams::new(DVector::from_vec(vec![0.3, -0.2]), DVector::from_vec(vec![0.5, 0.1])).unwrap();
        // u = 0.3 - 0.5 * 1.0
        let q1 = 1.0 / (1.0 + (0.2f64).exp());
        for (y, chosen) in [(1.0, 1usize), (0.0, 0)] {
            let g = grad_log_loss_pricing(&params, &ctx, &[1.0], PurchaseOutcome::new(chosen, 1).unwrap()).unwrap();
            let want = DVector::from_vec(vec![1.0, 0.0, -1.0, 0.0]) * (q1 - y);
            assert!((g - want).norm() < 1e-15);
        }
    }

    #[test]
    fn gradient_vanishes_when_outcome_replaced_by_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (params, ctx, prices) = random_instance(&mut rng);
        let design = ChoiceDesign::pricing(&ctx, &prices).unwrap();
        let w = params.stacked();
        let q = design.probs(&w).unwrap();
        // Expectation of the gradient over outcomes drawn from q is zero.
        let mut expected = DVector::zeros(w.len());
        for c in 0..=ctx.len() {
            expected += design.gradient(&w, PurchaseOutcome::new(c, ctx.len()).unwrap()).unwrap() * q.as_slice()[c];
        }
        assert!(expected.norm() < 1e-14);
    }

    #[test]
    fn single_item_hessian_is_logistic() {
        let ctx = ContextMatrix::from_rows(&[vec![0.6, 0.8]]).unwrap();
        let params = PricingParams::new(DVector::from_vec(vec![0.3, -0.2]), DVector::from_vec(vec![0.5, 0.1])).unwrap();
        let h = hessian_log_loss_pricing(&params, &ctx, &[1.5]).unwrap();
        let q1 = purchase_probs_pricing(&params, &ctx, &[1.5]).unwrap().item(1);
        let xt = DVector::from_vec(vec![0.6, 0.8, -0.9, -1.2]);
        let want = &xt * xt.transpose() * (q1 * (1.0 - q1));
        assert!((h - want).norm() < 1e-15);
    }

    #[test]
    fn finite_differences_pricing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (params, ctx, prices) = random_instance(&mut rng);
            let design = ChoiceDesign::pricing(&ctx, &prices).unwrap();
            let w = params.stacked();
            let outcome = PurchaseOutcome::new(rng.random_range(0..=ctx.len()), ctx.len()).unwrap();
            let fd = fd_gradient(|v| design.log_loss(v, outcome).unwrap(), &w, 1e-5);
            let g = design.gradient(&w, outcome).unwrap();
            assert!(rel_err(&g, &fd) < 1e-5, "gradient rel err {}", rel_err(&g, &fd));

            let h = design.hessian(&w).unwrap();
            for i in 0..w.len() {
                let col = fd_gradient(|v| design.gradient(v, outcome).unwrap()[i], &w, 1e-5);
                assert!(rel_err(&h.row(i).transpose(), &col) < 1e-4);
            }
            assert!(linalg::min_eigenvalue(&h) >= -1e-10);
        }
    }

    #[test]
    fn self_concordance_constant_examples() {
        let s6 = 6f64.sqrt();
        assert!((self_concordance_constant(1, 0.0) - s6).abs() < 1e-15);
        assert!((self_concordance_constant(4, 0.0) - 2.0 * s6).abs() < 1e-14);
        assert!((self_concordance_constant(1, 3.0) - 4.0 * s6).abs() < 1e-14);
    }

    #[test]
    fn self_concordance_check_at_equal_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (params, ctx, prices) = random_instance(&mut rng);
        let design = ChoiceDesign::pricing(&ctx, &prices).unwrap();
        let w = params.stacked();
        let m = self_concordance_constant(ctx.len(), 3.0);
        let check = check_self_concordance(&design, &w, &w, m, 0.0).unwrap();
        assert!(check.margin >= -1e-12);
    }

    #[test]
    fn softmax_is_shift_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let k = rng.random_range(1..6);
            let u = DVector::from_fn(k, |_, _| rng.random_range(-30.0..30.0));
            let q = softmax_with_outside(&u);
            // Direct unshifted evaluation.
            let denom = 1.0 + u.iter().map(|x| x.exp()).sum::<f64>();
            assert!((q.outside() - 1.0 / denom).abs() < 1e-12);
            for j in 0..k {
                assert!((q.item(j + 1) - u[j].exp() / denom).abs() < 1e-12);
            }
            assert!((q.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let extreme = softmax_with_outside(&DVector::from_vec(vec![800.0, -800.0]));
        assert!(extreme.as_slice().iter().all(|p| p.is_finite()));
    }
}
