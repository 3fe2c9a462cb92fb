//! Online Newton pricing with random price shocks, and the classic Online Newton Step
//! baseline that scales its step with an exp-concavity parameter.
//!
//! Per period `t` the learner
//! 1. projects its pending point onto `B_t = {‖γ‖ ≤ W} ∩ {x_{t,j}ᵀα ≥ L}` in the
//!    `H_{t−1}`-norm, which needs the rows of the current context;
//! 2. posts `g(X_t α_t, X_t θ_t) + Δp_t` with `Δp_{t,j} = ±1/(W t^{1/4})`;
//! 3. on feedback, sets `H_t = H_{t−1} + ∇²ℓ_t(γ_t) + (λ_t − λ_{t−1}) I` and keeps
//!    `γ_t − μ⁻¹ H_t⁻¹ ∇ℓ_t(γ_t)` as the pending point for period `t + 1`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::mnl::{ContextMatrix, PricingParams, PurchaseOutcome};
use crate::price::{self, PricingModel, DEFAULT_FIXED_POINT_TOL};
use crate::projection::{self, HalfSpace};

/// `μ = 1 / (2 (1 + (1 + p_max) √(6K) W))`.
pub fn mu_constant(w: f64, p_max: f64, k: usize) -> f64 {
    1.0 / (2.0 * (1.0 + (1.0 + p_max) * (6.0 * k as f64).sqrt() * w))
}

/// Regularizer schedule `λ_1 = 1`, `λ_t = d ln t` for `t ≥ 2`.
pub fn lambda_schedule(t: usize, d: usize) -> f64 {
    if t <= 1 {
        1.0
    } else {
        d as f64 * (t as f64).ln()
    }
}

/// Whether price sensitivities are learned (`α`) or a known constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SensitivityMode {
    Learned,
    Known(f64),
}

impl SensitivityMode {
    /// Template model with zero parameters, used to build designs and prices.
    pub(crate) fn zero_model(self, d: usize) -> PricingModel {
        match self {
            SensitivityMode::Learned => PricingModel::Joint(
                PricingParams::new(DVector::zeros(d), DVector::zeros(d)).expect("equal lengths"),
            ),
            SensitivityMode::Known(c) => PricingModel::KnownSensitivity {
                theta: DVector::zeros(d),
                sensitivity: c,
            },
        }
    }

    pub fn param_dim(self, d: usize) -> usize {
        match self {
            SensitivityMode::Learned => 2 * d,
            SensitivityMode::Known(_) => d,
        }
    }

    /// Effective lower bound on sensitivities: `L`, or the known constant.
    pub fn sensitivity_floor(self, l: f64) -> f64 {
        match self {
            SensitivityMode::Learned => l,
            SensitivityMode::Known(c) => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnsConfig {
    /// Radius `W` of the parameter ball.
    pub w: f64,
    /// Lower bound `L` on `xᵀα` (ignored for known sensitivities).
    pub l: f64,
    /// Maximum number of products per period, `K`.
    pub k_max: usize,
    pub sensitivity: SensitivityMode,
    /// Random price shocks; off for the known-sensitivity logarithmic-regret mode.
    pub shocks: bool,
    pub fixed_point_tol: f64,
}

impl OnsConfig {
    pub fn new(w: f64, l: f64, k_max: usize) -> Self {
        OnsConfig {
            w,
            l,
            k_max,
            sensitivity: SensitivityMode::Learned,
            shocks: true,
            fixed_point_tol: DEFAULT_FIXED_POINT_TOL,
        }
    }

    /// Single product, known price coefficient, no shocks.
    pub fn known_sensitivity(w: f64, sensitivity: f64) -> Self {
        OnsConfig {
            w,
            l: sensitivity,
            k_max: 1,
            sensitivity: SensitivityMode::Known(sensitivity),
            shocks: false,
            fixed_point_tol: DEFAULT_FIXED_POINT_TOL,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.w > 0.0) {
            return Err(Error::invalid(format!("W must be positive, got {}", self.w)));
        }
        if let SensitivityMode::Known(c) = self.sensitivity {
            if !(c > 0.0) {
                return Err(Error::invalid(format!("known sensitivity must be positive, got {c}")));
            }
        } else if !(self.l > 0.0) {
            return Err(Error::invalid(format!("L must be positive, got {}", self.l)));
        }
        if self.k_max == 0 {
            return Err(Error::invalid("K must be at least 1"));
        }
        Ok(())
    }

    pub fn p_max(&self) -> Result<f64> {
        price::p_max(self.w, self.sensitivity.sensitivity_floor(self.l), self.k_max)
    }
}

/// Symmetric ±1/(W t^{1/4}) perturbations of the myopic prices.
#[derive(Debug, Clone, PartialEq)]
pub struct ShockSample {
    pub magnitude: f64,
    pub deltas: Vec<f64>,
}

impl ShockSample {
    pub fn magnitude(t: usize, w: f64) -> f64 {
        1.0 / (w * (t as f64).powf(0.25))
    }

    pub fn draw(t: usize, w: f64, k: usize, rng: &mut impl Rng) -> Self {
        let magnitude = Self::magnitude(t, w);
        let deltas = (0..k)
            .map(|_| if rng.random_bool(0.5) { magnitude } else { -magnitude })
            .collect();
        ShockSample { magnitude, deltas }
    }

    pub fn none(k: usize) -> Self {
        ShockSample {
            magnitude: 0.0,
            deltas: vec![0.0; k],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceDecision {
    /// Myopic prices under the current estimate.
    pub greedy: Vec<f64>,
    pub shocks: ShockSample,
    /// Posted prices, `greedy + shocks`.
    pub prices: Vec<f64>,
}

/// `γ − s · A⁻¹ ∇` through a Cholesky solve.
pub fn newton_step(gamma: &DVector<f64>, metric: &DMatrix<f64>, grad: &DVector<f64>, scale: f64) -> Result<DVector<f64>> {
    let dir = linalg::spd_solve(metric, grad)?;
    Ok(gamma - dir * scale)
}

/// Shared projection onto the feasible set for the current context.
fn project_feasible(
    point: &DVector<f64>,
    metric: &DMatrix<f64>,
    w: f64,
    l: f64,
    mode: SensitivityMode,
    ctx: &ContextMatrix,
) -> Result<DVector<f64>> {
    let halfspaces: Vec<HalfSpace> = match mode {
        SensitivityMode::Learned => projection::pricing_halfspaces(ctx, l),
        SensitivityMode::Known(_) => Vec::new(),
    };
    Ok(projection::project_h_norm(point, metric, w, &halfspaces)?.point)
}

/// Algorithm-1 learner state.
#[derive(Debug, Clone)]
pub struct OnsPricer {
    cfg: OnsConfig,
    d: usize,
    p_max: f64,
    mu: f64,
    model: PricingModel,
    gamma: DVector<f64>,
    hessian: DMatrix<f64>,
    lambda_prev: f64,
    /// Completed observations.
    t: usize,
    /// Descent point awaiting projection onto the next period's feasible set.
    pending: Option<DVector<f64>>,
    /// Context the current `gamma` was projected for.
    prepared_for: Option<ContextMatrix>,
}

impl OnsPricer {
    pub fn new(cfg: OnsConfig, d: usize) -> Result<Self> {
        cfg.validate()?;
        if d == 0 {
            return Err(Error::invalid("feature dimension must be at least 1"));
        }
        let p_max = cfg.p_max()?;
        let mu = mu_constant(cfg.w, p_max, cfg.k_max);
        let n = cfg.sensitivity.param_dim(d);
        let lambda1 = lambda_schedule(1, d);
        Ok(OnsPricer {
            model: cfg.sensitivity.zero_model(d),
            cfg,
            d,
            p_max,
            mu,
            gamma: DVector::zeros(n),
            hessian: DMatrix::identity(n, n) * lambda1,
            lambda_prev: lambda1,
            t: 0,
            pending: None,
            prepared_for: None,
        })
    }

    pub fn config(&self) -> &OnsConfig {
        &self.cfg
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn p_max(&self) -> f64 {
        self.p_max
    }

    /// Number of completed observations.
    pub fn t(&self) -> usize {
        self.t
    }

    /// Current parameter vector `γ_t` (stacked `(θ, α)` or `θ`).
    pub fn gamma(&self) -> &DVector<f64> {
        &self.gamma
    }

    /// Regularized Hessian accumulator `H_t`.
    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn estimate(&self) -> PricingModel {
        self.model
            .with_param_vector(&self.gamma)
            .expect("gamma has the model dimension")
    }

    /// Unprojected descent point from the last observation, if not yet projected.
    pub fn pending(&self) -> Option<&DVector<f64>> {
        self.pending.as_ref()
    }

    /// Projects the pending descent point onto the feasible set of `ctx`.
    ///
    /// The first period uses the Euclidean norm, later periods `H_{t−1}`. Calling it
    /// again for the same context is a no-op.
    pub fn project_for(&mut self, ctx: &ContextMatrix) -> Result<()> {
        if ctx.dim() != self.d {
            return Err(Error::DimensionMismatch {
                what: "context",
                expected: self.d,
                got: ctx.dim(),
            });
        }
        if ctx.len() > self.cfg.k_max {
            return Err(Error::invalid(format!(
                "context has {} products, more than K = {}",
                ctx.len(),
                self.cfg.k_max
            )));
        }
        if self.prepared_for.as_ref() == Some(ctx) && self.pending.is_none() {
            return Ok(());
        }
        let point = self.pending.take().unwrap_or_else(|| self.gamma.clone());
        let metric = if self.t == 0 {
            DMatrix::identity(point.len(), point.len())
        } else {
            self.hessian.clone()
        };
        self.gamma = project_feasible(&point, &metric, self.cfg.w, self.cfg.l, self.cfg.sensitivity, ctx)?;
        self.prepared_for = Some(ctx.clone());
        Ok(())
    }

    /// Myopic prices under `γ_t` plus random shocks (when enabled).
    pub fn select_prices(&mut self, ctx: &ContextMatrix, rng: &mut impl Rng) -> Result<PriceDecision> {
        self.project_for(ctx)?;
        let greedy = self.estimate().optimal_prices(ctx, self.cfg.fixed_point_tol)?;
        let shocks = if self.cfg.shocks {
            ShockSample::draw(self.t + 1, self.cfg.w, ctx.len(), rng)
        } else {
            ShockSample::none(ctx.len())
        };
        let prices = greedy.iter().zip(&shocks.deltas).map(|(g, s)| g + s).collect();
        Ok(PriceDecision { greedy, shocks, prices })
    }

    /// Feeds back the purchase decision for the prices posted on `ctx`.
    pub fn observe(&mut self, ctx: &ContextMatrix, prices: &[f64], outcome: PurchaseOutcome) -> Result<()> {
        if self.prepared_for.as_ref() != Some(ctx) {
            return Err(Error::invalid("observe() must follow select_prices() on the same context"));
        }
        let design = self.model.design(ctx, prices)?;
        let q = design.probs(&self.gamma)?;
        let grad = design.gradient_from_probs(&q, outcome);
        let hess = design.hessian_from_probs(&q);

        self.t += 1;
        let lambda = lambda_schedule(self.t, self.d);
        self.hessian += hess;
        for i in 0..self.hessian.nrows() {
            self.hessian[(i, i)] += lambda - self.lambda_prev;
        }
        self.lambda_prev = lambda;

        self.pending = Some(newton_step(&self.gamma, &self.hessian, &grad, 1.0 / self.mu)?);
        self.prepared_for = None;
        Ok(())
    }
}

/// Settings of the Online Newton Step baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct OnspConfig {
    pub w: f64,
    pub l: f64,
    pub k_max: usize,
    pub sensitivity: SensitivityMode,
    /// Exp-concavity parameter `κ` of the losses.
    pub kappa: f64,
    /// Initial `A_0 = ε I`; defaults to `1/(η² D²)` with `D = 2W`.
    pub epsilon: Option<f64>,
    pub fixed_point_tol: f64,
}

impl OnspConfig {
    /// Known-sensitivity single-product setting with the default `κ`.
    pub fn known_sensitivity(w: f64, sensitivity: f64) -> Result<Self> {
        let mut cfg = OnspConfig {
            w,
            l: sensitivity,
            k_max: 1,
            sensitivity: SensitivityMode::Known(sensitivity),
            kappa: 1.0,
            epsilon: None,
            fixed_point_tol: DEFAULT_FIXED_POINT_TOL,
        };
        cfg.kappa = cfg.default_kappa()?;
        Ok(cfg)
    }

    pub fn p_max(&self) -> Result<f64> {
        price::p_max(self.w, self.sensitivity.sensitivity_floor(self.l), self.k_max)
    }

    /// Largest utility magnitude at feasible parameters and prices.
    pub fn utility_bound(&self) -> Result<f64> {
        let p_max = self.p_max()?;
        Ok(match self.sensitivity {
            SensitivityMode::Learned => self.w * (1.0 + p_max),
            SensitivityMode::Known(c) => self.w + c * p_max,
        })
    }

    /// `σ'(M) = e^{−M}/(1 + e^{−M})²`, the logistic curvature at the utility bound.
    pub fn default_kappa(&self) -> Result<f64> {
        let m = self.utility_bound()?;
        let e = (-m).exp();
        Ok(e / ((1.0 + e) * (1.0 + e)))
    }

    /// Bound `G` on the loss gradient norm: `2 · max ‖z_j‖`.
    pub fn gradient_bound(&self) -> Result<f64> {
        Ok(match self.sensitivity {
            SensitivityMode::Learned => 2.0 * (1.0 + self.p_max()?),
            SensitivityMode::Known(_) => 2.0,
        })
    }

    /// `η = ½ min(1/(4 G D), κ)` with `D = 2W`.
    pub fn eta(&self) -> Result<f64> {
        let diameter = 2.0 * self.w;
        Ok(0.5 * (1.0 / (4.0 * self.gradient_bound()? * diameter)).min(self.kappa))
    }
}

/// Online Newton Step: `A_t = εI + Σ ∇ℓ_s∇ℓ_sᵀ`, `γ ← Π^{A_t}(γ − η⁻¹ A_t⁻¹ ∇ℓ_t)`,
/// myopic prices without shocks.
#[derive(Debug, Clone)]
pub struct OnspPricer {
    cfg: OnspConfig,
    d: usize,
    eta: f64,
    model: PricingModel,
    gamma: DVector<f64>,
    a_mat: DMatrix<f64>,
    t: usize,
    pending: Option<DVector<f64>>,
    prepared_for: Option<ContextMatrix>,
}

impl OnspPricer {
    pub fn new(cfg: OnspConfig, d: usize) -> Result<Self> {
        if !(cfg.kappa > 0.0) {
            return Err(Error::invalid(format!("exp-concavity parameter must be positive, got {}", cfg.kappa)));
        }
        if !(cfg.w > 0.0) || d == 0 {
            return Err(Error::invalid("ONSP needs W > 0 and d ≥ 1"));
        }
        let eta = cfg.eta()?;
        let eps = match cfg.epsilon {
            Some(e) if e > 0.0 => e,
            Some(e) => return Err(Error::invalid(format!("epsilon must be positive, got {e}"))),
            None => 1.0 / (eta * eta * 4.0 * cfg.w * cfg.w),
        };
        let n = cfg.sensitivity.param_dim(d);
        Ok(OnspPricer {
            model: cfg.sensitivity.zero_model(d),
            cfg,
            d,
            eta,
            gamma: DVector::zeros(n),
            a_mat: DMatrix::identity(n, n) * eps,
            t: 0,
            pending: None,
            prepared_for: None,
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn gamma(&self) -> &DVector<f64> {
        &self.gamma
    }

    pub fn metric(&self) -> &DMatrix<f64> {
        &self.a_mat
    }

    pub fn pending(&self) -> Option<&DVector<f64>> {
        self.pending.as_ref()
    }

    pub fn estimate(&self) -> PricingModel {
        self.model
            .with_param_vector(&self.gamma)
            .expect("gamma has the model dimension")
    }

    pub fn project_for(&mut self, ctx: &ContextMatrix) -> Result<()> {
        if ctx.dim() != self.d {
            return Err(Error::DimensionMismatch {
                what: "context",
                expected: self.d,
                got: ctx.dim(),
            });
        }
        if self.prepared_for.as_ref() == Some(ctx) && self.pending.is_none() {
            return Ok(());
        }
        let point = self.pending.take().unwrap_or_else(|| self.gamma.clone());
        self.gamma = project_feasible(&point, &self.a_mat, self.cfg.w, self.cfg.l, self.cfg.sensitivity, ctx)?;
        self.prepared_for = Some(ctx.clone());
        Ok(())
    }

    pub fn select_prices(&mut self, ctx: &ContextMatrix) -> Result<PriceDecision> {
        self.project_for(ctx)?;
        let greedy = self.estimate().optimal_prices(ctx, self.cfg.fixed_point_tol)?;
        Ok(PriceDecision {
            prices: greedy.clone(),
            greedy,
            shocks: ShockSample::none(ctx.len()),
        })
    }

    /// One baseline update from the observed outcome.
    pub fn observe(&mut self, ctx: &ContextMatrix, prices: &[f64], outcome: PurchaseOutcome) -> Result<()> {
        if self.prepared_for.as_ref() != Some(ctx) {
            return Err(Error::invalid("observe() must follow select_prices() on the same context"));
        }
        let grad = self.model.design(ctx, prices)?.gradient(&self.gamma, outcome)?;
        self.a_mat += &grad * grad.transpose();
        self.t += 1;
        self.pending = Some(newton_step(&self.gamma, &self.a_mat, &grad, 1.0 / self.eta)?);
        self.prepared_for = None;
        Ok(())
    }
}
