//! Revenue-maximizing prices under a known MNL model.
//!
//! For sensitivities `b_i = x_iᵀα > 0` and intercepts `a_i = x_iᵀθ`, the optimal price
//! vector is `p_i = 1/b_i + B⁰` where `B⁰` is the unique fixed point of
//!
//! ```text
//! f(B) = Σ_i (1/b_i) exp(-(1 + b_i B)) exp(a_i).
//! ```
//!
//! `f` is positive and strictly decreasing, so `f(B) - B` has a single sign change on
//! `[0, f(0)]` and bisection converges unconditionally.

use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};
use crate::mnl::{ChoiceDesign, ContextMatrix, PricingParams, ProbVector};

pub const DEFAULT_FIXED_POINT_TOL: f64 = 1e-12;
pub const MAX_BISECTION_ITERATIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointSolution {
    /// The fixed point `B⁰ ≥ 0`.
    pub b0: f64,
    /// `|B⁰ − f(B⁰)|`.
    pub residual: f64,
    pub iterations: usize,
}

/// Evaluates `f(B)` for the given sensitivities and intercepts.
pub fn fixed_point_map(sensitivities: &[f64], intercepts: &[f64], b: f64) -> f64 {
    sensitivities
        .iter()
        .zip(intercepts)
        .map(|(&s, &a)| (a - 1.0 - s * b - s.ln()).exp())
        .sum()
}

fn validate_scores(sensitivities: &[f64], intercepts: &[f64]) -> Result<()> {
    check_dim("intercepts", sensitivities.len(), intercepts.len())?;
    if sensitivities.is_empty() {
        return Err(Error::invalid("at least one product is required"));
    }
    if let Some(s) = sensitivities.iter().find(|&&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::Infeasible(format!(
            "price sensitivity {s} is not strictly positive"
        )));
    }
    if intercepts.iter().any(|a| !a.is_finite()) {
        return Err(Error::invalid("intercepts must be finite"));
    }
    Ok(())
}

/// Bisection for `B = f(B)` on a bracket with `f(lo) ≥ lo` and `f(hi) ≤ hi`.
pub fn bisect_fixed_point(
    sensitivities: &[f64],
    intercepts: &[f64],
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<FixedPointSolution> {
    validate_scores(sensitivities, intercepts)?;
    let phi = |b: f64| fixed_point_map(sensitivities, intercepts, b) - b;
    let (mut lo, mut hi) = (lo, hi);
    let (phi_lo, phi_hi) = (phi(lo), phi(hi));
    if !(phi_lo >= 0.0 && phi_hi <= 0.0) {
        return Err(Error::invalid(format!(
            "[{lo}, {hi}] does not bracket the fixed point (f(B)-B = {phi_lo}, {phi_hi})"
        )));
    }
    let mut best = if phi_lo.abs() <= phi_hi.abs() {
        (lo, phi_lo.abs())
    } else {
        (hi, phi_hi.abs())
    };
    if best.1 <= tol {
        return Ok(FixedPointSolution {
            b0: best.0,
            residual: best.1,
            iterations: 0,
        });
    }
    for it in 1..=MAX_BISECTION_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = phi(mid);
        if v.abs() < best.1 {
            best = (mid, v.abs());
        }
        if v.abs() <= tol {
            return Ok(FixedPointSolution {
                b0: mid,
                residual: v.abs(),
                iterations: it,
            });
        }
        if v > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.1 <= tol {
        return Ok(FixedPointSolution {
            b0: best.0,
            residual: best.1,
            iterations: MAX_BISECTION_ITERATIONS,
        });
    }
    Err(Error::NoConvergence {
        what: "price fixed point",
        iterations: MAX_BISECTION_ITERATIONS,
        residual: best.1,
    })
}

/// Solves the fixed point from raw sensitivities `Xα` and intercepts `Xθ`.
pub fn solve_fixed_point_scores(
    sensitivities: &[f64],
    intercepts: &[f64],
    tol: f64,
) -> Result<FixedPointSolution> {
    validate_scores(sensitivities, intercepts)?;
    // f is decreasing, so f(f(0)) <= f(0) and [0, f(0)] brackets the root.
    let hi = fixed_point_map(sensitivities, intercepts, 0.0);
    if !hi.is_finite() {
        return Err(Error::Infeasible(
            "utilities too large for the price fixed point".into(),
        ));
    }
    bisect_fixed_point(sensitivities, intercepts, 0.0, hi, tol)
}

/// Solves the fixed point for `γ = (θ, α)` on the rows of `ctx`.
pub fn solve_fixed_point(
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    ctx: &ContextMatrix,
    tol: f64,
) -> Result<FixedPointSolution> {
    let sens = ctx.scores(alpha)?;
    let icpt = ctx.scores(theta)?;
    solve_fixed_point_scores(sens.as_slice(), icpt.as_slice(), tol)
}

/// Optimal prices `1/b_i + B⁰` from raw scores.
pub fn optimal_prices(
    sensitivities: &[f64],
    intercepts: &[f64],
    tol: f64,
) -> Result<(Vec<f64>, FixedPointSolution)> {
    let sol = solve_fixed_point_scores(sensitivities, intercepts, tol)?;
    let prices = sensitivities.iter().map(|s| 1.0 / s + sol.b0).collect();
    Ok((prices, sol))
}

/// The myopic price map `g(Xα, Xθ)`.
pub fn greedy_prices(theta: &DVector<f64>, alpha: &DVector<f64>, ctx: &ContextMatrix) -> Result<Vec<f64>> {
    let sens = ctx.scores(alpha)?;
    let icpt = ctx.scores(theta)?;
    Ok(optimal_prices(sens.as_slice(), icpt.as_slice(), DEFAULT_FIXED_POINT_TOL)?.0)
}

/// `h(p) = Σ_j q_j(γ, p) p_j`.
pub fn expected_revenue(params: &PricingParams, ctx: &ContextMatrix, prices: &[f64]) -> Result<f64> {
    PricingModel::Joint(params.clone()).revenue(ctx, prices)
}

/// `Σ_j p_j q_j`.
pub fn revenue_from_probs(q: &ProbVector, prices: &[f64]) -> f64 {
    prices.iter().enumerate().map(|(j, p)| q.item(j + 1) * p).sum()
}

/// Upper bound on every posted price: `(1 + K·max(W, 1))/L + 1/W`.
pub fn p_max(w: f64, l: f64, k: usize) -> Result<f64> {
    if !(w > 0.0 && l > 0.0 && k > 0) {
        return Err(Error::invalid(format!(
            "p_max needs W > 0, L > 0, K > 0 (got W={w}, L={l}, K={k})"
        )));
    }
    Ok((1.0 + k as f64 * w.max(1.0)) / l + 1.0 / w)
}

/// Upper bound `K·max(W, 1)/L` on the fixed point `B⁰` at feasible parameters.
pub fn fixed_point_upper_bound(w: f64, l: f64, k: usize) -> f64 {
    k as f64 * w.max(1.0) / l
}

/// A pricing demand model: either both `θ` and `α` are parameters, or the price
/// coefficient is a known constant shared by all products.
#[derive(Debug, Clone, PartialEq)]
pub enum PricingModel {
    Joint(PricingParams),
    KnownSensitivity { theta: DVector<f64>, sensitivity: f64 },
}

impl PricingModel {
    /// Feature dimension `d`.
    pub fn dim(&self) -> usize {
        match self {
            PricingModel::Joint(p) => p.dim(),
            PricingModel::KnownSensitivity { theta, .. } => theta.len(),
        }
    }

    /// The learnable parameter vector: `(θ, α)` stacked, or `θ`.
    pub fn param_vector(&self) -> DVector<f64> {
        match self {
            PricingModel::Joint(p) => p.stacked(),
            PricingModel::KnownSensitivity { theta, .. } => theta.clone(),
        }
    }

    /// Same model family with a new parameter vector.
    pub fn with_param_vector(&self, v: &DVector<f64>) -> Result<Self> {
        match self {
            PricingModel::Joint(p) => {
                check_dim("stacked parameters", 2 * p.dim(), v.len())?;
                Ok(PricingModel::Joint(PricingParams::from_stacked(v)?))
            }
            PricingModel::KnownSensitivity { theta, sensitivity } => {
                check_dim("theta", theta.len(), v.len())?;
                Ok(PricingModel::KnownSensitivity {
                    theta: v.clone(),
                    sensitivity: *sensitivity,
                })
            }
        }
    }

    pub fn sensitivities(&self, ctx: &ContextMatrix) -> Result<Vec<f64>> {
        match self {
            PricingModel::Joint(p) => Ok(ctx.scores(&p.alpha)?.as_slice().to_vec()),
            PricingModel::KnownSensitivity { theta, sensitivity } => {
                check_dim("theta", ctx.dim(), theta.len())?;
                Ok(vec![*sensitivity; ctx.len()])
            }
        }
    }

    pub fn intercepts(&self, ctx: &ContextMatrix) -> Result<Vec<f64>> {
        let theta = match self {
            PricingModel::Joint(p) => &p.theta,
            PricingModel::KnownSensitivity { theta, .. } => theta,
        };
        Ok(ctx.scores(theta)?.as_slice().to_vec())
    }

    pub fn design(&self, ctx: &ContextMatrix, prices: &[f64]) -> Result<ChoiceDesign> {
        check_dim("model dimension", ctx.dim(), self.dim())?;
        match self {
            PricingModel::Joint(_) => ChoiceDesign::pricing(ctx, prices),
            PricingModel::KnownSensitivity { sensitivity, .. } => {
                ChoiceDesign::known_sensitivity(ctx, prices, *sensitivity)
            }
        }
    }

    pub fn probs(&self, ctx: &ContextMatrix, prices: &[f64]) -> Result<ProbVector> {
        self.design(ctx, prices)?.probs(&self.param_vector())
    }

    pub fn revenue(&self, ctx: &ContextMatrix, prices: &[f64]) -> Result<f64> {
        Ok(revenue_from_probs(&self.probs(ctx, prices)?, prices))
    }

    pub fn optimal_prices(&self, ctx: &ContextMatrix, tol: f64) -> Result<Vec<f64>> {
        let sens = self.sensitivities(ctx)?;
        let icpt = self.intercepts(ctx)?;
        Ok(optimal_prices(&sens, &icpt, tol)?.0)
    }

    /// Euclidean norm of the parameter vector.
    pub fn norm(&self) -> f64 {
        self.param_vector().norm()
    }
}
