//! Projection onto `{‖z‖₂ ≤ W} ∩ {a_iᵀz ≥ b_i}` in the norm induced by an SPD matrix.
//!
//! The ball constraint is dualized: for a multiplier `ν ≥ 0` the problem
//!
//! ```text
//! min (z - y)ᵀ H (z - y) + ν ‖z‖²   s.t.  a_iᵀz ≥ b_i
//! ```
//!
//! is a strictly convex QP with linear constraints, solved exactly by the dual
//! active-set method of Goldfarb and Idnani. `‖z(ν)‖` is non-increasing in `ν`, so the
//! multiplier satisfying `‖z(ν)‖ = W` is found by a bracketed secant search on
//! `1/‖z(ν)‖ − 1/W` (exact in one step when `H` is a multiple of the identity).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::mnl::{ContextMatrix, PricingParams};

/// The half-space `normalᵀz ≥ offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace {
    pub normal: DVector<f64>,
    pub offset: f64,
}

impl HalfSpace {
    pub fn slack(&self, z: &DVector<f64>) -> f64 {
        self.normal.dot(z) - self.offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub point: DVector<f64>,
    /// Multiplier of `‖z‖² ≤ W²`.
    pub ball_multiplier: f64,
    /// Multipliers of the half-spaces, in input order.
    pub halfspace_multipliers: Vec<f64>,
}

/// KKT residuals of a projection, for the objective `(z − y)ᵀH(z − y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    /// `‖2H(z − y) + 2νz − Σ λ_i a_i‖`, divided by `max(1, ‖2H‖·max(1, ‖y‖))`.
    pub stationarity: f64,
    /// Largest constraint violation (0 when feasible).
    pub primal: f64,
    /// Largest `|multiplier × constraint slack|`.
    pub complementarity: f64,
    /// Most negative multiplier (0 when all are non-negative).
    pub dual: f64,
}

const RADIUS_REL_TOL: f64 = 1e-13;
const MAX_MULTIPLIER_STEPS: usize = 200;

/// Half-spaces `x_jᵀα ≥ L` expressed on the stacked vector `(θ, α)`.
pub fn pricing_halfspaces(ctx: &ContextMatrix, l: f64) -> Vec<HalfSpace> {
    let d = ctx.dim();
    (0..ctx.len())
        .map(|j| {
            let mut normal = DVector::zeros(2 * d);
            normal.rows_mut(d, d).copy_from(&ctx.row(j));
            HalfSpace { normal, offset: l }
        })
        .collect()
}

/// Projects a stacked `(θ, α)` vector onto `B = {‖γ‖ ≤ W} ∩ {x_jᵀα ≥ L ∀j}` in the `H`-norm.
pub fn project_pricing(
    point: &DVector<f64>,
    h: &DMatrix<f64>,
    w: f64,
    l: f64,
    ctx: &ContextMatrix,
) -> Result<PricingParams> {
    check_dim("stacked parameters", 2 * ctx.dim(), point.len())?;
    let proj = project_h_norm(point, h, w, &pricing_halfspaces(ctx, l))?;
    PricingParams::from_stacked(&proj.point)
}

/// `argmin_{z ∈ B} (z − y)ᵀ H (z − y)` for `B = {‖z‖ ≤ radius} ∩ halfspaces`.
pub fn project_h_norm(
    point: &DVector<f64>,
    h: &DMatrix<f64>,
    radius: f64,
    halfspaces: &[HalfSpace],
) -> Result<Projection> {
    let n = point.len();
    check_dim("projection matrix rows", n, h.nrows())?;
    check_dim("projection matrix columns", n, h.ncols())?;
    for hs in halfspaces {
        check_dim("half-space normal", n, hs.normal.len())?;
    }
    if !(radius > 0.0) {
        return Err(Error::invalid(format!("ball radius must be positive, got {radius}")));
    }

    let feasible = point.norm() <= radius && halfspaces.iter().all(|hs| hs.slack(point) >= 0.0);
    if feasible {
        return Ok(Projection {
            point: point.clone(),
            ball_multiplier: 0.0,
            halfspace_multipliers: vec![0.0; halfspaces.len()],
        });
    }

    let hy = h * point;
    let solve_for = |nu: f64| -> Result<(DVector<f64>, Vec<f64>)> {
        let mut g = h * 2.0;
        for i in 0..n {
            g[(i, i)] += 2.0 * nu;
        }
        let c = &hy * -2.0;
        dual_active_set_qp(&g, &c, halfspaces)
    };

    let (z0, u0) = solve_for(0.0)?;
    if z0.norm() <= radius {
        return Ok(Projection {
            point: z0,
            ball_multiplier: 0.0,
            halfspace_multipliers: u0,
        });
    }

    // The ν → ∞ limit is the minimum-norm point of the polyhedron.
    let (zmin, _) = dual_active_set_qp(&DMatrix::identity(n, n), &DVector::zeros(n), halfspaces)?;
    if zmin.norm() > radius * (1.0 + 1e-12) {
        return Err(Error::EmptyFeasibleSet(format!(
            "half-spaces exclude the ball of radius {radius} (closest point has norm {})",
            zmin.norm()
        )));
    }

    let target = |z: &DVector<f64>| 1.0 / z.norm().max(f64::MIN_POSITIVE) - 1.0 / radius;
    let close_enough = |z: &DVector<f64>| (z.norm() - radius).abs() <= RADIUS_REL_TOL * radius.max(1.0);

    // Bracket: φ(lo) < 0 (outside the ball), φ(hi) ≥ 0 (inside).
    let h_scale = linalg::spectral_norm_sym(h).max(1.0);
    let (mut lo, mut f_lo) = (0.0, target(&z0));
    let mut hi = h_scale;
    let mut sol_hi = solve_for(hi)?;
    let mut f_hi = target(&sol_hi.0);
    let mut doublings = 0;
    while f_hi < 0.0 {
        lo = hi;
        f_lo = f_hi;
        hi *= 4.0;
        sol_hi = solve_for(hi)?;
        f_hi = target(&sol_hi.0);
        doublings += 1;
        if doublings > 60 {
            // Only reachable when the closest polyhedron point sits on the sphere.
            return Ok(Projection {
                point: zmin,
                ball_multiplier: hi,
                halfspace_multipliers: sol_hi.1,
            });
        }
    }
    if close_enough(&sol_hi.0) {
        return Ok(Projection {
            point: sol_hi.0,
            ball_multiplier: hi,
            halfspace_multipliers: sol_hi.1,
        });
    }

    // Illinois variant of regula falsi, falling back to bisection if it stalls.
    let mut side = 0i8;
    for step in 0..MAX_MULTIPLIER_STEPS {
        let mut nu = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
        if !(nu > lo && nu < hi) || step % 8 == 7 {
            nu = 0.5 * (lo + hi);
        }
        let sol = solve_for(nu)?;
        let f = target(&sol.0);
        if close_enough(&sol.0) || hi - lo <= 1e-15 * hi {
            return Ok(Projection {
                point: sol.0,
                ball_multiplier: nu,
                halfspace_multipliers: sol.1,
            });
        }
        if f < 0.0 {
            lo = nu;
            f_lo = f;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = nu;
            f_hi = f;
            sol_hi = sol;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        }
    }
    Ok(Projection {
        point: sol_hi.0,
        ball_multiplier: hi,
        halfspace_multipliers: sol_hi.1,
    })
}

/// KKT residuals of `proj` as a solution of the projection of `point`.
pub fn kkt_residuals(
    proj: &Projection,
    point: &DVector<f64>,
    h: &DMatrix<f64>,
    radius: f64,
    halfspaces: &[HalfSpace],
) -> KktResiduals {
    let z = &proj.point;
    let mut grad = h * (z - point) * 2.0 + z * (2.0 * proj.ball_multiplier);
    for (hs, lam) in halfspaces.iter().zip(&proj.halfspace_multipliers) {
        grad -= &hs.normal * *lam;
    }
    let scale = (2.0 * linalg::spectral_norm_sym(h) * point.norm().max(1.0)).max(1.0);
    let ball_slack = z.norm_squared() - radius * radius;
    let mut primal = (z.norm() - radius).max(0.0);
    let mut comp = (proj.ball_multiplier * ball_slack).abs();
    let mut dual = proj.ball_multiplier.min(0.0);
    for (hs, lam) in halfspaces.iter().zip(&proj.halfspace_multipliers) {
        let s = hs.slack(z);
        primal = primal.max(-s);
        comp = comp.max((lam * s).abs());
        dual = dual.min(*lam);
    }
    KktResiduals {
        stationarity: grad.norm() / scale,
        primal,
        complementarity: comp,
        dual: -dual,
    }
}

/// Goldfarb–Idnani dual active-set method for `min ½zᵀGz + cᵀz  s.t. a_iᵀz ≥ b_i`
/// with `G` SPD. Returns the minimizer and the constraint multipliers.
///
/// The reduced matrices are rebuilt from scratch at every step; the problems solved
/// here have at most a few dozen variables and constraints.
pub fn dual_active_set_qp(
    g: &DMatrix<f64>,
    c: &DVector<f64>,
    constraints: &[HalfSpace],
) -> Result<(DVector<f64>, Vec<f64>)> {
    let chol: Cholesky<f64, Dyn> = g
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("active-set QP"))?;
    let m = constraints.len();
    let ginv_a: Vec<DVector<f64>> = constraints.iter().map(|hs| chol.solve(&hs.normal)).collect();
    let mut z = -chol.solve(c);
    let mut multipliers = vec![0.0; m];
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();

    let max_adds = 20 * (m + 1);
    for _ in 0..max_adds {
        // Most violated inactive constraint, measured in normalized distance.
        let mut pick = None;
        let mut worst = 0.0;
        for (i, hs) in constraints.iter().enumerate() {
            if active.contains(&i) {
                continue;
            }
            let an = hs.normal.norm();
            if an == 0.0 {
                if hs.offset > 0.0 {
                    return Err(Error::EmptyFeasibleSet(format!(
                        "constraint {i} has a zero normal and positive offset"
                    )));
                }
                continue;
            }
            let tol = 1e-14 * hs.offset.abs().max(1.0);
            let s = hs.slack(&z);
            if s < -tol && s / an < worst {
                worst = s / an;
                pick = Some(i);
            }
        }
        let Some(p) = pick else {
            for (&i, &ui) in active.iter().zip(&u) {
                multipliers[i] = ui;
            }
            return Ok((z, multipliers));
        };

        let mut up = 0.0;
        let np = &constraints[p].normal;
        let curvature = np.dot(&ginv_a[p]);
        loop {
            let q = active.len();
            let (step_dir, r) = if q == 0 {
                (ginv_a[p].clone(), DVector::zeros(0))
            } else {
                let mm = DMatrix::from_fn(q, q, |i, j| constraints[active[i]].normal.dot(&ginv_a[active[j]]));
                let rhs = DVector::from_fn(q, |i, _| constraints[active[i]].normal.dot(&ginv_a[p]));
                let r = mm
                    .lu()
                    .solve(&rhs)
                    .ok_or(Error::NotPositiveDefinite("active-set reduced system"))?;
                let mut dir = ginv_a[p].clone();
                for (j, &a) in active.iter().enumerate() {
                    dir -= &ginv_a[a] * r[j];
                }
                (dir, r)
            };

            let mut t_partial = f64::INFINITY;
            let mut drop = None;
            for j in 0..q {
                if r[j] > 0.0 {
                    let t = u[j] / r[j];
                    if t < t_partial {
                        t_partial = t;
                        drop = Some(j);
                    }
                }
            }
            let zn = step_dir.dot(np);
            let t_full = if zn > 1e-13 * curvature {
                -constraints[p].slack(&z) / zn
            } else {
                f64::INFINITY
            };

            if t_full.is_infinite() {
                let Some(l) = drop else {
                    return Err(Error::EmptyFeasibleSet(format!(
                        "half-space {p} cannot be satisfied together with the active constraints"
                    )));
                };
                for j in 0..q {
                    u[j] -= t_partial * r[j];
                }
                up += t_partial;
                active.remove(l);
                u.remove(l);
                continue;
            }

            let t = t_full.min(t_partial);
            z += &step_dir * t;
            for j in 0..q {
                u[j] -= t * r[j];
            }
            up += t;
            if t_full <= t_partial {
                active.push(p);
                u.push(up);
                break;
            }
            let l = drop.expect("partial step implies a blocking constraint");
            active.remove(l);
            u.remove(l);
        }
    }
    Err(Error::NoConvergence {
        what: "active-set QP",
        iterations: max_adds,
        residual: constraints
            .iter()
            .map(|hs| (-hs.slack(&z)).max(0.0))
            .fold(0.0, f64::max),
    })
}
