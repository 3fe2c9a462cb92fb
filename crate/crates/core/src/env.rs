//! Synthetic environments: true parameters, context generators and demand draws.
//!
//! Every replication owns one [`RngStreams`]; each component draws from its own ChaCha
//! stream so that, e.g., switching price shocks off leaves the demand draws untouched.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mnl::{ContextMatrix, PricingParams, ProbVector, PurchaseOutcome};

/// Probe size used to estimate the context acceptance rate of a pricing instance.
pub const PROBE_BATCH: usize = 2000;
/// Below this acceptance rate the instance is rejected as a configuration error.
pub const MIN_ACCEPTANCE: f64 = 0.01;
const MAX_PARAM_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextKind {
    Gaussian,
    Exponential,
    AdversarialEpoch,
}

impl fmt::Display for ContextKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContextKind::Gaussian => "gaussian",
            ContextKind::Exponential => "exponential",
            ContextKind::AdversarialEpoch => "adversarial_epoch",
        })
    }
}

impl FromStr for ContextKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(ContextKind::Gaussian),
            "exponential" => Ok(ContextKind::Exponential),
            "adversarial_epoch" | "adversarial" => Ok(ContextKind::AdversarialEpoch),
            other => Err(Error::config(format!(
                "unknown context kind `{other}` (expected gaussian, exponential or adversarial_epoch)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub d: usize,
    /// Products per period (pricing) or assortment size (assortment).
    pub k: usize,
    /// Candidate items per period for assortment problems.
    pub n: usize,
    pub w: f64,
    pub l: f64,
    pub context_kind: ContextKind,
    pub seed: u64,
}

impl EnvConfig {
    pub fn validate(&self, pricing: bool) -> Result<()> {
        if self.d == 0 {
            return Err(Error::config("env.d must be at least 1"));
        }
        if self.k == 0 {
            return Err(Error::config("env.k must be at least 1"));
        }
        if !pricing && self.k > self.n {
            return Err(Error::config(format!("env.k = {} exceeds env.n = {}", self.k, self.n)));
        }
        if !(self.w > 0.0 && self.w.is_finite()) {
            return Err(Error::config(format!("env.w must be positive, got {}", self.w)));
        }
        if pricing && !(self.l > 0.0 && self.l.is_finite()) {
            return Err(Error::config(format!("env.l must be positive, got {}", self.l)));
        }
        if self.context_kind == ContextKind::AdversarialEpoch && self.d != 2 {
            return Err(Error::config("adversarial_epoch contexts require env.d = 2"));
        }
        Ok(())
    }
}

/// Named random streams of one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Params = 0,
    Contexts = 1,
    Demand = 2,
    Shocks = 3,
    Policy = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone)]
pub struct RngStreams {
    pub params: ChaCha8Rng,
    pub contexts: ChaCha8Rng,
    pub demand: ChaCha8Rng,
    pub shocks: ChaCha8Rng,
    pub policy: ChaCha8Rng,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        RngStreams {
            params: stream_rng(seed, Stream::Params),
            contexts: stream_rng(seed, Stream::Contexts),
            demand: stream_rng(seed, Stream::Demand),
            shocks: stream_rng(seed, Stream::Shocks),
            policy: stream_rng(seed, Stream::Policy),
        }
    }
}

fn gaussian_direction<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = z.norm();
        if n > 0.0 {
            return z / n;
        }
    }
}

fn exponential_direction<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(Exp1));
        let n = z.norm();
        if n > 0.0 {
            return z / n;
        }
    }
}

/// `θ* = Y · Z/‖Z‖` with `Y ~ U[0, W]` and `Z ~ N(0, I_d)`.
pub fn sample_theta_star<R: Rng + ?Sized>(d: usize, w: f64, rng: &mut R) -> DVector<f64> {
    let dir = gaussian_direction(d, rng);
    if w <= 0.0 {
        return DVector::zeros(d);
    }
    dir * rng.random_range(0.0..=w)
}

/// Epoch index `floor(log2 t) + 1` of period `t ≥ 1`.
pub fn adversarial_epoch(t: usize) -> usize {
    assert!(t >= 1, "periods are 1-based");
    (usize::BITS - t.leading_zeros()) as usize
}

/// One unit-norm context row of the given kind for period `t`.
pub fn gen_row<R: Rng + ?Sized>(kind: ContextKind, t: usize, d: usize, rng: &mut R) -> Result<DVector<f64>> {
    match kind {
        ContextKind::Gaussian => Ok(gaussian_direction(d, rng)),
        ContextKind::Exponential => Ok(exponential_direction(d, rng)),
        ContextKind::AdversarialEpoch => {
            if d != 2 {
                return Err(Error::invalid("adversarial_epoch contexts require d = 2"));
            }
            if t == 0 {
                return Err(Error::invalid("periods are 1-based"));
            }
            Ok(if adversarial_epoch(t) % 2 == 0 {
                DVector::from_vec(vec![0.0, 1.0])
            } else {
                DVector::from_vec(vec![1.0, 0.0])
            })
        }
    }
}

/// A `k × d` context for period `t`.
pub fn gen_context<R: Rng + ?Sized>(kind: ContextKind, t: usize, d: usize, k: usize, rng: &mut R) -> Result<ContextMatrix> {
    if k == 0 || d == 0 {
        return Err(Error::invalid("contexts need k ≥ 1 and d ≥ 1"));
    }
    if kind == ContextKind::AdversarialEpoch && k != 1 {
        return Err(Error::invalid("adversarial_epoch contexts are single-row (k = 1)"));
    }
    let mut m = DMatrix::zeros(k, d);
    for j in 0..k {
        m.set_row(j, &gen_row(kind, t, d, rng)?.transpose());
    }
    ContextMatrix::from_matrix(m)
}

/// Categorical draw over `{0 (no purchase), 1, …, k}`.
pub fn sample_purchase<R: Rng + ?Sized>(probs: &ProbVector, rng: &mut R) -> PurchaseOutcome {
    // ProbVector entries are non-negative and sum to one, so the weights are valid.
    let dist = WeightedIndex::new(probs.as_slice()).expect("probability vector has positive mass");
    PurchaseOutcome::new(dist.sample(rng), probs.items()).expect("index within range")
}

/// A drawn pricing instance with its generator diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PricingInstance {
    pub params: PricingParams,
    /// Fraction of probe rows with `xᵀα ≥ L`.
    pub acceptance_rate: f64,
    pub probe_size: usize,
}

/// Draws `(θ*, α*)` with `‖(θ*, α*)‖ ≤ W` and `α*` on the positive orthant.
///
/// `‖α*‖ ~ U[(L + W)/2, W]` and `θ*` uses the remaining norm budget. The row acceptance
/// rate of the context distribution is probed on the parameter stream; rates below
/// [`MIN_ACCEPTANCE`] are reported as configuration errors. Adversarial contexts need
/// both basis rows to be feasible, so `α*` is redrawn until they are.
pub fn sample_pricing_params<R: Rng + ?Sized>(
    d: usize,
    w: f64,
    l: f64,
    kind: ContextKind,
    rng: &mut R,
) -> Result<PricingInstance> {
    if d == 0 || !(w > 0.0) || !(l > 0.0) {
        return Err(Error::invalid(format!("pricing instances need d ≥ 1, W > 0, L > 0 (got d={d}, W={w}, L={l})")));
    }
    if l > w {
        return Err(Error::config(format!("L = {l} exceeds W = {w}: no unit context can satisfy xᵀα ≥ L")));
    }
    let draw_alpha = |rng: &mut R| -> DVector<f64> {
        let a = rng.random_range((l + w) / 2.0..=w);
        exponential_direction(d, rng).map(f64::abs) * a
    };
    let alpha = match kind {
        ContextKind::AdversarialEpoch => {
            if d != 2 {
                return Err(Error::invalid("adversarial_epoch contexts require d = 2"));
            }
            if l * std::f64::consts::SQRT_2 > w {
                return Err(Error::config(format!(
                    "adversarial contexts need both α coordinates ≥ L, impossible with L = {l}, W = {w}"
                )));
            }
            let mut found = None;
            for _ in 0..MAX_PARAM_ATTEMPTS {
                let a = draw_alpha(rng);
                if a[0] >= l && a[1] >= l {
                    found = Some(a);
                    break;
                }
            }
            found.ok_or_else(|| {
                Error::config(format!("could not draw α with both coordinates ≥ L = {l} for W = {w}"))
            })?
        }
        _ => draw_alpha(rng),
    };
    let budget = (w * w - alpha.norm_squared()).max(0.0).sqrt();
    let theta = sample_theta_star(d, budget, rng);
    let params = PricingParams::new(theta, alpha)?;

    let (accepted, probe_size) = match kind {
        ContextKind::AdversarialEpoch => (2, 2),
        _ => {
            let mut hits = 0;
            for _ in 0..PROBE_BATCH {
                if gen_row(kind, 1, d, rng)?.dot(&params.alpha) >= l {
                    hits += 1;
                }
            }
            (hits, PROBE_BATCH)
        }
    };
    let acceptance_rate = accepted as f64 / probe_size as f64;
    if acceptance_rate < MIN_ACCEPTANCE {
        return Err(Error::config(format!(
            "context acceptance rate {acceptance_rate:.4} is below {MIN_ACCEPTANCE}: L = {l} is too large for W = {w}, d = {d}"
        )));
    }
    Ok(PricingInstance {
        params,
        acceptance_rate,
        probe_size,
    })
}

/// Rejection sampler for pricing contexts satisfying `xᵀα* ≥ L` row by row.
///
/// Rows are independent, so row-wise rejection draws exactly the context law
/// conditioned on the whole matrix being feasible.
#[derive(Debug, Clone)]
pub struct FeasibleContextSampler {
    pub kind: ContextKind,
    pub d: usize,
    pub k: usize,
    pub alpha: DVector<f64>,
    pub l: f64,
    /// Rows drawn and rows accepted so far.
    pub drawn: u64,
    pub accepted: u64,
}

impl FeasibleContextSampler {
    pub fn new(kind: ContextKind, d: usize, k: usize, alpha: DVector<f64>, l: f64) -> Self {
        FeasibleContextSampler {
            kind,
            d,
            k,
            alpha,
            l,
            drawn: 0,
            accepted: 0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, t: usize, rng: &mut R) -> Result<ContextMatrix> {
        if self.kind == ContextKind::AdversarialEpoch && self.k != 1 {
            return Err(Error::invalid("adversarial_epoch contexts are single-row (k = 1)"));
        }
        let limit = (100.0 / MIN_ACCEPTANCE) as u64;
        let mut m = DMatrix::zeros(self.k, self.d);
        for j in 0..self.k {
            let mut tries = 0;
            loop {
                let row = gen_row(self.kind, t, self.d, rng)?;
                self.drawn += 1;
                tries += 1;
                if row.dot(&self.alpha) >= self.l {
                    self.accepted += 1;
                    m.set_row(j, &row.transpose());
                    break;
                }
                if tries >= limit {
                    return Err(Error::Infeasible(format!(
                        "no context row with xᵀα ≥ {} after {tries} draws at t = {t}",
                        self.l
                    )));
                }
            }
        }
        ContextMatrix::from_matrix(m)
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.drawn == 0 {
            1.0
        } else {
            self.accepted as f64 / self.drawn as f64
        }
    }
}
