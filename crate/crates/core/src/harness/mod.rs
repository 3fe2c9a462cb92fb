//! Experiment runner: wires environments, policies and exact oracles, computes
//! expected regret, aggregates seeds and writes CSV/JSON.

pub mod config;
pub mod output;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{ExperimentConfig, KeyValues, PolicyKind, PolicyKnobs, Problem, SensitivityKind};
pub use output::{aggregate, emit_csv, read_csv, write_sidecar, AggregateRow, CsvRow, RunMetadata};

use crate::env::{self, FeasibleContextSampler, RngStreams};
use crate::error::{Error, Result};
use crate::mnl::{ChoiceDesign, ContextMatrix, PricingParams};
use crate::ofu::{self, EmpiricalKappa, OfuConfig, OfuMnl};
use crate::ons::{OnsConfig, OnsPricer, OnspConfig, OnspPricer, SensitivityMode, ShockSample};
use crate::price::{self, PricingModel, DEFAULT_FIXED_POINT_TOL};

/// Slack allowed on feasibility checks of posted prices and iterates.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// What the policy did in one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Prices(Vec<f64>),
    Assortment(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: usize,
    pub instant_regret: f64,
    pub cum_regret: f64,
    /// `‖γ_t − γ*‖` (pricing) or `‖θ̂_t − θ*‖` (assortment) for the estimate used at `t`.
    pub est_error: f64,
    /// Pricing: running minimum of `q_j q_0` at the posted prices. Assortment: `κ*_{2,t}`.
    pub kappa_diag: f64,
    pub action: Action,
}

/// Generator parameters of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceInfo {
    pub theta: Vec<f64>,
    pub alpha: Option<Vec<f64>>,
    pub known_sensitivity: Option<f64>,
    /// Probe acceptance rate of the context rejection sampler.
    pub probe_acceptance: Option<f64>,
    /// Realized acceptance rate over the run.
    pub realized_acceptance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed: u64,
    pub policy: PolicyKind,
    pub instance: InstanceInfo,
    pub records: Vec<TrajectoryRecord>,
}

impl Trajectory {
    pub fn final_regret(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.cum_regret)
    }

    /// Cumulative regret after `t` periods (1-based; 0 gives 0).
    pub fn regret_at(&self, t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.records[t - 1].cum_regret
        }
    }
}

/// Runs every seed of `cfg`, in parallel over `cfg.jobs` workers; results are in seed
/// order. The first failing replication aborts the run with its seed in the message.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    let one = |&seed: &u64| -> Result<Trajectory> {
        let res = match cfg.problem {
            Problem::Pricing => run_pricing_seed(cfg, seed),
            Problem::Assortment => run_assortment_seed(cfg, seed),
        };
        res.map_err(|e| Error::Replication {
            seed,
            source: Box::new(e),
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    pool.install(|| cfg.seeds.par_iter().map(one).collect())
}

pub fn run_pricing(cfg: &ExperimentConfig) -> Result<Vec<Trajectory>> {
    if cfg.problem != Problem::Pricing {
        return Err(Error::config("run_pricing needs problem=pricing"));
    }
    run(cfg)
}

pub fn run_assortment(cfg: &ExperimentConfig) -> Result<Vec<Trajectory>> {
    if cfg.problem != Problem::Assortment {
        return Err(Error::config("run_assortment needs problem=assortment"));
    }
    run(cfg)
}

enum PricingLearner {
    Ons(OnsPricer),
    Onsp(OnspPricer),
    Oracle,
}

struct PricingEnv {
    truth: PricingModel,
    sampler: Option<FeasibleContextSampler>,
    info: InstanceInfo,
}

fn pricing_env(cfg: &ExperimentConfig, streams: &mut RngStreams) -> Result<PricingEnv> {
    let e = &cfg.env;
    Ok(match cfg.sensitivity {
        SensitivityKind::Learned => {
            let inst = env::sample_pricing_params(e.d, e.w, e.l, e.context_kind, &mut streams.params)?;
            let PricingParams { theta, alpha } = inst.params.clone();
            PricingEnv {
                truth: PricingModel::Joint(inst.params),
                sampler: Some(FeasibleContextSampler::new(e.context_kind, e.d, e.k, alpha.clone(), e.l)),
                info: InstanceInfo {
                    theta: theta.as_slice().to_vec(),
                    alpha: Some(alpha.as_slice().to_vec()),
                    known_sensitivity: None,
                    probe_acceptance: Some(inst.acceptance_rate),
                    realized_acceptance: None,
                },
            }
        }
        SensitivityKind::Known => {
            let theta = env::sample_theta_star(e.d, e.w, &mut streams.params);
            PricingEnv {
                info: InstanceInfo {
                    theta: theta.as_slice().to_vec(),
                    alpha: None,
                    known_sensitivity: Some(cfg.known_sensitivity),
                    probe_acceptance: None,
                    realized_acceptance: None,
                },
                truth: PricingModel::KnownSensitivity {
                    theta,
                    sensitivity: cfg.known_sensitivity,
                },
                sampler: None,
            }
        }
    })
}

fn sensitivity_mode(cfg: &ExperimentConfig) -> SensitivityMode {
    match cfg.sensitivity {
        SensitivityKind::Learned => SensitivityMode::Learned,
        SensitivityKind::Known => SensitivityMode::Known(cfg.known_sensitivity),
    }
}

fn pricing_learner(cfg: &ExperimentConfig) -> Result<PricingLearner> {
    let e = &cfg.env;
    let tol = cfg.knobs.fixed_point_tol.unwrap_or(DEFAULT_FIXED_POINT_TOL);
    let sensitivity = sensitivity_mode(cfg);
    let l = sensitivity.sensitivity_floor(e.l);
    Ok(match cfg.policy {
        PolicyKind::Onssc | PolicyKind::Corollary1 => PricingLearner::Ons(OnsPricer::new(
            OnsConfig {
                w: e.w,
                l,
                k_max: e.k,
                sensitivity,
                shocks: cfg.shocks_enabled(),
                fixed_point_tol: tol,
            },
            e.d,
        )?),
        PolicyKind::Onsp => {
            let mut ocfg = OnspConfig {
                w: e.w,
                l,
                k_max: e.k,
                sensitivity,
                kappa: 1.0,
                epsilon: cfg.knobs.epsilon,
                fixed_point_tol: tol,
            };
            ocfg.kappa = match cfg.knobs.kappa {
                Some(k) => k,
                None => ocfg.default_kappa()?,
            };
            PricingLearner::Onsp(OnspPricer::new(ocfg, e.d)?)
        }
        PolicyKind::Oracle => PricingLearner::Oracle,
        PolicyKind::OfuMnl => return Err(Error::config("ofu_mnl is an assortment policy")),
    })
}

fn check_pricing_feasibility(
    estimate: &PricingModel,
    ctx: &ContextMatrix,
    prices: &[f64],
    w: f64,
    l: f64,
    p_max: f64,
    t: usize,
) -> Result<()> {
    let norm = estimate.norm();
    if norm > w + FEASIBILITY_TOL {
        return Err(Error::Infeasible(format!("t = {t}: ‖γ‖ = {norm} exceeds W = {w}")));
    }
    if let PricingModel::Joint(p) = estimate {
        let min_sens = ctx.scores(&p.alpha)?.min();
        if min_sens < l - FEASIBILITY_TOL {
            return Err(Error::Infeasible(format!("t = {t}: xᵀα = {min_sens} below L = {l}")));
        }
    }
    if let Some(p) = prices.iter().find(|&&p| !(p >= -FEASIBILITY_TOL && p <= p_max + FEASIBILITY_TOL)) {
        return Err(Error::Infeasible(format!("t = {t}: price {p} outside [0, {p_max}]")));
    }
    Ok(())
}

fn run_pricing_seed(cfg: &ExperimentConfig, seed: u64) -> Result<Trajectory> {
    let e = cfg.env_for(seed);
    let tol = cfg.knobs.fixed_point_tol.unwrap_or(DEFAULT_FIXED_POINT_TOL);
    let mut streams = RngStreams::new(seed);
    let mut world = pricing_env(cfg, &mut streams)?;
    let mut learner = pricing_learner(cfg)?;
    let sensitivity = sensitivity_mode(cfg);
    let l = sensitivity.sensitivity_floor(e.l);
    let p_max = price::p_max(e.w, l, e.k)?;
    let shocks = cfg.shocks_enabled();
    let truth_vec = world.truth.param_vector();

    let mut records = Vec::with_capacity(cfg.horizon);
    let mut cum = 0.0;
    let mut kappa = EmpiricalKappa::default();
    for t in 1..=cfg.horizon {
        let ctx = match world.sampler.as_mut() {
            Some(s) => s.sample(t, &mut streams.contexts)?,
            None => env::gen_context(e.context_kind, t, e.d, e.k, &mut streams.contexts)?,
        };
        let (prices, estimate) = match &mut learner {
            PricingLearner::Ons(p) => {
                let dec = p.select_prices(&ctx, &mut streams.shocks)?;
                (dec.prices, p.estimate())
            }
            PricingLearner::Onsp(p) => (p.select_prices(&ctx)?.prices, p.estimate()),
            PricingLearner::Oracle => {
                let greedy = world.truth.optimal_prices(&ctx, tol)?;
                let shock = if shocks {
                    ShockSample::draw(t, e.w, ctx.len(), &mut streams.shocks)
                } else {
                    ShockSample::none(ctx.len())
                };
                let prices = greedy.iter().zip(&shock.deltas).map(|(g, s)| g + s).collect();
                (prices, world.truth.clone())
            }
        };
        check_pricing_feasibility(&estimate, &ctx, &prices, e.w, l, p_max, t)?;

        let best = world.truth.optimal_prices(&ctx, tol)?;
        let q = world.truth.probs(&ctx, &prices)?;
        let gap = world.truth.revenue(&ctx, &best)? - price::revenue_from_probs(&q, &prices);
        if gap < -1e-8 {
            return Err(Error::Infeasible(format!(
                "t = {t}: posted prices beat the exact optimum by {}",
                -gap
            )));
        }
        let regret = gap.max(0.0);
        cum += regret;
        let outcome = env::sample_purchase(&q, &mut streams.demand);
        match &mut learner {
            PricingLearner::Ons(p) => p.observe(&ctx, &prices, outcome)?,
            PricingLearner::Onsp(p) => p.observe(&ctx, &prices, outcome)?,
            PricingLearner::Oracle => {}
        }
        records.push(TrajectoryRecord {
            t,
            instant_regret: regret,
            cum_regret: cum,
            est_error: (estimate.param_vector() - &truth_vec).norm(),
            kappa_diag: kappa.update(&q),
            action: Action::Prices(prices),
        });
    }
    world.info.realized_acceptance = world.sampler.as_ref().map(|s| s.acceptance_rate());
    Ok(Trajectory {
        seed,
        policy: cfg.policy,
        instance: world.info,
        records,
    })
}

fn run_assortment_seed(cfg: &ExperimentConfig, seed: u64) -> Result<Trajectory> {
    let e = cfg.env_for(seed);
    let mut streams = RngStreams::new(seed);
    let theta = env::sample_theta_star(e.d, e.w, &mut streams.params);
    let mut learner = match cfg.policy {
        PolicyKind::OfuMnl => {
            let mut ocfg = OfuConfig::new(e.k, e.w, cfg.horizon);
            if let Some(d) = cfg.knobs.delta {
                ocfg.delta = d;
            }
            if let Some(tol) = cfg.knobs.mle_tol {
                ocfg.mle_tol = tol;
            }
            if let Some(r) = cfg.knobs.refit_every {
                ocfg.refit_every = r;
            }
            Some(OfuMnl::new(ocfg, e.d)?)
        }
        PolicyKind::Oracle => None,
        other => return Err(Error::config(format!("{other} is not an assortment policy"))),
    };

    let mut records = Vec::with_capacity(cfg.horizon);
    let mut cum = 0.0;
    for t in 1..=cfg.horizon {
        let cands = env::gen_context(e.context_kind, t, e.d, e.n, &mut streams.contexts)?;
        let best = ofu::optimal_assortment(&theta, &cands, e.k)?;
        let (offered, est) = match learner.as_mut() {
            Some(l) => {
                let s = l.select(&cands)?;
                (s, l.theta_hat().clone())
            }
            None => (best.clone(), theta.clone()),
        };
        let q_best = ChoiceDesign::assortment(&cands, &best)?.probs(&theta)?;
        let q = ChoiceDesign::assortment(&cands, &offered)?.probs(&theta)?;
        let same_set = {
            let (mut a, mut b) = (best.clone(), offered.clone());
            a.sort_unstable();
            b.sort_unstable();
            a == b
        };
        let gap = if same_set { 0.0 } else { q_best.purchase_mass() - q.purchase_mass() };
        if gap < -1e-12 {
            return Err(Error::Infeasible(format!("t = {t}: offered set beats the top-K optimum by {}", -gap)));
        }
        let regret = gap.max(0.0);
        cum += regret;
        let outcome = env::sample_purchase(&q, &mut streams.demand);
        if let Some(l) = learner.as_mut() {
            l.observe(&cands, &offered, outcome)?;
        }
        records.push(TrajectoryRecord {
            t,
            instant_regret: regret,
            cum_regret: cum,
            est_error: (est - &theta).norm(),
            kappa_diag: q_best.outside_products().sum(),
            action: Action::Assortment(offered),
        });
    }
    Ok(Trajectory {
        seed,
        policy: cfg.policy,
        instance: InstanceInfo {
            theta: theta.as_slice().to_vec(),
            alpha: None,
            known_sensitivity: None,
            probe_acceptance: None,
            realized_acceptance: None,
        },
        records,
    })
}

/// Mean cumulative regret over trajectories at period `t`.
pub fn mean_regret_at(trajectories: &[Trajectory], t: usize) -> f64 {
    trajectories.iter().map(|tr| tr.regret_at(t)).sum::<f64>() / trajectories.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ContextKind;

    fn cfg(text: &str) -> ExperimentConfig {
        KeyValues::parse(text).unwrap().resolve(None).unwrap()
    }

    #[test]
    fn oracle_pricing_has_zero_regret() {
        for kind in [ContextKind::Gaussian, ContextKind::Exponential, ContextKind::AdversarialEpoch] {
            let k = if kind == ContextKind::AdversarialEpoch { 1 } else { 2 };
            let c = cfg(&format!(
                "policy=oracle\nhorizon=200\nseeds=0..3\nenv.k={k}\nenv.context_kind={kind}"
            ));
            for tr in run(&c).unwrap() {
                assert_eq!(tr.final_regret(), 0.0);
                assert!(tr.records.iter().all(|r| r.est_error == 0.0));
            }
        }
    }

    #[test]
    fn oracle_with_shocks_pays_only_the_shock_loss() {
        let c = cfg("policy=oracle\nhorizon=1\nseeds=3\npolicy.shocks=true\nenv.k=2");
        let tr = &run(&c).unwrap()[0];
        let r = &tr.records[0];
        assert!(r.instant_regret > 0.0);
        // Second-order loss of a ±1/W shock on a smooth revenue curve.
        assert!(r.instant_regret < 1.0);
        assert_eq!(r.est_error, 0.0);
    }

    #[test]
    fn oracle_assortment_has_zero_regret_and_bounded_kappa() {
        let c = cfg("problem=assortment\npolicy=oracle\nhorizon=100\nseeds=0..2\nenv.d=3\nenv.k=3\nenv.n=8");
        for tr in run(&c).unwrap() {
            assert_eq!(tr.final_regret(), 0.0);
            assert!(tr.records.iter().all(|r| r.kappa_diag > 0.0 && r.kappa_diag <= 1.0));
        }
    }

    #[test]
    fn full_assortment_has_zero_regret() {
        let c = cfg("problem=assortment\nhorizon=30\nseeds=0..2\nenv.d=2\nenv.k=4\nenv.n=4");
        for tr in run(&c).unwrap() {
            assert_eq!(tr.final_regret(), 0.0);
        }
    }

    #[test]
    fn runs_are_deterministic_and_independent_of_jobs() {
        let a = run(&cfg("horizon=60\nseeds=0..4\njobs=1\nenv.k=2")).unwrap();
        let b = run(&cfg("horizon=60\nseeds=0..4\njobs=3\nenv.k=2")).unwrap();
        assert_eq!(a, b);
        let single = run(&cfg("horizon=60\nseeds=2\nenv.k=2")).unwrap();
        assert_eq!(single[0], a[2]);
    }

    #[test]
    fn shocks_do_not_perturb_contexts_or_parameters() {
        let on = run(&cfg("horizon=30\nseeds=5\npolicy.shocks=true")).unwrap();
        let off = run(&cfg("horizon=30\nseeds=5\npolicy.shocks=false")).unwrap();
        assert_eq!(on[0].instance, off[0].instance);
    }

    #[test]
    fn all_pricing_policies_run() {
        for text in [
            "policy=onssc\nenv.k=2",
            "policy=onsp\nenv.k=2",
            "policy=corollary1\nenv.w=5",
            "policy=onsp\nenv.sensitivity=known\nenv.w=5",
            "policy=onssc\nenv.context_kind=adversarial_epoch",
            "policy=onssc\nenv.context_kind=exponential\nenv.d=3",
        ] {
            let c = cfg(&format!("{text}\nhorizon=50\nseeds=0..2"));
            let trs = run(&c).unwrap();
            for tr in trs {
                assert_eq!(tr.records.len(), 50);
                assert!(tr.records.windows(2).all(|w| w[1].cum_regret >= w[0].cum_regret));
            }
        }
    }
}
