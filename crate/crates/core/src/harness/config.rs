//! Plain-text `key=value` experiment configs with dotted sections.
//!
//! ```text
//! # ONSSC on Gaussian contexts
//! problem=pricing
//! policy=onssc
//! horizon=10000
//! seeds=0..20
//! env.d=2
//! env.w=1
//! env.context_kind=gaussian
//! ```
//!
//! Lines starting with `#` are comments. Later sources (CLI flags) override earlier
//! ones key by key; unknown keys are errors.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::{ContextKind, EnvConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    Pricing,
    Assortment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Algorithm 1 (ONS with self-concordant step and price shocks).
    Onssc,
    /// Online Newton Step baseline driven by the exp-concavity constant.
    Onsp,
    OfuMnl,
    /// ONSSC specialised to one product with a known unit-free price coefficient, no shocks.
    Corollary1,
    /// Acts on the true parameters; zero regret unless shocks are switched on.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityKind {
    Learned,
    Known,
}

macro_rules! string_enum {
    ($ty:ident { $($name:literal => $variant:ident),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    other => Err(Error::config(format!(
                        concat!("unknown ", stringify!($ty), " `{}` (expected one of: ", $($name, " "),+, ")"),
                        other
                    ))),
                }
            }
        }
    };
}

string_enum!(Problem { "pricing" => Pricing, "assortment" => Assortment });
string_enum!(PolicyKind {
    "onssc" => Onssc,
    "onsp" => Onsp,
    "ofu_mnl" => OfuMnl,
    "corollary1" => Corollary1,
    "oracle" => Oracle,
});
string_enum!(SensitivityKind { "learned" => Learned, "known" => Known });

/// Optional policy settings; `None` means the policy's own default.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PolicyKnobs {
    /// OFU-MNL confidence level (default `1/(K²T²)`).
    pub delta: Option<f64>,
    /// ONSP exp-concavity constant.
    pub kappa: Option<f64>,
    /// ONSP initial regularization.
    pub epsilon: Option<f64>,
    /// Random price shocks (default on for learned sensitivities, off otherwise).
    pub shocks: Option<bool>,
    pub fixed_point_tol: Option<f64>,
    pub mle_tol: Option<f64>,
    pub refit_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: Problem,
    pub policy: PolicyKind,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    /// Worker threads for seed-level parallelism (0 = all cores).
    pub jobs: usize,
    pub out: PathBuf,
    /// `env.seed` is ignored; each replication uses one entry of `seeds`.
    pub env: EnvConfig,
    pub sensitivity: SensitivityKind,
    /// Price coefficient for `sensitivity = known`.
    pub known_sensitivity: f64,
    pub knobs: PolicyKnobs,
}

/// Default seed counts: 20 replications per pricing run, 10 for assortment runs and
/// for `compare`.
pub const DEFAULT_PRICING_SEEDS: u64 = 20;
pub const DEFAULT_COMPARISON_SEEDS: u64 = 10;

const KEYS: &[&str] = &[
    "problem",
    "policy",
    "horizon",
    "seeds",
    "jobs",
    "out",
    "env.d",
    "env.k",
    "env.n",
    "env.w",
    "env.l",
    "env.context_kind",
    "env.sensitivity",
    "env.known_sensitivity",
    "policy.delta",
    "policy.kappa",
    "policy.epsilon",
    "policy.shocks",
    "policy.fixed_point_tol",
    "policy.mle_tol",
    "policy.refit_every",
];

/// Raw `key → value` pairs before resolution.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues(BTreeMap<String, String>);

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
            let key = canonical_key(k.trim());
            if !KEYS.contains(&key.as_str()) {
                return Err(Error::config(format!("line {}: unknown key `{}`", n + 1, k.trim())));
            }
            if map.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::config(format!("line {}: duplicate key `{key}`", n + 1)));
            }
        }
        Ok(KeyValues(map))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    /// Sets (or overrides) one key.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        let key = canonical_key(key);
        if !KEYS.contains(&key.as_str()) {
            return Err(Error::config(format!("unknown key `{key}`")));
        }
        self.0.insert(key, value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    /// Resolves the keys into a validated config; `default_seeds` applies when `seeds`
    /// is unset (pass `None` for the per-problem default).
    pub fn resolve(&self, default_seeds: Option<u64>) -> Result<ExperimentConfig> {
        let problem: Problem = self.parsed("problem")?.unwrap_or(Problem::Pricing);
        let policy: PolicyKind = self.parsed("policy")?.unwrap_or(match problem {
            Problem::Pricing => PolicyKind::Onssc,
            Problem::Assortment => PolicyKind::OfuMnl,
        });
        let seeds = match self.get("seeds") {
            Some(s) => parse_seeds(s)?,
            None => {
                let n = default_seeds.unwrap_or(match problem {
                    Problem::Pricing => DEFAULT_PRICING_SEEDS,
                    Problem::Assortment => DEFAULT_COMPARISON_SEEDS,
                });
                (0..n).collect()
            }
        };
        let cfg = ExperimentConfig {
            problem,
            policy,
            horizon: self.parsed("horizon")?.unwrap_or(10_000),
            seeds,
            jobs: self.parsed("jobs")?.unwrap_or(0),
            out: self.get("out").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out")),
            env: EnvConfig {
                d: self.parsed("env.d")?.unwrap_or(2),
                k: self.parsed("env.k")?.unwrap_or(1),
                n: self.parsed("env.n")?.unwrap_or(10),
                w: self.parsed("env.w")?.unwrap_or(1.0),
                l: self.parsed("env.l")?.unwrap_or(0.5),
                context_kind: self.parsed("env.context_kind")?.unwrap_or(ContextKind::Gaussian),
                seed: 0,
            },
            sensitivity: self.parsed("env.sensitivity")?.unwrap_or(if policy == PolicyKind::Corollary1 {
                SensitivityKind::Known
            } else {
                SensitivityKind::Learned
            }),
            known_sensitivity: self.parsed("env.known_sensitivity")?.unwrap_or(1.0),
            knobs: PolicyKnobs {
                delta: self.parsed("policy.delta")?,
                kappa: self.parsed("policy.kappa")?,
                epsilon: self.parsed("policy.epsilon")?,
                shocks: self.parsed("policy.shocks")?,
                fixed_point_tol: self.parsed("policy.fixed_point_tol")?,
                mle_tol: self.parsed("policy.mle_tol")?,
                refit_every: self.parsed("policy.refit_every")?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::config(format!("invalid value `{v}` for `{key}`: {e}")))
            })
            .transpose()
    }
}

fn canonical_key(key: &str) -> String {
    match key {
        "T" | "t" => "horizon".to_string(),
        other => other.to_string(),
    }
}

/// `a,b,c`, `a..b` (half-open) or a mix such as `0..5,9`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = |part: &str| Error::config(format!("invalid seed list entry `{part}`"));
    let mut seeds = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad(part))?;
            let b: u64 = b.trim().parse().map_err(|_| bad(part))?;
            if b <= a {
                return Err(bad(part));
            }
            seeds.extend(a..b);
        } else {
            seeds.push(part.parse().map_err(|_| bad(part))?);
        }
    }
    if seeds.is_empty() {
        return Err(Error::config("seed list is empty"));
    }
    Ok(seeds)
}

impl ExperimentConfig {
    /// Defaults with the given problem/policy; handy for programmatic runs.
    pub fn new(problem: Problem, policy: PolicyKind) -> Result<Self> {
        let mut kv = KeyValues::default();
        kv.set("problem", problem.to_string())?;
        kv.set("policy", policy.to_string())?;
        kv.resolve(None)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("horizon must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seed list is empty"));
        }
        let pricing = self.problem == Problem::Pricing;
        let known = self.sensitivity == SensitivityKind::Known;
        if !(pricing && known) {
            self.env.validate(pricing)?;
        } else {
            // The lower bound L plays no role with a known price coefficient.
            let mut env = self.env.clone();
            env.l = self.known_sensitivity;
            env.validate(true)?;
            if !(self.known_sensitivity > 0.0) {
                return Err(Error::config("env.known_sensitivity must be positive"));
            }
        }
        if self.env.context_kind == ContextKind::AdversarialEpoch {
            let rows = if pricing { self.env.k } else { self.env.n };
            if rows != 1 {
                return Err(Error::config("adversarial_epoch contexts have a single row per period"));
            }
        }
        let compatible = match (self.problem, self.policy) {
            (Problem::Pricing, PolicyKind::Onssc | PolicyKind::Onsp | PolicyKind::Corollary1 | PolicyKind::Oracle) => true,
            (Problem::Assortment, PolicyKind::OfuMnl | PolicyKind::Oracle) => true,
            _ => false,
        };
        if !compatible {
            return Err(Error::config(format!(
                "policy `{}` cannot be used for the {} problem",
                self.policy, self.problem
            )));
        }
        if self.policy == PolicyKind::Corollary1 && (!known || self.env.k != 1) {
            return Err(Error::config(
                "corollary1 requires env.sensitivity=known and env.k=1",
            ));
        }
        if self.policy == PolicyKind::Corollary1 && self.knobs.shocks == Some(true) {
            return Err(Error::config("corollary1 runs without price shocks"));
        }
        if !pricing && known {
            return Err(Error::config("env.sensitivity applies to pricing problems only"));
        }
        if let Some(d) = self.knobs.delta {
            if !(d > 0.0 && d < 1.0) {
                return Err(Error::config(format!("policy.delta must lie in (0, 1), got {d}")));
            }
        }
        if let Some(k) = self.knobs.kappa {
            if !(k > 0.0) {
                return Err(Error::config(format!("policy.kappa must be positive, got {k}")));
            }
        }
        if let Some(e) = self.knobs.epsilon {
            if !(e > 0.0) {
                return Err(Error::config(format!("policy.epsilon must be positive, got {e}")));
            }
        }
        if self.knobs.refit_every == Some(0) {
            return Err(Error::config("policy.refit_every must be at least 1"));
        }
        Ok(())
    }

    /// Environment of one replication.
    pub fn env_for(&self, seed: u64) -> EnvConfig {
        EnvConfig { seed, ..self.env.clone() }
    }

    /// Whether pricing runs add random shocks.
    pub fn shocks_enabled(&self) -> bool {
        match self.policy {
            PolicyKind::Corollary1 | PolicyKind::Onsp => false,
            PolicyKind::Oracle => self.knobs.shocks.unwrap_or(false),
            _ => self
                .knobs
                .shocks
                .unwrap_or(self.sensitivity == SensitivityKind::Learned),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_resolve() {
        let kv = KeyValues::parse(
            "# comment\nproblem = pricing\npolicy=onsp\nT=500\nseeds=1..4,9\n\nenv.w=5\nenv.context_kind=exponential\npolicy.kappa=0.01\n",
        )
        .unwrap();
        let cfg = kv.resolve(None).unwrap();
        assert_eq!(cfg.policy, PolicyKind::Onsp);
        assert_eq!(cfg.horizon, 500);
        assert_eq!(cfg.seeds, vec![1, 2, 3, 9]);
        assert_eq!(cfg.env.w, 5.0);
        assert_eq!(cfg.env.context_kind, ContextKind::Exponential);
        assert_eq!(cfg.knobs.kappa, Some(0.01));
        assert_eq!(cfg.knobs.delta, None);
    }

    #[test]
    fn defaults() {
        let cfg = KeyValues::default().resolve(None).unwrap();
        assert_eq!(cfg.problem, Problem::Pricing);
        assert_eq!(cfg.policy, PolicyKind::Onssc);
        assert_eq!(cfg.seeds.len(), 20);
        assert!(cfg.shocks_enabled());
        let cfg = KeyValues::default().resolve(Some(10)).unwrap();
        assert_eq!(cfg.seeds.len(), 10);
        let mut kv = KeyValues::default();
        kv.set("problem", "assortment").unwrap();
        kv.set("env.k", "3").unwrap();
        let cfg = kv.resolve(None).unwrap();
        assert_eq!(cfg.policy, PolicyKind::OfuMnl);
        assert_eq!(cfg.seeds.len(), 10);
        let mut kv = KeyValues::default();
        kv.set("policy", "corollary1").unwrap();
        let cfg = kv.resolve(None).unwrap();
        assert_eq!(cfg.sensitivity, SensitivityKind::Known);
        assert!(!cfg.shocks_enabled());
    }

    #[test]
    fn overrides_replace_file_values() {
        let mut kv = KeyValues::parse("policy=onssc\nhorizon=100").unwrap();
        kv.set("horizon", "7").unwrap();
        kv.set("policy", "onsp").unwrap();
        let cfg = kv.resolve(None).unwrap();
        assert_eq!((cfg.horizon, cfg.policy), (7, PolicyKind::Onsp));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(KeyValues::parse("nonsense").is_err());
        assert!(KeyValues::parse("env.x=1").is_err());
        assert!(KeyValues::parse("env.d=1\nenv.d=2").is_err());
        let bad = [
            "env.d=abc",
            "horizon=0",
            "seeds=",
            "seeds=5..5",
            "problem=assortment\npolicy=onssc",
            "problem=pricing\npolicy=ofu_mnl",
            "policy=corollary1\nenv.k=2",
            "policy=corollary1\nenv.sensitivity=learned",
            "env.context_kind=adversarial_epoch\nenv.d=3",
            "env.context_kind=adversarial_epoch\nenv.k=2",
            "policy.delta=2",
            "problem=assortment\nenv.k=11\nenv.n=10",
        ];
        for text in bad {
            let res = KeyValues::parse(text).and_then(|kv| kv.resolve(None));
            assert!(matches!(res, Err(Error::Config(_))), "accepted `{text}`");
        }
    }
}
