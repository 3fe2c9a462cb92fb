//! CSV trajectories, seed aggregation and the JSON run sidecar.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, PolicyKind};
use super::{InstanceInfo, Trajectory};
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "t,seed,policy,instant_regret,cum_regret,est_error,kappa_diag";

/// One parsed CSV line.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub t: usize,
    pub seed: u64,
    pub policy: String,
    pub instant_regret: f64,
    pub cum_regret: f64,
    pub est_error: f64,
    pub kappa_diag: f64,
}

/// 17 significant digits, enough to round-trip any `f64`.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes one row per `(seed, t)` in the order given (seed-major, then `t`).
pub fn emit_csv(trajectories: &[Trajectory], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "{CSV_HEADER}").map_err(io)?;
    for tr in trajectories {
        for r in &tr.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.t,
                tr.seed,
                tr.policy,
                fmt_f64(r.instant_regret),
                fmt_f64(r.cum_regret),
                fmt_f64(r.est_error),
                fmt_f64(r.kappa_diag)
            )
            .map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::invalid(format!("{}: missing or unexpected CSV header", path.display())));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::invalid(format!("{}: malformed row {}", path.display(), i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(CsvRow {
                t: f[0].parse().map_err(|_| bad())?,
                seed: f[1].parse().map_err(|_| bad())?,
                policy: f[2].to_string(),
                instant_regret: num(f[3])?,
                cum_regret: num(f[4])?,
                est_error: num(f[5])?,
                kappa_diag: num(f[6])?,
            })
        })
        .collect()
}

/// Per-policy, per-period mean and sample standard deviation of cumulative regret.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub policy: PolicyKind,
    pub t: usize,
    pub seeds: usize,
    pub mean: f64,
    pub std: f64,
}

/// Aggregates trajectories policy by policy (in order of first appearance). All
/// trajectories of a policy must share the horizon.
pub fn aggregate(trajectories: &[Trajectory]) -> Result<Vec<AggregateRow>> {
    let mut policies: Vec<PolicyKind> = Vec::new();
    for tr in trajectories {
        if !policies.contains(&tr.policy) {
            policies.push(tr.policy);
        }
    }
    let mut rows = Vec::new();
    for policy in policies {
        let group: Vec<&Trajectory> = trajectories.iter().filter(|t| t.policy == policy).collect();
        let horizon = group[0].records.len();
        if group.iter().any(|g| g.records.len() != horizon) {
            return Err(Error::invalid(format!("trajectories of {policy} have different horizons")));
        }
        let n = group.len() as f64;
        for i in 0..horizon {
            let mean = group.iter().map(|g| g.records[i].cum_regret).sum::<f64>() / n;
            let var = if group.len() > 1 {
                group
                    .iter()
                    .map(|g| (g.records[i].cum_regret - mean).powi(2))
                    .sum::<f64>()
                    / (n - 1.0)
            } else {
                0.0
            };
            rows.push(AggregateRow {
                policy,
                t: i + 1,
                seeds: group.len(),
                mean,
                std: var.sqrt(),
            });
        }
    }
    Ok(rows)
}

/// Last-period row of each policy.
pub fn final_summary(rows: &[AggregateRow]) -> Vec<AggregateRow> {
    let mut out: Vec<AggregateRow> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|o| o.policy == r.policy) {
            Some(o) if r.t > o.t => *o = r.clone(),
            Some(_) => {}
            None => out.push(r.clone()),
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceEntry {
    pub policy: PolicyKind,
    pub seed: u64,
    pub instance: InstanceInfo,
}

/// Contents of the JSON sidecar written next to each CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub package: String,
    pub version: String,
    pub csv: PathBuf,
    pub configs: Vec<ExperimentConfig>,
    pub wall_time_secs: f64,
    pub instances: Vec<InstanceEntry>,
    pub final_summary: Vec<AggregateRow>,
}

impl RunMetadata {
    pub fn new(configs: Vec<ExperimentConfig>, csv: PathBuf, trajectories: &[Trajectory], wall_time_secs: f64) -> Result<Self> {
        Ok(RunMetadata {
            package: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            csv,
            configs,
            wall_time_secs,
            instances: trajectories
                .iter()
                .map(|t| InstanceEntry {
                    policy: t.policy,
                    seed: t.seed,
                    instance: t.instance.clone(),
                })
                .collect(),
            final_summary: final_summary(&aggregate(trajectories)?),
        })
    }
}

pub fn write_sidecar(meta: &RunMetadata, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::invalid(format!("cannot serialize run metadata: {e}")))?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::super::{Action, TrajectoryRecord};
    use super::*;

    fn traj(seed: u64, policy: PolicyKind, regrets: &[f64]) -> Trajectory {
        let mut cum = 0.0;
        Trajectory {
            seed,
            policy,
            instance: InstanceInfo {
                theta: vec![0.1],
                alpha: None,
                known_sensitivity: Some(1.0),
                probe_acceptance: None,
                realized_acceptance: None,
            },
            records: regrets
                .iter()
                .enumerate()
                .map(|(i, &r)| {
                    cum += r;
                    TrajectoryRecord {
                        t: i + 1,
                        instant_regret: r,
                        cum_regret: cum,
                        est_error: 1.0 / (i + 1) as f64,
                        kappa_diag: 0.2,
                        action: Action::Prices(vec![1.0]),
                    }
                })
                .collect(),
        }
    }

    #[test]
    fn empty_csv_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/empty.csv");
        emit_csv(&[], &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), format!("{CSV_HEADER}\n"));
        assert!(read_csv(&p).unwrap().is_empty());
    }

    #[test]
    fn csv_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let trs = vec![
            traj(4, PolicyKind::Onssc, &[0.1, 1.0 / 3.0, std::f64::consts::PI * 1e-17]),
            traj(2, PolicyKind::Onssc, &[0.0, 2.5e300, 1e-300]),
        ];
        emit_csv(&trs, &p).unwrap();
        let rows = read_csv(&p).unwrap();
        assert_eq!(rows.len(), 6);
        let mut i = 0;
        for tr in &trs {
            for r in &tr.records {
                let row = &rows[i];
                assert_eq!((row.t, row.seed, row.policy.as_str()), (r.t, tr.seed, "onssc"));
                assert_eq!(row.instant_regret.to_bits(), r.instant_regret.to_bits());
                assert_eq!(row.cum_regret.to_bits(), r.cum_regret.to_bits());
                assert_eq!(row.est_error.to_bits(), r.est_error.to_bits());
                i += 1;
            }
        }
    }

    #[test]
    fn csv_errors_carry_the_path() {
        let err = read_csv(Path::new("/nonexistent/x.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.csv"));
    }

    #[test]
    fn aggregation_examples() {
        let one = traj(0, PolicyKind::Onsp, &[1.0, 2.0]);
        let rows = aggregate(std::slice::from_ref(&one)).unwrap();
        assert_eq!(rows.iter().map(|r| r.mean).collect::<Vec<_>>(), vec![1.0, 3.0]);
        assert!(rows.iter().all(|r| r.std == 0.0));

        let rows = aggregate(&[one.clone(), traj(1, PolicyKind::Onsp, &[1.0, 2.0])]).unwrap();
        assert!(rows.iter().all(|r| r.std == 0.0));

        // Recompute by hand: cum regrets at t = 2 are 3, 5, 10.
        let a = traj(0, PolicyKind::Onssc, &[1.0, 2.0]);
        let b = traj(1, PolicyKind::Onssc, &[2.0, 3.0]);
        let c = traj(2, PolicyKind::Onssc, &[4.0, 6.0]);
        let rows = aggregate(&[a.clone(), b.clone(), c.clone(), one.clone()]).unwrap();
        let last = final_summary(&rows);
        assert_eq!(last.len(), 2);
        assert_eq!(last[0].policy, PolicyKind::Onssc);
        assert!((last[0].mean - 6.0).abs() < 1e-15);
        let var: f64 = [9.0, 1.0, 16.0].iter().sum::<f64>() / 2.0;
        assert!((last[0].std - var.sqrt()).abs() < 1e-15);
        assert_eq!((last[1].policy, last[1].mean), (PolicyKind::Onsp, 3.0));

        // Concatenating seed batches in any order gives the same summary.
        let swapped = aggregate(&[c, one.clone(), a, b]).unwrap();
        let mut lhs = rows.clone();
        let mut rhs = swapped;
        lhs.sort_by(|x, y| (x.policy as u8, x.t).cmp(&(y.policy as u8, y.t)));
        rhs.sort_by(|x, y| (x.policy as u8, x.t).cmp(&(y.policy as u8, y.t)));
        for (x, y) in lhs.iter().zip(&rhs) {
            assert!((x.mean - y.mean).abs() < 1e-12 && (x.std - y.std).abs() < 1e-12);
        }

        assert!(aggregate(&[one, traj(5, PolicyKind::Onsp, &[1.0])]).is_err());
    }
}
