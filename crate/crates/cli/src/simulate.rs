use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};
use clap::ValueEnum;
use headway_core::analytics::{route_metrics, ObservedDay};
use headway_core::dss::{export_prediction_feed, write_feed};
use headway_core::io::write_events;
use headway_core::policy::QNetwork;
use headway_core::sim::{run_replication, EvenHeadway, HoldingPolicy, NoControl, ReplicationLog, RlPolicy};
use rayon::prelude::*;

use crate::{require_file, scenario_at, usage, ComplianceArg};

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    scenario: PathBuf,
    /// Policies to run on the same seeds; repeat the flag to compare.
    #[arg(long = "policy", value_enum, default_values_t = [PolicyArg::None])]
    policies: Vec<PolicyArg>,
    /// Q-network for `--policy rl`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    replications: u64,
    /// Replication k runs with seed + k; defaults to the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = ComplianceArg::Scenario)]
    compliance: ComplianceArg,
    /// Directory for per-replication event logs and summary.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Export the first replication of the first policy as a prediction feed.
    #[arg(long)]
    feed_out: Option<PathBuf>,
    #[arg(long, default_value_t = 120)]
    feed_interval: i64,
    #[arg(long, default_value_t = 900)]
    feed_lookahead: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    None,
    EvenHeadway,
    Rl,
}

impl PolicyArg {
    fn label(self) -> &'static str {
        match self {
            PolicyArg::None => "none",
            PolicyArg::EvenHeadway => "even-headway",
            PolicyArg::Rl => "rl",
        }
    }
}

struct Replication {
    seed: u64,
    mean_wait: f64,
    headway_wait: f64,
    unserved: usize,
    log: ReplicationLog,
}

pub fn run(a: Args) -> Result<()> {
    let scenario = a.compliance.apply(scenario_at(&a.scenario)?);
    if a.replications == 0 {
        return Err(usage(anyhow!("--replications must be at least 1")));
    }
    let net = if a.policies.contains(&PolicyArg::Rl) {
        let path = a.model.as_ref().ok_or_else(|| usage(anyhow!("--policy rl needs --model")))?;
        require_file(path, "model")?;
        Some(QNetwork::load(path, Some(&scenario.thresholds)).map_err(usage)?)
    } else {
        None
    };
    let base_seed = a.seed.unwrap_or(scenario.seed);
    let seeds: Vec<u64> = (0..a.replications).map(|k| base_seed + k).collect();

    let mut results = Vec::new();
    for &policy in &a.policies {
        let reps: Vec<Replication> = seeds
            .par_iter()
            .map(|&seed| {
                let mut p: Box<dyn HoldingPolicy> = match policy {
                    PolicyArg::None => Box::new(NoControl),
                    PolicyArg::EvenHeadway => Box::new(EvenHeadway),
                    PolicyArg::Rl => Box::new(RlPolicy { net: net.clone().expect("model loaded") }),
                };
                let log = run_replication(&scenario.with_seed(seed), p.as_mut())
                    .with_context(|| format!("policy {} seed {seed}", policy.label()))?;
                let headway_wait = route_metrics(&[ObservedDay::from_log(&log)])?.wait_minutes;
                Ok(Replication {
                    seed,
                    mean_wait: log.mean_wait().unwrap_or(0.0),
                    headway_wait,
                    unserved: log.unserved(),
                    log,
                })
            })
            .collect::<Result<_>>()?;
        results.push((policy, reps));
    }

    if let Some(dir) = &a.out {
        write_outputs(dir, &results)?;
    }
    if let Some(path) = &a.feed_out {
        let log = &results[0].1[0].log;
        let feed = export_prediction_feed(log, &scenario.route.control_stops, a.feed_interval, a.feed_lookahead);
        write_feed(path, &feed)?;
    }
    print!("{}", summary(&results));
    Ok(())
}

fn write_outputs(dir: &std::path::Path, results: &[(PolicyArg, Vec<Replication>)]) -> Result<()> {
    let mut csv = String::from("policy,replication,seed,mean_wait_s,headway_wait_min,unserved\n");
    for (policy, reps) in results {
        let sub = dir.join(policy.label());
        std::fs::create_dir_all(&sub).with_context(|| sub.display().to_string())?;
        for (k, r) in reps.iter().enumerate() {
            write_events(&sub.join(format!("events-{:04}.csv", r.seed)), &r.log.events())?;
            let _ = writeln!(
                csv,
                "{},{k},{},{:.3},{:.4},{}",
                policy.label(),
                r.seed,
                r.mean_wait,
                r.headway_wait,
                r.unserved
            );
        }
    }
    let path = dir.join("summary.csv");
    std::fs::write(&path, csv).with_context(|| path.display().to_string())
}

fn summary(results: &[(PolicyArg, Vec<Replication>)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<14} {:>5} {:>14} {:>18}", "policy", "reps", "mean wait (s)", "headway wait (min)");
    for (policy, reps) in results {
        let n = reps.len() as f64;
        let wait = reps.iter().map(|r| r.mean_wait).sum::<f64>() / n;
        let hw = reps.iter().map(|r| r.headway_wait).sum::<f64>() / n;
        let _ = writeln!(out, "{:<14} {:>5} {:>14.2} {:>18.3}", policy.label(), reps.len(), wait, hw);
    }
    let Some((base_policy, base)) = results.first() else { return out };
    for (policy, reps) in &results[1..] {
        let lower = reps.iter().zip(base).filter(|(r, b)| r.mean_wait < b.mean_wait).count();
        let diff = reps.iter().zip(base).map(|(r, b)| r.mean_wait - b.mean_wait).sum::<f64>() / reps.len() as f64;
        let _ = writeln!(
            out,
            "{} vs {}: lower wait in {lower}/{} paired seeds, mean difference {diff:+.2} s",
            policy.label(),
            base_policy.label(),
            reps.len()
        );
    }
    out
}
