use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};
use headway_core::rl::{
    evaluate_waits, mean_of, save_outcome, train, write_curve, PolicyFactory, RlPolicyFactory, TrainConfig,
    TrainError,
};
use headway_core::sim::{ComplianceModel, EvenHeadway, HoldingPolicy, NoControl, SimScenario};

use crate::{require_file, scenario_at, usage};

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    scenario: PathBuf,
    /// Training configuration (TOML); unset keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for curve.csv, best.json, final.json and comparison.csv.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured episode count.
    #[arg(long)]
    episodes: Option<usize>,
    /// Held-out seeds for the closing comparison; 0 skips it.
    #[arg(long, default_value_t = 20)]
    holdout: u64,
    /// First held-out seed.
    #[arg(long, default_value_t = 5000)]
    holdout_seed: u64,
}

pub fn load_config(path: Option<&PathBuf>) -> Result<TrainConfig> {
    let Some(path) = path else { return Ok(TrainConfig::default()) };
    require_file(path, "training config")?;
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    toml::from_str(&text).map_err(|e| usage(anyhow!("{}: {e}", path.display())))
}

pub fn run(a: Args) -> Result<()> {
    let scenario = scenario_at(&a.scenario)?;
    let mut cfg = load_config(a.config.as_ref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(n) = a.episodes {
        cfg.episodes = n;
    }
    let outcome = match train(&scenario, &cfg) {
        Ok(o) => o,
        Err(TrainError::Config(problems)) => return Err(usage(anyhow!("training config: {}", problems.join("; ")))),
        Err(TrainError::Diverged { episode, cause, curve }) => {
            std::fs::create_dir_all(&a.out)?;
            write_curve(&a.out.join("curve.csv"), &curve)?;
            return Err(anyhow!("training diverged in episode {episode}: {cause}"));
        }
        Err(e) => return Err(e.into()),
    };
    save_outcome(&a.out, &outcome)?;
    eprintln!(
        "trained {} episodes, {} gradient steps, best evaluation wait {:.2} s",
        outcome.curve.len(),
        outcome.gradient_steps,
        outcome.best_eval_wait
    );
    if a.holdout == 0 {
        return Ok(());
    }
    let seeds: Vec<u64> = (a.holdout_seed..a.holdout_seed + a.holdout).collect();
    let table = compare(&scenario, &RlPolicyFactory(outcome.best_net.clone()), &seeds)?;
    let path = a.out.join("comparison.csv");
    std::fs::write(&path, &table.csv).with_context(|| path.display().to_string())?;
    print!("{}", table.text);
    Ok(())
}

pub struct Comparison {
    pub text: String,
    pub csv: String,
}

/// Paired held-out comparison of the trained policy against both baselines
/// under full and partial compliance.
pub fn compare(sc: &SimScenario, rl: &dyn PolicyFactory, seeds: &[u64]) -> Result<Comparison> {
    let none = || Box::new(NoControl) as Box<dyn HoldingPolicy + Send>;
    let even = || Box::new(EvenHeadway) as Box<dyn HoldingPolicy + Send>;
    let mut text = format!(
        "held-out seeds {}..{} ({})\n{:<10} {:>10} {:>13} {:>10} {:>8} {:>8} {:>12}\n",
        seeds.first().copied().unwrap_or(0),
        seeds.last().copied().unwrap_or(0),
        seeds.len(),
        "compliance",
        "none (s)",
        "even (s)",
        "rl (s)",
        "rl/none",
        "rl/even",
        "rl<none"
    );
    let mut csv = String::from("compliance,seed,none_wait_s,even_headway_wait_s,rl_wait_s\n");
    for (label, model) in [("full", ComplianceModel::FULL), ("partial", ComplianceModel::PARTIAL)] {
        let sc = sc.with_compliance(model);
        let n = evaluate_waits(&sc, &none, seeds)?;
        let e = evaluate_waits(&sc, &even, seeds)?;
        let r = evaluate_waits(&sc, rl, seeds)?;
        for (k, seed) in seeds.iter().enumerate() {
            let _ = writeln!(csv, "{label},{seed},{:.3},{:.3},{:.3}", n[k], e[k], r[k]);
        }
        let (mn, me, mr) = (mean_of(&n), mean_of(&e), mean_of(&r));
        let wins = r.iter().zip(&n).filter(|(r, n)| r < n).count();
        let _ = writeln!(
            text,
            "{label:<10} {mn:>10.2} {me:>13.2} {mr:>10.2} {:>8.3} {:>8.3} {:>12}",
            mr / mn,
            mr / me,
            format!("{wins}/{}", seeds.len())
        );
    }
    Ok(Comparison { text, csv })
}
