use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};
use headway_core::dss::{read_feed, replay_transcript, NoPacer, Pacer, Service, ServiceConfig, SleepPacer};
use headway_core::policy::QNetwork;
use headway_server::{replay_into, serve as serve_http, AppState, ServerConfig};

use crate::{require_file, scenario_at, usage};

#[derive(Debug, clap::Args)]
pub struct ServeArgs {
    /// Service configuration (TOML). HEADWAY_* environment variables override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario file; overrides the config's.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    bind: Option<String>,
    /// Replay this prediction feed into the running service.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Feed seconds per wall-clock second during replay.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let mut cfg = match (&a.config, &a.scenario) {
        (Some(path), _) => {
            require_file(path, "service config")?;
            ServerConfig::from_file(path).map_err(usage)?
        }
        (None, Some(sc)) => ServerConfig::new(sc.clone()),
        (None, None) => ServerConfig::new(PathBuf::new()),
    };
    cfg.apply_env(|k| std::env::var(k).ok()).map_err(usage)?;
    if let Some(sc) = a.scenario {
        cfg.scenario = sc;
    }
    if let Some(m) = a.model {
        cfg.model = Some(m);
    }
    if let Some(p) = a.port {
        cfg.port = p;
    }
    if let Some(b) = a.bind {
        cfg.bind = b;
    }
    if cfg.scenario.as_os_str().is_empty() {
        return Err(usage(anyhow!("no scenario given (use --scenario, --config or HEADWAY_SCENARIO)")));
    }
    require_file(&cfg.scenario, "scenario")?;
    if let Some(m) = &cfg.model {
        require_file(m, "model")?;
    }
    let service = cfg.build_service().map_err(usage)?;
    let records = match &a.replay {
        Some(path) => {
            require_file(path, "feed")?;
            let feed = read_feed(path).map_err(usage)?;
            if feed.malformed > 0 {
                eprintln!("{}: skipped {} malformed lines", path.display(), feed.malformed);
            }
            Some(feed.records)
        }
        None => None,
    };
    let state = AppState::new(service, cfg.data_dir.clone());
    let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
    runtime.block_on(async move {
        if let Some(records) = records {
            let st = state.clone();
            tokio::spawn(async move {
                let batches = replay_into(st, records, a.speed).await;
                eprintln!("replay finished after {batches} batches");
            });
        }
        serve_http(&cfg, state).await
    })?;
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct ReplayArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    feed: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Stops whose table is printed; defaults to the control stops.
    #[arg(long, value_delimiter = ',')]
    stops: Vec<usize>,
    /// Pace batches at this many feed seconds per wall-clock second; unpaced without it.
    #[arg(long)]
    speed: Option<f64>,
    #[arg(long)]
    staleness_bound: Option<i64>,
    #[arg(long)]
    match_window: Option<i64>,
    /// Write the transcript here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn replay(a: ReplayArgs) -> Result<()> {
    let scenario = scenario_at(&a.scenario)?;
    require_file(&a.feed, "feed")?;
    let net = match &a.model {
        Some(p) => {
            require_file(p, "model")?;
            Some(QNetwork::load(p, Some(&scenario.thresholds)).map_err(usage)?)
        }
        None => None,
    };
    let mut config = ServiceConfig::default();
    if let Some(s) = a.staleness_bound {
        config.staleness_bound = s;
    }
    config.match_window = a.match_window.or(config.match_window);
    let stops = if a.stops.is_empty() { scenario.route.control_stops.clone() } else { a.stops };
    let feed = read_feed(&a.feed).map_err(usage)?;
    let mut service = Service::new(&scenario, net, config);
    let mut pacer: Box<dyn Pacer> = match a.speed {
        Some(_) => Box::new(SleepPacer),
        None => Box::new(NoPacer),
    };
    let (text, summary) = replay_transcript(&mut service, &feed.records, a.speed.unwrap_or(1.0), pacer.as_mut(), &stops);
    match &a.out {
        Some(path) => std::fs::write(path, &text).with_context(|| path.display().to_string())?,
        None => print!("{text}"),
    }
    eprintln!(
        "batches {} accepted {} unmatched {} rejected {} malformed {}",
        summary.batches, summary.ingest.accepted, summary.ingest.unmatched, summary.ingest.rejected, feed.malformed
    );
    Ok(())
}
