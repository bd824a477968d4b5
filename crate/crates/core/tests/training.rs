use headway_core::policy::QNetwork;
use headway_core::rl::{save_outcome, train, EpsilonSchedule, OptimizerKind, TrainConfig, TrainError};
use headway_core::scenarios::bunching;
use headway_core::sim::ComplianceModel;

fn small(episodes: usize) -> TrainConfig {
    TrainConfig {
        episodes,
        hidden: vec![8],
        batch_size: 16,
        replay_capacity: 2_000,
        target_sync: 50,
        epsilon: EpsilonSchedule { start: 1.0, end: 0.1, decay_steps: 500 },
        eval_every: 50,
        eval_seeds: vec![1, 2],
        ..TrainConfig::default()
    }
}

#[test]
fn curve_has_one_row_per_episode() {
    let outcome = train(&bunching(), &small(200)).unwrap();
    assert_eq!(outcome.curve.len(), 200);
    assert!(outcome.curve.iter().enumerate().all(|(k, p)| p.episode == k));
    let evaluated: Vec<usize> = outcome.curve.iter().filter(|p| p.eval_wait.is_some()).map(|p| p.episode).collect();
    assert_eq!(evaluated, vec![49, 99, 149, 199]);
    assert!(outcome.gradient_steps > 0);
    assert!(outcome.best_eval_wait.is_finite());
}

#[test]
fn same_seed_same_result_under_either_compliance_model() {
    for compliance in [ComplianceModel::FULL, ComplianceModel::PARTIAL] {
        let cfg = TrainConfig { compliance, seed: 9, ..small(12) };
        let a = train(&bunching(), &cfg).unwrap();
        let b = train(&bunching(), &cfg).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.final_net, b.final_net);
        let c = train(&bunching(), &TrainConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.final_net, c.final_net);
    }
}

#[test]
fn divergence_is_reported_with_the_partial_curve() {
    let cfg = TrainConfig {
        optimizer: OptimizerKind::Sgd,
        learning_rate: 1e200,
        reward_scale: 1e100,
        ..small(20)
    };
    match train(&bunching(), &cfg) {
        Err(TrainError::Diverged { episode, curve, .. }) => assert_eq!(curve.len(), episode),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.curve.len())),
    }
}

#[test]
fn invalid_config_lists_every_problem() {
    let cfg = TrainConfig { gamma: 1.5, batch_size: 0, learning_rate: -1.0, ..small(1) };
    match train(&bunching(), &cfg) {
        Err(TrainError::Config(problems)) => assert_eq!(problems.len(), 3, "{problems:?}"),
        other => panic!("expected config error, got {:?}", other.map(|o| o.curve.len())),
    }
}

#[test]
fn saved_networks_reload_against_the_scenario_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let sc = bunching();
    let cfg = TrainConfig { checkpoint_every: Some(2), checkpoint_dir: Some(dir.path().join("ckpt")), ..small(4) };
    let outcome = train(&sc, &cfg).unwrap();
    save_outcome(dir.path(), &outcome).unwrap();
    let best = QNetwork::load(&dir.path().join("best.json"), Some(&sc.thresholds)).unwrap();
    assert_eq!(best, outcome.best_net);
    let curve = std::fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 5);
    assert!(dir.path().join("ckpt/checkpoint-00002.json").is_file());
    assert!(dir.path().join("ckpt/checkpoint-00004.json").is_file());

    let mut other = sc.thresholds;
    other.max_hold += 30;
    assert!(QNetwork::load(&dir.path().join("best.json"), Some(&other)).is_err());
}

#[test]
fn training_config_parses_from_toml() {
    let cfg: TrainConfig = toml::from_str("episodes = 7\nhidden = [32]\n[compliance]\nmin_fraction = 1.0\nmax_fraction = 1.0\n").unwrap();
    assert_eq!((cfg.episodes, cfg.hidden.clone(), cfg.compliance), (7, vec![32], ComplianceModel::FULL));
    assert_eq!(cfg.gamma, TrainConfig::default().gamma);
    assert!(toml::from_str::<TrainConfig>("episode = 7\n").is_err());
}
