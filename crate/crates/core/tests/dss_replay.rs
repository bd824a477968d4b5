use std::path::PathBuf;

use headway_core::dss::{
    export_prediction_feed, replay_feed, replay_records, replay_transcript, write_feed, NoPacer, PredictionRecord,
    RecordingPacer, RowStatus, Service, ServiceConfig,
};
use headway_core::scenarios::bunching;
use headway_core::sim::{run_replication, NoControl};

const GOLDEN: &str = "tests/golden/bunching_replay.txt";
const STOPS: [usize; 2] = [0, 3];

fn feed() -> Vec<PredictionRecord> {
    let sc = bunching().with_seed(11);
    let log = run_replication(&sc, &mut NoControl).unwrap();
    export_prediction_feed(&log, &sc.route.control_stops, 120, 900)
}

fn service() -> Service {
    Service::new(&bunching(), None, ServiceConfig::default())
}

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(GOLDEN)
}

#[test]
fn replay_matches_golden_transcript() {
    let (text, summary) = replay_transcript(&mut service(), &feed(), 1.0, &mut NoPacer, &STOPS);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(golden_path(), &text).unwrap();
    }
    let golden = std::fs::read_to_string(golden_path()).unwrap();
    assert_eq!(summary.ingest.unmatched + summary.ingest.rejected, 0);
    assert!(text == golden, "transcript differs from {GOLDEN}; rerun with UPDATE_GOLDEN=1 after review");
}

#[test]
fn replay_speed_does_not_change_state() {
    let records = feed();
    let (mut slow, mut fast) = (service(), service());
    let mut p1 = RecordingPacer::default();
    let mut p10 = RecordingPacer::default();
    let (a, _) = replay_transcript(&mut slow, &records, 1.0, &mut p1, &STOPS);
    let (b, _) = replay_transcript(&mut fast, &records, 10.0, &mut p10, &STOPS);
    assert_eq!(a, b);
    assert_eq!(p1.0.len(), p10.0.len());
    for (x, y) in p1.0.iter().zip(&p10.0) {
        assert!((x.as_secs_f64() / 10.0 - y.as_secs_f64()).abs() < 1e-9);
    }
    for j in 0..6 {
        assert_eq!(slow.upcoming_trips(j), fast.upcoming_trips(j));
    }
    assert_eq!(slow.log(), fast.log());
}

#[test]
fn replay_from_file_and_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("feed.csv");
    let records = feed();
    write_feed(&path, &records).unwrap();
    let mut from_file = service();
    let summary = replay_feed(&mut from_file, &path, 1.0, &mut NoPacer, |_, _| {}).unwrap();
    let mut direct = service();
    replay_records(&mut direct, &records, 1.0, &mut NoPacer, |_, _| {});
    assert_eq!(summary.malformed, 0);
    assert_eq!(from_file.upcoming_trips(3), direct.upcoming_trips(3));

    std::fs::write(&path, "timestamp,trip_id,stop,predicted_arrival\n").unwrap();
    let mut empty = service();
    let summary = replay_feed(&mut empty, &path, 1.0, &mut NoPacer, |_, _| {}).unwrap();
    assert_eq!(summary.batches, 0);
    assert_eq!(empty.clock(), 0);
    assert!(empty.upcoming_trips(0).unwrap().is_empty());
}

#[test]
fn every_replayed_row_respects_the_guard() {
    let sc = bunching();
    let thr = sc.thresholds;
    let mut checked = 0;
    replay_records(&mut service(), &feed(), 1.0, &mut NoPacer, |s, _| {
        for &j in &sc.route.control_stops {
            for row in s.upcoming_trips(j).unwrap() {
                let Some(rec) = &row.recommendation else {
                    assert_eq!(row.status, RowStatus::Canceled);
                    continue;
                };
                assert!(rec.final_hold >= 0 && rec.final_hold <= thr.max_hold);
                assert_eq!(rec.final_hold % thr.hold_grid, 0);
                let st = row.scheduled_arrival.unwrap();
                assert!(rec.final_hold == 0 || rec.instructed_departure <= st + thr.late_allowance);
                checked += 1;
            }
        }
    });
    assert!(checked > 100, "{checked}");
}
