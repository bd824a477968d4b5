use std::path::PathBuf;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use headway_core::io::write_scenario;
use headway_core::scenarios::bunching;
use headway_core::time::parse_clock;
use headway_server::{router, AppState, ConfigError, ServerConfig, VERSION};

struct Fixture {
    _dir: tempfile::TempDir,
    scenario: PathBuf,
    data: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), &bunching()).unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir(&data).unwrap();
    Fixture { _dir: dir, scenario, data }
}

fn app(f: &Fixture) -> Router {
    let mut cfg = ServerConfig::new(f.scenario.clone());
    cfg.data_dir = Some(f.data.clone());
    router(AppState::new(cfg.build_service().unwrap(), cfg.data_dir.clone()))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or(Body::empty(), |b| Body::from(b.to_string()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn t(clock: &str) -> i64 {
    parse_clock(clock).unwrap()
}

/// At stop 3, T002 trails T001 by 4 min and leads T003 by 14 min.
fn bunched_feed() -> Value {
    let ts = t("07:05:00");
    json!([
        {"timestamp": ts, "trip_id": "T001", "stop": 3, "predicted_arrival": t("07:10:18")},
        {"timestamp": ts, "trip_id": "T002", "stop": 3, "predicted_arrival": t("07:14:18")},
        {"timestamp": ts, "trip_id": "T003", "stop": 3, "predicted_arrival": t("07:28:18")},
        {"timestamp": ts, "trip_id": "T004", "stop": 3, "predicted_arrival": t("07:40:18")},
    ])
}

fn hold_of(rows: &Value, trip: &str) -> i64 {
    rows.as_array().unwrap().iter().find(|r| r["trip_id"] == trip).unwrap()["recommendation"]["final_hold"]
        .as_i64()
        .unwrap()
}

#[tokio::test]
async fn health_reports_version() {
    let f = fixture();
    let (status, body) = call(&app(&f), "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["version"], VERSION);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["route_id"], "TOY");
    assert_eq!(body["model_loaded"], false);
}

#[tokio::test]
async fn feed_then_table_in_eta_order_with_fallback_source() {
    let f = fixture();
    let app = app(&f);
    let (status, summary) = call(&app, "POST", "/feeds/predictions", Some(bunched_feed())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(summary, json!({"accepted": 4, "unmatched": 0, "rejected": 0}));

    let (status, rows) = call(&app, "GET", "/routes/TOY/stops/3/trips", None).await;
    assert_eq!(status, StatusCode::OK);
    let rows = rows.as_array().unwrap();
    let ids: Vec<&str> = rows.iter().map(|r| r["trip_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["T001", "T002", "T003", "T004"]);
    for r in rows {
        assert!(["fallback", "guard-zero"].contains(&r["recommendation"]["source"].as_str().unwrap()));
        for key in ["eta", "schedule_deviation", "predicted_headway", "scheduled_headway", "recovery_time", "status"] {
            assert!(r.get(key).is_some(), "missing {key}");
        }
    }
    assert_eq!(rows[1]["eta"], 558);
    assert_eq!(rows[1]["schedule_deviation"], -240);
    assert_eq!(rows[1]["recommendation"]["source"], "fallback");
}

#[tokio::test]
async fn confirm_recomputes_the_follower_and_rejects_repeats() {
    let f = fixture();
    let app = app(&f);
    call(&app, "POST", "/feeds/predictions", Some(bunched_feed())).await;
    let (_, before) = call(&app, "GET", "/routes/TOY/stops/3/trips", None).await;
    assert_eq!(hold_of(&before, "T003"), 0);
    let displayed = hold_of(&before, "T002");
    assert!(displayed > 0);

    let body = json!({"stop": 3, "actor": "supervisor-1"});
    let (status, entry) = call(&app, "POST", "/trips/T002/hold-confirm", Some(body.clone())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(entry["kind"], "hold-confirm");
    assert_eq!(entry["entry_id"], 1);
    assert_eq!(entry["instructed_hold"], displayed);

    let (_, after) = call(&app, "GET", "/routes/TOY/stops/3/trips", None).await;
    assert!(hold_of(&after, "T003") > 0);
    let t2 = after.as_array().unwrap().iter().find(|r| r["trip_id"] == "T002").unwrap();
    assert_eq!(t2["status"], "confirmed");

    let (status, err) = call(&app, "POST", "/trips/T002/hold-confirm", Some(body)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["code"], "already_confirmed");
    assert!(err["message"].as_str().unwrap().contains("already confirmed"));

    let persisted = std::fs::read_to_string(f.data.join("interventions.csv")).unwrap();
    assert_eq!(persisted.lines().count(), 2);
}

#[tokio::test]
async fn cancel_restore_round_trip() {
    let f = fixture();
    let app = app(&f);
    call(&app, "POST", "/feeds/predictions", Some(bunched_feed())).await;
    let (_, before) = call(&app, "GET", "/routes/TOY/stops/3/trips", None).await;

    let actor = json!({"actor": "clerk"});
    let (status, _) = call(&app, "POST", "/trips/T003/cancel", Some(actor.clone())).await;
    assert_eq!(status, StatusCode::OK);
    let (_, canceled) = call(&app, "GET", "/routes/TOY/stops/3/trips", None).await;
    let rows = canceled.as_array().unwrap();
    let t3 = rows.iter().find(|r| r["trip_id"] == "T003").unwrap();
    assert_eq!(t3["status"], "canceled");
    assert!(t3["recommendation"].is_null());
    let t4 = rows.iter().find(|r| r["trip_id"] == "T004").unwrap();
    assert_eq!(t4["predicted_headway"], 26 * 60);

    let (status, err) = call(&app, "POST", "/trips/T003/cancel", Some(actor.clone())).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::CONFLICT, Some("wrong_state")));

    call(&app, "POST", "/trips/T003/restore", Some(actor.clone())).await;
    let (_, restored) = call(&app, "GET", "/routes/TOY/stops/3/trips", None).await;
    assert_eq!(restored, before);

    let (_, page) = call(&app, "GET", "/log?since=1", None).await;
    assert_eq!(page["last_id"], 2);
    assert_eq!(page["entries"].as_array().unwrap().len(), 1);
    assert_eq!(page["entries"][0]["kind"], "restore");
}

#[tokio::test]
async fn structured_errors() {
    let f = fixture();
    let app = app(&f);
    let actor = json!({"actor": "clerk"});
    let (status, err) = call(&app, "POST", "/trips/NOPE/cancel", Some(actor)).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_trip")));

    let (status, err) = call(&app, "GET", "/routes/OTHER/stops/3/trips", None).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_route")));

    let (status, err) = call(&app, "GET", "/routes/TOY/stops/7/trips", None).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::BAD_REQUEST, Some("not_control_stop")));

    let (status, err) = call(&app, "POST", "/trips/T001/hold-confirm", Some(json!({"actor": "x"}))).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::BAD_REQUEST, Some("bad_request")));
    assert!(err["message"].as_str().unwrap().contains("stop"));

    let (status, err) = call(&app, "GET", "/log?since=abc", None).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::BAD_REQUEST, Some("bad_request")));

    let (status, err) = call(&app, "GET", "/nowhere", None).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
}

#[tokio::test]
async fn short_turn_note_is_logged() {
    let f = fixture();
    let app = app(&f);
    let body = json!({"stop": 4, "actor": "sup", "note": "turned back at S04"});
    let (status, entry) = call(&app, "POST", "/trips/T005/short-turn-note", Some(body)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(entry["kind"], "short-turn-note");
    assert_eq!(entry["note"], "turned back at S04");
}

#[tokio::test]
async fn resending_a_feed_is_a_no_op() {
    let f = fixture();
    let app = app(&f);
    call(&app, "POST", "/feeds/predictions", Some(bunched_feed())).await;
    let (_, a) = call(&app, "GET", "/routes/TOY/stops/3/trips", None).await;
    call(&app, "POST", "/feeds/predictions", Some(bunched_feed())).await;
    let (_, b) = call(&app, "GET", "/routes/TOY/stops/3/trips", None).await;
    assert_eq!(a, b);
}

#[test]
fn config_file_and_environment_overrides() {
    let f = fixture();
    let dir = f.scenario.parent().unwrap();
    let path = dir.join("service.toml");
    std::fs::write(
        &path,
        "scenario = \"scenario.toml\"\nport = 9000\n[service]\nstaleness_bound = 120\n[thresholds]\nmax_hold = 180\n",
    )
    .unwrap();
    let mut cfg = ServerConfig::from_file(&path).unwrap();
    assert_eq!(cfg.scenario, f.scenario);
    assert_eq!((cfg.port, cfg.service.staleness_bound, cfg.thresholds.max_hold), (9000, 120, Some(180)));

    let env = |k: &str| match k {
        "HEADWAY_PORT" => Some("9100".to_string()),
        "HEADWAY_MATCH_WINDOW" => Some("200".to_string()),
        _ => None,
    };
    cfg.apply_env(env).unwrap();
    assert_eq!((cfg.port, cfg.service.match_window), (9100, Some(200)));
    assert!(cfg.build_service().is_ok());

    let err = cfg.apply_env(|k| (k == "HEADWAY_PORT").then(|| "many".to_string())).unwrap_err();
    assert!(matches!(err, ConfigError::Env { name: "HEADWAY_PORT", .. }));

    std::fs::write(&path, "scenario = \"scenario.toml\"\nbogus = 1\n").unwrap();
    assert!(matches!(ServerConfig::from_file(&path), Err(ConfigError::Parse { .. })));
}

#[test]
fn bad_model_file_is_rejected() {
    let f = fixture();
    let model = f.data.join("model.json");
    std::fs::write(&model, "{\"not\": \"a model\"}").unwrap();
    let mut cfg = ServerConfig::new(f.scenario.clone());
    cfg.model = Some(model);
    assert!(matches!(cfg.build_service(), Err(ConfigError::Model { .. })));
}

#[tokio::test]
async fn replay_task_feeds_the_shared_state() {
    let f = fixture();
    let cfg = ServerConfig::new(f.scenario.clone());
    let state = AppState::new(cfg.build_service().unwrap(), None);
    let records: Vec<headway_core::dss::PredictionRecord> = serde_json::from_value(bunched_feed()).unwrap();
    let mut later = records[0].clone();
    later.timestamp += 60;
    let batches = headway_server::replay_into(state.clone(), [records, vec![later]].concat(), 1e6).await;
    assert_eq!(batches, 2);
    let (_, health) = call(&router(state), "GET", "/health", None).await;
    assert_eq!(health["clock"], t("07:06:00"));
}
