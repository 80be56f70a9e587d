use std::fs;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tableforge_cli::serve::{router, AppState};
use tableforge_cli::{run, RunConfig};
use tableforge_core::fixtures::{fixture_a, fixture_a_json};
use tableforge_core::forge::TrajectoryInstance;
use tableforge_core::layout::{compute_layout, LayoutMetrics};
use tableforge_core::verify::{corrupt, Corruption};
use tempfile::TempDir;
use tower::ServiceExt;

struct Setup {
    dir: TempDir,
    app: Router,
    flagged: Vec<TrajectoryInstance>,
    clean: Vec<TrajectoryInstance>,
}

fn read_instances(dir: &TempDir) -> Vec<TrajectoryInstance> {
    fs::read_to_string(dir.path().join("out/trajectories.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// FIXTURE-A corpus with three corrupted instances, verified.
fn setup() -> Setup {
    let dir = TempDir::new().unwrap();
    let p = |rel: &str| dir.path().join(rel).display().to_string();
    fs::create_dir(dir.path().join("specs")).unwrap();
    fs::write(dir.path().join("specs/fixture-a.json"), fixture_a_json()).unwrap();
    fs::create_dir(dir.path().join("ui")).unwrap();
    fs::write(dir.path().join("ui/index.html"), "<html>review</html>").unwrap();
    let args = |extra: &[&str]| {
        let mut v: Vec<String> = ["tableforge"].iter().chain(extra).map(|s| s.to_string()).collect();
        v.extend(["--specs".into(), p("specs"), "--out".into(), p("out")]);
        v
    };
    assert_eq!(run(args(&["render"])), 0);
    assert_eq!(run(args(&["forge", "--seed", "21", "--quota", "Retrieval=4", "--quota", "Arithmetic=3"])), 0);

    let spec = fixture_a();
    let map = compute_layout(&spec, &LayoutMetrics::default()).unwrap();
    let mut inst = read_instances(&dir);
    let kinds = [Corruption::BoxPerturbation, Corruption::AnswerTampering, Corruption::NumericSubstitution];
    let mut flagged = Vec::new();
    let mut done = 0;
    for i in inst.iter_mut() {
        if done == kinds.len() {
            break;
        }
        if let Some(c) = corrupt(i, &spec, &map, kinds[done], 3) {
            *i = c;
            flagged.push(i.clone());
            done += 1;
        }
    }
    assert_eq!(done, 3);
    let clean = inst.iter().filter(|i| !flagged.iter().any(|f| f.id == i.id)).cloned().collect();
    fs::write(dir.path().join("out/trajectories.jsonl"), inst.iter().map(|i| i.to_json_line() + "\n").collect::<String>())
        .unwrap();
    assert_eq!(run(args(&["verify"])), 1);

    let mut cfg = RunConfig::default();
    cfg.paths.specs = dir.path().join("specs");
    cfg.paths.out = dir.path().join("out");
    let state = Arc::new(AppState::load(&cfg).unwrap());
    let app = router(state, Some(dir.path().join("ui")));
    Setup { dir, app, flagged, clean }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, b) = call(app, "GET", uri, None).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

#[tokio::test]
async fn lists_flags_and_instances() {
    let s = setup();
    let (status, flags) = get_json(&s.app, "/api/flags").await;
    assert_eq!(status, StatusCode::OK);
    let ids: std::collections::BTreeSet<&str> = flags.as_array().unwrap().iter().map(|f| f["id"].as_str().unwrap()).collect();
    let want: std::collections::BTreeSet<&str> = s.flagged.iter().map(|i| i.id.as_str()).collect();
    assert_eq!(ids, want);

    let id = &s.flagged[0].id;
    let (status, v) = get_json(&s.app, &format!("/api/instances/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["instance"]["id"], id.as_str());
    assert_eq!(v["region_map"]["image_w"], 640);
    assert_eq!(v["image_url"], "/api/images/fixture-a.png");
    assert!(!v["flags"].as_array().unwrap().is_empty());

    let (status, png) = call(&s.app, "GET", "/api/images/fixture-a.png", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(&png[..4], b"\x89PNG");
    assert_eq!(call(&s.app, "GET", "/api/images/nope.png", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(get_json(&s.app, "/api/instances/nope").await.0, StatusCode::NOT_FOUND);

    let (status, body) = call(&s.app, "GET", "/", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"<html>review</html>");
}

#[tokio::test]
async fn drop_regenerates_corpus() {
    let s = setup();
    let id = s.flagged[1].id.clone();
    let before = read_instances(&s.dir).len();
    let (status, _) =
        call(&s.app, "POST", "/api/decisions", Some(json!({"instance_id": id, "action": "drop", "reviewer": "r1"}))).await;
    assert_eq!(status, StatusCode::OK);
    let after = read_instances(&s.dir);
    assert_eq!(after.len(), before - 1);
    assert!(after.iter().all(|i| i.id != id));
    let log = fs::read_to_string(s.dir.path().join("out/audit_log.jsonl")).unwrap();
    let entry: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(entry["action"], "drop");
    assert!(entry["timestamp"].as_str().is_some_and(|t| !t.is_empty()));
    let flags = fs::read_to_string(s.dir.path().join("out/flags.jsonl")).unwrap();
    assert!(!flags.contains(&id));
    assert_eq!(get_json(&s.app, "/api/flags").await.1.as_array().unwrap().len(), flags.lines().count());
    assert_eq!(get_json(&s.app, &format!("/api/instances/{id}")).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn snapped_box_passes_reverification() {
    let s = setup();
    let bad = &s.flagged[0];
    let spec = fixture_a();
    let map = compute_layout(&spec, &LayoutMetrics::default()).unwrap();
    let boxes: Vec<Value> = bad
        .evidence
        .iter()
        .enumerate()
        .filter(|(_, e)| map.region_at(&e.bbox_px).is_none())
        .map(|(index, e)| {
            // Snap to the region with the largest overlap.
            let best = map
                .regions()
                .iter()
                .max_by(|a, b| {
                    let ia = tableforge_core::eval::iou(&a.bbox, &e.bbox_px);
                    let ib = tableforge_core::eval::iou(&b.bbox, &e.bbox_px);
                    ia.total_cmp(&ib)
                })
                .unwrap();
            json!({"index": index, "bbox_px": best.bbox})
        })
        .collect();
    assert!(!boxes.is_empty());
    let decision = json!({"instance_id": bad.id, "action": "modify", "reviewer": "r1", "patch": {"boxes": boxes}});
    let (status, body) = call(&s.app, "POST", "/api/decisions", Some(decision)).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["flags"], json!([]));
    let flags = fs::read_to_string(s.dir.path().join("out/flags.jsonl")).unwrap();
    assert!(!flags.contains(&bad.id));
    assert_eq!(read_instances(&s.dir).len(), s.clean.len() + s.flagged.len());
}

#[tokio::test]
async fn rejects_bad_decisions() {
    let s = setup();
    let id = s.flagged[2].id.as_str();
    let post = |body: Value| call(&s.app, "POST", "/api/decisions", Some(body));
    let unknown = post(json!({"instance_id": "nope", "action": "accept", "reviewer": "r"})).await;
    assert_eq!(unknown.0, StatusCode::NOT_FOUND);
    assert_eq!(post(json!({"instance_id": id, "action": "modify", "reviewer": "r"})).await.0, StatusCode::BAD_REQUEST);
    let far = json!({"instance_id": id, "action": "modify", "reviewer": "r", "patch": {"boxes": [{"index": 99, "bbox_px": [0, 0, 1, 1]}]}});
    assert_eq!(post(far).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(post(json!({"instance_id": id, "action": "shrug", "reviewer": "r"})).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(post(json!({"instance_id": id, "action": "accept"})).await.0, StatusCode::BAD_REQUEST);
    let (status, _) = call(&s.app, "POST", "/api/decisions", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(!s.dir.path().join("out/audit_log.jsonl").exists());

    // Accepting clears the flag without touching the instance.
    let ok = post(json!({"instance_id": id, "action": "accept", "reviewer": "r", "timestamp": "2026-01-01T00:00:00Z"})).await;
    assert_eq!(ok.0, StatusCode::OK);
    assert!(read_instances(&s.dir).iter().any(|i| i.id == id));
}

#[tokio::test]
async fn serves_stats() {
    let s = setup();
    let (status, v) = get_json(&s.app, "/api/stats").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["overall"]["count"], 7);
    assert_eq!(v["shape"]["tables"], 1);
}
