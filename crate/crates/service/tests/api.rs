use std::fs;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use pedlabel_core::analytics::export_dataset;
use pedlabel_core::editops::{self, ActionLog, Applied, EditOp, Layer};
use pedlabel_core::model::{BBox, Session, Tracklet, TrackletId, TrackletSample};
use pedlabel_core::{store, synth};
use pedlabel_service::journal::{read_entries, JOURNAL};
use pedlabel_service::{load_dir, router, ErrorBody, Registry, TrackletWindow, TrajectoryWindow};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

fn seeded_session(seed: u64) -> Session {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = synth::random_session(&mut rng, 3, 40, 12);
    s.session_id = "s1".into();
    s
}

fn open(dir: &Path) -> Router {
    router(Arc::new(Registry::open(&[dir.to_path_buf()]).unwrap()))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(&b).unwrap())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get_json<T: serde::de::DeserializeOwned>(app: &Router, uri: &str) -> (StatusCode, Option<T>) {
    let (status, body) = call(app, Method::GET, uri, None).await;
    (status, serde_json::from_slice(&body).ok())
}

async fn edit(app: &Router, client_seq: u64, op: &EditOp) -> (StatusCode, Vec<u8>) {
    call(
        app,
        Method::POST,
        "/sessions/s1/edits",
        Some(json!({"client_seq": client_seq, "op": op})),
    )
    .await
}

fn setup(session: &Session) -> (tempfile::TempDir, std::path::PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("s1");
    store::save_session(session, &dir).unwrap();
    (tmp, dir)
}

fn bbox(x: f64) -> BBox {
    BBox::new(x, 100.0, x + 40.0, 200.0)
}

fn small_session() -> Session {
    let mut s = seeded_session(1);
    s.store = Default::default();
    let cam = s.cameras[0].camera_id.clone();
    s.insert_tracklets(vec![Tracklet {
        id: TrackletId(50),
        camera_id: cam,
        samples: (1..=10).map(|f| TrackletSample::new(f, bbox(f as f64))).collect(),
        source: pedlabel_core::model::Source::Auto,
    }])
    .unwrap();
    s
}

#[tokio::test]
async fn break_then_query_shows_new_ids() {
    let (_tmp, dir) = setup(&small_session());
    let app = open(&dir);
    let op = EditOp::Break {
        layer: Layer::Pixel,
        id: 50,
        frame: 6,
    };
    let (status, body) = edit(&app, 0, &op).await;
    assert_eq!(status, StatusCode::OK);
    let applied: Applied = serde_json::from_slice(&body).unwrap();
    assert_eq!((applied.seq, applied.revision), (1, 1));
    assert_eq!(applied.diff.created.len(), 2);
    assert_eq!(applied.diff.retired.len(), 1);
    assert_eq!(applied.diff.retired[0].id, 50);

    let (status, w) = get_json::<TrackletWindow>(&app, "/sessions/s1/tracklets").await;
    assert_eq!(status, StatusCode::OK);
    let w = w.unwrap();
    let ids: Vec<u64> = w.tracklets.iter().map(|t| t.tracklet_id).collect();
    assert_eq!(ids, applied.diff.created.iter().map(|r| r.id).collect::<Vec<_>>());
    assert!(!ids.contains(&50));
    assert_eq!(w.revision, 1);
}

#[tokio::test]
async fn same_client_seq_twice_conflicts() {
    let (_tmp, dir) = setup(&small_session());
    let app = open(&dir);
    let op = EditOp::Break {
        layer: Layer::Pixel,
        id: 50,
        frame: 4,
    };
    assert_eq!(edit(&app, 0, &op).await.0, StatusCode::OK);
    let (status, body) = edit(&app, 0, &op).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let err: ErrorBody = serde_json::from_slice(&body).unwrap();
    assert_eq!(err.revision, Some(1));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_writers_exactly_one_wins() {
    let (_tmp, dir) = setup(&seeded_session(2));
    let app = open(&dir);
    let snapshot = load_dir(&dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let op = loop {
        if let Some(op) = synth::random_edit(&snapshot, &mut rng) {
            break op;
        }
    };
    let tasks: Vec<_> = (0..8)
        .map(|_| {
            let app = app.clone();
            let op = op.clone();
            tokio::spawn(async move { edit(&app, 0, &op).await.0 })
        })
        .collect();
    let mut statuses = Vec::new();
    for t in tasks {
        statuses.push(t.await.unwrap());
    }
    assert_eq!(statuses.iter().filter(|s| **s == StatusCode::OK).count(), 1);
    assert_eq!(statuses.iter().filter(|s| **s == StatusCode::CONFLICT).count(), 7);
}

#[tokio::test]
async fn error_statuses() {
    let (_tmp, dir) = setup(&small_session());
    let app = open(&dir);
    assert_eq!(call(&app, Method::GET, "/sessions/nope", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(
        call(&app, Method::GET, "/sessions/s1/trajectories/999", None).await.0,
        StatusCode::NOT_FOUND
    );
    let unknown = EditOp::Delete {
        layer: Layer::Pixel,
        id: 999,
    };
    assert_eq!(edit(&app, 0, &unknown).await.0, StatusCode::NOT_FOUND);
    let at_edge = EditOp::Break {
        layer: Layer::Pixel,
        id: 50,
        frame: 1,
    };
    let (status, body) = edit(&app, 0, &at_edge).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let err: ErrorBody = serde_json::from_slice(&body).unwrap();
    assert!(err.message.contains("empty side"), "{}", err.message);
    let (status, _) = call(&app, Method::POST, "/sessions/s1/undo", Some(json!({"client_seq": 0}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, Method::POST, "/sessions/s1/edits", Some(json!({"op": {}}))).await;
    assert!(status.is_client_error());
    // Rejected edits leave nothing behind.
    assert!(read_entries(&dir).unwrap().0.is_empty());
    let (_, info) = get_json::<Value>(&app, "/sessions/s1").await;
    assert_eq!(info.unwrap()["revision"], 0);
}

#[tokio::test]
async fn trajectory_window_and_decimation() {
    let mut s = small_session();
    let id = s.ids.mint_ped();
    s.store.trajectories.insert(
        id,
        pedlabel_core::model::MetricTrajectory {
            ped_id: id,
            samples: (0..50)
                .map(|k| pedlabel_core::model::TrajectorySample {
                    step: k,
                    x: k as f64 * 0.1,
                    y: 0.0,
                    z: 0.0,
                })
                .collect(),
            source_tracklets: Vec::new(),
            source: pedlabel_core::model::Source::Auto,
        },
    );
    let (_tmp, dir) = setup(&s);
    let app = open(&dir);
    let (_, w) = get_json::<TrajectoryWindow>(&app, "/sessions/s1/trajectories?from=1.0&to=2.0").await;
    let steps: Vec<i64> = w.unwrap().trajectories[0].samples.iter().map(|p| p.step).collect();
    assert_eq!(steps, (10..=20).collect::<Vec<_>>());
    let (_, w) = get_json::<TrajectoryWindow>(&app, "/sessions/s1/trajectories?from=1.05&to=2.95&resolution=0.5").await;
    let steps: Vec<i64> = w.unwrap().trajectories[0].samples.iter().map(|p| p.step).collect();
    assert_eq!(steps, [11, 15, 20, 25, 29]);
    let (_, w) = get_json::<TrajectoryWindow>(&app, "/sessions/s1/trajectories?from=10&to=20").await;
    assert!(w.unwrap().trajectories.is_empty());
    let (status, _) = call(&app, Method::GET, "/sessions/s1/trajectories?from=3&to=1", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, t) = get_json::<Value>(&app, &format!("/sessions/s1/trajectories/{}", id.0)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(t.unwrap()["samples"].as_array().unwrap().len(), 50);
}

#[tokio::test]
async fn frames_metadata_and_images() {
    let s = small_session();
    let cam = s.cameras[0].camera_id.clone();
    let (_tmp, dir) = setup(&s);
    let frames = dir.join("frames").join(cam.as_str());
    fs::create_dir_all(&frames).unwrap();
    fs::write(frames.join("000003.png"), b"\x89PNG fake").unwrap();
    let app = open(&dir);
    let (status, meta) = get_json::<Value>(&app, &format!("/sessions/s1/frames/{cam}/3")).await;
    assert_eq!(status, StatusCode::OK);
    let meta = meta.unwrap();
    assert_eq!(meta["boxes"].as_array().unwrap().len(), 1);
    assert_eq!(meta["boxes"][0]["tracklet_id"], 50);
    let url = meta["image"].as_str().unwrap().to_string();
    let (status, bytes) = call(&app, Method::GET, &url, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(bytes, b"\x89PNG fake");
    let (_, meta) = get_json::<Value>(&app, &format!("/sessions/s1/frames/{cam}/4")).await;
    assert!(meta.unwrap()["image"].is_null());
    let (status, _) = call(&app, Method::GET, &format!("/sessions/s1/frames/{cam}/4/image"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, Method::GET, "/sessions/s1/frames/..%2F..%2Fetc/1/image", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

fn without_timestamps(log: &ActionLog) -> ActionLog {
    let mut log = log.clone();
    for a in log.applied.iter_mut().chain(log.undone.iter_mut()) {
        a.timestamp.clear();
    }
    log
}

fn export_bytes(s: &Session, dir: &Path, name: &str) -> Vec<u8> {
    let p = dir.join(name);
    export_dataset(s, &p, None).unwrap();
    fs::read(p).unwrap()
}

/// 500 random API mutations against a mirror driven by direct module calls,
/// then offline replay of the server's log, then a simulated crash.
#[tokio::test]
async fn differential_fuzz_replay_and_crash_recovery() {
    let initial = seeded_session(3);
    let (tmp, dir) = setup(&initial);
    let app = open(&dir);
    let mut mirror = initial.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0xfeed);
    let mut done = 0;
    while done < 500 {
        let roll: f64 = rng.gen();
        let revision = mirror.action_log.revision;
        let (status, body, direct) = if roll < 0.1 {
            let r = call(&app, Method::POST, "/sessions/s1/undo", Some(json!({"client_seq": revision}))).await;
            (r.0, r.1, editops::undo(&mut mirror))
        } else if roll < 0.15 {
            let r = call(&app, Method::POST, "/sessions/s1/redo", Some(json!({"client_seq": revision}))).await;
            (r.0, r.1, editops::redo(&mut mirror))
        } else {
            let Some(op) = synth::random_edit(&mirror, &mut rng) else { continue };
            let r = edit(&app, revision, &op).await;
            (r.0, r.1, editops::apply(&mut mirror, op))
        };
        match direct {
            Ok(expected) => {
                assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
                let got: Applied = serde_json::from_slice(&body).unwrap();
                assert_eq!(got, expected);
                // Acknowledged means journaled.
                let (entries, _) = read_entries(&dir).unwrap();
                assert_eq!(entries.last().unwrap().revision, expected.revision);
                done += 1;
            }
            Err(_) => assert!(status.is_client_error()),
        }
    }

    let (_, log) = get_json::<ActionLog>(&app, "/sessions/s1/actions").await;
    let server_log = log.unwrap();
    assert_eq!(without_timestamps(&server_log), without_timestamps(&mirror.action_log));
    let server_state = load_dir(&dir).unwrap();
    assert_eq!(server_state.store, mirror.store);
    assert_eq!(server_state.action_log, server_log);

    let replayed = editops::replay(&initial, &server_log).unwrap();
    assert_eq!(replayed.store, server_state.store);
    let a = export_bytes(&server_state, tmp.path(), "server.csv");
    let b = export_bytes(&mirror, tmp.path(), "mirror.csv");
    let c = export_bytes(&replayed, tmp.path(), "replay.csv");
    assert!(a == b && b == c);

    // Crash: no checkpoint, plus a half-written entry that was never acked.
    drop(app);
    let mut f = fs::OpenOptions::new().append(true).open(dir.join(JOURNAL)).unwrap();
    std::io::Write::write_all(&mut f, br#"{"revision": 99999, "command": {"ty"#).unwrap();
    drop(f);
    let recovered = load_dir(&dir).unwrap();
    assert_eq!(recovered, server_state);

    // The torn tail is cut off, so serving continues cleanly.
    let app = open(&dir);
    let rev = recovered.action_log.revision;
    let mut probe = recovered.clone();
    let op = loop {
        if let Some(op) = synth::random_edit(&probe, &mut rng) {
            break op;
        }
    };
    editops::apply(&mut probe, op.clone()).unwrap();
    assert_eq!(edit(&app, rev, &op).await.0, StatusCode::OK);
    assert_eq!(load_dir(&dir).unwrap().store, probe.store);
}

#[tokio::test]
async fn checkpoint_folds_journal() {
    let initial = seeded_session(4);
    let (_tmp, dir) = setup(&initial);
    let registry = Arc::new(Registry::open(std::slice::from_ref(&dir)).unwrap());
    let app = router(registry.clone());
    let mut mirror = initial.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..30 {
        let Some(op) = synth::random_edit(&mirror, &mut rng) else { continue };
        let rev = mirror.action_log.revision;
        editops::apply(&mut mirror, op.clone()).unwrap();
        assert_eq!(edit(&app, rev, &op).await.0, StatusCode::OK);
    }
    registry.get("s1").unwrap().checkpoint().await.unwrap();
    assert!(read_entries(&dir).unwrap().0.is_empty());
    assert!(dir.join("checkpoint").join("manifest.json").is_file());
    let after = load_dir(&dir).unwrap();
    assert_eq!(after.store, mirror.store);
    assert_eq!(without_timestamps(&after.action_log), without_timestamps(&mirror.action_log));

    // An interrupted rotation falls back to the previous checkpoint.
    fs::rename(dir.join("checkpoint"), dir.join("checkpoint.old")).unwrap();
    assert_eq!(load_dir(&dir).unwrap(), after);
}

#[tokio::test]
async fn listing_and_progress() {
    let (tmp, _dir) = setup(&small_session());
    let mut other = small_session();
    other.session_id = "s2".into();
    store::save_session(&other, &tmp.path().join("s2")).unwrap();
    let app = router(Arc::new(Registry::open(&[tmp.path().to_path_buf()]).unwrap()));
    let (_, list) = get_json::<Vec<Value>>(&app, "/sessions").await;
    let ids: Vec<String> = list.unwrap().iter().map(|s| s["session_id"].as_str().unwrap().into()).collect();
    assert_eq!(ids, ["s1", "s2"]);
    let op = EditOp::Break {
        layer: Layer::Pixel,
        id: 50,
        frame: 5,
    };
    assert_eq!(edit(&app, 0, &op).await.0, StatusCode::OK);
    let (_, p) = get_json::<Value>(&app, "/sessions/s1/progress").await;
    let p = p.unwrap();
    assert_eq!(p["actions"]["Break"], 1);
    assert_eq!(p["tracklets"], 2);
    let (_, p) = get_json::<Value>(&app, "/sessions/s2/progress").await;
    assert_eq!(p.unwrap()["actions"]["Break"], 0);
}
