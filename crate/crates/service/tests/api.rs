use std::path::PathBuf;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use rxtriage_core::ingest::{filter_archive, load_manifest};
use rxtriage_core::pipeline;
use rxtriage_core::render::{ColorMap, NormalizationMode};
use rxtriage_core::synthetic::{write_archive, AnomalySpec, ArchiveSpec};
use rxtriage_core::triage::{self, DispositionState, RankKey, ScoreDb, SequenceScore, SortOrder};
use rxtriage_service::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    db_path: PathBuf,
    state: Arc<AppState>,
    app: Router,
}

fn spec() -> ArchiveSpec {
    ArchiveSpec {
        n_sequences: 8,
        width: 24,
        height: 16,
        anomaly: Some(AnomalySpec {
            sequence_index: 5,
            row: 6,
            col: 10,
            size: 3,
            bands: vec![2, 4],
            sigmas: 6.0,
        }),
        cal_target: vec![7],
        ..ArchiveSpec::default()
    }
}

/// Fit + score a small synthetic archive and build the router over it.
fn fixture(with_scores: bool) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let manifest = load_manifest(&write_archive(&spec(), &root).unwrap()).unwrap();
    let kept = filter_archive(&manifest);
    let model = pipeline::fit_archive(&kept, false, 1e-6).unwrap();
    let fp = model.fingerprint();
    let db_path = root.join("scores.jsonl");
    let mut db = ScoreDb::new();
    if with_scores {
        let scores = kept
            .entries
            .iter()
            .map(|r| pipeline::score_and_aggregate(r, &model, &fp).unwrap().1)
            .collect();
        db.set_scores(scores);
        db.persist(&db_path).unwrap();
    }
    let state = Arc::new(AppState::new(model, manifest, db, &db_path, 4).unwrap());
    let static_dir = root.join("static");
    std::fs::create_dir_all(&static_dir).unwrap();
    std::fs::write(static_dir.join("index.html"), "<html>dash</html>").unwrap();
    let app = router(Arc::clone(&state), Some(&static_dir), None);
    Fixture {
        _dir: dir,
        root,
        db_path,
        state,
        app,
    }
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<(String, String)>, Bytes) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp
        .headers()
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_str().unwrap_or("").to_string()))
        .collect();
    let body = resp.into_body().collect().await.unwrap().to_bytes();
    (status, headers, body)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Bytes) {
    let (s, _, b) = send(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, b)
}

async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, b) = get(app, uri).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn post_json(app: &Router, uri: &str, body: &str) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (s, _, b) = send(app, req).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

fn ids(v: &Value) -> Vec<String> {
    v["items"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["sequence_id"].as_str().unwrap().to_string())
        .collect()
}

#[tokio::test]
async fn empty_score_db_lists_nothing() {
    let fx = fixture(false);
    let (status, body) = get_json(&fx.app, "/api/sequences").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"v": 1, "total": 0, "items": []}));
}

#[tokio::test]
async fn list_matches_triage_ranking_for_every_key() {
    let fx = fixture(true);
    let db = ScoreDb::load(&fx.db_path).unwrap();
    for key in RankKey::ALL {
        for order in [SortOrder::Desc, SortOrder::Asc] {
            let want: Vec<String> = triage::rank(&db.scores, key, order)
                .unwrap()
                .into_iter()
                .map(|s| s.sequence_id)
                .collect();
            let (status, body) = get_json(&fx.app, &format!("/api/sequences?sort={key}&order={order}")).await;
            assert_eq!(status, StatusCode::OK);
            assert_eq!(ids(&body), want, "{key} {order}");
            assert_eq!(body["total"], 7);
        }
    }
}

#[tokio::test]
async fn default_sort_is_max_descending_and_anomaly_leads() {
    let fx = fixture(true);
    let (_, body) = get_json(&fx.app, "/api/sequences").await;
    let items = body["items"].as_array().unwrap();
    assert_eq!(items[0]["sequence_id"], "mcam10005");
    let maxes: Vec<f64> = items.iter().map(|i| i["scores"]["max"].as_f64().unwrap()).collect();
    assert!(maxes.windows(2).all(|w| w[0] >= w[1]));
    let first = &items[0];
    assert_eq!(first["eye"], "left");
    assert_eq!(first["disposition"], "unreviewed");
    assert!(first["sol"].is_u64());
    for k in ["max", "mean", "variance", "p99"] {
        assert!(first["scores"][k].is_f64(), "{k}");
    }
}

#[tokio::test]
async fn limit_and_offset_page_the_ranking() {
    let fx = fixture(true);
    let (_, all) = get_json(&fx.app, "/api/sequences").await;
    let (_, page) = get_json(&fx.app, "/api/sequences?limit=3&offset=2").await;
    assert_eq!(ids(&page), ids(&all)[2..5].to_vec());
    assert_eq!(page["total"], 7);
    let (_, past) = get_json(&fx.app, "/api/sequences?offset=50").await;
    assert_eq!(ids(&past), Vec::<String>::new());
}

#[tokio::test]
async fn bad_query_values_are_rejected() {
    let fx = fixture(true);
    for uri in [
        "/api/sequences?sort=median",
        "/api/sequences?order=sideways",
        "/api/sequences?limit=-1",
        "/api/sequences/mcam10000/heatmap.png?norm=log",
    ] {
        let (status, body) = get_json(&fx.app, uri).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{uri}");
        assert_eq!(body["v"], 1);
        assert!(body["error"].is_string());
    }
}

#[tokio::test]
async fn foreign_model_and_unknown_sequence_scores_are_hidden() {
    let fx = fixture(true);
    {
        let mut db = ScoreDb::load(&fx.db_path).unwrap();
        let mut stray: SequenceScore = db.scores[0].clone();
        stray.sequence_id = "ghost".into();
        let mut old = db.scores[1].clone();
        old.model_fingerprint = "0".repeat(64);
        old.max = 1e9;
        db.scores.push(stray);
        db.scores.push(old);
        db.persist(&fx.db_path).unwrap();
    }
    let manifest = load_manifest(&fx.root.join("manifest.jsonl")).unwrap();
    let db = ScoreDb::load(&fx.db_path).unwrap();
    let state = AppState::new(fx.state.model.clone(), manifest, db, &fx.db_path, 4).unwrap();
    let app = router(Arc::new(state), None, None);
    let (status, body) = get_json(&app, "/api/sequences").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["total"], 7);
    assert!(!ids(&body).contains(&"ghost".to_string()));
}

#[tokio::test]
async fn sequence_detail_and_unknown_id() {
    let fx = fixture(true);
    let (status, body) = get_json(&fx.app, "/api/sequences/mcam10005").await;
    assert_eq!(status, StatusCode::OK);
    let item = &body["item"];
    assert_eq!((item["width"].as_u64(), item["height"].as_u64()), (Some(24), Some(16)));
    assert_eq!(item["bands"].as_array().unwrap().len(), 6);
    assert_eq!(item["model_fingerprint"], fx.state.fingerprint.as_str());
    let argmax = item["argmax"].as_array().unwrap();
    let (r, c) = (argmax[0].as_u64().unwrap(), argmax[1].as_u64().unwrap());
    assert!((6..9).contains(&r) && (10..13).contains(&c), "argmax {r},{c}");

    let (status, body) = get_json(&fx.app, "/api/sequences/nope").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["v"], 1);
}

#[tokio::test]
async fn model_endpoint() {
    let fx = fixture(true);
    let (status, body) = get_json(&fx.app, "/api/model").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["v"], 1);
    assert_eq!(body["n_bands"], 6);
    assert_eq!(body["fingerprint"], fx.state.fingerprint.as_str());
    assert_eq!(body["training_pixel_count"], 7 * 24 * 16);
    assert_eq!(body["band_wavelengths"].as_array().unwrap().len(), 6);
    assert!(body["score_percentiles"]["p999"].is_f64());
}

#[tokio::test]
async fn heatmaps_are_deterministic_and_mode_dependent() {
    let fx = fixture(true);
    let uri_local = "/api/sequences/mcam10002/heatmap.png";
    let (s1, _, local) = send(&fx.app, Request::get(uri_local).body(Body::empty()).unwrap()).await;
    assert_eq!(s1, StatusCode::OK);
    let (_, headers, _) = send(&fx.app, Request::get(uri_local).body(Body::empty()).unwrap()).await;
    assert!(headers.contains(&("content-type".into(), "image/png".into())));
    assert_eq!(fx.state.cached_renders(), 1);
    let (_, again) = get(&fx.app, uri_local).await;
    assert_eq!(local, again);

    let (_, explicit) = get(&fx.app, "/api/sequences/mcam10002/heatmap.png?norm=local").await;
    let (_, global) = get(&fx.app, "/api/sequences/mcam10002/heatmap.png?norm=global").await;
    assert_eq!(local, explicit);
    assert_ne!(local, global);

    let rec = fx.state.record("mcam10002").unwrap();
    for (mode, body) in [(NormalizationMode::Local, &local), (NormalizationMode::Global, &global)] {
        let want =
            pipeline::render_sequence(rec, &fx.state.model, &fx.state.fingerprint, mode, &ColorMap::default()).unwrap();
        assert_eq!(body.as_ref(), want.as_slice(), "{mode}");
        let img = image::load_from_memory(body).unwrap();
        assert_eq!((img.width(), img.height()), (24, 16));
    }

    let (status, _) = get(&fx.app, "/api/sequences/nope/heatmap.png").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn heatmap_cache_is_bounded() {
    let fx = fixture(true);
    for i in 0..6 {
        let (s, _) = get(&fx.app, &format!("/api/sequences/mcam1000{i}/heatmap.png")).await;
        assert_eq!(s, StatusCode::OK);
    }
    assert_eq!(fx.state.cached_renders(), 4);
}

#[tokio::test]
async fn band_and_rgb_products_served_unmodified() {
    let fx = fixture(true);
    let (status, body) = get(&fx.app, "/api/sequences/mcam10003/band/6.png").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body.as_ref(), std::fs::read(fx.root.join("mcam10003/L6.png")).unwrap());

    let (status, body) = get(&fx.app, "/api/sequences/mcam10003/rgb.png").await;
    assert_eq!(status, StatusCode::OK);
    let img = image::load_from_memory(&body).unwrap();
    assert_eq!(img.color().channel_count(), 3);

    for bad in ["0.png", "7.png", "x.png"] {
        let (status, _) = get(&fx.app, &format!("/api/sequences/mcam10003/band/{bad}")).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{bad}");
    }
    let (status, _) = get(&fx.app, "/api/sequences/nope/band/1.png").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn disposition_round_trip_and_persistence() {
    let fx = fixture(true);
    let (status, body) = post_json(
        &fx.app,
        "/api/sequences/mcam10005/disposition",
        r#"{"state":"flagged","note":"bright patch, check L3"}"#,
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["v"], 1);
    assert_eq!(body["disposition"]["state"], "flagged");
    assert_eq!(body["disposition"]["sequence_id"], "mcam10005");

    let (_, listed) = get_json(&fx.app, "/api/sequences").await;
    assert_eq!(listed["items"][0]["disposition"], "flagged");
    let (_, detail) = get_json(&fx.app, "/api/sequences/mcam10005").await;
    assert_eq!(detail["item"]["note"], "bright patch, check L3");

    // persisted: a fresh state over the same files sees it
    let db = ScoreDb::load(&fx.db_path).unwrap();
    assert_eq!(
        db.disposition("mcam10005").unwrap().note.as_deref(),
        Some("bright patch, check L3")
    );
    let manifest = load_manifest(&fx.root.join("manifest.jsonl")).unwrap();
    let state = AppState::new(fx.state.model.clone(), manifest, db, &fx.db_path, 4).unwrap();
    let app = router(Arc::new(state), None, None);
    let (_, reloaded) = get_json(&app, "/api/sequences/mcam10005").await;
    assert_eq!(reloaded["item"]["disposition"], "flagged");

    // last write wins
    let (status, _) = post_json(
        &fx.app,
        "/api/sequences/mcam10005/disposition",
        r#"{"state":"reviewed"}"#,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let db = ScoreDb::load(&fx.db_path).unwrap();
    assert_eq!(db.state_of("mcam10005"), DispositionState::Reviewed);
}

#[tokio::test]
async fn disposition_validation() {
    let fx = fixture(true);
    let uri = "/api/sequences/mcam10001/disposition";
    let (status, _) = post_json(&fx.app, uri, r#"{"state":"maybe"}"#).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = post_json(&fx.app, uri, "not json").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let long = "é".repeat(2001);
    let (status, body) = post_json(&fx.app, uri, &json!({"state": "flagged", "note": long}).to_string()).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(body["v"], 1);
    let fits = "é".repeat(2000);
    let (status, _) = post_json(&fx.app, uri, &json!({"state": "flagged", "note": fits}).to_string()).await;
    assert_eq!(status, StatusCode::OK);

    let (status, _) = post_json(&fx.app, "/api/sequences/nope/disposition", r#"{"state":"flagged"}"#).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn concurrent_dispositions_all_land() {
    let fx = fixture(true);
    let mut tasks = Vec::new();
    for i in 0..7 {
        let app = fx.app.clone();
        tasks.push(tokio::spawn(async move {
            post_json(
                &app,
                &format!("/api/sequences/mcam1000{i}/disposition"),
                r#"{"state":"reviewed"}"#,
            )
            .await
            .0
        }));
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }
    let db = ScoreDb::load(&fx.db_path).unwrap();
    assert_eq!(db.dispositions().len(), 7);
    assert_eq!(db.scores.len(), 7);
}

#[tokio::test]
async fn static_files_and_cors() {
    let fx = fixture(true);
    let (status, body) = get(&fx.app, "/index.html").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body.as_ref(), b"<html>dash</html>");

    let req = Request::get("/api/model")
        .header(header::ORIGIN, "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let (_, headers, _) = send(&fx.app, req).await;
    assert!(headers
        .iter()
        .any(|(k, v)| k == "access-control-allow-origin" && v == "*"));
}
