use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::Engine;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use cbir_core::feedback::{alrf_session, manual_rf_simulated, AlrfConfig, FeedbackOracle, HiKernel, RfConfig};
use cbir_core::global::{extract_global, GlobalKind, GlobalParams};
use cbir_core::image::RgbImage;
use cbir_core::retrieval::{rank, Metric};
use cbir_core::store::FeatureTable;
use cbir_core::synthetic::{gaussian_blobs, BlobSpec};
use cbir_service::{router, AppState, Catalog, Sessions, DEFAULT_TTL};

fn blobs() -> (FeatureTable, FeedbackOracle) {
    gaussian_blobs(
        &BlobSpec {
            sigma: 1.2,
            per_class: 30,
            ..Default::default()
        },
        3,
    )
}

fn app_with(catalog: Catalog, ttl: Duration) -> Router {
    router(Arc::new(AppState::new(catalog, Sessions::new(ttl))), None)
}

fn app() -> Router {
    let mut c = Catalog::new();
    c.insert_table(blobs().0);
    app_with(c, DEFAULT_TTL)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

fn ids(v: &Value) -> Vec<u32> {
    v.as_array().unwrap().iter().map(|h| h["id"].as_u64().unwrap() as u32).collect()
}

#[tokio::test]
async fn query_by_id_returns_query_first_and_pages() {
    let app = app();
    let (s, v) = call_json(
        &app,
        "POST",
        "/query",
        Some(json!({"dataset": "synthetic", "kind": "blobs", "image_id": 7, "page_size": 5})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["total"], 90);
    let first = ids(&v["hits"]);
    assert_eq!(first.len(), 5);
    assert_eq!(first[0], 7);

    let (_, v2) = call_json(
        &app,
        "POST",
        "/query",
        Some(json!({"dataset": "synthetic", "kind": "blobs", "image_id": 7, "page_size": 5, "page": 1, "exclude_query": true})),
    )
    .await;
    assert_eq!(v2["total"], 89);
    let (t, _) = blobs();
    let want = rank(t.vector(7).unwrap(), Some(7), &t, Metric::Euclidean, true).unwrap().ids();
    assert_eq!(ids(&v2["hits"]), want[5..10]);
}

#[tokio::test]
async fn unknown_names_are_not_found() {
    let app = app();
    let (s, v) = call_json(
        &app,
        "POST",
        "/query",
        Some(json!({"dataset": "synthetic", "kind": "nope", "image_id": 0})),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["kinds"], json!(["blobs"]));
    let (s, _) = call_json(&app, "POST", "/query", Some(json!({"dataset": "x", "kind": "blobs", "image_id": 0}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call_json(
        &app,
        "POST",
        "/query",
        Some(json!({"dataset": "synthetic", "kind": "blobs", "image_id": 10_000})),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

fn png(img: &RgbImage) -> Vec<u8> {
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.as_raw().to_vec()).unwrap();
    let mut out = Vec::new();
    buf.write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png).unwrap();
    out
}

#[tokio::test]
async fn uploaded_constant_image_queries_with_one_hot_histogram() {
    let params = GlobalParams::default();
    let mut t = FeatureTable::new("tiles", "hist_l".parse().unwrap(), 256).unwrap();
    for i in 0..6u32 {
        let img = RgbImage::from_fn(16, 16, |x, y| {
            let v = ((x + y) as u32 * (i + 1) * 3 % 256) as u8;
            [v, v, v]
        });
        t.push(i, &extract_global(i, &img, GlobalKind::HistL, &params).unwrap().values).unwrap();
    }
    let mut c = Catalog::new();
    c.insert_table(t.clone());
    let app = app_with(c, DEFAULT_TTL);

    let upload = base64::engine::general_purpose::STANDARD.encode(png(&RgbImage::filled(20, 20, [90, 90, 90])));
    let (s, v) = call_json(
        &app,
        "POST",
        "/query",
        Some(json!({"dataset": "tiles", "kind": "hist_l", "image": upload, "page_size": 10, "metric": "histint"})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let mut q = vec![0.0f32; 256];
    q[90] = 1.0;
    let want = rank(&q, None, &t, Metric::HistIntersection, false).unwrap();
    assert_eq!(ids(&v["hits"]), want.ids());

    let (s, _) = call_json(
        &app,
        "POST",
        "/query",
        Some(json!({"dataset": "tiles", "kind": "hist_l", "image": "bm90IGFuIGltYWdl"})),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

async fn open_session(app: &Router, scheme: &str, query: u32, params: Value) -> Value {
    let (s, v) = call_json(
        app,
        "POST",
        "/session?limit=100000",
        Some(json!({"dataset": "synthetic", "kind": "blobs", "query_id": query, "scheme": scheme, "params": params})),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v
}

/// Answers every proposal from class labels until the session finishes.
async fn drive(app: &Router, mut v: Value, oracle: &FeedbackOracle, query: u32) -> Value {
    let mut active_rounds = 0;
    while let Some(p) = v["proposal"].as_array().cloned() {
        let was_active = v["phase"] == "active";
        let labels: Vec<Value> = p
            .iter()
            .map(|id| {
                let id = id.as_u64().unwrap() as u32;
                json!({"id": id, "relevant": oracle.is_relevant(query, id).unwrap()})
            })
            .collect();
        if was_active {
            assert_eq!(labels.len(), 5);
            active_rounds += 1;
        }
        let uri = format!("/session/{}/feedback?limit=100000", v["id"].as_str().unwrap());
        let (s, next) = call_json(app, "POST", &uri, Some(json!({ "labels": labels }))).await;
        assert_eq!(s, StatusCode::OK, "{next}");
        if was_active {
            assert_eq!(next["iteration"], v["iteration"].as_u64().unwrap() + 1);
        }
        v = next;
    }
    if v["scheme"] == "alrf" {
        assert!(active_rounds <= 10);
    }
    assert_eq!(v["phase"], "finished");
    v
}

#[tokio::test]
async fn alrf_over_http_matches_in_process_session() {
    let app = app();
    let (t, oracle) = blobs();
    let kernel = HiKernel::cached(&t).unwrap();
    for q in [0u32, 45, 89] {
        let cfg = AlrfConfig {
            seed: 9,
            ..Default::default()
        };
        let v = open_session(&app, "alrf", q, json!({"seed": 9})).await;
        assert_eq!(v["phase"], "seeding");
        let v = drive(&app, v, &oracle, q).await;
        let want = alrf_session(q, &kernel, Metric::Euclidean, &oracle, &cfg).unwrap();
        assert_eq!(ids(&v["ranking"]), want.list.ids());
        assert_eq!(v["iteration"], want.trace.len());
        let shown: Vec<Vec<u32>> = v["trace"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| r["shown"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap() as u32).collect())
            .collect();
        assert_eq!(shown, want.trace.iter().map(|r| r.shown.clone()).collect::<Vec<_>>());
    }
}

#[tokio::test]
async fn manual_over_http_matches_simulated_feedback() {
    let app = app();
    let (t, oracle) = blobs();
    for q in [3u32, 61] {
        let v = open_session(&app, "manual", q, json!({"n": 5, "page_size": 4})).await;
        let v = drive(&app, v, &oracle, q).await;
        let want = manual_rf_simulated(q, &t, Metric::Euclidean, &RfConfig::default(), &oracle).unwrap();
        assert_eq!(ids(&v["ranking"]), want.list.ids());
        let exp: Vec<u32> = v["expansion"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap() as u32).collect();
        assert_eq!(exp, want.expansion);
    }
}

#[tokio::test]
async fn all_irrelevant_labels_advance_and_replay_is_deterministic() {
    let app = app();
    let (_, oracle) = blobs();
    let mut finals = Vec::new();
    for _ in 0..2 {
        let v = open_session(&app, "alrf", 10, json!({"iterations": 3})).await;
        // seed honestly, then call everything irrelevant
        let mut v = v;
        while v["phase"] == "seeding" {
            let labels: Vec<Value> = v["proposal"]
                .as_array()
                .unwrap()
                .iter()
                .map(|id| json!({"id": id, "relevant": oracle.is_relevant(10, id.as_u64().unwrap() as u32).unwrap()}))
                .collect();
            let uri = format!("/session/{}/feedback?limit=100000", v["id"].as_str().unwrap());
            v = call_json(&app, "POST", &uri, Some(json!({ "labels": labels }))).await.1;
        }
        for round in 0..3 {
            assert_eq!(v["iteration"], round);
            let labels: Vec<Value> =
                v["proposal"].as_array().unwrap().iter().map(|id| json!({"id": id, "relevant": false})).collect();
            let uri = format!("/session/{}/feedback?limit=100000", v["id"].as_str().unwrap());
            let (s, next) = call_json(&app, "POST", &uri, Some(json!({ "labels": labels }))).await;
            assert_eq!(s, StatusCode::OK);
            v = next;
        }
        assert_eq!(v["iteration"], 3);
        assert_eq!(v["phase"], "finished");
        finals.push(ids(&v["ranking"]));
    }
    assert_eq!(finals[0], finals[1]);
}

#[tokio::test]
async fn contradictions_conflict_and_finished_sessions_are_gone() {
    let app = app();
    let v = open_session(&app, "manual", 0, json!({"n": 1, "page_size": 2})).await;
    let id = v["id"].as_str().unwrap().to_string();
    let p: Vec<u64> = v["proposal"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect();
    let uri = format!("/session/{id}/feedback");
    let first = json!({"labels": [{"id": p[0], "relevant": true}, {"id": p[1], "relevant": true}]});
    let (s, v) = call_json(&app, "POST", &uri, Some(first)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["phase"], "finished");
    let (s, _) = call_json(&app, "POST", &uri, Some(json!({"labels": []}))).await;
    assert_eq!(s, StatusCode::GONE);

    let v = open_session(&app, "alrf", 0, json!({})).await;
    let uri = format!("/session/{}/feedback", v["id"].as_str().unwrap());
    let p: Vec<u64> = v["proposal"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect();
    let labels: Vec<Value> = p.iter().map(|&id| json!({"id": id, "relevant": id < 30})).collect();
    let (s, _) = call_json(&app, "POST", &uri, Some(json!({ "labels": labels }))).await;
    assert_eq!(s, StatusCode::OK);
    let flipped = json!({"labels": [{"id": p[0], "relevant": p[0] >= 30}]});
    let (s, v) = call_json(&app, "POST", &uri, Some(flipped)).await;
    assert_eq!(s, StatusCode::CONFLICT, "{v}");
    let (s, _) = call_json(&app, "POST", &uri, Some(json!({"labels": []}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let (s, _) = call_json(&app, "GET", "/session/not-a-session", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn idle_sessions_expire() {
    let mut c = Catalog::new();
    c.insert_table(blobs().0);
    let app = app_with(c, Duration::from_millis(50));
    let v = open_session(&app, "manual", 0, json!({})).await;
    let uri = format!("/session/{}", v["id"].as_str().unwrap());
    assert_eq!(call(&app, "GET", &uri, None).await.0, StatusCode::OK);
    tokio::time::sleep(Duration::from_millis(120)).await;
    assert_eq!(call(&app, "GET", &uri, None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn thumbnails_are_served_and_cached() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("tiny");
    for (c, rgb) in [("a", [200u8, 10, 10]), ("b", [10u8, 10, 200])] {
        std::fs::create_dir_all(root.join(c)).unwrap();
        for i in 0..2 {
            std::fs::write(root.join(c).join(format!("{i}.png")), png(&RgbImage::filled(300, 200, rgb))).unwrap();
        }
    }
    let mut c = Catalog::new();
    c.attach_images(cbir_core::dataset::Dataset::load(&root).unwrap());
    let app = app_with(c, DEFAULT_TTL);
    let (s, first) = call(&app, "GET", "/image/2/thumb", None).await;
    assert_eq!(s, StatusCode::OK);
    let img = image::load_from_memory(&first).unwrap();
    assert_eq!((img.width(), img.height()), (128, 85));
    assert_eq!(img.to_rgb8().get_pixel(5, 5).0, [10, 10, 200]);
    let (_, again) = call(&app, "GET", "/image/2/thumb?dataset=tiny", None).await;
    assert_eq!(first, again);
    assert_eq!(call(&app, "GET", "/image/99/thumb", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn cors_is_permissive() {
    let app = app();
    let req = Request::builder()
        .method("GET")
        .uri("/datasets")
        .header("origin", "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");
}
