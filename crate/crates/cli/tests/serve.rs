use std::collections::BTreeSet;
use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use vishash::corpus::InfographicRecord;
use vishash::eval::parse_ground_truth;
use vishash_cli::serve::{router, Annotations};

fn record(dir: &Path, id: &str, tags: &[&str]) -> InfographicRecord {
    let path = dir.join(format!("{id}.png"));
    image::RgbImage::from_pixel(40, 30, image::Rgb([200, 10, 10])).save(&path).unwrap();
    InfographicRecord {
        id: id.into(),
        image_path: path,
        width: 40,
        height: 30,
        category: Some("c".into()),
        tags: tags.iter().map(|t| t.to_string()).collect(),
        transcript: vec!["word".into()],
        gt_icons: None,
    }
}

fn fixture(dir: &Path) -> Vec<InfographicRecord> {
    vec![record(dir, "img_a", &["cat", "dog"]), record(dir, "img_b", &["dog"])]
}

fn app(dir: &Path, per_pair: usize) -> Router {
    router(Annotations::open(fixture(dir), &dir.join("store.jsonl"), per_pair).unwrap())
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>, Option<String>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let ctype = resp
        .headers()
        .get("content-type")
        .map(|v| v.to_str().unwrap().to_string());
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, body, ctype)
}

async fn task(app: &Router, annotator: &str) -> Value {
    let req = Request::get(format!("/api/task?annotator={annotator}")).body(Body::empty()).unwrap();
    let (status, body, _) = call(app, req).await;
    assert_eq!(status, StatusCode::OK);
    serde_json::from_slice(&body).unwrap()
}

async fn post(app: &Router, body: Value) -> (StatusCode, Value) {
    let req = Request::post("/api/boxes")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (status, body, _) = call(app, req).await;
    (status, serde_json::from_slice(&body).unwrap_or(Value::Null))
}

async fn export(app: &Router) -> String {
    let (status, body, ctype) = call(app, Request::get("/api/export").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ctype.as_deref(), Some("application/x-ndjson"));
    String::from_utf8(body).unwrap()
}

fn one_box() -> Value {
    json!([{ "x": 2, "y": 3, "w": 10, "h": 8 }])
}

#[tokio::test]
async fn no_visual_answer_is_stored_with_empty_boxes() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 3);
    let t = task(&app, "ann1").await;
    let (status, _) = post(&app, json!({ "task_id": t["task_id"], "boxes": [], "no_visual": true })).await;
    assert_eq!(status, StatusCode::OK);
    let stored = parse_ground_truth(&export(&app).await).unwrap();
    assert_eq!(stored.len(), 1);
    assert!(stored[0].no_visual);
    assert!(stored[0].boxes.is_empty());
    assert_eq!(stored[0].annotator, "ann1");
}

#[tokio::test]
async fn rejects_bad_boxes() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 3);
    let t = task(&app, "ann1").await;
    let id = t["task_id"].clone();

    let outside = json!([{ "x": 35, "y": 0, "w": 10, "h": 5 }]);
    assert_eq!(post(&app, json!({ "task_id": id, "boxes": outside })).await.0, StatusCode::BAD_REQUEST);
    let empty = json!([{ "x": 1, "y": 1, "w": 0, "h": 5 }]);
    assert_eq!(post(&app, json!({ "task_id": id, "boxes": empty })).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(
        post(&app, json!({ "task_id": id, "boxes": one_box(), "no_visual": true })).await.0,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(post(&app, json!({ "task_id": id, "boxes": [] })).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(post(&app, json!({ "boxes": [] })).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(export(&app).await, "");
}

#[tokio::test]
async fn second_submission_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 3);
    let t = task(&app, "ann1").await;
    let body = json!({ "task_id": t["task_id"], "boxes": one_box() });
    assert_eq!(post(&app, body.clone()).await.0, StatusCode::OK);
    assert_eq!(post(&app, body).await.0, StatusCode::CONFLICT);
    assert_eq!(export(&app).await.lines().count(), 1);
}

#[tokio::test]
async fn unknown_task_and_image_are_404() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 3);
    for id in ["99:ann1", "nonsense", "0:"] {
        assert_eq!(post(&app, json!({ "task_id": id, "boxes": one_box() })).await.0, StatusCode::NOT_FOUND);
    }
    let (status, _, _) = call(&app, Request::get("/api/image/missing").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn serves_image_bytes_with_content_type() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 3);
    let (status, body, ctype) = call(&app, Request::get("/api/image/img_b").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ctype.as_deref(), Some("image/png"));
    assert_eq!(body, std::fs::read(dir.path().join("img_b.png")).unwrap());
}

#[tokio::test]
async fn annotators_receive_distinct_pairings_until_exhausted() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 1);
    let mut seen = BTreeSet::new();
    for round in 0..3 {
        for annotator in ["alice", "bob"] {
            let t = task(&app, annotator).await;
            if t["done"] == json!(true) {
                continue;
            }
            let pair = (t["image_id"].to_string(), t["tag"].to_string());
            assert!(seen.insert(pair), "pair handed out twice in round {round}");
            let (status, _) = post(&app, json!({ "task_id": t["task_id"], "boxes": one_box() })).await;
            assert_eq!(status, StatusCode::OK);
        }
    }
    assert_eq!(seen.len(), 3);
    assert_eq!(task(&app, "alice").await, json!({ "done": true }));
    assert_eq!(task(&app, "carol").await, json!({ "done": true }));
}

#[tokio::test]
async fn outstanding_task_is_repeated_and_pairs_are_unique_per_annotator() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 3);
    let first = task(&app, "alice").await;
    assert_eq!(task(&app, "alice").await, first);

    let mut pairs = BTreeSet::new();
    loop {
        let t = task(&app, "alice").await;
        if t["done"] == json!(true) {
            break;
        }
        assert!(pairs.insert(t["task_id"].to_string()));
        post(&app, json!({ "task_id": t["task_id"], "boxes": one_box() })).await;
    }
    assert_eq!(pairs.len(), 3);
    // Others still get every pair, since each needs three annotators.
    let t = task(&app, "bob").await;
    assert_eq!(t["image_id"], first["image_id"]);
    assert_eq!(t["tag"], first["tag"]);
}

#[tokio::test]
async fn export_preserves_arrival_order_and_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store.jsonl");
    let app1 = app(dir.path(), 3);
    let mut expected = Vec::new();
    for annotator in ["zed", "amy", "kim"] {
        let t = task(&app1, annotator).await;
        let (status, stored) = post(&app1, json!({ "task_id": t["task_id"], "boxes": one_box() })).await;
        assert_eq!(status, StatusCode::OK);
        expected.push(stored["annotator"].as_str().unwrap().to_string());
    }
    let before = export(&app1).await;
    let order: Vec<String> = parse_ground_truth(&before).unwrap().into_iter().map(|g| g.annotator).collect();
    assert_eq!(order, expected);
    assert_eq!(std::fs::read_to_string(&store).unwrap(), before);
    assert!(!dir.path().join("store.jsonl.tmp").exists());

    drop(app1);
    let app2 = app(dir.path(), 3);
    assert_eq!(export(&app2).await, before);
    // The first pair now has its three annotators; zed moves on.
    let t = task(&app2, "zed").await;
    assert_eq!(t["task_id"], json!("1:zed"));
    let t = task(&app2, "newcomer").await;
    assert_eq!(t["task_id"], json!("1:newcomer"));
    let (status, _) = post(&app2, json!({ "task_id": "0:zed", "boxes": one_box() })).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn task_requires_annotator() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 3);
    let (status, _, _) = call(&app, Request::get("/api/task").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}
