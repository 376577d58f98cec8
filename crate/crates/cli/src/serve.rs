//! HTTP backend for collecting ground-truth boxes.
//!
//! Every (image, tag) pair of the manifest is shown to up to
//! `annotators_per_pair` distinct annotators. Answers are appended to a
//! JSON Lines store, which is rewritten atomically on every accepted POST
//! and is the only persistent state: restarting rebuilds task status from it.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use vishash::corpus::InfographicRecord;
use vishash::eval::{ground_truth_jsonl, parse_ground_truth, GroundTruthBoxSet};
use vishash::{Error, PixelBox, Result};

use crate::cli::ServeArgs;

/// In-memory view of the store plus outstanding assignments.
pub struct Annotations {
    records: Vec<InfographicRecord>,
    by_id: HashMap<String, usize>,
    /// (record index, tag) in manifest order.
    pairs: Vec<(usize, String)>,
    pair_index: HashMap<(String, String), usize>,
    per_pair: usize,
    store: PathBuf,
    accepted: Vec<GroundTruthBoxSet>,
    done: BTreeSet<(usize, String)>,
    /// Handed out but not yet answered; lost on restart.
    pending: BTreeSet<(usize, String)>,
}

impl Annotations {
    pub fn open(records: Vec<InfographicRecord>, store: &Path, per_pair: usize) -> Result<Self> {
        if per_pair == 0 {
            return Err(Error::Config("annotators per pair must be at least 1".into()));
        }
        let by_id: HashMap<String, usize> = records.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();
        let pairs: Vec<(usize, String)> = records
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.tags.iter().map(move |t| (i, t.clone())))
            .collect();
        let pair_index = pairs
            .iter()
            .enumerate()
            .map(|(p, (i, t))| ((records[*i].id.clone(), t.clone()), p))
            .collect();
        let accepted = if store.exists() {
            let text = fs::read_to_string(store).map_err(|e| Error::io(store, e))?;
            parse_ground_truth(&text)?
        } else {
            Vec::new()
        };
        let mut state = Annotations {
            records,
            by_id,
            pairs,
            pair_index,
            per_pair,
            store: store.to_path_buf(),
            accepted: Vec::new(),
            done: BTreeSet::new(),
            pending: BTreeSet::new(),
        };
        for g in &accepted {
            if let Some(&p) = state.pair_index.get(&(g.image_id.clone(), g.tag.clone())) {
                state.done.insert((p, g.annotator.clone()));
            }
        }
        state.accepted = accepted;
        Ok(state)
    }

    fn answered(&self, pair: usize) -> usize {
        self.done.range((pair, String::new())..).take_while(|(p, _)| *p == pair).count()
    }

    fn handed_out(&self, pair: usize) -> usize {
        self.pending.range((pair, String::new())..).take_while(|(p, _)| *p == pair).count()
    }

    /// The annotator's outstanding task, else the first pair they have not
    /// seen that still needs annotators.
    pub fn next_task(&mut self, annotator: &str) -> Option<usize> {
        if let Some(p) = self.pending.iter().find(|(_, a)| a == annotator).map(|(p, _)| *p) {
            return Some(p);
        }
        let p = (0..self.pairs.len()).find(|&p| {
            let key = (p, annotator.to_string());
            !self.done.contains(&key) && self.answered(p) + self.handed_out(p) < self.per_pair
        })?;
        self.pending.insert((p, annotator.to_string()));
        Some(p)
    }

    fn task_json(&self, pair: usize, annotator: &str) -> serde_json::Value {
        let (i, tag) = &self.pairs[pair];
        let r = &self.records[*i];
        json!({
            "task_id": format!("{pair}:{annotator}"),
            "image_id": r.id,
            "tag": tag,
            "width": r.width,
            "height": r.height,
            "image_url": format!("/api/image/{}", r.id),
        })
    }

    /// Validates and persists one answer.
    pub fn submit(&mut self, submission: Submission) -> std::result::Result<GroundTruthBoxSet, ApiError> {
        let (pair, annotator) = submission
            .task_id
            .split_once(':')
            .and_then(|(p, a)| Some((p.parse::<usize>().ok()?, a.to_string())))
            .filter(|(p, a)| *p < self.pairs.len() && !a.is_empty())
            .ok_or_else(|| ApiError::not_found(format!("unknown task `{}`", submission.task_id)))?;
        let key = (pair, annotator.clone());
        if self.done.contains(&key) {
            return Err(ApiError::new(StatusCode::CONFLICT, "task already completed"));
        }
        let (i, tag) = &self.pairs[pair];
        let r = &self.records[*i];
        let answer = GroundTruthBoxSet {
            image_id: r.id.clone(),
            tag: tag.clone(),
            annotator,
            no_visual: submission.no_visual,
            boxes: submission.boxes,
        };
        if !answer.no_visual && answer.boxes.is_empty() {
            return Err(ApiError::bad_request("give at least one box or set no_visual"));
        }
        answer
            .validate(r.width, r.height)
            .map_err(|e| ApiError::bad_request(e.to_string()))?;

        self.accepted.push(answer.clone());
        if let Err(e) = write_atomic(&self.store, &ground_truth_jsonl(&self.accepted)) {
            self.accepted.pop();
            return Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()));
        }
        self.pending.remove(&key);
        self.done.insert(key);
        Ok(answer)
    }

    pub fn export(&self) -> String {
        ground_truth_jsonl(&self.accepted)
    }
}

fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Deserialize)]
pub struct Submission {
    pub task_id: String,
    #[serde(default)]
    pub boxes: Vec<PixelBox>,
    #[serde(default)]
    pub no_visual: bool,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type Shared = Arc<Mutex<Annotations>>;

pub fn router(state: Annotations) -> Router {
    Router::new()
        .route("/api/task", get(get_task))
        .route("/api/image/{id}", get(get_image))
        .route("/api/boxes", post(post_boxes))
        .route("/api/export", get(get_export))
        .with_state(Arc::new(Mutex::new(state)))
}

async fn get_task(
    State(state): State<Shared>,
    Query(query): Query<HashMap<String, String>>,
) -> std::result::Result<Json<serde_json::Value>, ApiError> {
    let annotator = query
        .get("annotator")
        .filter(|a| !a.is_empty() && !a.contains(':'))
        .ok_or_else(|| ApiError::bad_request("`annotator` is required and may not contain ':'"))?;
    let mut state = state.lock().expect("state lock");
    Ok(Json(match state.next_task(annotator) {
        Some(p) => state.task_json(p, annotator),
        None => json!({ "done": true }),
    }))
}

async fn get_image(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> std::result::Result<Response, ApiError> {
    let path = {
        let state = state.lock().expect("state lock");
        let i = *state
            .by_id
            .get(&id)
            .ok_or_else(|| ApiError::not_found(format!("unknown image `{id}`")))?;
        state.records[i].image_path.clone()
    };
    let bytes = fs::read(&path).map_err(|_| ApiError::not_found(format!("image file for `{id}` is missing")))?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

fn content_type(path: &Path) -> &'static str {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    match ext.as_str() {
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        "gif" => "image/gif",
        "webp" => "image/webp",
        "bmp" => "image/bmp",
        _ => "application/octet-stream",
    }
}

async fn post_boxes(State(state): State<Shared>, body: Bytes) -> std::result::Result<Json<GroundTruthBoxSet>, ApiError> {
    let submission: Submission =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))?;
    let mut state = state.lock().expect("state lock");
    state.submit(submission).map(Json)
}

async fn get_export(State(state): State<Shared>) -> Response {
    let text = state.lock().expect("state lock").export();
    ([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response()
}

pub fn serve(a: &ServeArgs) -> Result<()> {
    let records = crate::commands::load_records(&a.manifest)?;
    let state = Annotations::open(records, &a.store, a.annotators_per_pair)?;
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| Error::Config(format!("bad listen address: {e}")))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::io("<runtime>", e))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Error::io(addr.to_string(), e))?;
        eprintln!("serving annotation tasks on http://{addr}");
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| Error::io(addr.to_string(), e))
    })
}
