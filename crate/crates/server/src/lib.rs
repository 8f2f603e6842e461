//! HTTP service for running reader studies.
//!
//! Endpoints:
//!
//! | method | path | auth |
//! |---|---|---|
//! | POST | `/studies` | admin |
//! | GET | `/studies/{id}/readers/{rid}/next` | reader `rid` |
//! | POST | `/studies/{id}/predictions` | reader in body |
//! | POST | `/studies/{id}/rois` | reader in body |
//! | GET | `/studies/{id}/export` | admin |
//! | GET | `/images/{image_id}?severity=k[&study=id]` | none |
//!
//! Readers authenticate with the opaque bearer token issued when the study is
//! created. Admin endpoints require the configured admin token and are open
//! when none is configured. `/images/{id}` also accepts an exam id, in which
//! case it returns the exam's views composed in the ventral-hanging layout.

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use sievelab::data::{BreastCase, ImageMeta, RoiBox};
use sievelab::filter::{default_ladder, FilterSpec};
use sievelab::io::to_jsonl;
use sievelab::study::{create_study, issue_tokens, NextTask, Study, StudyMode};

pub mod error;
pub mod images;
pub mod registry;

pub use error::ApiError;
pub use images::ImageLibrary;
pub use registry::Registry;

#[derive(Clone, Debug)]
pub struct ServerConfig {
    /// Directory holding one subdirectory per study.
    pub data_dir: PathBuf,
    /// Image library directory; see [`ImageLibrary::load`].
    pub images_dir: Option<PathBuf>,
    pub admin_token: Option<String>,
    /// Ladder used when a study is created without one.
    pub ladder: Vec<FilterSpec>,
}

impl ServerConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            images_dir: None,
            admin_token: None,
            ladder: default_ladder(),
        }
    }
}

pub struct AppState {
    registry: Registry,
    library: Arc<ImageLibrary>,
    admin_token: Option<String>,
    ladder: Vec<FilterSpec>,
}

/// Builds the router, reopening any studies already on disk.
pub fn app(config: ServerConfig) -> Result<Router, ApiError> {
    let library = match &config.images_dir {
        Some(dir) => ImageLibrary::load(dir)?,
        None => ImageLibrary::empty(),
    };
    let state = Arc::new(AppState {
        registry: Registry::open(&config.data_dir)?,
        library: Arc::new(library),
        admin_token: config.admin_token,
        ladder: config.ladder,
    });
    Ok(Router::new()
        .route("/studies", post(create))
        .route("/studies/{id}/readers/{rid}/next", get(next))
        .route("/studies/{id}/predictions", post(predictions))
        .route("/studies/{id}/rois", post(rois))
        .route("/studies/{id}/export", get(export))
        .route("/images/{image_id}", get(image))
        .with_state(state))
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, config: ServerConfig) -> std::io::Result<()> {
    let router = app(config).map_err(|e| std::io::Error::other(e.to_string()))?;
    axum::serve(listener, router).await
}

fn bearer(headers: &HeaderMap) -> Result<&str, ApiError> {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .ok_or(ApiError::Unauthenticated)
}

fn same_token(a: &str, b: &str) -> bool {
    a.len() == b.len() && a.bytes().zip(b.bytes()).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

fn require_admin(state: &AppState, headers: &HeaderMap) -> Result<(), ApiError> {
    match &state.admin_token {
        None => Ok(()),
        Some(admin) if same_token(bearer(headers)?, admin) => Ok(()),
        Some(_) => Err(ApiError::Forbidden("admin token required".into())),
    }
}

fn require_reader(study: &Study, headers: &HeaderMap, reader_id: &str) -> Result<(), ApiError> {
    let token = bearer(headers)?;
    study.reader_index(reader_id)?;
    match study.token(reader_id) {
        Some(t) if same_token(token, t) => Ok(()),
        _ => Err(ApiError::Forbidden(format!("token does not belong to reader {reader_id}"))),
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("invalid request body: {e}")))
}

#[derive(Deserialize)]
struct CreateRequest {
    study_id: String,
    readers: Vec<String>,
    exams: Vec<String>,
    #[serde(default = "default_mode")]
    mode: StudyMode,
    seed: u64,
    #[serde(default)]
    balanced: bool,
    ladder: Option<Vec<FilterSpec>>,
    /// Defaults to every library image belonging to the listed exams.
    images: Option<Vec<ImageMeta>>,
    #[serde(default)]
    cases: Vec<BreastCase>,
}

fn default_mode() -> StudyMode {
    StudyMode::Perturbation
}

#[derive(Serialize)]
struct CreateResponse {
    study_id: String,
    mode: StudyMode,
    readers: usize,
    exams: usize,
    severities: Vec<FilterSpec>,
    tokens: std::collections::BTreeMap<String, String>,
}

async fn create(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    require_admin(&state, &headers)?;
    let req: CreateRequest = parse_body(&body)?;
    let ladder = req.ladder.unwrap_or_else(|| state.ladder.clone());
    let design = create_study(&req.study_id, &req.readers, &req.exams, &ladder, req.mode, req.seed, req.balanced)?;
    let images = match req.images {
        Some(images) => images,
        None => {
            let exams: std::collections::HashSet<&str> = req.exams.iter().map(String::as_str).collect();
            state.library.metas().filter(|m| exams.contains(m.exam_id.as_str())).cloned().collect()
        }
    };
    let tokens = issue_tokens(&req.readers, &mut rand::rng());
    let study = Study::new(design, tokens.clone(), images, req.cases)?;
    let handle = state.registry.create(study)?;
    let study = handle.study();
    let body = CreateResponse {
        study_id: study.study_id().to_string(),
        mode: study.design.mode,
        readers: study.design.readers.len(),
        exams: study.design.exams.len(),
        severities: study.design.severities.clone(),
        tokens,
    };
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

fn encode_component(s: &str) -> String {
    s.bytes()
        .map(|b| match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => (b as char).to_string(),
            _ => format!("%{b:02X}"),
        })
        .collect()
}

fn image_url(study_id: &str, id: &str, severity: usize) -> String {
    format!("/images/{}?severity={severity}&study={}", encode_component(id), encode_component(study_id))
}

async fn next(State(state): State<Arc<AppState>>, Path((id, rid)): Path<(String, String)>, headers: HeaderMap) -> Result<Json<serde_json::Value>, ApiError> {
    let study = state.registry.get(&id)?.study();
    require_reader(&study, &headers, &rid)?;
    let task = study.next_task(&rid)?;
    let mut value = serde_json::to_value(&task).map_err(|e| ApiError::Internal(e.to_string()))?;
    if let NextTask::Task {
        exam_id,
        severity_index,
        images,
        ..
    } = &task
    {
        value["composite_url"] = image_url(&id, exam_id, *severity_index).into();
        for (entry, im) in value["images"].as_array_mut().into_iter().flatten().zip(images) {
            entry["url"] = image_url(&id, &im.image_id, *severity_index).into();
        }
    }
    Ok(Json(value))
}

#[derive(Deserialize)]
struct PredictionRequest {
    reader_id: String,
    exam_id: String,
    left: f64,
    right: f64,
}

async fn predictions(State(state): State<Arc<AppState>>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let handle = state.registry.get(&id)?;
    let req: PredictionRequest = parse_body(&body)?;
    require_reader(&handle.study(), &headers, &req.reader_id)?;
    let ack = handle.record_prediction(req.reader_id, req.exam_id, req.left, req.right).await?;
    Ok((StatusCode::CREATED, Json(ack)).into_response())
}

#[derive(Deserialize)]
struct RoiRequest {
    reader_id: String,
    image_id: String,
    boxes: Vec<RoiBox>,
}

async fn rois(State(state): State<Arc<AppState>>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let handle = state.registry.get(&id)?;
    let req: RoiRequest = parse_body(&body)?;
    require_reader(&handle.study(), &headers, &req.reader_id)?;
    let ack = handle.record_rois(req.reader_id, req.image_id, req.boxes).await?;
    Ok((StatusCode::CREATED, Json(ack)).into_response())
}

#[derive(Deserialize)]
struct ExportQuery {
    file: Option<String>,
}

/// Without `file`, a JSON object keyed by file name; with `file`, that file
/// as JSON lines.
async fn export(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ExportQuery>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    require_admin(&state, &headers)?;
    let study = state.registry.get(&id)?.study();
    let internal = |e: sievelab::Error| ApiError::Internal(e.to_string());
    let predictions = to_jsonl(&study.export_predictions()).map_err(internal)?;
    let rois = to_jsonl(&study.export_rois()).map_err(internal)?;
    let cases = to_jsonl(&study.export_cases()).map_err(internal)?;
    let text = |b: Vec<u8>| String::from_utf8(b).expect("json is utf-8");
    let ndjson = |b: Vec<u8>| ([(header::CONTENT_TYPE, "application/x-ndjson")], b).into_response();
    match q.file.as_deref() {
        None => Ok(Json(serde_json::json!({
            "predictions.jsonl": text(predictions),
            "rois.jsonl": text(rois),
            "cases.jsonl": text(cases),
        }))
        .into_response()),
        Some("predictions.jsonl") => Ok(ndjson(predictions)),
        Some("rois.jsonl") => Ok(ndjson(rois)),
        Some("cases.jsonl") => Ok(ndjson(cases)),
        Some(other) => Err(ApiError::NotFound(format!("export file {other}"))),
    }
}

#[derive(Deserialize)]
struct ImageQuery {
    #[serde(default)]
    severity: usize,
    study: Option<String>,
}

async fn image(State(state): State<Arc<AppState>>, Path(image_id): Path<String>, Query(q): Query<ImageQuery>) -> Result<Response, ApiError> {
    let ladder = match &q.study {
        Some(id) => state.registry.get(id)?.study().design.severities.clone(),
        None => state.ladder.clone(),
    };
    let spec = ladder
        .get(q.severity)
        .cloned()
        .ok_or_else(|| ApiError::BadRequest(format!("severity {} is outside the {}-level ladder", q.severity, ladder.len())))?;
    let library = state.library.clone();
    let png = tokio::task::spawn_blocking(move || library.render(&image_id, &spec))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "image/png")], png.as_ref().clone()).into_response())
}
