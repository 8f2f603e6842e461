use std::path::Path;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use sievelab::data::{validate_design, BreastCase, ImageMeta, PredictionRecord, PredictionSet, View};
use sievelab::filter::{default_ladder, write_png16, GrayImage};
use sievelab::io::{parse_jsonl, write_jsonl};
use sievelab::study::{create_study, StudyMode};
use sievelab_server::images::IMAGES_FILE;
use sievelab_server::{app, ServerConfig};
use tower::ServiceExt;

const ADMIN: &str = "admin-secret";
const VIEWS: [View; 4] = [View::RightCc, View::LeftCc, View::RightMlo, View::LeftMlo];

fn write_library(dir: &Path, exams: usize, height: usize, width: usize) {
    let mut metas = Vec::new();
    for e in 0..exams {
        for (vi, view) in VIEWS.iter().enumerate() {
            let id = format!("e{e}-v{vi}");
            let pixels = (0..height * width).map(|i| ((i * 37 + e * 11 + vi) % 4096) as f64).collect();
            let img = GrayImage::new(height, width, 0.1, pixels).unwrap();
            write_png16(&dir.join(format!("{id}.png")), &img).unwrap();
            metas.push(ImageMeta {
                image_id: id,
                exam_id: format!("e{e}"),
                view: *view,
                height_px: height as u32,
                width_px: width as u32,
                mm_per_pixel: 0.1,
            });
        }
    }
    write_jsonl(&dir.join(IMAGES_FILE), &metas).unwrap();
}

struct Harness {
    router: Router,
    data: tempfile::TempDir,
    images: tempfile::TempDir,
}

impl Harness {
    fn new(exams: usize) -> Self {
        let data = tempfile::tempdir().unwrap();
        let images = tempfile::tempdir().unwrap();
        write_library(images.path(), exams, 48, 64);
        let router = Self::build(data.path(), images.path());
        Self { router, data, images }
    }

    fn build(data: &Path, images: &Path) -> Router {
        let mut config = ServerConfig::new(data);
        config.images_dir = Some(images.to_path_buf());
        config.admin_token = Some(ADMIN.into());
        app(config).unwrap()
    }

    fn restart(&mut self) {
        self.router = Self::build(self.data.path(), self.images.path());
    }

    async fn raw(&self, method: Method, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Vec<u8>) {
        call(self.router.clone(), method, uri, token, body).await
    }

    async fn json(&self, method: Method, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
        let (status, bytes) = self.raw(method, uri, token, body).await;
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    async fn create(&self, id: &str, readers: usize, exams: usize, mode: &str) -> Value {
        let body = json!({
            "study_id": id,
            "readers": (0..readers).map(|r| format!("r{r}")).collect::<Vec<_>>(),
            "exams": (0..exams).map(|e| format!("e{e}")).collect::<Vec<_>>(),
            "mode": mode,
            "seed": 7,
        });
        let (status, v) = self.json(Method::POST, "/studies", Some(ADMIN), Some(body)).await;
        assert_eq!(status, StatusCode::CREATED, "{v}");
        v
    }
}

async fn call(router: Router, method: Method, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(serde_json::to_vec(&v).unwrap())
        }
        None => Body::empty(),
    };
    let resp = router.oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

fn token(created: &Value, reader: &str) -> String {
    created["tokens"][reader].as_str().unwrap().to_string()
}

fn prediction(reader: &str, exam: &str, left: f64, right: f64) -> Value {
    json!({"reader_id": reader, "exam_id": exam, "left": left, "right": right})
}

#[tokio::test]
async fn perturbation_flow_enforces_one_read_per_exam() {
    let h = Harness::new(3);
    let created = h.create("s1", 2, 3, "perturbation").await;
    assert_eq!(created["severities"].as_array().unwrap().len(), 9);
    let t0 = token(&created, "r0");
    let t1 = token(&created, "r1");
    let next_uri = "/studies/s1/readers/r0/next";

    let (status, _) = h.json(Method::GET, next_uri, None, None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = h.json(Method::GET, next_uri, Some(&t1), None).await;
    assert_eq!(status, StatusCode::FORBIDDEN);

    let (status, task) = h.json(Method::GET, next_uri, Some(&t0), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(task["status"], "task");
    let (_, again) = h.json(Method::GET, next_uri, Some(&t0), None).await;
    assert_eq!(task, again, "next is idempotent");
    assert_eq!(task["images"].as_array().unwrap().len(), 4);
    assert!(task["composite_url"].as_str().unwrap().starts_with("/images/"));

    let exam = task["exam_id"].as_str().unwrap().to_string();
    let other = (0..3).map(|e| format!("e{e}")).find(|e| *e != exam).unwrap();
    let uri = "/studies/s1/predictions";

    let (status, body) = h.json(Method::POST, uri, Some(&t0), Some(prediction("r0", &other, 1.0, 0.0))).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert_eq!(body["error"], "authorization");
    let (status, body) = h.json(Method::POST, uri, Some(&t0), Some(prediction("r0", &exam, 0.5, 0.0))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "validation");
    let (status, _) = h.json(Method::POST, uri, Some(&t1), Some(prediction("r0", &exam, 1.0, 0.0))).await;
    assert_eq!(status, StatusCode::FORBIDDEN, "token must match the reader in the body");

    let (status, ack) = h.json(Method::POST, uri, Some(&t0), Some(prediction("r0", &exam, 1.0, 0.0))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(ack["reader_id"], "r0");
    let (status, body) = h.json(Method::POST, uri, Some(&t0), Some(prediction("r0", &exam, 0.0, 0.0))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "conflict");

    let (_, after) = h.json(Method::GET, next_uri, Some(&t0), None).await;
    assert_ne!(after["exam_id"], task["exam_id"]);
    assert_eq!(after["position"], 1);
}

#[tokio::test]
async fn completed_study_exports_a_valid_prediction_set() {
    let (readers, exams) = (3, 4);
    let h = Harness::new(exams);
    let created = h.create("full", readers, exams, "perturbation").await;
    for r in 0..readers {
        let reader = format!("r{r}");
        let t = token(&created, &reader);
        loop {
            let (_, task) = h.json(Method::GET, &format!("/studies/full/readers/{reader}/next"), Some(&t), None).await;
            if task["status"] == "done" {
                break;
            }
            let exam = task["exam_id"].as_str().unwrap();
            let body = prediction(&reader, exam, (r % 2) as f64, 1.0);
            let (status, _) = h.json(Method::POST, "/studies/full/predictions", Some(&t), Some(body)).await;
            assert_eq!(status, StatusCode::CREATED);
        }
    }

    let (status, _) = h.json(Method::GET, "/studies/full/export", None, None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, files) = h.json(Method::GET, "/studies/full/export", Some(ADMIN), None).await;
    assert_eq!(status, StatusCode::OK);
    let records: Vec<PredictionRecord> = parse_jsonl(files["predictions.jsonl"].as_str().unwrap().as_bytes()).unwrap();
    let cases: Vec<BreastCase> = parse_jsonl(files["cases.jsonl"].as_str().unwrap().as_bytes()).unwrap();
    assert_eq!(records.len(), readers * exams * 2);

    let (status, raw) = h.raw(Method::GET, "/studies/full/export?file=predictions.jsonl", Some(ADMIN), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(raw, files["predictions.jsonl"].as_str().unwrap().as_bytes());

    let readers_ids: Vec<String> = (0..readers).map(|r| format!("r{r}")).collect();
    let exam_ids: Vec<String> = (0..exams).map(|e| format!("e{e}")).collect();
    let design = create_study("full", &readers_ids, &exam_ids, &default_ladder(), StudyMode::Perturbation, 7, false).unwrap();
    let set = PredictionSet::new(records, design.severities.clone(), cases).unwrap();
    let report = validate_design(&design, &set);
    assert_eq!(report.assignments, readers * exams);
    assert!(report.is_clean(), "{report:?}");
}

#[tokio::test]
async fn annotation_mode_enforces_roi_rules() {
    let data = tempfile::tempdir().unwrap();
    let images = tempfile::tempdir().unwrap();
    write_library(images.path(), 1, 600, 700);
    let mut config = ServerConfig::new(data.path());
    config.images_dir = Some(images.path().to_path_buf());
    let router = app(config).unwrap();
    let created = {
        let body = json!({"study_id": "ann", "readers": ["r0"], "exams": ["e0"], "mode": "annotation", "seed": 1});
        let (status, bytes) = call(router.clone(), Method::POST, "/studies", None, Some(body)).await;
        assert_eq!(status, StatusCode::CREATED);
        serde_json::from_slice::<Value>(&bytes).unwrap()
    };
    let t = token(&created, "r0");
    let post_rois = |image: &str, boxes: Value| {
        let body = json!({"reader_id": "r0", "image_id": image, "boxes": boxes});
        call(router.clone(), Method::POST, "/studies/ann/rois", Some(&t), Some(body))
    };
    let good = json!({"x": 10, "y": 10, "w": 250, "h": 250});

    let (status, _) = post_rois("e0-v0", json!([good])).await;
    assert_eq!(status, StatusCode::CONFLICT, "exam not read yet");

    let body = prediction("r0", "e0", 1.0, 0.0);
    let (_, task) = call(router.clone(), Method::GET, "/studies/ann/readers/r0/next", Some(&t), None).await;
    assert_eq!(serde_json::from_slice::<Value>(&task).unwrap()["severity_index"], 0);
    let (status, _) = call(router.clone(), Method::POST, "/studies/ann/predictions", Some(&t), Some(body)).await;
    assert_eq!(status, StatusCode::CREATED);

    // e0-v0 is R-CC (right breast predicted benign), e0-v1 is L-CC.
    let (status, body) = post_rois("e0-v0", json!([good])).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(serde_json::from_slice::<Value>(&body).unwrap()["error"], "state");

    let four = json!([good, good, good, good]);
    let (status, body) = post_rois("e0-v1", four).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(serde_json::from_slice::<Value>(&body).unwrap()["error"], "limit");

    let (status, body) = post_rois("e0-v1", json!([{"x": 0, "y": 0, "w": 600, "h": 600}])).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(serde_json::from_slice::<Value>(&body).unwrap()["error"], "size");

    let (status, _) = post_rois("e0-v1", json!([{"x": 500, "y": 0, "w": 250, "h": 250}])).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "box past the right edge");

    let three = json!([good, {"x": 300, "y": 10, "w": 240, "h": 260}, {"x": 10, "y": 300, "w": 250, "h": 250}]);
    let (status, _) = post_rois("e0-v1", three).await;
    assert_eq!(status, StatusCode::CREATED);
    let (status, _) = post_rois("e0-v1", json!([good])).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (_, files) = call(router.clone(), Method::GET, "/studies/ann/export", None, None).await;
    let files: Value = serde_json::from_slice(&files).unwrap();
    let rois: Vec<sievelab::data::RoiAnnotation> = parse_jsonl(files["rois.jsonl"].as_str().unwrap().as_bytes()).unwrap();
    assert_eq!(rois.len(), 1);
    assert_eq!(rois[0].boxes.len(), 3);
}

#[tokio::test]
async fn rois_rejected_in_perturbation_mode() {
    let h = Harness::new(1);
    let created = h.create("p", 1, 1, "perturbation").await;
    let t = token(&created, "r0");
    h.json(Method::POST, "/studies/p/predictions", Some(&t), Some(prediction("r0", "e0", 1.0, 1.0))).await;
    let body = json!({"reader_id": "r0", "image_id": "e0-v0", "boxes": []});
    let (status, v) = h.json(Method::POST, "/studies/p/rois", Some(&t), Some(body)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["error"], "state");
}

#[tokio::test]
async fn studies_survive_restart() {
    let mut h = Harness::new(2);
    let created = h.create("keep", 1, 2, "perturbation").await;
    let t = token(&created, "r0");
    let (_, task) = h.json(Method::GET, "/studies/keep/readers/r0/next", Some(&t), None).await;
    let exam = task["exam_id"].as_str().unwrap().to_string();
    let (status, _) = h.json(Method::POST, "/studies/keep/predictions", Some(&t), Some(prediction("r0", &exam, 1.0, 0.0))).await;
    assert_eq!(status, StatusCode::CREATED);
    let (_, before) = h.json(Method::GET, "/studies/keep/export", Some(ADMIN), None).await;

    h.restart();
    let (_, after) = h.json(Method::GET, "/studies/keep/export", Some(ADMIN), None).await;
    assert_eq!(before, after);
    let (_, next) = h.json(Method::GET, "/studies/keep/readers/r0/next", Some(&t), None).await;
    assert_eq!(next["position"], 1);
    let (status, _) = h.json(Method::POST, "/studies/keep/predictions", Some(&t), Some(prediction("r0", &exam, 1.0, 0.0))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = h.json(Method::POST, "/studies", Some(ADMIN), Some(json!({"study_id": "keep", "readers": ["a"], "exams": ["e0"], "seed": 1}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn concurrent_duplicate_submissions_accept_exactly_one() {
    let h = Harness::new(1);
    let created = h.create("race", 1, 1, "perturbation").await;
    let t = token(&created, "r0");
    let tasks: Vec<_> = (0..16)
        .map(|i| {
            let router = h.router.clone();
            let t = t.clone();
            tokio::spawn(async move {
                let body = prediction("r0", "e0", (i % 2) as f64, 0.0);
                call(router, Method::POST, "/studies/race/predictions", Some(&t), Some(body)).await.0
            })
        })
        .collect();
    let mut created_count = 0;
    for task in tasks {
        match task.await.unwrap() {
            StatusCode::CREATED => created_count += 1,
            StatusCode::CONFLICT => {}
            other => panic!("unexpected status {other}"),
        }
    }
    assert_eq!(created_count, 1);
    let (_, files) = h.json(Method::GET, "/studies/race/export", Some(ADMIN), None).await;
    assert_eq!(files["predictions.jsonl"].as_str().unwrap().lines().count(), 2);
}

#[tokio::test]
async fn concurrent_readers_all_progress() {
    let (readers, exams) = (6, 5);
    let h = Harness::new(exams);
    let created = h.create("many", readers, exams, "perturbation").await;
    let handles: Vec<_> = (0..readers)
        .map(|r| {
            let router = h.router.clone();
            let reader = format!("r{r}");
            let t = token(&created, &reader);
            tokio::spawn(async move {
                let mut n = 0;
                loop {
                    let (_, bytes) = call(router.clone(), Method::GET, &format!("/studies/many/readers/{reader}/next"), Some(&t), None).await;
                    let task: Value = serde_json::from_slice(&bytes).unwrap();
                    if task["status"] == "done" {
                        return n;
                    }
                    let body = prediction(&reader, task["exam_id"].as_str().unwrap(), 0.0, 1.0);
                    let (status, _) = call(router.clone(), Method::POST, "/studies/many/predictions", Some(&t), Some(body)).await;
                    assert_eq!(status, StatusCode::CREATED);
                    n += 1;
                }
            })
        })
        .collect();
    for handle in handles {
        assert_eq!(handle.await.unwrap(), exams);
    }
}

#[tokio::test]
async fn images_are_filtered_pngs() {
    let h = Harness::new(1);
    let (status, png) = h.raw(Method::GET, "/images/e0-v0?severity=0", None, None).await;
    assert_eq!(status, StatusCode::OK);
    let img = image_size(&png);
    assert_eq!(img, (64, 48));

    let (_, severe) = h.raw(Method::GET, "/images/e0-v0?severity=8", None, None).await;
    assert_ne!(png, severe);

    let (status, composite) = h.raw(Method::GET, "/images/e0?severity=3", None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(image_size(&composite), (128, 96));

    let (status, _) = h.raw(Method::GET, "/images/e0-v0?severity=9", None, None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = h.raw(Method::GET, "/images/nope?severity=0", None, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

fn image_size(png: &[u8]) -> (u32, u32) {
    assert_eq!(&png[1..4], b"PNG");
    let w = u32::from_be_bytes(png[16..20].try_into().unwrap());
    let h = u32::from_be_bytes(png[20..24].try_into().unwrap());
    (w, h)
}

#[tokio::test]
async fn create_rejects_bad_requests() {
    let h = Harness::new(1);
    let (status, _) = h.json(Method::POST, "/studies", None, Some(json!({}))).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = h.json(Method::POST, "/studies", Some("wrong"), Some(json!({}))).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (status, _) = h.json(Method::POST, "/studies", Some(ADMIN), Some(json!({"study_id": "x"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let dup = json!({"study_id": "d", "readers": ["a", "a"], "exams": ["e0"], "seed": 1});
    let (status, _) = h.json(Method::POST, "/studies", Some(ADMIN), Some(dup)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let traversal = json!({"study_id": "../x", "readers": ["a"], "exams": ["e0"], "seed": 1});
    let (status, _) = h.json(Method::POST, "/studies", Some(ADMIN), Some(traversal)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = h.json(Method::GET, "/studies/none/readers/a/next", Some("t"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}
