//! Open studies. Each study has one committer thread that owns its durable
//! store; handlers read from an atomically swapped snapshot.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc, RwLock};
use std::thread;

use arc_swap::ArcSwap;
use sievelab::data::RoiBox;
use sievelab::study::{now_ms, Ack, Study, StudyError, StudyStore, LOG_FILE};
use tokio::sync::oneshot;

use crate::error::ApiError;

enum Write {
    Prediction { reader_id: String, exam_id: String, left: f64, right: f64 },
    Rois { reader_id: String, image_id: String, boxes: Vec<RoiBox> },
}

struct Command {
    write: Write,
    reply: oneshot::Sender<Result<Ack, StudyError>>,
}

pub struct StudyHandle {
    snapshot: Arc<ArcSwap<Study>>,
    tx: mpsc::Sender<Command>,
}

impl StudyHandle {
    fn spawn(mut store: StudyStore) -> Self {
        let snapshot = Arc::new(ArcSwap::from_pointee(store.study().clone()));
        let (tx, rx) = mpsc::channel::<Command>();
        let published = snapshot.clone();
        thread::Builder::new()
            .name(format!("commit-{}", store.study().study_id()))
            .spawn(move || {
                for cmd in rx {
                    let result = match cmd.write {
                        Write::Prediction { reader_id, exam_id, left, right } => {
                            store.record_prediction(&reader_id, &exam_id, left, right, now_ms())
                        }
                        Write::Rois { reader_id, image_id, boxes } => store.record_rois(&reader_id, &image_id, boxes, now_ms()),
                    };
                    if result.is_ok() {
                        published.store(Arc::new(store.study().clone()));
                    }
                    let _ = cmd.reply.send(result);
                }
            })
            .expect("spawn committer thread");
        Self { snapshot, tx }
    }

    pub fn study(&self) -> Arc<Study> {
        self.snapshot.load_full()
    }

    async fn submit(&self, write: Write) -> Result<Ack, ApiError> {
        let (reply, rx) = oneshot::channel();
        self.tx
            .send(Command { write, reply })
            .map_err(|_| ApiError::Internal("study committer stopped".into()))?;
        Ok(rx.await.map_err(|_| ApiError::Internal("study committer stopped".into()))??)
    }

    pub async fn record_prediction(&self, reader_id: String, exam_id: String, left: f64, right: f64) -> Result<Ack, ApiError> {
        self.submit(Write::Prediction { reader_id, exam_id, left, right }).await
    }

    pub async fn record_rois(&self, reader_id: String, image_id: String, boxes: Vec<RoiBox>) -> Result<Ack, ApiError> {
        self.submit(Write::Rois { reader_id, image_id, boxes }).await
    }
}

/// Study ids become directory names, so they are restricted to a safe
/// alphabet.
pub fn valid_study_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

pub struct Registry {
    root: PathBuf,
    studies: RwLock<HashMap<String, Arc<StudyHandle>>>,
}

impl Registry {
    /// Opens every study found under `root`.
    pub fn open(root: &Path) -> Result<Self, ApiError> {
        std::fs::create_dir_all(root).map_err(|e| ApiError::Internal(format!("{}: {e}", root.display())))?;
        let mut studies = HashMap::new();
        let entries = std::fs::read_dir(root).map_err(|e| ApiError::Internal(format!("{}: {e}", root.display())))?;
        for entry in entries {
            let dir = entry.map_err(|e| ApiError::Internal(e.to_string()))?.path();
            if !dir.join(LOG_FILE).is_file() {
                continue;
            }
            let store = StudyStore::open(&dir)?;
            let id = store.study().study_id().to_string();
            studies.insert(id, Arc::new(StudyHandle::spawn(store)));
        }
        Ok(Self {
            root: root.to_path_buf(),
            studies: RwLock::new(studies),
        })
    }

    pub fn get(&self, id: &str) -> Result<Arc<StudyHandle>, ApiError> {
        self.studies
            .read()
            .expect("registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("study {id}")))
    }

    /// Persists a new study and starts its committer.
    pub fn create(&self, study: Study) -> Result<Arc<StudyHandle>, ApiError> {
        let id = study.study_id().to_string();
        if !valid_study_id(&id) {
            return Err(ApiError::BadRequest(format!("invalid study id {id:?}")));
        }
        let mut studies = self.studies.write().expect("registry lock");
        if studies.contains_key(&id) {
            return Err(StudyError::Conflict(format!("study {id} already exists")).into());
        }
        let store = StudyStore::create(&self.root.join(&id), study)?;
        let handle = Arc::new(StudyHandle::spawn(store));
        studies.insert(id, handle.clone());
        Ok(handle)
    }
}
