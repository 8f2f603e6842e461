//! Reader-study protocol state: severity assignment, task sequencing,
//! submission rules and an append-only event log.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    BreastCase, CaseLabel, ImageMeta, PredictionRecord, PredictionSet, ReaderKind, RoiAnnotation, RoiBox, Side, View,
    MAX_ROIS_PER_IMAGE,
};
use crate::filter::{validate_ladder, FilterSpec, GrayImage};

pub const LOG_FILE: &str = "events.log";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const DEFAULT_SNAPSHOT_EVERY: u64 = 500;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("not authorized: {0}")]
    Authorization(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("limit exceeded: {0}")]
    Limit(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("state error: {0}")]
    State(String),
    #[error("invalid study: {0}")]
    Invalid(String),
    #[error("corrupt event log {path}: {reason}")]
    CorruptLog { path: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StudyError + '_ {
    move |source| StudyError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum StudyMode {
    Perturbation,
    Annotation,
}

impl std::str::FromStr for StudyMode {
    type Err = StudyError;

    fn from_str(s: &str) -> Result<Self, StudyError> {
        match s {
            "perturbation" => Ok(StudyMode::Perturbation),
            "annotation" => Ok(StudyMode::Annotation),
            other => Err(StudyError::Invalid(format!("unknown study mode {other:?}"))),
        }
    }
}

/// Reader × exam severity assignment and per-reader task order.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct StudyDesign {
    pub study_id: String,
    pub mode: StudyMode,
    pub readers: Vec<String>,
    pub exams: Vec<String>,
    pub severities: Vec<FilterSpec>,
    /// `assignment[reader][exam]` is a severity index.
    pub assignment: Vec<Vec<usize>>,
    /// `task_order[reader]` is a permutation of exam indices.
    pub task_order: Vec<Vec<usize>>,
    pub balanced: bool,
}

fn check_unique(kind: &str, ids: &[String]) -> Result<(), StudyError> {
    if ids.is_empty() {
        return Err(StudyError::Invalid(format!("no {kind}s given")));
    }
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(StudyError::Conflict(format!("duplicate {kind} id {id}")));
        }
    }
    Ok(())
}

/// Builds a design. In perturbation mode each (reader, exam) draws a severity
/// uniformly and independently; with `balanced` set, each exam instead cycles
/// through the ladder across a shuffled reader order from a random offset.
/// Annotation mode shows every exam unperturbed.
pub fn create_study(
    study_id: &str,
    readers: &[String],
    exams: &[String],
    ladder: &[FilterSpec],
    mode: StudyMode,
    seed: u64,
    balanced: bool,
) -> Result<StudyDesign, StudyError> {
    check_unique("reader", readers)?;
    check_unique("exam", exams)?;
    validate_ladder(ladder).map_err(|e| StudyError::Invalid(e.to_string()))?;
    let (r, e, s) = (readers.len(), exams.len(), ladder.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![vec![0usize; e]; r];
    if mode == StudyMode::Perturbation {
        if balanced {
            let mut order: Vec<usize> = (0..r).collect();
            for ei in 0..e {
                order.shuffle(&mut rng);
                let offset = rng.random_range(0..s);
                for (k, &ri) in order.iter().enumerate() {
                    assignment[ri][ei] = (offset + k) % s;
                }
            }
        } else {
            for row in assignment.iter_mut() {
                for cell in row.iter_mut() {
                    *cell = rng.random_range(0..s);
                }
            }
        }
    }
    let task_order = (0..r)
        .map(|_| {
            let mut order: Vec<usize> = (0..e).collect();
            order.shuffle(&mut rng);
            order
        })
        .collect();
    Ok(StudyDesign {
        study_id: study_id.to_string(),
        mode,
        readers: readers.to_vec(),
        exams: exams.to_vec(),
        severities: ladder.to_vec(),
        assignment,
        task_order,
        balanced,
    })
}

/// Opaque bearer tokens, one per reader.
pub fn issue_tokens(readers: &[String], rng: &mut impl Rng) -> BTreeMap<String, String> {
    readers
        .iter()
        .map(|r| {
            let bytes: [u8; 16] = rng.random();
            (r.clone(), bytes.iter().map(|b| format!("{b:02x}")).collect())
        })
        .collect()
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct Submission {
    pub reader_id: String,
    pub exam_id: String,
    pub severity_index: usize,
    pub left: u8,
    pub right: u8,
    pub submitted_at_ms: u64,
}

impl Submission {
    pub fn prediction(&self, side: Side) -> u8 {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct RoiSubmission {
    pub reader_id: String,
    pub image_id: String,
    pub boxes: Vec<RoiBox>,
    pub submitted_at_ms: u64,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Created {
        design: StudyDesign,
        tokens: BTreeMap<String, String>,
        images: Vec<ImageMeta>,
        cases: Vec<BreastCase>,
    },
    Prediction(Submission),
    Rois(RoiSubmission),
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct TaskImage {
    pub image_id: String,
    pub view: View,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextTask {
    Task {
        study_id: String,
        reader_id: String,
        exam_id: String,
        severity_index: usize,
        /// 0-based position in the reader's order.
        position: usize,
        total: usize,
        images: Vec<TaskImage>,
    },
    Done {
        study_id: String,
        reader_id: String,
        total: usize,
    },
}

/// Acknowledgement returned for an accepted write.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct Ack {
    pub study_id: String,
    pub reader_id: String,
    pub seq: u64,
}

/// In-memory study state, rebuilt by replaying events.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct Study {
    pub design: StudyDesign,
    tokens: BTreeMap<String, String>,
    images: Vec<ImageMeta>,
    cases: Vec<BreastCase>,
    /// `submissions[reader][exam]`.
    submissions: Vec<Vec<Option<Submission>>>,
    /// Number of submitted exams per reader, which is also the position of
    /// the current task.
    progress: Vec<usize>,
    rois: Vec<RoiSubmission>,
}

fn parse_binary(side: &str, v: f64) -> Result<u8, StudyError> {
    if v == 0.0 {
        Ok(0)
    } else if v == 1.0 {
        Ok(1)
    } else {
        Err(StudyError::Validation(format!("{side} prediction {v} is not 0 or 1")))
    }
}

/// Default case id for one breast of an exam when no case list is given.
pub fn default_case_id(exam_id: &str, side: Side) -> String {
    let s = match side {
        Side::Left => "L",
        Side::Right => "R",
    };
    format!("{exam_id}_{s}")
}

impl Study {
    /// Starts a study from a design. `images` maps image ids to exams and
    /// views; `cases` supplies case ids for export and may be empty.
    pub fn new(
        design: StudyDesign,
        tokens: BTreeMap<String, String>,
        images: Vec<ImageMeta>,
        cases: Vec<BreastCase>,
    ) -> Result<Self, StudyError> {
        Self::from_created(Event::Created {
            design,
            tokens,
            images,
            cases,
        })
    }

    fn from_created(event: Event) -> Result<Self, StudyError> {
        let Event::Created {
            design,
            tokens,
            images,
            cases,
        } = event
        else {
            return Err(StudyError::Invalid("first event must create the study".into()));
        };
        let (r, e) = (design.readers.len(), design.exams.len());
        if design.assignment.len() != r
            || design.assignment.iter().any(|row| row.len() != e || row.iter().any(|&s| s >= design.severities.len()))
        {
            return Err(StudyError::Invalid("assignment does not cover readers × exams".into()));
        }
        for order in &design.task_order {
            let mut sorted = order.clone();
            sorted.sort_unstable();
            if sorted != (0..e).collect::<Vec<_>>() {
                return Err(StudyError::Invalid("task order is not a permutation of exams".into()));
            }
        }
        if design.task_order.len() != r {
            return Err(StudyError::Invalid("task order missing for some readers".into()));
        }
        if let Some(missing) = design.readers.iter().find(|rd| !tokens.contains_key(*rd)) {
            return Err(StudyError::Invalid(format!("no token for reader {missing}")));
        }
        let exams: HashSet<&str> = design.exams.iter().map(String::as_str).collect();
        let mut image_ids = HashSet::new();
        for im in &images {
            if !exams.contains(im.exam_id.as_str()) {
                return Err(StudyError::Invalid(format!("image {} refers to unknown exam {}", im.image_id, im.exam_id)));
            }
            if !image_ids.insert(im.image_id.as_str()) {
                return Err(StudyError::Conflict(format!("duplicate image id {}", im.image_id)));
            }
        }
        for c in &cases {
            if !exams.contains(c.exam_id.as_str()) {
                return Err(StudyError::Invalid(format!("case {} refers to unknown exam {}", c.case_id, c.exam_id)));
            }
        }
        Ok(Self {
            submissions: vec![vec![None; e]; r],
            progress: vec![0; r],
            rois: Vec::new(),
            design,
            tokens,
            images,
            cases,
        })
    }

    pub fn study_id(&self) -> &str {
        &self.design.study_id
    }

    pub fn reader_index(&self, reader_id: &str) -> Result<usize, StudyError> {
        self.design
            .readers
            .iter()
            .position(|r| r == reader_id)
            .ok_or_else(|| StudyError::NotFound(format!("reader {reader_id} is not enrolled")))
    }

    pub fn token(&self, reader_id: &str) -> Option<&str> {
        self.tokens.get(reader_id).map(String::as_str)
    }

    pub fn tokens(&self) -> &BTreeMap<String, String> {
        &self.tokens
    }

    /// Reader owning `token`, if any.
    pub fn reader_for_token(&self, token: &str) -> Option<&str> {
        self.tokens.iter().find(|(_, t)| t.as_str() == token).map(|(r, _)| r.as_str())
    }

    pub fn image(&self, image_id: &str) -> Option<&ImageMeta> {
        self.images.iter().find(|m| m.image_id == image_id)
    }

    pub fn images(&self) -> &[ImageMeta] {
        &self.images
    }

    pub fn submission(&self, reader: usize, exam: usize) -> Option<&Submission> {
        self.submissions[reader][exam].as_ref()
    }

    pub fn num_submissions(&self) -> usize {
        self.progress.iter().sum()
    }

    pub fn next_task(&self, reader_id: &str) -> Result<NextTask, StudyError> {
        let ri = self.reader_index(reader_id)?;
        let total = self.design.exams.len();
        let pos = self.progress[ri];
        if pos == total {
            return Ok(NextTask::Done {
                study_id: self.design.study_id.clone(),
                reader_id: reader_id.to_string(),
                total,
            });
        }
        let ei = self.design.task_order[ri][pos];
        let exam_id = &self.design.exams[ei];
        let mut images: Vec<TaskImage> = self
            .images
            .iter()
            .filter(|m| &m.exam_id == exam_id)
            .map(|m| TaskImage {
                image_id: m.image_id.clone(),
                view: m.view,
            })
            .collect();
        images.sort_by_key(|t| t.view);
        Ok(NextTask::Task {
            study_id: self.design.study_id.clone(),
            reader_id: reader_id.to_string(),
            exam_id: exam_id.clone(),
            severity_index: self.design.assignment[ri][ei],
            position: pos,
            total,
            images,
        })
    }

    /// Validates a prediction submission and returns the event to commit.
    pub fn prepare_prediction(
        &self,
        reader_id: &str,
        exam_id: &str,
        left: f64,
        right: f64,
        now_ms: u64,
    ) -> Result<Event, StudyError> {
        let ri = self.reader_index(reader_id)?;
        let Some(ei) = self.design.exams.iter().position(|e| e == exam_id) else {
            return Err(StudyError::Authorization(format!("exam {exam_id} is not part of this study")));
        };
        if self.submissions[ri][ei].is_some() {
            return Err(StudyError::Conflict(format!("{reader_id} already submitted exam {exam_id}")));
        }
        let current = self.design.task_order[ri].get(self.progress[ri]).copied();
        if current != Some(ei) {
            return Err(StudyError::Authorization(format!(
                "exam {exam_id} is not the current task for {reader_id}"
            )));
        }
        let left = parse_binary("left", left)?;
        let right = parse_binary("right", right)?;
        Ok(Event::Prediction(Submission {
            reader_id: reader_id.to_string(),
            exam_id: exam_id.to_string(),
            severity_index: self.design.assignment[ri][ei],
            left,
            right,
            submitted_at_ms: now_ms,
        }))
    }

    /// Validates an ROI submission and returns the event to commit.
    pub fn prepare_rois(&self, reader_id: &str, image_id: &str, boxes: Vec<RoiBox>, now_ms: u64) -> Result<Event, StudyError> {
        let ri = self.reader_index(reader_id)?;
        if self.design.mode != StudyMode::Annotation {
            return Err(StudyError::State("ROIs are only collected in annotation studies".into()));
        }
        let meta = self
            .image(image_id)
            .ok_or_else(|| StudyError::NotFound(format!("image {image_id}")))?;
        if boxes.len() > MAX_ROIS_PER_IMAGE {
            return Err(StudyError::Limit(format!(
                "{} boxes exceeds the limit of {MAX_ROIS_PER_IMAGE}",
                boxes.len()
            )));
        }
        let ann = RoiAnnotation {
            reader_id: reader_id.to_string(),
            image_id: image_id.to_string(),
            boxes,
        };
        ann.check_shape().map_err(|e| StudyError::Size(e.to_string()))?;
        ann.check_bounds(meta.width_px, meta.height_px)
            .map_err(|e| StudyError::Validation(e.to_string()))?;
        let ei = self.design.exams.iter().position(|e| *e == meta.exam_id).expect("images reference known exams");
        let side = meta.view.side();
        match &self.submissions[ri][ei] {
            Some(sub) if sub.prediction(side) == 1 => {}
            Some(_) => {
                return Err(StudyError::State(format!(
                    "{reader_id} did not predict the {side:?} breast of {} malignant",
                    meta.exam_id
                )))
            }
            None => return Err(StudyError::State(format!("{reader_id} has not read exam {}", meta.exam_id))),
        }
        if self.rois.iter().any(|r| r.reader_id == reader_id && r.image_id == image_id) {
            return Err(StudyError::Conflict(format!("{reader_id} already annotated image {image_id}")));
        }
        Ok(Event::Rois(RoiSubmission {
            reader_id: ann.reader_id,
            image_id: ann.image_id,
            boxes: ann.boxes,
            submitted_at_ms: now_ms,
        }))
    }

    /// Applies an already validated event.
    pub fn apply(&mut self, event: Event) -> Result<(), StudyError> {
        match event {
            Event::Created { .. } => Err(StudyError::Invalid("study already created".into())),
            Event::Prediction(sub) => {
                let ri = self.reader_index(&sub.reader_id)?;
                let ei = self
                    .design
                    .exams
                    .iter()
                    .position(|e| *e == sub.exam_id)
                    .ok_or_else(|| StudyError::NotFound(format!("exam {}", sub.exam_id)))?;
                if self.submissions[ri][ei].is_some() {
                    return Err(StudyError::Conflict(format!("duplicate submission for {}", sub.exam_id)));
                }
                self.submissions[ri][ei] = Some(sub);
                self.progress[ri] += 1;
                Ok(())
            }
            Event::Rois(r) => {
                self.rois.push(r);
                Ok(())
            }
        }
    }

    fn case_id(&self, exam_id: &str, side: Side) -> String {
        self.cases
            .iter()
            .find(|c| c.exam_id == exam_id && c.side == side)
            .map(|c| c.case_id.clone())
            .unwrap_or_else(|| default_case_id(exam_id, side))
    }

    /// One prediction record per breast per submission, in reader then exam
    /// order.
    pub fn export_predictions(&self) -> Vec<PredictionRecord> {
        let mut out = Vec::with_capacity(2 * self.num_submissions());
        for row in &self.submissions {
            for sub in row.iter().flatten() {
                for side in [Side::Left, Side::Right] {
                    out.push(PredictionRecord {
                        reader_id: sub.reader_id.clone(),
                        reader_kind: ReaderKind::Human,
                        case_id: self.case_id(&sub.exam_id, side),
                        severity_index: sub.severity_index,
                        score: sub.prediction(side) as f64,
                    });
                }
            }
        }
        out
    }

    pub fn export_rois(&self) -> Vec<RoiAnnotation> {
        self.rois
            .iter()
            .map(|r| RoiAnnotation {
                reader_id: r.reader_id.clone(),
                image_id: r.image_id.clone(),
                boxes: r.boxes.clone(),
            })
            .collect()
    }

    /// Case list used for export. Without a supplied list, placeholder
    /// nonbiopsied cases are generated for every breast.
    pub fn export_cases(&self) -> Vec<BreastCase> {
        if !self.cases.is_empty() {
            return self.cases.clone();
        }
        self.design
            .exams
            .iter()
            .flat_map(|e| {
                [Side::Left, Side::Right].map(|side| BreastCase {
                    case_id: default_case_id(e, side),
                    exam_id: e.clone(),
                    side,
                    label: CaseLabel::Nonbiopsied,
                    lesion_tags: Default::default(),
                })
            })
            .collect()
    }

    /// Exported predictions as a validated set.
    pub fn prediction_set(&self) -> crate::Result<PredictionSet> {
        Ok(PredictionSet::new(self.export_predictions(), self.design.severities.clone(), self.export_cases())?)
    }
}

#[derive(Serialize, Deserialize)]
struct LogEntry {
    seq: u64,
    event: Event,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    seq: u64,
    study: Study,
}

fn encode_entry(entry: &LogEntry) -> Vec<u8> {
    let json = serde_json::to_vec(entry).expect("events serialize");
    let mut line = format!("{}\t{:08x}\t", json.len(), crc32fast::hash(&json)).into_bytes();
    line.extend_from_slice(&json);
    line.push(b'\n');
    line
}

/// Decodes one framed entry starting at the beginning of `buf`. Returns the
/// entry and the number of bytes consumed, or `None` if the frame is torn or
/// fails its checksum.
fn decode_entry(buf: &[u8]) -> Option<(LogEntry, usize)> {
    let tab1 = buf.iter().position(|&b| b == b'\t')?;
    let len: usize = std::str::from_utf8(&buf[..tab1]).ok()?.parse().ok()?;
    let rest = &buf[tab1 + 1..];
    if rest.len() < 9 || rest[8] != b'\t' {
        return None;
    }
    let crc = u32::from_str_radix(std::str::from_utf8(&rest[..8]).ok()?, 16).ok()?;
    let body = rest.get(9..9 + len)?;
    if rest.get(9 + len) != Some(&b'\n') || crc32fast::hash(body) != crc {
        return None;
    }
    let entry = serde_json::from_slice(body).ok()?;
    Some((entry, tab1 + 1 + 9 + len + 1))
}

/// Durable study: every accepted write is appended to a length-prefixed,
/// checksummed log and fsynced before it is applied. A torn final entry is
/// discarded on open. Snapshots bound replay time.
pub struct StudyStore {
    dir: PathBuf,
    log: File,
    next_seq: u64,
    snapshot_every: u64,
    study: Study,
}

impl StudyStore {
    /// Creates the study directory and writes the creation event.
    pub fn create(dir: &Path, study: Study) -> Result<Self, StudyError> {
        let log_path = dir.join(LOG_FILE);
        if log_path.exists() {
            return Err(StudyError::Conflict(format!("study already exists at {}", dir.display())));
        }
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let log = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(&log_path)
            .map_err(io_err(&log_path))?;
        let mut store = Self {
            dir: dir.to_path_buf(),
            log,
            next_seq: 0,
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
            study,
        };
        let created = Event::Created {
            design: store.study.design.clone(),
            tokens: store.study.tokens.clone(),
            images: store.study.images.clone(),
            cases: store.study.cases.clone(),
        };
        store.append(created)?;
        Ok(store)
    }

    /// Reopens a study, recovering from a torn final entry.
    pub fn open(dir: &Path) -> Result<Self, StudyError> {
        let log_path = dir.join(LOG_FILE);
        let corrupt = |reason: String| StudyError::CorruptLog {
            path: log_path.display().to_string(),
            reason,
        };
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => StudyError::NotFound(format!("no study at {}", dir.display())),
                _ => StudyError::Io {
                    path: log_path.display().to_string(),
                    source: e,
                },
            })?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf).map_err(io_err(&log_path))?;

        let mut entries = Vec::new();
        let mut offset = 0usize;
        while offset < buf.len() {
            match decode_entry(&buf[offset..]) {
                Some((entry, used)) => {
                    entries.push(entry);
                    offset += used;
                }
                None => {
                    let tail = &buf[offset..];
                    // A torn write can only affect the last line.
                    let newline = tail.iter().position(|&b| b == b'\n');
                    if newline.is_some_and(|i| i + 1 < tail.len()) {
                        return Err(corrupt(format!("bad entry at byte {offset}")));
                    }
                    file.set_len(offset as u64).map_err(io_err(&log_path))?;
                    file.sync_all().map_err(io_err(&log_path))?;
                    break;
                }
            }
        }
        for (i, e) in entries.iter().enumerate() {
            if e.seq != i as u64 {
                return Err(corrupt(format!("sequence gap at entry {i}")));
            }
        }
        let count = entries.len() as u64;
        let mut iter = entries.into_iter();
        let first = iter.next().ok_or_else(|| corrupt("log is empty".into()))?;

        let snap_path = dir.join(SNAPSHOT_FILE);
        let snapshot: Option<Snapshot> = match fs::read(&snap_path) {
            Ok(bytes) => serde_json::from_slice(&bytes).ok(),
            Err(_) => None,
        };
        let (mut study, replay_from) = match snapshot {
            Some(s) if s.seq < count => (s.study, s.seq + 1),
            _ => (Study::from_created(first.event)?, 1),
        };
        let mut next_seq = 1;
        for entry in iter {
            if entry.seq >= replay_from {
                study.apply(entry.event)?;
            }
            next_seq = entry.seq + 1;
        }
        file.seek(SeekFrom::End(0)).map_err(io_err(&log_path))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            log: file,
            next_seq,
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
            study,
        })
    }

    pub fn set_snapshot_every(&mut self, n: u64) {
        self.snapshot_every = n.max(1);
    }

    pub fn study(&self) -> &Study {
        &self.study
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn append(&mut self, event: Event) -> Result<u64, StudyError> {
        let seq = self.next_seq;
        let entry = LogEntry { seq, event };
        let line = encode_entry(&entry);
        let path = self.dir.join(LOG_FILE);
        self.log.write_all(&line).map_err(io_err(&path))?;
        self.log.sync_data().map_err(io_err(&path))?;
        self.next_seq += 1;
        Ok(seq)
    }

    /// Persists `event` and then applies it.
    pub fn commit(&mut self, event: Event) -> Result<u64, StudyError> {
        let mut next = self.study.clone();
        next.apply(event.clone())?;
        let seq = self.append(event)?;
        self.study = next;
        if seq % self.snapshot_every == 0 {
            self.snapshot()?;
        }
        Ok(seq)
    }

    pub fn snapshot(&self) -> Result<(), StudyError> {
        let snap = Snapshot {
            seq: self.next_seq - 1,
            study: self.study.clone(),
        };
        let path = self.dir.join(SNAPSHOT_FILE);
        let bytes = serde_json::to_vec(&snap).expect("study serializes");
        crate::io::atomic_write(&path, &bytes).map_err(|e| StudyError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e.to_string()),
        })
    }

    pub fn record_prediction(&mut self, reader_id: &str, exam_id: &str, left: f64, right: f64, now_ms: u64) -> Result<Ack, StudyError> {
        let event = self.study.prepare_prediction(reader_id, exam_id, left, right, now_ms)?;
        let seq = self.commit(event)?;
        Ok(self.ack(reader_id, seq))
    }

    pub fn record_rois(&mut self, reader_id: &str, image_id: &str, boxes: Vec<RoiBox>, now_ms: u64) -> Result<Ack, StudyError> {
        let event = self.study.prepare_rois(reader_id, image_id, boxes, now_ms)?;
        let seq = self.commit(event)?;
        Ok(self.ack(reader_id, seq))
    }

    fn ack(&self, reader_id: &str, seq: u64) -> Ack {
        Ack {
            study_id: self.study.study_id().to_string(),
            reader_id: reader_id.to_string(),
            seq,
        }
    }
}

/// Milliseconds since the Unix epoch.
pub fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Composes up to four views into one display image: CC views on the top
/// row, MLO on the bottom, right breast in the left column. Each view is
/// placed in a cell sized to the largest view and anchored to the cell's
/// outer edge, so both breasts meet at the centre line. Missing views leave
/// their cell at zero.
pub fn compose_ventral_hanging(views: &[(View, &GrayImage)]) -> Result<GrayImage, StudyError> {
    if views.is_empty() {
        return Err(StudyError::Invalid("no views to compose".into()));
    }
    let mut seen = HashMap::new();
    for (v, _) in views {
        if seen.insert(*v, ()).is_some() {
            return Err(StudyError::Conflict(format!("view {v:?} given twice")));
        }
    }
    let cell_h = views.iter().map(|(_, im)| im.height).max().unwrap_or(0);
    let cell_w = views.iter().map(|(_, im)| im.width).max().unwrap_or(0);
    let mm = views[0].1.mm_per_pixel;
    let mut out = GrayImage::filled(2 * cell_h, 2 * cell_w, mm, 0.0);
    for (view, im) in views {
        let row0 = if view.is_cc() { 0 } else { cell_h };
        let col0 = match view.side() {
            Side::Right => cell_w - im.width,
            Side::Left => cell_w,
        };
        for r in 0..im.height {
            let dst = (row0 + r) * out.width + col0;
            out.pixels[dst..dst + im.width].copy_from_slice(&im.pixels[r * im.width..(r + 1) * im.width]);
        }
    }
    Ok(out)
}
