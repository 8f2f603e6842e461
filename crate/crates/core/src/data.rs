//! Canonical data model: breast-level cases, reader predictions, ROI
//! annotations, image sidecar metadata, and the subgroup taxonomy.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::FilterSpec;
use crate::io::{self, open_buffered};
use crate::study::StudyDesign;
use crate::Result;

/// Edge length of the reference ROI template, in pixels.
pub const ROI_TEMPLATE_PX: u32 = 250;
/// Allowed relative deviation of a drawn box edge from the template edge.
pub const ROI_SIZE_TOLERANCE: f64 = 0.2;
pub const MAX_ROIS_PER_IMAGE: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("invalid metadata for case {case_id}: {reason}")]
    InvalidMetadata { case_id: String, reason: String },
    #[error("parse error in {file} at line {line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("referential error: {0}")]
    Referential(String),
    #[error("invalid record for reader {reader_id}, case {case_id}: {reason}")]
    InvalidRecord {
        reader_id: String,
        case_id: String,
        reason: String,
    },
    #[error("annotation error on image {image_id}: {reason}")]
    Annotation { image_id: String, reason: String },
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[serde(rename_all = "snake_case")]
pub enum CaseLabel {
    Malignant,
    Benign,
    Nonbiopsied,
}

impl CaseLabel {
    pub fn is_malignant(self) -> bool {
        self == CaseLabel::Malignant
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum LesionTag {
    Microcalcification,
    Mass,
    Asymmetry,
    ArchitecturalDistortion,
    Occult,
}

impl LesionTag {
    pub fn is_soft_tissue(self) -> bool {
        matches!(
            self,
            LesionTag::Mass | LesionTag::Asymmetry | LesionTag::ArchitecturalDistortion
        )
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum SubgroupLabel {
    UnambiguousMicrocalc,
    UnambiguousSoftTissue,
    Ambiguous,
    Occult,
    Nonbiopsied,
}

impl SubgroupLabel {
    pub const ALL: [SubgroupLabel; 5] = [
        SubgroupLabel::UnambiguousMicrocalc,
        SubgroupLabel::UnambiguousSoftTissue,
        SubgroupLabel::Ambiguous,
        SubgroupLabel::Occult,
        SubgroupLabel::Nonbiopsied,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SubgroupLabel::UnambiguousMicrocalc => "unambiguous_microcalc",
            SubgroupLabel::UnambiguousSoftTissue => "unambiguous_soft_tissue",
            SubgroupLabel::Ambiguous => "ambiguous",
            SubgroupLabel::Occult => "occult",
            SubgroupLabel::Nonbiopsied => "nonbiopsied",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.as_str() == s)
    }
}

impl fmt::Display for SubgroupLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Maps a case's lesion tags and label to exactly one subgroup.
pub fn subgroup_assign(
    tags: &BTreeSet<LesionTag>,
    label: CaseLabel,
) -> std::result::Result<SubgroupLabel, DataError> {
    let invalid = |reason: &str| DataError::InvalidMetadata {
        case_id: String::new(),
        reason: reason.to_string(),
    };
    if label == CaseLabel::Nonbiopsied {
        return if tags.is_empty() {
            Ok(SubgroupLabel::Nonbiopsied)
        } else {
            Err(invalid("nonbiopsied case carries lesion tags"))
        };
    }
    if tags.is_empty() {
        return Err(invalid("biopsied case has no lesion tags"));
    }
    let occult = tags.contains(&LesionTag::Occult);
    let calc = tags.contains(&LesionTag::Microcalcification);
    let soft = tags.iter().any(|t| t.is_soft_tissue());
    match (occult, calc, soft) {
        (true, false, false) => Ok(SubgroupLabel::Occult),
        (true, _, _) => Err(invalid("occult tag combined with visible lesion tags")),
        (false, true, false) => Ok(SubgroupLabel::UnambiguousMicrocalc),
        (false, false, true) => Ok(SubgroupLabel::UnambiguousSoftTissue),
        (false, true, true) => Ok(SubgroupLabel::Ambiguous),
        (false, false, false) => unreachable!("non-empty tag set without any known tag"),
    }
}

/// One breast of one exam, with its ground truth.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct BreastCase {
    pub case_id: String,
    pub exam_id: String,
    pub side: Side,
    pub label: CaseLabel,
    pub lesion_tags: BTreeSet<LesionTag>,
}

impl BreastCase {
    pub fn subgroup(&self) -> std::result::Result<SubgroupLabel, DataError> {
        subgroup_assign(&self.lesion_tags, self.label).map_err(|e| match e {
            DataError::InvalidMetadata { reason, .. } => DataError::InvalidMetadata {
                case_id: self.case_id.clone(),
                reason,
            },
            other => other,
        })
    }
}

pub fn load_cases(path: &Path) -> Result<Vec<BreastCase>> {
    let cases: Vec<BreastCase> = parse_file(path)?;
    let mut seen = HashSet::new();
    for c in &cases {
        c.subgroup()?;
        if !seen.insert(c.case_id.as_str()) {
            return Err(DataError::Referential(format!("duplicate case_id {}", c.case_id)).into());
        }
    }
    Ok(cases)
}

pub fn write_cases(path: &Path, cases: &[BreastCase]) -> Result<()> {
    io::write_jsonl(path, cases)
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum ReaderKind {
    Human,
    Machine,
}

/// One reader's malignancy score for one breast at one filter severity.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct PredictionRecord {
    pub reader_id: String,
    pub reader_kind: ReaderKind,
    pub case_id: String,
    pub severity_index: usize,
    pub score: f64,
}

impl PredictionRecord {
    pub fn validate(&self) -> std::result::Result<(), DataError> {
        let bad = |reason: String| DataError::InvalidRecord {
            reader_id: self.reader_id.clone(),
            case_id: self.case_id.clone(),
            reason,
        };
        if !(0.0..=1.0).contains(&self.score) {
            return Err(bad(format!("score {} outside [0, 1]", self.score)));
        }
        if self.reader_kind == ReaderKind::Human && self.score != 0.0 && self.score != 1.0 {
            return Err(bad(format!("human score {} is not binary", self.score)));
        }
        Ok(())
    }
}

/// Validated predictions together with the case universe and severity ladder
/// they refer to.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PredictionSet {
    pub records: Vec<PredictionRecord>,
    pub severities: Vec<FilterSpec>,
    pub cases: Vec<BreastCase>,
}

impl PredictionSet {
    /// Builds a set after checking per-record validity, references, and
    /// uniqueness of (reader, case, severity).
    pub fn new(
        records: Vec<PredictionRecord>,
        severities: Vec<FilterSpec>,
        cases: Vec<BreastCase>,
    ) -> std::result::Result<Self, DataError> {
        let known: HashSet<&str> = cases.iter().map(|c| c.case_id.as_str()).collect();
        let mut triples = HashSet::with_capacity(records.len());
        for r in &records {
            r.validate()?;
            if !known.contains(r.case_id.as_str()) {
                return Err(DataError::Referential(format!("unknown case_id {}", r.case_id)));
            }
            if r.severity_index >= severities.len() {
                return Err(DataError::Referential(format!(
                    "severity_index {} outside ladder of {} severities",
                    r.severity_index,
                    severities.len()
                )));
            }
            if !triples.insert((r.reader_id.as_str(), r.case_id.as_str(), r.severity_index)) {
                return Err(DataError::Referential(format!(
                    "duplicate record for reader {}, case {}, severity {}",
                    r.reader_id, r.case_id, r.severity_index
                )));
            }
        }
        Ok(Self {
            records,
            severities,
            cases,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// Reader ids in first-appearance order.
    pub fn reader_ids(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.reader_id.as_str()))
            .map(|r| r.reader_id.clone())
            .collect()
    }

    pub fn case_index(&self) -> HashMap<&str, usize> {
        self.cases
            .iter()
            .enumerate()
            .map(|(i, c)| (c.case_id.as_str(), i))
            .collect()
    }

    /// Severity × case view of one reader's scores. Cells without a record
    /// stay `None`.
    pub fn matrix(&self, reader_id: &str) -> SeverityCaseMatrix {
        let index = self.case_index();
        let n = self.cases.len();
        let s = self.severities.len();
        let mut cells = vec![None; n * s];
        for r in self.records.iter().filter(|r| r.reader_id == reader_id) {
            cells[r.severity_index * n + index[r.case_id.as_str()]] = Some(r.score);
        }
        SeverityCaseMatrix {
            severities: s,
            cases: n,
            cells,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_predictions(path, &self.records)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeverityCaseMatrix {
    pub severities: usize,
    pub cases: usize,
    cells: Vec<Option<f64>>,
}

impl SeverityCaseMatrix {
    pub fn get(&self, severity: usize, case: usize) -> Option<f64> {
        self.cells[severity * self.cases + case]
    }

    pub fn filled(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }
}

/// Reads a predictions file and validates it against `cases` and `severities`.
pub fn load_predictions(
    path: &Path,
    cases: Vec<BreastCase>,
    severities: Vec<FilterSpec>,
) -> Result<PredictionSet> {
    let records = read_prediction_records(path)?;
    Ok(PredictionSet::new(records, severities, cases)?)
}

/// Parses a predictions file without referential checks.
pub fn read_prediction_records(path: &Path) -> Result<Vec<PredictionRecord>> {
    let records: Vec<PredictionRecord> = parse_file(path)?;
    for r in &records {
        r.validate()?;
    }
    Ok(records)
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    io::write_jsonl(path, records)
}

pub(crate) fn parse_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = open_buffered(path)?;
    io::parse_jsonl(reader).map_err(|e| {
        DataError::Parse {
            file: path.display().to_string(),
            line: e.line,
            message: e.message,
        }
        .into()
    })
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoiBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl RoiBox {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        let (x, y) = (self.x as usize, self.y as usize);
        col >= x && col < x + self.w as usize && row >= y && row < y + self.h as usize
    }

    pub fn within(&self, width: u32, height: u32) -> bool {
        self.x as u64 + self.w as u64 <= width as u64 && self.y as u64 + self.h as u64 <= height as u64
    }

    /// Whether both edges are within the template tolerance.
    pub fn matches_template(&self) -> bool {
        let lo = ROI_TEMPLATE_PX as f64 * (1.0 - ROI_SIZE_TOLERANCE);
        let hi = ROI_TEMPLATE_PX as f64 * (1.0 + ROI_SIZE_TOLERANCE);
        [self.w, self.h]
            .iter()
            .all(|&e| (lo..=hi).contains(&(e as f64)))
    }
}

/// Up to three reader-drawn boxes on one image.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct RoiAnnotation {
    pub reader_id: String,
    pub image_id: String,
    pub boxes: Vec<RoiBox>,
}

impl RoiAnnotation {
    /// Checks count and template size. Bounds are checked separately by
    /// [`RoiAnnotation::check_bounds`] since they need the image size.
    pub fn check_shape(&self) -> std::result::Result<(), DataError> {
        if self.boxes.len() > MAX_ROIS_PER_IMAGE {
            return Err(self.err(format!(
                "{} boxes exceeds the limit of {MAX_ROIS_PER_IMAGE}",
                self.boxes.len()
            )));
        }
        if let Some(b) = self.boxes.iter().find(|b| !b.matches_template()) {
            return Err(self.err(format!(
                "box {}x{} is off the {ROI_TEMPLATE_PX}px template",
                b.w, b.h
            )));
        }
        Ok(())
    }

    pub fn check_bounds(&self, width: u32, height: u32) -> std::result::Result<(), DataError> {
        match self.boxes.iter().find(|b| !b.within(width, height)) {
            Some(b) => Err(self.err(format!(
                "box at ({}, {}) size {}x{} exceeds {width}x{height} image",
                b.x, b.y, b.w, b.h
            ))),
            None => Ok(()),
        }
    }

    fn err(&self, reason: String) -> DataError {
        DataError::Annotation {
            image_id: self.image_id.clone(),
            reason,
        }
    }
}

pub fn load_rois(path: &Path) -> Result<Vec<RoiAnnotation>> {
    let rois: Vec<RoiAnnotation> = parse_file(path)?;
    for r in &rois {
        r.check_shape()?;
    }
    Ok(rois)
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum View {
    #[serde(rename = "R-CC")]
    RightCc,
    #[serde(rename = "L-CC")]
    LeftCc,
    #[serde(rename = "R-MLO")]
    RightMlo,
    #[serde(rename = "L-MLO")]
    LeftMlo,
}

impl View {
    pub fn side(self) -> Side {
        match self {
            View::RightCc | View::RightMlo => Side::Right,
            View::LeftCc | View::LeftMlo => Side::Left,
        }
    }

    pub fn is_cc(self) -> bool {
        matches!(self, View::RightCc | View::LeftCc)
    }
}

/// Sidecar metadata for one stored image.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct ImageMeta {
    pub image_id: String,
    pub exam_id: String,
    pub view: View,
    pub height_px: u32,
    pub width_px: u32,
    pub mm_per_pixel: f64,
}

pub fn load_image_meta(path: &Path) -> Result<Vec<ImageMeta>> {
    parse_file(path)
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq)]
pub struct ReadCountViolation {
    pub reader_id: String,
    pub exam_id: String,
    pub reads: usize,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq)]
pub struct SeverityMismatch {
    pub reader_id: String,
    pub exam_id: String,
    pub case_id: String,
    pub assigned: usize,
    pub recorded: usize,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq)]
pub struct UnassignedRecord {
    pub reader_id: String,
    pub case_id: String,
}

/// Findings from checking predictions against a study design.
#[derive(Serialize, Deserialize, Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub assignments: usize,
    pub read_count_violations: Vec<ReadCountViolation>,
    pub severity_mismatches: Vec<SeverityMismatch>,
    pub unassigned_records: Vec<UnassignedRecord>,
}

impl ValidationReport {
    pub fn violations(&self) -> usize {
        self.read_count_violations.len() + self.severity_mismatches.len() + self.unassigned_records.len()
    }

    pub fn is_clean(&self) -> bool {
        self.violations() == 0
    }
}

/// Checks that every (reader, exam) in the design was read exactly once and
/// at its assigned severity. A read of an exam counts once per breast record,
/// so an exam read twice shows up as two records for the same case.
pub fn validate_design(design: &StudyDesign, preds: &PredictionSet) -> ValidationReport {
    let case_exam: HashMap<&str, &str> = preds
        .cases
        .iter()
        .map(|c| (c.case_id.as_str(), c.exam_id.as_str()))
        .collect();
    let reader_idx: HashMap<&str, usize> = design
        .readers
        .iter()
        .enumerate()
        .map(|(i, r)| (r.as_str(), i))
        .collect();
    let exam_idx: HashMap<&str, usize> = design
        .exams
        .iter()
        .enumerate()
        .map(|(i, e)| (e.as_str(), i))
        .collect();

    let mut report = ValidationReport {
        assignments: design.readers.len() * design.exams.len(),
        ..Default::default()
    };
    // (reader, exam) -> case -> number of records
    let mut counts: BTreeMap<(usize, usize), BTreeMap<&str, usize>> = BTreeMap::new();
    for rec in &preds.records {
        let exam = case_exam.get(rec.case_id.as_str()).copied();
        let (Some(&ri), Some(&ei)) = (
            reader_idx.get(rec.reader_id.as_str()),
            exam.and_then(|e| exam_idx.get(e)),
        ) else {
            report.unassigned_records.push(UnassignedRecord {
                reader_id: rec.reader_id.clone(),
                case_id: rec.case_id.clone(),
            });
            continue;
        };
        *counts.entry((ri, ei)).or_default().entry(rec.case_id.as_str()).or_default() += 1;
        let assigned = design.assignment[ri][ei];
        if assigned != rec.severity_index {
            report.severity_mismatches.push(SeverityMismatch {
                reader_id: rec.reader_id.clone(),
                exam_id: design.exams[ei].clone(),
                case_id: rec.case_id.clone(),
                assigned,
                recorded: rec.severity_index,
            });
        }
    }
    for (ri, reader) in design.readers.iter().enumerate() {
        for (ei, exam) in design.exams.iter().enumerate() {
            let reads = counts
                .get(&(ri, ei))
                .and_then(|m| m.values().max().copied())
                .unwrap_or(0);
            if reads != 1 {
                report.read_count_violations.push(ReadCountViolation {
                    reader_id: reader.clone(),
                    exam_id: exam.clone(),
                    reads,
                });
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::default_ladder;

    fn tags(t: &[LesionTag]) -> BTreeSet<LesionTag> {
        t.iter().copied().collect()
    }

    #[test]
    fn subgroup_examples() {
        use LesionTag::*;
        assert_eq!(
            subgroup_assign(&tags(&[Microcalcification]), CaseLabel::Malignant).unwrap(),
            SubgroupLabel::UnambiguousMicrocalc
        );
        assert_eq!(
            subgroup_assign(&tags(&[Mass, Asymmetry]), CaseLabel::Benign).unwrap(),
            SubgroupLabel::UnambiguousSoftTissue
        );
        assert_eq!(
            subgroup_assign(&tags(&[Microcalcification, Mass]), CaseLabel::Malignant).unwrap(),
            SubgroupLabel::Ambiguous
        );
        assert_eq!(
            subgroup_assign(&tags(&[Occult]), CaseLabel::Malignant).unwrap(),
            SubgroupLabel::Occult
        );
        assert_eq!(
            subgroup_assign(&tags(&[]), CaseLabel::Nonbiopsied).unwrap(),
            SubgroupLabel::Nonbiopsied
        );
    }

    #[test]
    fn subgroup_rejects_inconsistent_tags() {
        assert!(matches!(
            subgroup_assign(&tags(&[]), CaseLabel::Benign),
            Err(DataError::InvalidMetadata { .. })
        ));
        assert!(subgroup_assign(&tags(&[LesionTag::Mass]), CaseLabel::Nonbiopsied).is_err());
        assert!(
            subgroup_assign(&tags(&[LesionTag::Occult, LesionTag::Mass]), CaseLabel::Malignant).is_err()
        );
    }

    #[test]
    fn subgroup_partition_is_total_over_valid_inputs() {
        use LesionTag::*;
        let all = [Microcalcification, Mass, Asymmetry, ArchitecturalDistortion, Occult];
        let mut hit = BTreeSet::new();
        for mask in 0u32..32 {
            let set: BTreeSet<_> = all
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, t)| *t)
                .collect();
            for label in [CaseLabel::Malignant, CaseLabel::Benign, CaseLabel::Nonbiopsied] {
                let valid = match label {
                    CaseLabel::Nonbiopsied => set.is_empty(),
                    _ => !set.is_empty() && (!set.contains(&Occult) || set.len() == 1),
                };
                let out = subgroup_assign(&set, label);
                assert_eq!(out.is_ok(), valid, "{set:?} {label:?}");
                if let Ok(g) = out {
                    hit.insert(g);
                }
            }
        }
        assert_eq!(hit.len(), 5);
    }

    fn case(id: &str, exam: &str, side: Side) -> BreastCase {
        BreastCase {
            case_id: id.into(),
            exam_id: exam.into(),
            side,
            label: CaseLabel::Nonbiopsied,
            lesion_tags: BTreeSet::new(),
        }
    }

    fn rec(reader: &str, case: &str, s: usize, score: f64) -> PredictionRecord {
        PredictionRecord {
            reader_id: reader.into(),
            reader_kind: ReaderKind::Human,
            case_id: case.into(),
            severity_index: s,
            score,
        }
    }

    #[test]
    fn prediction_set_rejects_duplicates_and_unknown_cases() {
        let cases = vec![case("c1", "e1", Side::Left)];
        let dup = vec![rec("r", "c1", 0, 1.0), rec("r", "c1", 0, 0.0)];
        assert!(matches!(
            PredictionSet::new(dup, default_ladder(), cases.clone()),
            Err(DataError::Referential(_))
        ));
        let unknown = vec![rec("r", "zz", 0, 1.0)];
        assert!(matches!(
            PredictionSet::new(unknown, default_ladder(), cases),
            Err(DataError::Referential(_))
        ));
    }

    #[test]
    fn human_scores_must_be_binary() {
        let r = rec("r", "c", 0, 0.4);
        assert!(r.validate().is_err());
        let mut m = r.clone();
        m.reader_kind = ReaderKind::Machine;
        assert!(m.validate().is_ok());
    }

    #[test]
    fn sparse_matrix_never_invents_values() {
        let cases = vec![case("a", "e", Side::Left), case("b", "e", Side::Right)];
        let set = PredictionSet::new(
            vec![rec("r", "a", 3, 1.0), rec("r", "b", 3, 0.0)],
            default_ladder(),
            cases,
        )
        .unwrap();
        let m = set.matrix("r");
        assert_eq!(m.filled(), 2);
        assert_eq!(m.get(3, 0), Some(1.0));
        assert_eq!(m.get(3, 1), Some(0.0));
        assert_eq!(m.get(0, 0), None);
    }

    #[test]
    fn roi_template_checks() {
        let b = |w, h| RoiBox { x: 0, y: 0, w, h };
        let ann = |boxes: Vec<RoiBox>| RoiAnnotation {
            reader_id: "r".into(),
            image_id: "i".into(),
            boxes,
        };
        assert!(ann(vec![b(250, 250); 3]).check_shape().is_ok());
        assert!(ann(vec![b(250, 250); 4]).check_shape().is_err());
        assert!(ann(vec![b(600, 600)]).check_shape().is_err());
        assert!(ann(vec![b(200, 300)]).check_shape().is_ok());
        assert!(ann(vec![b(199, 250)]).check_shape().is_err());
        assert!(ann(vec![RoiBox { x: 900, y: 0, w: 250, h: 250 }])
            .check_bounds(1000, 1000)
            .is_err());
    }
}
