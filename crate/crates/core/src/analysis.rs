//! Comparison axes over a fitted posterior.
//!
//! *Predictive confidence* reads `γ_{s,g}` straight from the mean-field
//! posterior and reports `P(γ_{s,g} > 0 | D)`. *Class separability* draws
//! posterior-predictive datasets over a dense design and measures, per draw
//! and severity, the KS distance between predictions on malignant cases of the
//! subgroup and on all nonmalignant cases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advi::PosteriorApprox;
use crate::data::{BreastCase, CaseLabel, SubgroupLabel};
use crate::model::{Layout, ModelSpec, Observation, Triple, Variant};
use crate::stats::{self, ks_one_tailed_test, std_normal_cdf};
use crate::sigmoid;

pub const DEFAULT_REPLICATES: usize = 1000;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),
    #[error("posterior has no coordinate {0}")]
    MissingCoordinate(String),
    #[error("class coverage error at severity {severity}: {reason}")]
    Coverage { severity: usize, reason: String },
    #[error("configuration error: {0}")]
    Configuration(String),
}

/// Posterior summary of one filter effect `γ_{s,g}`.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct ConfidenceEntry {
    pub severity: usize,
    pub subgroup: usize,
    pub mean: f64,
    pub std: f64,
    pub prob_positive: f64,
    /// True for the pinned reference severity.
    pub reference: bool,
}

/// Mean, std and `Φ(mean / std)` for `γ_{s,g}`. A coordinate pinned at zero
/// (the reference severity) reports probability 0.5.
pub fn gamma_effect_summary(post: &PosteriorApprox, severity: usize, subgroup: usize) -> Result<ConfidenceEntry, AnalysisError> {
    match post.coordinate("gamma", &[severity, subgroup]) {
        Some((mean, std)) => Ok(ConfidenceEntry {
            severity,
            subgroup,
            mean,
            std,
            prob_positive: prob_positive(mean, std),
            reference: false,
        }),
        None if severity == 0 && post.index_map.iter().any(|c| c.var == "gamma") => Ok(ConfidenceEntry {
            severity,
            subgroup,
            mean: 0.0,
            std: 0.0,
            prob_positive: 0.5,
            reference: true,
        }),
        None => Err(AnalysisError::MissingCoordinate(format!("gamma[{severity}, {subgroup}]"))),
    }
}

/// `P(x > 0)` for `x ~ N(mean, std²)`.
pub fn prob_positive(mean: f64, std: f64) -> f64 {
    if std <= 0.0 {
        return if mean > 0.0 {
            1.0
        } else if mean < 0.0 {
            0.0
        } else {
            0.5
        };
    }
    std_normal_cdf(mean / std)
}

/// Monte Carlo estimate of `P(γ_{s,g} > 0)` from `draws` posterior samples.
pub fn prob_positive_mc(post: &PosteriorApprox, severity: usize, subgroup: usize, draws: usize, seed: u64) -> Result<f64, AnalysisError> {
    let (mean, std) = post
        .coordinate("gamma", &[severity, subgroup])
        .ok_or_else(|| AnalysisError::MissingCoordinate(format!("gamma[{severity}, {subgroup}]")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::Normal::new(mean, std).map_err(|e| AnalysisError::Configuration(e.to_string()))?;
    let hits = (0..draws)
        .filter(|_| rand_distr::Distribution::sample(&normal, &mut rng) > 0.0)
        .count();
    Ok(hits as f64 / draws as f64)
}

/// Confidence entries for every severity and subgroup of the spec.
pub fn confidence_summary(post: &PosteriorApprox, spec: &ModelSpec) -> Result<Vec<ConfidenceEntry>, AnalysisError> {
    let mut out = Vec::with_capacity(spec.severities * spec.num_subgroups());
    for g in 0..spec.num_subgroups() {
        for s in 0..spec.severities {
            out.push(gamma_effect_summary(post, s, g)?);
        }
    }
    Ok(out)
}

/// Binary posterior-predictive draws over a shared design.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicatedPredictions {
    pub design: Vec<Triple>,
    /// One vector per replicate, aligned with `design`.
    pub draws: Vec<Vec<u8>>,
}

impl ReplicatedPredictions {
    pub fn replicates(&self) -> usize {
        self.draws.len()
    }

    /// Replicate `i` as observations.
    pub fn observations(&self, i: usize) -> Vec<Observation> {
        self.design
            .iter()
            .zip(&self.draws[i])
            .map(|(&cell, &y)| Observation { cell, score: y as f64 })
            .collect()
    }
}

fn check_posterior(post: &PosteriorApprox, layout: &Layout) -> Result<(), AnalysisError> {
    post.check_matches(layout.coordinates())
        .map_err(|e| AnalysisError::Configuration(e.to_string()))
}

fn draw_replicate(post: &PosteriorApprox, layout: &Layout, spec: &ModelSpec, design: &[Triple], seed: u64, replicate: usize) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    let theta = post.sample_theta(&mut rng);
    let params = layout.params_from_theta(&theta);
    design
        .iter()
        .map(|&cell| (rng.random::<f64>() < sigmoid(params.logit(spec, cell))) as u8)
        .collect()
}

/// For each replicate, draws latents from `q` and then a binary prediction
/// for every cell of `design`. Replicate `i` uses its own RNG stream, so the
/// result does not depend on thread scheduling.
pub fn posterior_predictive_sample(
    post: &PosteriorApprox,
    spec: &ModelSpec,
    design: &[Triple],
    replicates: usize,
    seed: u64,
) -> Result<ReplicatedPredictions, AnalysisError> {
    if replicates == 0 {
        return Err(AnalysisError::Configuration("replicates must be at least 1".into()));
    }
    let layout = Layout::new(spec);
    check_posterior(post, &layout)?;
    let draws = (0..replicates)
        .into_par_iter()
        .map(|i| draw_replicate(post, &layout, spec, design, seed, i))
        .collect();
    Ok(ReplicatedPredictions {
        design: design.to_vec(),
        draws,
    })
}

/// Per-severity KS distributions across replicates, with one-tailed p-values
/// against severity 0.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct SeparabilityCurve {
    pub positives: Vec<SubgroupLabel>,
    pub severities: Vec<SeverityKs>,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct SeverityKs {
    pub severity: usize,
    pub ks: Vec<f64>,
    pub median: f64,
    /// `None` at severity 0.
    pub p_value: Option<f64>,
}

/// Which model cases count as positives and negatives for one curve.
#[derive(Clone, Debug)]
pub struct ClassMasks {
    pub positive: Vec<bool>,
    pub negative: Vec<bool>,
}

impl ClassMasks {
    /// Positives are malignant cases in `groups`; negatives are every benign
    /// or nonbiopsied case.
    pub fn new(cases: &[BreastCase], groups: &[SubgroupLabel]) -> Result<Self, AnalysisError> {
        let mut positive = Vec::with_capacity(cases.len());
        let mut negative = Vec::with_capacity(cases.len());
        for c in cases {
            let g = c.subgroup().map_err(|e| AnalysisError::Configuration(e.to_string()))?;
            positive.push(c.label == CaseLabel::Malignant && groups.contains(&g));
            negative.push(c.label != CaseLabel::Malignant);
        }
        Ok(Self { positive, negative })
    }
}

/// KS per severity for one binary replicate.
fn replicate_ks(design: &[Triple], ys: &[u8], severities: usize, masks: &ClassMasks) -> Result<Vec<f64>, AnalysisError> {
    // (zeros, total) per severity for each class
    let mut pos = vec![(0usize, 0usize); severities];
    let mut neg = vec![(0usize, 0usize); severities];
    for (cell, &y) in design.iter().zip(ys) {
        let slot = if masks.positive[cell.case] {
            &mut pos[cell.severity]
        } else if masks.negative[cell.case] {
            &mut neg[cell.severity]
        } else {
            continue;
        };
        slot.1 += 1;
        if y == 0 {
            slot.0 += 1;
        }
    }
    (0..severities)
        .map(|s| {
            let (p, n) = (pos[s], neg[s]);
            if p.1 == 0 || n.1 == 0 {
                return Err(AnalysisError::Coverage {
                    severity: s,
                    reason: format!("{} positive and {} negative predictions", p.1, n.1),
                });
            }
            Ok(stats::ks_statistic_binary(p.0, p.1, n.0, n.1))
        })
        .collect()
}

fn assemble_curve(groups: &[SubgroupLabel], per_replicate: Vec<Vec<f64>>, severities: usize) -> Result<SeparabilityCurve, AnalysisError> {
    let by_severity: Vec<Vec<f64>> = (0..severities)
        .map(|s| per_replicate.iter().map(|r| r[s]).collect())
        .collect();
    let mut out = Vec::with_capacity(severities);
    for (s, ks) in by_severity.iter().enumerate() {
        let p_value = if s == 0 || ks.len() < 2 {
            None
        } else {
            Some(ks_one_tailed_test(ks, &by_severity[0])?)
        };
        out.push(SeverityKs {
            severity: s,
            median: stats::median(ks),
            ks: ks.clone(),
            p_value,
        });
    }
    Ok(SeparabilityCurve {
        positives: groups.to_vec(),
        severities: out,
    })
}

/// Separability curve from stored replicates. `cases` is aligned with the
/// model's case index.
pub fn separability_curve(
    samples: &ReplicatedPredictions,
    cases: &[BreastCase],
    groups: &[SubgroupLabel],
    severities: usize,
) -> Result<SeparabilityCurve, AnalysisError> {
    let masks = ClassMasks::new(cases, groups)?;
    let per_replicate = samples
        .draws
        .iter()
        .map(|ys| replicate_ks(&samples.design, ys, severities, &masks))
        .collect::<Result<Vec<_>, _>>()?;
    assemble_curve(groups, per_replicate, severities)
}

/// Separability curves for several positive groups without storing the
/// replicates. Equivalent to sampling then calling [`separability_curve`]
/// for each entry of `group_sets`.
pub fn separability_from_posterior(
    post: &PosteriorApprox,
    spec: &ModelSpec,
    design: &[Triple],
    cases: &[BreastCase],
    group_sets: &[Vec<SubgroupLabel>],
    replicates: usize,
    seed: u64,
) -> Result<Vec<SeparabilityCurve>, AnalysisError> {
    if replicates == 0 {
        return Err(AnalysisError::Configuration("replicates must be at least 1".into()));
    }
    let layout = Layout::new(spec);
    check_posterior(post, &layout)?;
    let masks = group_sets
        .iter()
        .map(|g| ClassMasks::new(cases, g))
        .collect::<Result<Vec<_>, _>>()?;
    let per_replicate: Vec<Vec<Vec<f64>>> = (0..replicates)
        .into_par_iter()
        .map(|i| {
            let ys = draw_replicate(post, &layout, spec, design, seed, i);
            masks
                .iter()
                .map(|m| replicate_ks(design, &ys, spec.severities, m))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    group_sets
        .iter()
        .enumerate()
        .map(|(k, groups)| {
            let rows = per_replicate.iter().map(|r| r[k].clone()).collect();
            assemble_curve(groups, rows, spec.severities)
        })
        .collect()
}

/// KS between observed scores of positives and negatives at one severity.
pub fn observed_ks(
    observations: &[Observation],
    cases: &[BreastCase],
    groups: &[SubgroupLabel],
    severity: usize,
) -> Result<f64, AnalysisError> {
    let masks = ClassMasks::new(cases, groups)?;
    let (mut a, mut b) = (vec![], vec![]);
    for o in observations.iter().filter(|o| o.cell.severity == severity) {
        if masks.positive[o.cell.case] {
            a.push(o.score);
        } else if masks.negative[o.cell.case] {
            b.push(o.score);
        }
    }
    stats::ks_statistic(&a, &b)
}

/// Direction of an effect at the reporting threshold.
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    Decrease,
    Increase,
    None,
}

impl Effect {
    pub fn from_confidence(entry: &ConfidenceEntry, alpha: f64) -> Self {
        if entry.reference {
            Effect::None
        } else if entry.prob_positive < alpha {
            Effect::Decrease
        } else if entry.prob_positive > 1.0 - alpha {
            Effect::Increase
        } else {
            Effect::None
        }
    }

    pub fn from_separability(p_value: Option<f64>, alpha: f64) -> Self {
        match p_value {
            Some(p) if p < alpha => Effect::Decrease,
            _ => Effect::None,
        }
    }
}

/// Confidence and separability results for one subgroup, or for the pooled
/// fit.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct AxisSummary {
    pub name: String,
    /// One entry per severity, in severity order.
    pub confidence: Vec<ConfidenceEntry>,
    pub separability: SeparabilityCurve,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct ReportCell {
    pub gamma_mean: f64,
    pub prob_positive: f64,
    pub confidence_effect: Effect,
    pub ks_median: f64,
    pub p_value: Option<f64>,
    pub separability_effect: Effect,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Confidence,
    Separability,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct Disagreement {
    pub severity: usize,
    pub axis: Axis,
    pub subgroup: String,
    pub pooled: Effect,
    pub subgroup_effect: Effect,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct SeverityRow {
    pub severity: usize,
    pub pooled: ReportCell,
    pub subgroups: Vec<(String, ReportCell)>,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct SimpsonsReport {
    pub alpha: f64,
    pub rows: Vec<SeverityRow>,
    pub flags: Vec<Disagreement>,
    /// Subgroups whose confidence decreases significantly at some severity.
    pub subgroups_with_decrease: Vec<String>,
    pub pooled_has_decrease: bool,
}

fn cell(axis: &AxisSummary, s: usize, alpha: f64) -> ReportCell {
    let c = &axis.confidence[s];
    let k = &axis.separability.severities[s];
    ReportCell {
        gamma_mean: c.mean,
        prob_positive: c.prob_positive,
        confidence_effect: Effect::from_confidence(c, alpha),
        ks_median: k.median,
        p_value: k.p_value,
        separability_effect: Effect::from_separability(k.p_value, alpha),
    }
}

/// Side-by-side subgroup and pooled summaries, flagging every severity and
/// axis where the pooled classification disagrees with a subgroup's.
pub fn simpsons_report(subgroups: &[AxisSummary], pooled: &AxisSummary, alpha: f64) -> Result<SimpsonsReport, AnalysisError> {
    let s_count = pooled.confidence.len();
    if pooled.separability.severities.len() != s_count {
        return Err(AnalysisError::Configuration("pooled confidence and separability ladders differ".into()));
    }
    for sg in subgroups {
        if sg.confidence.len() != s_count || sg.separability.severities.len() != s_count {
            return Err(AnalysisError::Configuration(format!(
                "subgroup {} has a different severity ladder from the pooled analysis",
                sg.name
            )));
        }
    }
    let mut rows = Vec::with_capacity(s_count);
    let mut flags = Vec::new();
    for s in 0..s_count {
        let p = cell(pooled, s, alpha);
        let mut cells = Vec::with_capacity(subgroups.len());
        for sg in subgroups {
            let c = cell(sg, s, alpha);
            for (axis, pe, ce) in [
                (Axis::Confidence, p.confidence_effect, c.confidence_effect),
                (Axis::Separability, p.separability_effect, c.separability_effect),
            ] {
                if pe != ce {
                    flags.push(Disagreement {
                        severity: s,
                        axis,
                        subgroup: sg.name.clone(),
                        pooled: pe,
                        subgroup_effect: ce,
                    });
                }
            }
            cells.push((sg.name.clone(), c));
        }
        rows.push(SeverityRow {
            severity: s,
            pooled: p,
            subgroups: cells,
        });
    }
    let decreased = |a: &AxisSummary| {
        a.confidence
            .iter()
            .any(|c| Effect::from_confidence(c, alpha) == Effect::Decrease)
    };
    Ok(SimpsonsReport {
        alpha,
        rows,
        flags,
        subgroups_with_decrease: subgroups.iter().filter(|a| decreased(a)).map(|a| a.name.clone()).collect(),
        pooled_has_decrease: decreased(pooled),
    })
}

/// Positive groups for a model subgroup name: the subgroup itself, or every
/// label for a pooled fit.
fn positive_groups(name: &str) -> Result<Vec<SubgroupLabel>, AnalysisError> {
    if name == POOLED {
        return Ok(SubgroupLabel::ALL.to_vec());
    }
    SubgroupLabel::parse(name)
        .map(|g| vec![g])
        .ok_or_else(|| AnalysisError::Configuration(format!("unknown subgroup {name:?}")))
}

/// Name of the single group of a pooled fit.
pub const POOLED: &str = "pooled";

/// Everything the analysis step computes for one fitted model.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct AnalysisReport {
    pub variant: Option<Variant>,
    pub subgroups: Vec<String>,
    pub severities: usize,
    pub replicates: usize,
    pub seed: u64,
    pub alpha: f64,
    /// Subgroup-major, then severity.
    pub confidence: Vec<ConfidenceEntry>,
    /// One summary per subgroup with malignant cases, in model order.
    pub axes: Vec<AxisSummary>,
    /// Subgroups without malignant cases, which have no separability curve.
    pub skipped: Vec<String>,
}

impl AnalysisReport {
    pub fn axis(&self, name: &str) -> Option<&AxisSummary> {
        self.axes.iter().find(|a| a.name == name)
    }
}

/// Confidence summaries and posterior-predictive separability curves over
/// the dense design. `cases` must be aligned with the model's case list.
pub fn analyze(
    post: &PosteriorApprox,
    spec: &ModelSpec,
    cases: &[BreastCase],
    replicates: usize,
    seed: u64,
    alpha: f64,
) -> Result<AnalysisReport, AnalysisError> {
    if cases.len() != spec.num_cases() || cases.iter().zip(&spec.cases).any(|(c, id)| &c.case_id != id) {
        return Err(AnalysisError::Configuration("cases do not match the model's case list".into()));
    }
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(AnalysisError::Configuration(format!("alpha {alpha} outside (0, 0.5)")));
    }
    let confidence = confidence_summary(post, spec)?;
    let mut with_positives = Vec::new();
    let mut skipped = Vec::new();
    for (g, name) in spec.subgroups.iter().enumerate() {
        let groups = positive_groups(name)?;
        let masks = ClassMasks::new(cases, &groups)?;
        if masks.positive.iter().any(|&p| p) {
            with_positives.push((g, groups));
        } else {
            skipped.push(name.clone());
        }
    }
    let design = ModelSpec::dense_design(spec.num_readers(), spec.severities, spec.num_cases());
    let group_sets: Vec<Vec<SubgroupLabel>> = with_positives.iter().map(|(_, gs)| gs.clone()).collect();
    let curves = if group_sets.is_empty() {
        Vec::new()
    } else {
        separability_from_posterior(post, spec, &design, cases, &group_sets, replicates, seed)?
    };
    let s = spec.severities;
    let axes = with_positives
        .iter()
        .zip(curves)
        .map(|((g, _), curve)| AxisSummary {
            name: spec.subgroups[*g].clone(),
            confidence: confidence[g * s..(g + 1) * s].to_vec(),
            separability: curve,
        })
        .collect();
    Ok(AnalysisReport {
        variant: post.variant.or(Some(spec.variant)),
        subgroups: spec.subgroups.clone(),
        severities: s,
        replicates,
        seed,
        alpha,
        confidence,
        axes,
        skipped,
    })
}

/// Aggregation report from a per-subgroup analysis and a pooled one.
pub fn simpsons_from_reports(by_subgroup: &AnalysisReport, pooled: &AnalysisReport, alpha: f64) -> Result<SimpsonsReport, AnalysisError> {
    let pooled_axis = match pooled.axes.as_slice() {
        [one] => one,
        _ => {
            return Err(AnalysisError::Configuration(format!(
                "pooled analysis must have exactly one group, found {}",
                pooled.axes.len()
            )))
        }
    };
    simpsons_report(&by_subgroup.axes, pooled_axis, alpha)
}
