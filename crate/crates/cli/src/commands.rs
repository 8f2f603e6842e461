use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sievelab::advi::{compare_models, fit_model, AdviConfig, PosteriorApprox};
use sievelab::analysis::{analyze, simpsons_from_reports, AnalysisReport};
use sievelab::calibrate::{classwise_ece, fit_calibrator, CalibrationConfig, Calibrator};
use sievelab::data::{
    load_cases, load_image_meta, load_predictions, load_rois, read_prediction_records, write_cases, write_predictions,
    BreastCase, CaseLabel, PredictionSet, ReaderKind, RoiAnnotation,
};
use sievelab::filter::{
    default_ladder, halving_ladder, lowpass, read_gray_image, roi_scheme_filter, severity_to_cycles_per_frame,
    validate_ladder, write_png16, Cutoff, FilterSpec, RoiScheme,
};
use sievelab::io::{read_json, write_json, write_jsonl, StagedDir};
use sievelab::manifest::RunManifest;
use sievelab::model::{build_model, ModelSpec, Variant};
use sievelab::study::now_ms;
use sievelab::synth::{prediction_records, run_recovery, RecoveryConfig};
use thiserror::Error;

use crate::{plot, tables, AnalyzeArgs, CalibrateArgs, Cli, Command, CompareArgs, DataArgs, FilterArgs, FitArgs, ServeArgs, SimpsonsArgs, SimulateArgs};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] sievelab::Error),
    #[error("{0}")]
    Invalid(String),
    #[error("server error: {0}")]
    Server(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(e) => e.kind(),
            CliError::Invalid(_) => "invalid",
            CliError::Server(_) => "server",
        }
    }
}

macro_rules! from_core {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        }
    )*};
}

from_core!(
    sievelab::data::DataError,
    sievelab::filter::FilterError,
    sievelab::calibrate::CalibrationError,
    sievelab::model::ModelError,
    sievelab::advi::FitError,
    sievelab::analysis::AnalysisError,
    sievelab::synth::SynthError,
    serde_json::Error
);

type Result<T> = std::result::Result<T, CliError>;

/// Prints a JSON error body on stderr and returns exit status 1.
pub fn report_error(e: &CliError) -> ExitCode {
    let body = json!({"error": e.kind(), "message": e.to_string()});
    eprintln!("{body}");
    ExitCode::from(1)
}

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    let out = cli.out;
    match cli.command {
        Command::Filter(a) => filter(a, seed, need_out(out)?),
        Command::Simulate(a) => simulate(a, seed, need_out(out)?),
        Command::Calibrate(a) => calibrate(a, seed, need_out(out)?),
        Command::Fit(a) => fit(a, seed, need_out(out)?),
        Command::CompareModels(a) => compare(a, seed, need_out(out)?),
        Command::Analyze(a) => analyze_cmd(a, seed, need_out(out)?),
        Command::Simpsons(a) => simpsons(a, seed, need_out(out)?),
        Command::Serve(a) => serve(a, out),
    }
}

fn need_out(out: Option<PathBuf>) -> Result<PathBuf> {
    out.ok_or_else(|| CliError::Usage("the --out directory is required for this command".into()))
}

/// Staged output directory plus its manifest.
struct Output {
    staged: StagedDir,
    manifest: RunManifest,
}

impl Output {
    fn new<T: Serialize>(target: &Path, command: &str, seed: u64, config: &T) -> Result<Self> {
        Ok(Self {
            staged: StagedDir::new(target)?,
            manifest: RunManifest::new(command, seed, config, now_ms())?,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.staged.join(name)
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        Ok(self.manifest.add_input(path)?)
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        Ok(write_json(&self.path(name), value)?)
    }

    fn finish(mut self) -> Result<RunManifest> {
        self.manifest.finished_unix_ms = now_ms();
        self.manifest.record_outputs(self.staged.path())?;
        self.manifest.write(self.staged.path())?;
        self.staged.commit()?;
        Ok(self.manifest)
    }
}

fn image_file(dir: &Path, image_id: &str) -> Result<PathBuf> {
    ["png", "pgm"]
        .iter()
        .map(|ext| dir.join(format!("{image_id}.{ext}")))
        .find(|p| p.is_file())
        .ok_or_else(|| CliError::Invalid(format!("no PNG or PGM file for image {image_id} in {}", dir.display())))
}

fn load_ladder(path: Option<&Path>, default: impl FnOnce() -> Vec<FilterSpec>) -> Result<Vec<FilterSpec>> {
    let ladder = match path {
        Some(p) => read_json(p)?,
        None => default(),
    };
    validate_ladder(&ladder)?;
    Ok(ladder)
}

fn filter(a: FilterArgs, seed: u64, out: PathBuf) -> Result<()> {
    let ladder = load_ladder(a.ladder.as_deref(), default_ladder)?;
    let spec = ladder
        .get(a.severity_index)
        .cloned()
        .ok_or_else(|| CliError::Invalid(format!("severity index {} outside the {}-level ladder", a.severity_index, ladder.len())))?;
    let meta_path = a.input.join("images.jsonl");
    let metas = load_image_meta(&meta_path)?;
    let mut union: HashMap<String, RoiAnnotation> = HashMap::new();
    if a.scheme != RoiScheme::Full {
        let path = a
            .rois
            .as_deref()
            .ok_or_else(|| CliError::Usage(format!("--rois is required for the {:?} scheme", a.scheme)))?;
        for ann in load_rois(path)? {
            union
                .entry(ann.image_id.clone())
                .or_insert_with(|| RoiAnnotation {
                    reader_id: "union".into(),
                    image_id: ann.image_id.clone(),
                    boxes: vec![],
                })
                .boxes
                .extend(ann.boxes);
        }
    }
    let config = json!({
        "severity_index": a.severity_index,
        "ladder": ladder,
        "scheme": a.scheme,
    });
    let mut output = Output::new(&out, "filter", seed, &config)?;
    output.input(&meta_path)?;
    if let Some(p) = &a.rois {
        output.input(p)?;
    }
    let files = metas.iter().map(|m| image_file(&a.input, &m.image_id)).collect::<Result<Vec<_>>>()?;
    for f in &files {
        output.input(f)?;
    }
    let cutoffs = metas
        .par_iter()
        .zip(&files)
        .map(|(meta, file)| {
            let image = read_gray_image(file, meta.mm_per_pixel)?;
            if image.height != meta.height_px as usize || image.width != meta.width_px as usize {
                return Err(CliError::Invalid(format!(
                    "image {} is {}x{} but its metadata says {}x{}",
                    meta.image_id, image.width, image.height, meta.width_px, meta.height_px
                )));
            }
            let filtered = match union.get(&meta.image_id) {
                Some(ann) => roi_scheme_filter(&image, ann, a.scheme, &spec)?,
                None if a.scheme == RoiScheme::Interior => image.clone(),
                None => lowpass(&image, &spec)?,
            };
            write_png16(&output.path(&format!("{}.png", meta.image_id)), &filtered)?;
            Ok(match spec.cutoff_cycles_per_mm {
                Cutoff::Unfiltered => None,
                Cutoff::CyclesPerMm(c) => Some(severity_to_cycles_per_frame(c, &image)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(&output.path("images.jsonl"), &metas)?;
    let d0: BTreeMap<&str, Option<f64>> = metas.iter().map(|m| m.image_id.as_str()).zip(cutoffs).collect();
    output.manifest.details = json!({
        "ladder": ladder,
        "severity_index": a.severity_index,
        "scheme": a.scheme,
        "cutoff_cycles_per_frame": d0,
    });
    let manifest = output.finish()?;
    if let Some(p) = a.manifest {
        write_json(&p, &manifest)?;
    }
    Ok(())
}

fn simulate(a: SimulateArgs, seed: u64, out: PathBuf) -> Result<()> {
    let mut config: RecoveryConfig = read_json(&a.config)?;
    config.seed = seed;
    config.advi.seed = seed;
    let mut output = Output::new(&out, "simulate", seed, &config)?;
    output.input(&a.config)?;
    let run = run_recovery(&config)?;
    let ladder = halving_ladder(run.spec.severities);
    let records = prediction_records(&run.spec, &run.observations);
    write_predictions(&output.path("predictions.jsonl"), &records)?;
    write_cases(&output.path("cases.jsonl"), &run.cases)?;
    output.json("config.json", &config)?;
    output.json("ladder.json", &ladder)?;
    output.json("model.json", &run.spec)?;
    output.json("truth.json", &run.truth)?;
    output.json("posterior.json", &run.posterior)?;
    output.json("report.json", &run.report)?;
    output.finish()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct CalibrationEntry {
    calibrator: Calibrator,
    points: usize,
    /// In-sample classwise ECE before and after calibration.
    ece_before: f64,
    ece_after: f64,
}

#[derive(Serialize, Deserialize)]
struct CalibrationFile {
    pooled: bool,
    severity: usize,
    /// Keyed by reader id, or `"pooled"`.
    calibrators: BTreeMap<String, CalibrationEntry>,
}

fn calibrate(a: CalibrateArgs, seed: u64, out: PathBuf) -> Result<()> {
    let cases = load_cases(&a.labels)?;
    let label: HashMap<&str, bool> = cases.iter().map(|c| (c.case_id.as_str(), c.label == CaseLabel::Malignant)).collect();
    let records = read_prediction_records(&a.val)?;
    let mut groups: BTreeMap<String, (Vec<f64>, Vec<bool>)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.reader_kind == ReaderKind::Machine && r.severity_index == a.severity) {
        let y = *label
            .get(r.case_id.as_str())
            .ok_or_else(|| CliError::Invalid(format!("prediction for unknown case {}", r.case_id)))?;
        let key = if a.pooled { "pooled".to_string() } else { r.reader_id.clone() };
        let g = groups.entry(key).or_default();
        g.0.push(r.score);
        g.1.push(y);
    }
    if groups.is_empty() {
        return Err(CliError::Invalid(format!("no machine predictions at severity {}", a.severity)));
    }
    let config = CalibrationConfig { seed, ..Default::default() };
    let mut output = Output::new(&out, "calibrate", seed, &json!({"config": config, "pooled": a.pooled, "severity": a.severity}))?;
    output.input(&a.val)?;
    output.input(&a.labels)?;
    let mut calibrators = BTreeMap::new();
    for (key, (scores, labels)) in groups {
        let cal = fit_calibrator(&scores, &labels, &config)?;
        let after: Vec<f64> = scores.iter().map(|&s| cal.apply(s)).collect();
        let entry = CalibrationEntry {
            points: scores.len(),
            ece_before: classwise_ece(&scores, &labels, config.bins)?,
            ece_after: classwise_ece(&after, &labels, config.bins)?,
            calibrator: cal,
        };
        calibrators.insert(key, entry);
    }
    if let Some(path) = &a.apply {
        output.input(path)?;
        let mut applied = read_prediction_records(path)?;
        for r in applied.iter_mut().filter(|r| r.reader_kind == ReaderKind::Machine) {
            let key = if a.pooled { "pooled" } else { r.reader_id.as_str() };
            let entry = calibrators
                .get(key)
                .ok_or_else(|| CliError::Invalid(format!("no calibrator for machine reader {}", r.reader_id)))?;
            r.score = entry.calibrator.apply(r.score);
        }
        write_predictions(&output.path("calibrated.jsonl"), &applied)?;
    }
    output.json(
        "calibrator.json",
        &CalibrationFile {
            pooled: a.pooled,
            severity: a.severity,
            calibrators,
        },
    )?;
    output.finish()?;
    Ok(())
}

struct Loaded {
    set: PredictionSet,
    advi: AdviConfig,
}

fn load_data(d: &DataArgs, seed: u64) -> Result<Loaded> {
    let cases = load_cases(&d.cases)?;
    let levels = read_prediction_records(&d.data)?
        .iter()
        .map(|r| r.severity_index + 1)
        .max()
        .unwrap_or(1);
    let ladder = load_ladder(d.ladder.as_deref(), || halving_ladder(levels))?;
    let set = load_predictions(&d.data, cases, ladder)?;
    let mut advi: AdviConfig = match &d.advi {
        Some(p) => read_json(p)?,
        None => AdviConfig::default(),
    };
    advi.seed = seed;
    if let Some(n) = d.max_iters {
        advi.max_iters = n;
    }
    Ok(Loaded { set, advi })
}

fn data_inputs(output: &mut Output, d: &DataArgs) -> Result<()> {
    output.input(&d.data)?;
    output.input(&d.cases)?;
    for p in [&d.ladder, &d.advi].into_iter().flatten() {
        output.input(p)?;
    }
    Ok(())
}

fn fit(a: FitArgs, seed: u64, out: PathBuf) -> Result<()> {
    let loaded = load_data(&a.data, seed)?;
    let (spec, obs) = build_model(&loaded.set, a.model, !a.data.unconstrained, a.data.grouping)?;
    let config = json!({"variant": a.model, "grouping": a.data.grouping, "constrained": spec.constrained, "advi": loaded.advi});
    let mut output = Output::new(&out, "fit", seed, &config)?;
    data_inputs(&mut output, &a.data)?;
    let post = fit_model(&spec, &obs, &loaded.advi)?;
    output.json("posterior.json", &post)?;
    output.json("model.json", &spec)?;
    output.json("ladder.json", &loaded.set.severities)?;
    write_cases(&output.path("cases.jsonl"), &loaded.set.cases)?;
    output.manifest.details = json!({"variant": a.model, "iterations": post.iterations, "converged": post.converged});
    output.finish()?;
    Ok(())
}

fn compare(a: CompareArgs, seed: u64, out: PathBuf) -> Result<()> {
    let loaded = load_data(&a.data, seed)?;
    let variants = if a.models.is_empty() { Variant::ALL.to_vec() } else { a.models.clone() };
    let config = json!({"variants": variants, "grouping": a.data.grouping, "mc_samples": a.mc_samples, "advi": loaded.advi});
    let mut output = Output::new(&out, "compare-models", seed, &config)?;
    data_inputs(&mut output, &a.data)?;
    let mut candidates: Vec<(ModelSpec, PosteriorApprox)> = Vec::new();
    let mut observations = Vec::new();
    for v in &variants {
        let (spec, obs) = build_model(&loaded.set, *v, !a.data.unconstrained, a.data.grouping)?;
        let post = fit_model(&spec, &obs, &loaded.advi)?;
        output.json(&format!("posterior-{v}.json"), &post)?;
        output.json(&format!("model-{v}.json"), &spec)?;
        candidates.push((spec, post));
        observations = obs;
    }
    let ranking = compare_models(&candidates, &observations, a.mc_samples, seed)?;
    output.json("comparison.json", &json!({"ranking": ranking, "best": ranking.first().map(|r| r.variant)}))?;
    write_cases(&output.path("cases.jsonl"), &loaded.set.cases)?;
    output.finish()?;
    Ok(())
}

fn analyze_cmd(a: AnalyzeArgs, seed: u64, out: PathBuf) -> Result<()> {
    let post: PosteriorApprox = read_json(&a.posterior)?;
    let spec: ModelSpec = read_json(&a.spec)?;
    let cases_path = a.cases.clone().unwrap_or_else(|| a.spec.with_file_name("cases.jsonl"));
    let all_cases = load_cases(&cases_path)?;
    let by_id: HashMap<&str, &BreastCase> = all_cases.iter().map(|c| (c.case_id.as_str(), c)).collect();
    let cases = spec
        .cases
        .iter()
        .map(|id| by_id.get(id.as_str()).map(|c| (*c).clone()).ok_or_else(|| CliError::Invalid(format!("model case {id} missing from {}", cases_path.display()))))
        .collect::<Result<Vec<_>>>()?;
    let config = json!({"replicates": a.replicates, "alpha": a.alpha});
    let mut output = Output::new(&out, "analyze", seed, &config)?;
    output.input(&a.posterior)?;
    output.input(&a.spec)?;
    output.input(&cases_path)?;
    let report = analyze(&post, &spec, &cases, a.replicates, seed, a.alpha)?;
    output.json("report.json", &report)?;
    tables::write_confidence(&output.path("confidence.csv"), &report.confidence, &spec.subgroups)?;
    tables::write_separability(&output.path("separability.csv"), &report.axes)?;
    let title = format!("{} model", report.variant.map(|v| v.to_string()).unwrap_or_default());
    std::fs::write(output.path("figure.svg"), plot::figure(&report.axes, &title))
        .map_err(|e| CliError::Invalid(format!("writing figure: {e}")))?;
    output.finish()?;
    Ok(())
}

fn simpsons(a: SimpsonsArgs, seed: u64, out: PathBuf) -> Result<()> {
    let by_subgroup: AnalysisReport = read_json(&a.subgroups)?;
    let pooled: AnalysisReport = read_json(&a.pooled)?;
    let mut output = Output::new(&out, "simpsons", seed, &json!({"alpha": a.alpha}))?;
    output.input(&a.subgroups)?;
    output.input(&a.pooled)?;
    let report = simpsons_from_reports(&by_subgroup, &pooled, a.alpha)?;
    output.json("simpsons.json", &report)?;
    tables::write_simpsons(&output.path("simpsons.csv"), &report)?;
    let mut axes = by_subgroup.axes.clone();
    axes.extend(pooled.axes.iter().cloned());
    std::fs::write(output.path("figure.svg"), plot::figure(&axes, "subgroups vs pooled"))
        .map_err(|e| CliError::Invalid(format!("writing figure: {e}")))?;
    output.finish()?;
    Ok(())
}

fn serve(a: ServeArgs, out: Option<PathBuf>) -> Result<()> {
    let data_dir = a
        .data_dir
        .or(out)
        .ok_or_else(|| CliError::Usage("serve needs --data-dir or --out".into()))?;
    let mut config = sievelab_server::ServerConfig::new(data_dir);
    config.images_dir = a.images;
    config.admin_token = a.admin_token.or_else(|| std::env::var("SIEVELAB_ADMIN_TOKEN").ok());
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Server(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&a.addr)
            .await
            .map_err(|e| CliError::Server(format!("bind {}: {e}", a.addr)))?;
        let local = listener.local_addr().map_err(|e| CliError::Server(e.to_string()))?;
        eprintln!("{}", json!({"listening": local.to_string()}));
        sievelab_server::serve(listener, config).await.map_err(|e| CliError::Server(e.to_string()))
    })
}
