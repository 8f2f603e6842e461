//! Synthetic generators: lesion-like image phantoms and end-to-end recovery
//! experiments for the prediction model.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advi::{fit_model, AdviConfig, FitError, PosteriorApprox};
use crate::analysis::gamma_effect_summary;
use crate::data::{BreastCase, CaseLabel, LesionTag, PredictionRecord, PredictionSet, ReaderKind, Side, SubgroupLabel};
use crate::filter::{halving_ladder, lowpass, Cutoff, FilterSpec, GrayImage};
use crate::model::{Layout, LatentParams, ModelSpec, Observation, Triple, Variant};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid phantom: {0}")]
    Phantom(String),
    #[error("invalid recovery config: {0}")]
    Config(String),
    #[error("fit failed for config {config}: {source}")]
    Fit {
        config: String,
        #[source]
        source: FitError,
    },
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    SpeckCluster,
    SoftBlob,
    Mixed,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub count: usize,
    /// Speck edge length. Blobs use a standard deviation of four times this.
    pub size_px: usize,
    /// Added intensity of a speck, or peak intensity of a blob.
    pub contrast: f64,
    pub background_seed: u64,
    #[serde(default = "default_background_level")]
    pub background_level: f64,
    /// Standard deviation of the background texture.
    #[serde(default = "default_texture_std")]
    pub texture_std: f64,
}

fn default_background_level() -> f64 {
    0.5
}

fn default_texture_std() -> f64 {
    0.02
}

/// Cutoff of the background texture.
pub const TEXTURE_CUTOFF_CYCLES_PER_MM: f64 = 0.25;

impl PhantomSpec {
    pub fn new(kind: PhantomKind, count: usize, size_px: usize, contrast: f64, background_seed: u64) -> Self {
        Self {
            kind,
            count,
            size_px,
            contrast,
            background_seed,
            background_level: default_background_level(),
            texture_std: default_texture_std(),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.size_px < 1 {
            return Err(SynthError::Phantom("size_px must be at least 1".into()));
        }
        if !(self.contrast > 0.0 && self.contrast.is_finite()) {
            return Err(SynthError::Phantom(format!("contrast must be positive, got {}", self.contrast)));
        }
        if !(self.texture_std >= 0.0 && self.texture_std.is_finite()) {
            return Err(SynthError::Phantom("texture_std must be non-negative".into()));
        }
        Ok(())
    }

    fn blob_sigma(&self) -> f64 {
        4.0 * self.size_px as f64
    }

    /// Side of the square the phantom occupies.
    pub fn footprint_px(&self) -> usize {
        let speck = 8 * self.size_px;
        let blob = 24 * self.size_px;
        match self.kind {
            PhantomKind::SpeckCluster => speck,
            PhantomKind::SoftBlob => blob,
            PhantomKind::Mixed => speck.max(blob),
        }
    }
}

/// Low-pass filtered white noise around `level`, scaled to standard
/// deviation `std`.
pub fn smooth_background(height: usize, width: usize, mm_per_pixel: f64, level: f64, std: f64, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..height * width).map(|_| StandardNormal.sample(&mut rng)).collect();
    let white = GrayImage {
        height,
        width,
        mm_per_pixel,
        pixels: noise,
    };
    let spec = FilterSpec {
        severity_index: 1,
        cutoff_cycles_per_mm: Cutoff::CyclesPerMm(TEXTURE_CUTOFF_CYCLES_PER_MM),
    };
    let mut smooth = lowpass(&white, &spec).expect("valid synthetic image");
    let mean = smooth.mean();
    let sd = (smooth.pixels.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / smooth.pixels.len() as f64).sqrt();
    let scale = if sd > 0.0 { std / sd } else { 0.0 };
    smooth.pixels.iter_mut().for_each(|p| *p = level + (*p - mean) * scale);
    smooth
}

fn add_square(img: &mut GrayImage, top: usize, left: usize, size: usize, value: f64) {
    for r in top..(top + size).min(img.height) {
        for c in left..(left + size).min(img.width) {
            img.pixels[r * img.width + c] += value;
        }
    }
}

fn add_gaussian(img: &mut GrayImage, cy: f64, cx: f64, sigma: f64, peak: f64) {
    let reach = (4.0 * sigma).ceil() as isize;
    let (h, w) = (img.height as isize, img.width as isize);
    for r in (cy as isize - reach).max(0)..(cy as isize + reach + 1).min(h) {
        for c in (cx as isize - reach).max(0)..(cx as isize + reach + 1).min(w) {
            let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
            img.pixels[(r * w + c) as usize] += peak * (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }
}

/// Renders a phantom over a smooth background. The background depends only
/// on `spec.background_seed`; lesion placement on `seed`.
pub fn synth_lesion_image(spec: &PhantomSpec, height: usize, width: usize, mm_per_pixel: f64, seed: u64) -> Result<GrayImage, SynthError> {
    spec.validate()?;
    if !(mm_per_pixel > 0.0 && mm_per_pixel.is_finite()) {
        return Err(SynthError::Phantom(format!("mm_per_pixel must be positive, got {mm_per_pixel}")));
    }
    let footprint = spec.footprint_px();
    if footprint > height.min(width) {
        return Err(SynthError::Phantom(format!(
            "phantom footprint {footprint}px exceeds {height}x{width} image"
        )));
    }
    let mut img = smooth_background(height, width, mm_per_pixel, spec.background_level, spec.texture_std, spec.background_seed);
    if spec.count == 0 {
        return Ok(img);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = footprint / 2;
    let cy = rng.random_range(half..=height - (footprint - half));
    let cx = rng.random_range(half..=width - (footprint - half));
    let size = spec.size_px;
    let (specks, blobs) = match spec.kind {
        PhantomKind::SpeckCluster => (spec.count, 0),
        PhantomKind::SoftBlob => (0, spec.count),
        PhantomKind::Mixed => (spec.count.div_ceil(2), spec.count / 2),
    };
    for _ in 0..blobs {
        let jitter = spec.size_px as f64;
        let by = cy as f64 + rng.random_range(-jitter..=jitter);
        let bx = cx as f64 + rng.random_range(-jitter..=jitter);
        add_gaussian(&mut img, by, bx, spec.blob_sigma(), spec.contrast);
    }
    // specks fall anywhere inside the cluster square
    let origin_y = cy - half;
    let origin_x = cx - half;
    let span = 8 * size - size;
    for _ in 0..specks {
        let top = origin_y + rng.random_range(0..=span);
        let left = origin_x + rng.random_range(0..=span);
        add_square(&mut img, top, left, size, spec.contrast);
    }
    Ok(img)
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DesignDensity {
    /// Every reader sees every case at every severity.
    Dense,
    /// Every reader sees every case once, at a uniformly drawn severity.
    Sparse,
}

/// Shape of the generated `γ_{s,g}` over `s ≥ 1`.
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum GammaProfile {
    /// Magnitude grows linearly from `gamma_max / (S - 1)` to `gamma_max`.
    #[default]
    Ramp,
    /// Magnitude `gamma_max` at every perturbed severity.
    Constant,
}

/// True latent values for a recovery run.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TruthSpec {
    /// `b`, `μ` and `ν` from the standard normal prior (then constrained);
    /// `γ_{s,g}` for `s ≥ 1` follows `profile`, negative for even subgroups
    /// and positive for odd ones. Malignant cases get `malignant_shift` added
    /// to `μ`.
    Generated {
        gamma_max: f64,
        #[serde(default)]
        profile: GammaProfile,
        #[serde(default)]
        malignant_shift: f64,
    },
    Explicit { params: LatentParams },
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct RecoveryConfig {
    pub readers: usize,
    pub cases: usize,
    pub severities: usize,
    pub subgroups: usize,
    pub design: DesignDensity,
    pub truth: TruthSpec,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    pub seed: u64,
    #[serde(default)]
    pub advi: AdviConfig,
    #[serde(default = "default_sign_threshold")]
    pub sign_recovery_threshold: f64,
    #[serde(default = "default_coverage_threshold")]
    pub coverage_threshold: f64,
}

fn default_variant() -> Variant {
    Variant::Full
}

fn default_sign_threshold() -> f64 {
    0.95
}

fn default_coverage_threshold() -> f64 {
    0.80
}

impl RecoveryConfig {
    pub fn new(readers: usize, cases: usize, severities: usize, subgroups: usize, design: DesignDensity, gamma_max: f64, seed: u64) -> Self {
        Self {
            readers,
            cases,
            severities,
            subgroups,
            design,
            truth: TruthSpec::Generated {
                gamma_max,
                profile: GammaProfile::Ramp,
                malignant_shift: 0.0,
            },
            variant: default_variant(),
            seed,
            advi: AdviConfig::default(),
            sign_recovery_threshold: default_sign_threshold(),
            coverage_threshold: default_coverage_threshold(),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.into()));
        if self.readers == 0 || self.cases == 0 || self.subgroups == 0 {
            return bad("readers, cases and subgroups must be positive");
        }
        if self.severities < 2 {
            return bad("at least two severities are needed");
        }
        if self.subgroups > SubgroupLabel::ALL.len() {
            return bad("at most five subgroups are supported");
        }
        if self.cases < self.subgroups {
            return bad("every subgroup needs at least one case");
        }
        Ok(())
    }
}

/// Splits `seed` into independent sub-seeds for truth, cases and data.
fn sub_seeds(seed: u64) -> [u64; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    [rng.random(), rng.random(), rng.random(), rng.random()]
}

fn subgroup_tags(g: SubgroupLabel) -> BTreeSet<LesionTag> {
    let tags: &[LesionTag] = match g {
        SubgroupLabel::UnambiguousMicrocalc => &[LesionTag::Microcalcification],
        SubgroupLabel::UnambiguousSoftTissue => &[LesionTag::Mass],
        SubgroupLabel::Ambiguous => &[LesionTag::Microcalcification, LesionTag::Mass],
        SubgroupLabel::Occult => &[LesionTag::Occult],
        SubgroupLabel::Nonbiopsied => &[],
    };
    tags.iter().copied().collect()
}

/// `n` synthetic breasts, case `i` in subgroup `i mod G` (taxonomy order).
/// Biopsied cases are malignant with probability one half; two consecutive
/// cases share an exam.
pub fn synthetic_cases(n: usize, subgroups: usize, seed: u64) -> Vec<BreastCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let g = SubgroupLabel::ALL[i % subgroups];
            let label = match g {
                SubgroupLabel::Nonbiopsied => CaseLabel::Nonbiopsied,
                _ if rng.random_bool(0.5) => CaseLabel::Malignant,
                _ => CaseLabel::Benign,
            };
            BreastCase {
                case_id: format!("case-{i:05}"),
                exam_id: format!("exam-{:05}", i / 2),
                side: if i % 2 == 0 { Side::Left } else { Side::Right },
                label,
                lesion_tags: subgroup_tags(g),
            }
        })
        .collect()
}

fn recovery_design(config: &RecoveryConfig, seed: u64) -> Vec<Triple> {
    let (r, s, n) = (config.readers, config.severities, config.cases);
    match config.design {
        DesignDensity::Dense => ModelSpec::dense_design(r, s, n),
        DesignDensity::Sparse => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out = Vec::with_capacity(r * n);
            for reader in 0..r {
                for case in 0..n {
                    out.push(Triple {
                        reader,
                        severity: rng.random_range(0..s),
                        case,
                    });
                }
            }
            out
        }
    }
}

fn generated_truth(spec: &ModelSpec, cases: &[BreastCase], gamma_max: f64, profile: GammaProfile, shift: f64, seed: u64) -> LatentParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = LatentParams::zeros(spec);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    p.b.iter_mut().for_each(|x| *x = normal());
    p.mu.iter_mut().for_each(|x| *x = normal());
    p.nu.iter_mut().for_each(|x| *x = normal());
    for (m, c) in p.mu.iter_mut().zip(cases) {
        if c.label == CaseLabel::Malignant {
            *m += shift;
        }
    }
    let g = spec.num_subgroups();
    if !p.gamma.is_empty() {
        let steps = (spec.severities - 1) as f64;
        for s in 1..spec.severities {
            for gi in 0..g {
                let sign = if gi % 2 == 0 { -1.0 } else { 1.0 };
                let scale = match profile {
                    GammaProfile::Ramp => s as f64 / steps,
                    GammaProfile::Constant => 1.0,
                };
                p.gamma[s * g + gi] = sign * gamma_max * scale;
            }
        }
    }
    if spec.constrained {
        p.apply_constraints();
    }
    p
}

/// Everything produced by one recovery run.
#[derive(Clone, Debug)]
pub struct RecoveryRun {
    pub spec: ModelSpec,
    pub cases: Vec<BreastCase>,
    pub truth: LatentParams,
    pub observations: Vec<Observation>,
    pub posterior: PosteriorApprox,
    pub report: RecoveryReport,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct GammaRecovery {
    pub severity: usize,
    pub subgroup: usize,
    pub truth: f64,
    pub mean: f64,
    pub std: f64,
    pub prob_positive: f64,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct RecoveryReport {
    pub config: RecoveryConfig,
    pub observations: usize,
    pub latents: usize,
    /// Fraction of free coordinates whose truth lies within 2 posterior stds.
    pub coverage: f64,
    pub gamma_coverage: f64,
    /// Fraction of nonzero true `γ` whose posterior mean has the same sign;
    /// `None` when every true effect is zero.
    pub sign_recovery: Option<f64>,
    /// Fraction of `P(γ > 0)` values outside `[0.05, 0.95]`.
    pub prob_positive_outside: f64,
    pub gamma: Vec<GammaRecovery>,
    pub iterations: usize,
    pub converged: bool,
    pub final_elbo: Option<f64>,
    pub meets_thresholds: bool,
}

/// Observations as human prediction records.
pub fn prediction_records(spec: &ModelSpec, observations: &[Observation]) -> Vec<PredictionRecord> {
    observations
        .iter()
        .map(|o| PredictionRecord {
            reader_id: spec.readers[o.cell.reader].clone(),
            reader_kind: ReaderKind::Human,
            case_id: spec.cases[o.cell.case].clone(),
            severity_index: o.cell.severity,
            score: o.score,
        })
        .collect()
}

/// Data sampled from known latents.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub spec: ModelSpec,
    pub cases: Vec<BreastCase>,
    pub truth: LatentParams,
    pub observations: Vec<Observation>,
}

impl SyntheticData {
    pub fn prediction_records(&self) -> Vec<PredictionRecord> {
        prediction_records(&self.spec, &self.observations)
    }

    /// Records, cases and the halving ladder as a validated prediction set.
    pub fn prediction_set(&self) -> Result<PredictionSet, SynthError> {
        PredictionSet::new(self.prediction_records(), halving_ladder(self.spec.severities), self.cases.clone())
            .map_err(|e| SynthError::Config(e.to_string()))
    }
}

/// Samples cases, true latents and observations for a recovery config.
pub fn sample_recovery_data(config: &RecoveryConfig) -> Result<SyntheticData, SynthError> {
    config.validate()?;
    let [truth_seed, case_seed, data_seed, design_seed] = sub_seeds(config.seed);
    let cases = synthetic_cases(config.cases, config.subgroups, case_seed);
    let subgroups: Vec<String> = SubgroupLabel::ALL[..config.subgroups]
        .iter()
        .map(|g| g.as_str().to_string())
        .collect();
    let spec = ModelSpec {
        variant: config.variant,
        constrained: true,
        severities: config.severities,
        subgroups,
        readers: (0..config.readers).map(|r| format!("reader-{r:02}")).collect(),
        cases: cases.iter().map(|c| c.case_id.clone()).collect(),
        subgroup_of: (0..config.cases).map(|i| i % config.subgroups).collect(),
        design: recovery_design(config, design_seed),
    };
    spec.validate().map_err(|e| SynthError::Config(e.to_string()))?;
    let truth = match &config.truth {
        TruthSpec::Generated {
            gamma_max,
            profile,
            malignant_shift,
        } => generated_truth(&spec, &cases, *gamma_max, *profile, *malignant_shift, truth_seed),
        TruthSpec::Explicit { params } => {
            params.check_shape(&spec).map_err(|e| SynthError::Config(e.to_string()))?;
            params.clone()
        }
    };
    let observations = crate::model::sample_dataset(&truth, &spec, data_seed);
    Ok(SyntheticData {
        spec,
        cases,
        truth,
        observations,
    })
}

/// Samples data from known latents, fits the model and measures how well the
/// truth is recovered.
pub fn run_recovery(config: &RecoveryConfig) -> Result<RecoveryRun, SynthError> {
    let SyntheticData {
        spec,
        cases,
        truth,
        observations,
    } = sample_recovery_data(config)?;
    let posterior = fit_model(&spec, &observations, &config.advi).map_err(|source| SynthError::Fit {
        config: serde_json::to_string(config).unwrap_or_default(),
        source,
    })?;

    let layout = Layout::new(&spec);
    let theta_true = layout.theta_from_params(&truth);
    let stds = posterior.stds();
    let within = |i: usize| (posterior.means[i] - theta_true[i]).abs() <= 2.0 * stds[i];
    let covered = (0..layout.dim()).filter(|&i| within(i)).count();
    let gamma_idx: Vec<usize> = (0..layout.dim())
        .filter(|&i| layout.coordinates()[i].var == "gamma")
        .collect();
    let gamma_covered = gamma_idx.iter().filter(|&&i| within(i)).count();

    let g = spec.num_subgroups();
    let mut gamma = Vec::new();
    for s in 0..spec.severities {
        for gi in 0..g {
            if layout.find("gamma", &[s, gi]).is_none() {
                continue;
            }
            let e = gamma_effect_summary(&posterior, s, gi).expect("coordinate exists");
            gamma.push(GammaRecovery {
                severity: s,
                subgroup: gi,
                truth: truth.gamma_at(s, gi),
                mean: e.mean,
                std: e.std,
                prob_positive: e.prob_positive,
            });
        }
    }
    let nonzero: Vec<&GammaRecovery> = gamma.iter().filter(|x| x.truth != 0.0).collect();
    let sign_recovery = (!nonzero.is_empty()).then(|| {
        nonzero.iter().filter(|x| x.mean.signum() == x.truth.signum()).count() as f64 / nonzero.len() as f64
    });
    let outside = gamma
        .iter()
        .filter(|x| !(0.05..=0.95).contains(&x.prob_positive))
        .count();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let coverage = ratio(covered, layout.dim());
    let meets_thresholds =
        coverage >= config.coverage_threshold && sign_recovery.is_none_or(|r| r >= config.sign_recovery_threshold);
    let report = RecoveryReport {
        config: config.clone(),
        observations: observations.len(),
        latents: layout.dim(),
        coverage,
        gamma_coverage: ratio(gamma_covered, gamma_idx.len()),
        sign_recovery,
        prob_positive_outside: ratio(outside, gamma.len()),
        gamma,
        iterations: posterior.iterations,
        converged: posterior.converged,
        final_elbo: posterior.elbo_trace.last().map(|&(_, e)| e),
        meets_thresholds,
    };
    Ok(RecoveryRun {
        spec,
        cases,
        truth,
        observations,
        posterior,
        report,
    })
}

pub fn recovery_experiment(config: &RecoveryConfig) -> Result<RecoveryReport, SynthError> {
    run_recovery(config).map(|r| r.report)
}

/// Shuffles subgroup membership while keeping group sizes, for permutation
/// checks.
pub fn permute_subgroups(subgroup_of: &[usize], seed: u64) -> Vec<usize> {
    let mut out = subgroup_of.to_vec();
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    out
}
