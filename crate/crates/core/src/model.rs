//! Four-latent Bernoulli model of reader predictions.
//!
//! A prediction by reader `r` on case `n` (subgroup `g`) at severity `s` is
//! Bernoulli with logit `b_g + μ_n + γ_{s,g} + ν_{r,g}`, every latent has a
//! standard normal prior, and real-valued scores enter the likelihood as soft
//! labels `z ln θ + (1 − z) ln(1 − θ)`.
//!
//! Nested variants drop terms from the logit. The constrained form pins
//! `γ_{0,g} = 0` and makes reader effects sum to zero within each subgroup by
//! expressing the last reader's effect as minus the sum of the others; the
//! prior still applies to every reader's effect.

use std::collections::HashMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advi::LogDensity;
use crate::autodiff::{Tape, Var};
use crate::data::{PredictionSet, SubgroupLabel};
use crate::{log_sigmoid, sigmoid};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("parameter shape mismatch: {0}")]
    Shape(String),
}

/// Which terms enter the logit.
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `b_g + μ_n`
    Bias,
    /// `+ γ_{s,g}`
    Filter,
    /// `+ ν_r`, shared across subgroups
    ReaderShared,
    /// `+ ν_{r,g}`
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Bias, Variant::Filter, Variant::ReaderShared, Variant::Full];

    pub fn has_gamma(self) -> bool {
        self != Variant::Bias
    }

    /// Number of subgroup columns of the reader effect, `None` without one.
    pub fn nu_groups(self, subgroups: usize) -> Option<usize> {
        match self {
            Variant::Bias | Variant::Filter => None,
            Variant::ReaderShared => Some(1),
            Variant::Full => Some(subgroups),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Bias => "bias",
            Variant::Filter => "filter",
            Variant::ReaderShared => "reader_shared",
            Variant::Full => "full",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| ModelError::InvalidSpec(format!("unknown variant {s:?}")))
    }
}

/// Observed `(reader, severity, case)` cell, by index.
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub reader: usize,
    pub severity: usize,
    pub case: usize,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    #[serde(flatten)]
    pub cell: Triple,
    pub score: f64,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub variant: Variant,
    pub constrained: bool,
    pub severities: usize,
    pub subgroups: Vec<String>,
    pub readers: Vec<String>,
    pub cases: Vec<String>,
    pub subgroup_of: Vec<usize>,
    pub design: Vec<Triple>,
}

impl ModelSpec {
    pub fn num_subgroups(&self) -> usize {
        self.subgroups.len()
    }

    pub fn num_readers(&self) -> usize {
        self.readers.len()
    }

    pub fn num_cases(&self) -> usize {
        self.cases.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidSpec(m));
        if self.subgroups.is_empty() {
            return bad("no subgroups".into());
        }
        if self.severities == 0 {
            return bad("no severities".into());
        }
        if self.subgroup_of.len() != self.cases.len() {
            return bad(format!(
                "subgroup_of has {} entries for {} cases",
                self.subgroup_of.len(),
                self.cases.len()
            ));
        }
        if let Some(g) = self.subgroup_of.iter().find(|&&g| g >= self.subgroups.len()) {
            return bad(format!("subgroup index {g} out of range"));
        }
        for t in &self.design {
            if t.reader >= self.readers.len() || t.severity >= self.severities || t.case >= self.cases.len() {
                return bad(format!("design triple {t:?} out of range"));
            }
        }
        Ok(())
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    /// Every `(reader, severity, case)` combination, reader-major.
    pub fn dense_design(readers: usize, severities: usize, cases: usize) -> Vec<Triple> {
        let mut out = Vec::with_capacity(readers * severities * cases);
        for reader in 0..readers {
            for severity in 0..severities {
                for case in 0..cases {
                    out.push(Triple { reader, severity, case });
                }
            }
        }
        out
    }

    /// Pairs scores with the design, checking they line up.
    pub fn observations(&self, scores: &[f64]) -> Result<Vec<Observation>, ModelError> {
        if scores.len() != self.design.len() {
            return Err(ModelError::InvalidData(format!(
                "{} scores for a design of {} cells",
                scores.len(),
                self.design.len()
            )));
        }
        Ok(self
            .design
            .iter()
            .zip(scores)
            .map(|(&cell, &score)| Observation { cell, score })
            .collect())
    }
}

/// How cases are grouped into the model's subgroup index.
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// One index per subgroup present in the data, in taxonomy order.
    Subgroups,
    /// All cases merged into a single group.
    Pooled,
}

/// Builds a spec and its observations from a prediction set. Readers appear
/// in first-record order; all cases in the set are included.
pub fn build_model(
    set: &PredictionSet,
    variant: Variant,
    constrained: bool,
    grouping: Grouping,
) -> crate::Result<(ModelSpec, Vec<Observation>)> {
    let labels = set
        .cases
        .iter()
        .map(|c| c.subgroup())
        .collect::<Result<Vec<_>, _>>()?;
    let (subgroups, subgroup_of) = match grouping {
        Grouping::Pooled => (vec!["pooled".to_string()], vec![0; labels.len()]),
        Grouping::Subgroups => {
            let present: Vec<SubgroupLabel> = SubgroupLabel::ALL
                .into_iter()
                .filter(|g| labels.contains(g))
                .collect();
            let of = labels
                .iter()
                .map(|l| present.iter().position(|p| p == l).expect("present"))
                .collect();
            (present.iter().map(|g| g.as_str().to_string()).collect(), of)
        }
    };
    let readers = set.reader_ids();
    let reader_idx: HashMap<&str, usize> = readers.iter().enumerate().map(|(i, r)| (r.as_str(), i)).collect();
    let case_idx = set.case_index();
    let observations: Vec<Observation> = set
        .records
        .iter()
        .map(|r| Observation {
            cell: Triple {
                reader: reader_idx[r.reader_id.as_str()],
                severity: r.severity_index,
                case: case_idx[r.case_id.as_str()],
            },
            score: r.score,
        })
        .collect();
    let spec = ModelSpec {
        variant,
        constrained,
        severities: set.severities.len(),
        subgroups,
        readers,
        cases: set.cases.iter().map(|c| c.case_id.clone()).collect(),
        subgroup_of,
        design: observations.iter().map(|o| o.cell).collect(),
    };
    spec.validate()?;
    Ok((spec, observations))
}

/// Latent values in their natural shapes. Terms absent from the variant are
/// empty vectors and contribute zero.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct LatentParams {
    /// `b_g`, length G.
    pub b: Vec<f64>,
    /// `μ_n`, length N.
    pub mu: Vec<f64>,
    /// `γ_{s,g}` at `s * G + g`, length S·G or empty.
    pub gamma: Vec<f64>,
    /// `ν_{r,g}` at `r * nu_groups + g`, or empty.
    pub nu: Vec<f64>,
    /// Subgroup columns of `nu` (1 when shared across subgroups).
    pub nu_groups: usize,
}

impl LatentParams {
    pub fn zeros(spec: &ModelSpec) -> Self {
        let g = spec.num_subgroups();
        let nu_groups = spec.variant.nu_groups(g).unwrap_or(0);
        Self {
            b: vec![0.0; g],
            mu: vec![0.0; spec.num_cases()],
            gamma: if spec.variant.has_gamma() {
                vec![0.0; spec.severities * g]
            } else {
                vec![]
            },
            nu: vec![0.0; spec.num_readers() * nu_groups],
            nu_groups,
        }
    }

    pub fn check_shape(&self, spec: &ModelSpec) -> Result<(), ModelError> {
        let z = Self::zeros(spec);
        if (self.b.len(), self.mu.len(), self.gamma.len(), self.nu.len(), self.nu_groups)
            != (z.b.len(), z.mu.len(), z.gamma.len(), z.nu.len(), z.nu_groups)
        {
            return Err(ModelError::Shape(format!(
                "expected b[{}] mu[{}] gamma[{}] nu[{}]",
                z.b.len(),
                z.mu.len(),
                z.gamma.len(),
                z.nu.len()
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn gamma_at(&self, s: usize, g: usize) -> f64 {
        if self.gamma.is_empty() {
            0.0
        } else {
            self.gamma[s * self.b.len() + g]
        }
    }

    #[inline]
    pub fn nu_at(&self, r: usize, g: usize) -> f64 {
        match self.nu_groups {
            0 => 0.0,
            1 => self.nu[r],
            k => self.nu[r * k + g],
        }
    }

    #[inline]
    pub fn logit(&self, spec: &ModelSpec, cell: Triple) -> f64 {
        let g = spec.subgroup_of[cell.case];
        self.b[g] + self.mu[cell.case] + self.gamma_at(cell.severity, g) + self.nu_at(cell.reader, g)
    }

    /// Sets `γ` at the reference severity to zero and centers `ν` within
    /// each subgroup column, leaving every prediction probability unchanged
    /// only up to the shifts absorbed by `b`.
    pub fn apply_constraints(&mut self) {
        let g = self.b.len();
        if !self.gamma.is_empty() {
            for gi in 0..g {
                let ref_level = self.gamma[gi];
                for s in 0..self.gamma.len() / g {
                    self.gamma[s * g + gi] -= ref_level;
                }
                self.b[gi] += ref_level;
            }
        }
        if self.nu_groups > 0 {
            let k = self.nu_groups;
            let r = self.nu.len() / k;
            for col in 0..k {
                let mean = (0..r).map(|ri| self.nu[ri * k + col]).sum::<f64>() / r as f64;
                for ri in 0..r {
                    self.nu[ri * k + col] -= mean;
                }
                if k == 1 {
                    self.b.iter_mut().for_each(|b| *b += mean);
                } else {
                    self.b[col] += mean;
                }
            }
        }
    }
}

/// `σ(b_g + μ_n + γ_{s,g} + ν_{r,g})`.
pub fn predict_prob(params: &LatentParams, spec: &ModelSpec, reader: usize, severity: usize, case: usize) -> f64 {
    sigmoid(params.logit(spec, Triple { reader, severity, case }))
}

fn check_scores(obs: &[Observation]) -> Result<(), ModelError> {
    match obs.iter().find(|o| !(0.0..=1.0).contains(&o.score)) {
        Some(o) => Err(ModelError::InvalidData(format!(
            "score {} outside [0, 1] at {:?}",
            o.score, o.cell
        ))),
        None => Ok(()),
    }
}

/// Soft-label log-likelihood of the observations.
pub fn log_likelihood(params: &LatentParams, obs: &[Observation], spec: &ModelSpec) -> Result<f64, ModelError> {
    check_scores(obs)?;
    Ok(obs
        .iter()
        .map(|o| {
            let x = params.logit(spec, o.cell);
            o.score * log_sigmoid(x) + (1.0 - o.score) * log_sigmoid(-x)
        })
        .sum())
}

/// Standard normal log density summed over every active latent value.
pub fn log_prior(params: &LatentParams, spec: &ModelSpec) -> f64 {
    let lp = |x: f64| -0.5 * x * x - HALF_LN_2PI;
    let g = params.b.len();
    let mut total: f64 = params.b.iter().chain(&params.mu).map(|&x| lp(x)).sum();
    let skip_ref = if spec.constrained { g } else { 0 };
    total += params.gamma.iter().skip(skip_ref).map(|&x| lp(x)).sum::<f64>();
    // a single constrained reader effect is pinned at zero
    if !(spec.constrained && spec.num_readers() == 1) {
        total += params.nu.iter().map(|&x| lp(x)).sum::<f64>();
    }
    total
}

/// Log joint density: soft-label likelihood plus standard normal priors.
pub fn log_joint(params: &LatentParams, obs: &[Observation], spec: &ModelSpec) -> Result<f64, ModelError> {
    params.check_shape(spec)?;
    Ok(log_likelihood(params, obs, spec)? + log_prior(params, spec))
}

/// Draws `ŷ ~ Bernoulli(predict_prob)` for every design cell.
pub fn sample_dataset(params: &LatentParams, spec: &ModelSpec, seed: u64) -> Vec<Observation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    spec.design
        .iter()
        .map(|&cell| {
            let p = sigmoid(params.logit(spec, cell));
            let y = rng.random::<f64>() < p;
            Observation {
                cell,
                score: if y { 1.0 } else { 0.0 },
            }
        })
        .collect()
}

/// Named latent coordinate of the unconstrained parameter vector.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq)]
pub struct Coordinate {
    pub var: String,
    pub index: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
enum Source {
    Coord(usize),
    Zero,
    NegSum(Vec<usize>),
}

/// Mapping between the free coordinate vector and the latent values.
///
/// Latent values are indexed in one flat "effective" space laid out as
/// `[b | μ | γ | ν]`; each entry is either a free coordinate, a fixed zero, or
/// minus the sum of other coordinates.
#[derive(Clone, Debug)]
pub struct Layout {
    coords: Vec<Coordinate>,
    sources: Vec<Source>,
    groups: usize,
    cases: usize,
    gamma_len: usize,
    nu_groups: usize,
}

impl Layout {
    pub fn new(spec: &ModelSpec) -> Self {
        let g = spec.num_subgroups();
        let n = spec.num_cases();
        let s = spec.severities;
        let r = spec.num_readers();
        let mut coords = Vec::new();
        let mut sources = Vec::new();
        let push = |coords: &mut Vec<Coordinate>, var: &str, index: Vec<usize>| {
            coords.push(Coordinate {
                var: var.to_string(),
                index,
            });
            Source::Coord(coords.len() - 1)
        };
        for gi in 0..g {
            sources.push(push(&mut coords, "b", vec![gi]));
        }
        for ni in 0..n {
            sources.push(push(&mut coords, "mu", vec![ni]));
        }
        let gamma_len = if spec.variant.has_gamma() { s * g } else { 0 };
        for si in 0..gamma_len / g.max(1) {
            for gi in 0..g {
                if spec.constrained && si == 0 {
                    sources.push(Source::Zero);
                } else {
                    sources.push(push(&mut coords, "gamma", vec![si, gi]));
                }
            }
        }
        let nu_groups = spec.variant.nu_groups(g).unwrap_or(0);
        if nu_groups > 0 {
            let nu_start = sources.len();
            for ri in 0..r {
                for col in 0..nu_groups {
                    if spec.constrained && ri + 1 == r {
                        // filled below once the free coordinates are known
                        sources.push(Source::Zero);
                    } else {
                        let index = if nu_groups == 1 { vec![ri] } else { vec![ri, col] };
                        sources.push(push(&mut coords, "nu", index));
                    }
                }
            }
            if spec.constrained && r > 1 {
                for col in 0..nu_groups {
                    let others = (0..r - 1)
                        .map(|ri| match sources[nu_start + ri * nu_groups + col] {
                            Source::Coord(c) => c,
                            _ => unreachable!(),
                        })
                        .collect();
                    sources[nu_start + (r - 1) * nu_groups + col] = Source::NegSum(others);
                }
            }
        }
        Self {
            coords,
            sources,
            groups: g,
            cases: n,
            gamma_len,
            nu_groups,
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coordinates(&self) -> &[Coordinate] {
        &self.coords
    }

    /// Coordinate index of a named latent, if it is free.
    pub fn find(&self, var: &str, index: &[usize]) -> Option<usize> {
        self.coords.iter().position(|c| c.var == var && c.index == index)
    }

    fn effective_values(&self, theta: &[f64]) -> Vec<f64> {
        self.sources
            .iter()
            .map(|s| match s {
                Source::Coord(i) => theta[*i],
                Source::Zero => 0.0,
                Source::NegSum(list) => -list.iter().map(|&i| theta[i]).sum::<f64>(),
            })
            .collect()
    }

    pub fn params_from_theta(&self, theta: &[f64]) -> LatentParams {
        let eff = self.effective_values(theta);
        let (g, n) = (self.groups, self.cases);
        let gamma_end = g + n + self.gamma_len;
        LatentParams {
            b: eff[..g].to_vec(),
            mu: eff[g..g + n].to_vec(),
            gamma: eff[g + n..gamma_end].to_vec(),
            nu: eff[gamma_end..].to_vec(),
            nu_groups: self.nu_groups,
        }
    }

    /// Reads the free coordinates out of `params`. Dependent and fixed entries
    /// are ignored, so `params` should already satisfy the constraints.
    pub fn theta_from_params(&self, params: &LatentParams) -> Vec<f64> {
        let mut eff = Vec::with_capacity(self.sources.len());
        eff.extend_from_slice(&params.b);
        eff.extend_from_slice(&params.mu);
        eff.extend_from_slice(&params.gamma);
        eff.extend_from_slice(&params.nu);
        let mut theta = vec![0.0; self.dim()];
        for (e, s) in self.sources.iter().enumerate() {
            if let Source::Coord(i) = s {
                theta[*i] = eff[e];
            }
        }
        theta
    }

    fn eff_b(&self, g: usize) -> usize {
        g
    }

    fn eff_mu(&self, n: usize) -> usize {
        self.groups + n
    }

    fn eff_gamma(&self, s: usize, g: usize) -> Option<usize> {
        (self.gamma_len > 0).then(|| self.groups + self.cases + s * self.groups + g)
    }

    fn eff_nu(&self, r: usize, g: usize) -> Option<usize> {
        let base = self.groups + self.cases + self.gamma_len;
        match self.nu_groups {
            0 => None,
            1 => Some(base + r),
            k => Some(base + r * k + g),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct CompiledObs {
    terms: [u32; 4],
    len: u8,
    score: f64,
}

/// A spec, its layout, and observations pre-indexed for repeated evaluation
/// of the log joint over the free coordinate vector.
#[derive(Clone, Debug)]
pub struct Problem {
    pub spec: ModelSpec,
    pub layout: Layout,
    obs: Vec<CompiledObs>,
}

impl Problem {
    pub fn new(spec: ModelSpec, observations: &[Observation]) -> Result<Self, ModelError> {
        spec.validate()?;
        check_scores(observations)?;
        let layout = Layout::new(&spec);
        let mut obs = Vec::with_capacity(observations.len());
        for o in observations {
            let Triple { reader, severity, case } = o.cell;
            if reader >= spec.num_readers() || severity >= spec.severities || case >= spec.num_cases() {
                return Err(ModelError::InvalidData(format!("observation {:?} out of range", o.cell)));
            }
            let g = spec.subgroup_of[case];
            let candidates = [
                Some(layout.eff_b(g)),
                Some(layout.eff_mu(case)),
                layout.eff_gamma(severity, g),
                layout.eff_nu(reader, g),
            ];
            let mut terms = [0u32; 4];
            let mut len = 0u8;
            for e in candidates.into_iter().flatten() {
                if layout.sources[e] != Source::Zero {
                    terms[len as usize] = e as u32;
                    len += 1;
                }
            }
            obs.push(CompiledObs {
                terms,
                len,
                score: o.score,
            });
        }
        Ok(Self { spec, layout, obs })
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn num_observations(&self) -> usize {
        self.obs.len()
    }

    /// Log joint at the free coordinate vector `theta`.
    pub fn log_joint(&self, theta: &[f64]) -> f64 {
        let eff = self.layout.effective_values(theta);
        let prior: f64 = self
            .layout
            .sources
            .iter()
            .zip(&eff)
            .filter(|(s, _)| **s != Source::Zero)
            .map(|(_, &x)| -0.5 * x * x - HALF_LN_2PI)
            .sum();
        let lik: f64 = self
            .obs
            .iter()
            .map(|o| {
                let x: f64 = o.terms[..o.len as usize].iter().map(|&e| eff[e as usize]).sum();
                o.score * log_sigmoid(x) + (1.0 - o.score) * log_sigmoid(-x)
            })
            .sum();
        prior + lik
    }

    /// Records the log joint on `tape` as a function of `theta` and returns
    /// the output node.
    pub fn record_log_joint(&self, tape: &mut Tape, theta: &[Var]) -> Var {
        let eff: Vec<Option<Var>> = self
            .layout
            .sources
            .iter()
            .map(|s| match s {
                Source::Coord(i) => Some(theta[*i]),
                Source::Zero => None,
                Source::NegSum(list) => {
                    let v = -list.iter().map(|&i| tape.value(theta[i])).sum::<f64>();
                    Some(tape.nary(v, list.iter().map(|&i| (theta[i], -1.0))))
                }
            })
            .collect();
        let active: Vec<(Var, f64)> = eff.iter().flatten().map(|&v| (v, tape.value(v))).collect();
        let prior_value: f64 = active.iter().map(|&(_, x)| -0.5 * x * x - HALF_LN_2PI).sum();
        let prior = tape.nary(prior_value, active.iter().map(|&(v, x)| (v, -x)));

        let mut terms = Vec::with_capacity(self.obs.len() + 1);
        terms.push(prior);
        let mut total = prior_value;
        for o in &self.obs {
            let inputs = &o.terms[..o.len as usize];
            let vars = inputs.iter().map(|&e| eff[e as usize].expect("active term"));
            let x: f64 = vars.clone().map(|v| tape.value(v)).sum();
            let logit = tape.nary(x, vars.map(|v| (v, 1.0)));
            let t = tape.soft_bernoulli_logit(logit, o.score);
            total += tape.value(t);
            terms.push(t);
        }
        tape.nary(total, terms.into_iter().map(|t| (t, 1.0)))
    }

    /// Log joint and its gradient with respect to `theta`.
    pub fn log_joint_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let mut tape = Tape::with_capacity(theta.len() + 2 * self.obs.len() + 8, 6 * self.obs.len() + theta.len());
        let vars: Vec<Var> = theta.iter().map(|&x| tape.var(x)).collect();
        let out = self.record_log_joint(&mut tape, &vars);
        let adj = tape.gradient(out);
        (tape.value(out), vars.iter().map(|v| adj[v.index()]).collect())
    }
}

/// Reduced one-latent model: every score shares the logit `θ ~ N(0, 1)`.
#[derive(Clone, Debug)]
pub struct SharedLogit {
    pub scores: Vec<f64>,
}

impl SharedLogit {
    pub fn new(scores: Vec<f64>) -> Self {
        Self { scores }
    }
}

impl LogDensity for SharedLogit {
    fn dim(&self) -> usize {
        1
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        let x = theta[0];
        let lik: f64 = self
            .scores
            .iter()
            .map(|&z| z * log_sigmoid(x) + (1.0 - z) * log_sigmoid(-x))
            .sum();
        lik - 0.5 * x * x - HALF_LN_2PI
    }

    fn record(&self, tape: &mut Tape, theta: &[Var]) -> Var {
        let x = theta[0];
        let xv = tape.value(x);
        let prior = tape.unary(x, -0.5 * xv * xv - HALF_LN_2PI, -xv);
        let mut terms = vec![prior];
        terms.extend(self.scores.iter().map(|&z| tape.soft_bernoulli_logit(x, z)));
        tape.sum(&terms)
    }

    fn coordinates(&self) -> Vec<Coordinate> {
        vec![Coordinate {
            var: "logit".into(),
            index: vec![0],
        }]
    }
}
