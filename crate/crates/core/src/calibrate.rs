//! Binary Dirichlet calibration and classwise expected calibration error.
//!
//! In the two-class case Dirichlet calibration is a logistic regression on the
//! log class-probabilities `(ln z, ln(1 - z))`. The L2 strength is picked by
//! stratified k-fold cross-validation on classwise ECE.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sigmoid;

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_BINS: usize = 15;
pub const DEFAULT_FOLDS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("cannot fit a calibrator: {0}")]
    Unfittable(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Seven log-spaced strengths from 1e-3 to 1e3.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..7).map(|i| 10f64.powi(i - 3)).collect()
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct CalibrationConfig {
    pub lambda_grid: Vec<f64>,
    pub folds: usize,
    pub bins: usize,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            lambda_grid: default_lambda_grid(),
            folds: DEFAULT_FOLDS,
            bins: DEFAULT_BINS,
            epsilon: DEFAULT_EPSILON,
            seed: 0,
        }
    }
}

/// Fitted map `z ↦ σ(w₁ ln z + w₂ ln(1 − z) + b)`.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct Calibrator {
    pub weights: [f64; 2],
    pub intercept: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub bins: usize,
}

impl Calibrator {
    pub fn identity() -> Self {
        Self {
            weights: [1.0, -1.0],
            intercept: 0.0,
            lambda: 0.0,
            epsilon: DEFAULT_EPSILON,
            bins: DEFAULT_BINS,
        }
    }

    pub fn apply(&self, score: f64) -> f64 {
        apply_calibrator(self, score)
    }
}

#[inline]
fn features(score: f64, eps: f64) -> [f64; 2] {
    let z = score.clamp(eps, 1.0 - eps);
    [z.ln(), (1.0 - z).ln()]
}

pub fn apply_calibrator(c: &Calibrator, score: f64) -> f64 {
    let [a, b] = features(score, c.epsilon);
    sigmoid(c.weights[0] * a + c.weights[1] * b + c.intercept)
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(), CalibrationError> {
    if scores.len() != labels.len() {
        return Err(CalibrationError::InvalidInput(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(CalibrationError::InvalidInput(format!("score {s} outside [0, 1]")));
    }
    Ok(())
}

/// Classwise ECE with `bins` equal-width bins on `[0, 1]`, averaged over the
/// two classes.
pub fn classwise_ece(scores: &[f64], labels: &[bool], bins: usize) -> Result<f64, CalibrationError> {
    check_inputs(scores, labels)?;
    if scores.is_empty() {
        return Err(CalibrationError::UndefinedMetric("ECE of an empty sample".into()));
    }
    if bins == 0 {
        return Err(CalibrationError::InvalidInput("bins must be positive".into()));
    }
    let n = scores.len() as f64;
    let mut total = 0.0;
    for class in [false, true] {
        let mut sum_p = vec![0.0; bins];
        let mut sum_y = vec![0.0; bins];
        let mut count = vec![0usize; bins];
        for (&s, &y) in scores.iter().zip(labels) {
            let p = if class { s } else { 1.0 - s };
            let b = ((p * bins as f64).floor() as usize).min(bins - 1);
            sum_p[b] += p;
            sum_y[b] += if y == class { 1.0 } else { 0.0 };
            count[b] += 1;
        }
        total += (0..bins)
            .filter(|&b| count[b] > 0)
            .map(|b| (sum_p[b] - sum_y[b]).abs() / n)
            .sum::<f64>();
    }
    Ok(total / 2.0)
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let mut m = [[0.0; 4]; 3];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&a[i]);
        m[i][3] = b[i];
    }
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        for row in 0..3 {
            if row != col {
                let f = m[row][col] / m[col][col];
                for k in col..4 {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
    }
    Some([m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]])
}

/// Penalized negative log-likelihood of parameters `(w₁, w₂, b)`.
fn objective(x: &[[f64; 2]], y: &[bool], beta: [f64; 3], lambda: f64) -> f64 {
    let nll: f64 = x
        .iter()
        .zip(y)
        .map(|(f, &yi)| {
            let eta = beta[0] * f[0] + beta[1] * f[1] + beta[2];
            // softplus(eta) - y·eta
            let sp = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
            sp - if yi { eta } else { 0.0 }
        })
        .sum();
    nll + 0.5 * lambda * (beta[0] * beta[0] + beta[1] * beta[1])
}

/// Newton's method with step halving. The intercept is not penalized.
fn fit_logistic(x: &[[f64; 2]], y: &[bool], lambda: f64) -> [f64; 3] {
    let mut beta = [0.0; 3];
    let mut f = objective(x, y, beta, lambda);
    for _ in 0..100 {
        let mut g = [lambda * beta[0], lambda * beta[1], 0.0];
        let mut h = [[0.0; 3]; 3];
        h[0][0] = lambda;
        h[1][1] = lambda;
        for (feat, &yi) in x.iter().zip(y) {
            let v = [feat[0], feat[1], 1.0];
            let p = sigmoid(beta[0] * v[0] + beta[1] * v[1] + beta[2]);
            let r = p - if yi { 1.0 } else { 0.0 };
            let wgt = p * (1.0 - p);
            for i in 0..3 {
                g[i] += r * v[i];
                for j in 0..3 {
                    h[i][j] += wgt * v[i] * v[j];
                }
            }
        }
        let Some(step) = solve3(h, g) else { break };
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-10 {
            let cand = [beta[0] - t * step[0], beta[1] - t * step[1], beta[2] - t * step[2]];
            let fc = objective(x, y, cand, lambda);
            if fc <= f {
                beta = cand;
                let gain = f - fc;
                f = fc;
                accepted = gain > 1e-12 * (1.0 + f.abs());
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    beta
}

/// Stratified fold index per sample, deterministic in `seed`.
pub fn stratified_folds(labels: &[bool], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0; labels.len()];
    let mut offset = 0;
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (k, &i) in idx.iter().enumerate() {
            out[i] = (k + offset) % folds;
        }
        offset += idx.len();
    }
    out
}

/// Fits `(ln z, ln(1 − z))` logistic regression at a fixed strength.
pub fn fit_with_lambda(scores: &[f64], labels: &[bool], lambda: f64, epsilon: f64, bins: usize) -> Calibrator {
    let x: Vec<[f64; 2]> = scores.iter().map(|&s| features(s, epsilon)).collect();
    let beta = fit_logistic(&x, labels, lambda);
    Calibrator {
        weights: [beta[0], beta[1]],
        intercept: beta[2],
        lambda,
        epsilon,
        bins,
    }
}

/// Mean held-out classwise ECE for each strength in the grid.
pub fn cross_validate(
    scores: &[f64],
    labels: &[bool],
    config: &CalibrationConfig,
) -> Result<Vec<(f64, f64)>, CalibrationError> {
    check_inputs(scores, labels)?;
    let fold_of = stratified_folds(labels, config.folds, config.seed);
    let mut out = Vec::with_capacity(config.lambda_grid.len());
    for &lambda in &config.lambda_grid {
        let mut eces = Vec::with_capacity(config.folds);
        for k in 0..config.folds {
            let (mut tr_s, mut tr_y, mut te_s, mut te_y) = (vec![], vec![], vec![], vec![]);
            for i in 0..scores.len() {
                if fold_of[i] == k {
                    te_s.push(scores[i]);
                    te_y.push(labels[i]);
                } else {
                    tr_s.push(scores[i]);
                    tr_y.push(labels[i]);
                }
            }
            if te_s.is_empty() || !(tr_y.contains(&true) && tr_y.contains(&false)) {
                continue;
            }
            let c = fit_with_lambda(&tr_s, &tr_y, lambda, config.epsilon, config.bins);
            let cal: Vec<f64> = te_s.iter().map(|&s| c.apply(s)).collect();
            eces.push(classwise_ece(&cal, &te_y, config.bins)?);
        }
        if eces.is_empty() {
            return Err(CalibrationError::Unfittable(
                "no cross-validation fold has both classes in training".into(),
            ));
        }
        out.push((lambda, eces.iter().sum::<f64>() / eces.len() as f64));
    }
    Ok(out)
}

/// Fits a calibrator, choosing the L2 strength by cross-validated classwise
/// ECE. Ties go to the larger strength.
pub fn fit_calibrator(scores: &[f64], labels: &[bool], config: &CalibrationConfig) -> Result<Calibrator, CalibrationError> {
    check_inputs(scores, labels)?;
    if !(labels.contains(&true) && labels.contains(&false)) {
        return Err(CalibrationError::Unfittable("labels contain a single class".into()));
    }
    if config.lambda_grid.is_empty() || config.lambda_grid.iter().any(|l| !(*l > 0.0)) {
        return Err(CalibrationError::InvalidInput("lambda grid must be nonempty and positive".into()));
    }
    if config.folds < 2 {
        return Err(CalibrationError::InvalidInput("need at least two folds".into()));
    }
    let scored = cross_validate(scores, labels, config)?;
    let mut best = scored[0];
    for &(lambda, ece) in &scored[1..] {
        let tie = (ece - best.1).abs() <= 1e-12;
        if ece < best.1 - 1e-12 || (tie && lambda > best.0) {
            best = (lambda, ece);
        }
    }
    Ok(fit_with_lambda(scores, labels, best.0, config.epsilon, config.bins))
}
