//! Mean-field Gaussian variational inference.
//!
//! `q(θ) = Π N(θᵢ; mᵢ, exp(ωᵢ)²)` is fitted by stochastic gradient ascent on
//! the ELBO `E_q[log p(θ, data)] + H[q]`. Gradients use the
//! reparameterization `θ = m + exp(ω) ⊙ ε` recorded on the autodiff tape, so
//! `∂/∂m` and `∂/∂ω` come out of a single reverse sweep per Monte Carlo draw.
//!
//! Steps use per-coordinate adaptive moments. The run is split into windows;
//! it stops when the mean ELBO of consecutive windows changes by less than
//! `tolerance` relative to the previous window, and the returned parameters
//! are the iterate average over the last completed window.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Var};
use crate::model::{Coordinate, LatentParams, ModelError, ModelSpec, Observation, Problem, Variant};

const HALF_LN_2PI_E: f64 = 1.418_938_533_204_672_7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("fit diverged at iteration {iteration}: {reason}")]
    Diverged {
        iteration: usize,
        reason: String,
        trace: Vec<(usize, f64)>,
    },
    #[error("non-finite log joint at Monte Carlo draw {draw}")]
    NonFinite { draw: usize, sample: Vec<f64> },
    #[error("posterior does not match the model: {0}")]
    Mismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A differentiable log density over an unconstrained real vector.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, theta: &[f64]) -> f64;

    /// Records the log density on `tape` and returns its output node.
    fn record(&self, tape: &mut Tape, theta: &[Var]) -> Var;

    /// Rough node count of one recording, used to size tapes.
    fn tape_hint(&self) -> usize {
        4 * self.dim()
    }

    /// Names for each coordinate, stored with the fitted posterior.
    fn coordinates(&self) -> Vec<Coordinate> {
        (0..self.dim())
            .map(|i| Coordinate {
                var: "theta".into(),
                index: vec![i],
            })
            .collect()
    }
}

impl LogDensity for Problem {
    fn dim(&self) -> usize {
        Problem::dim(self)
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        self.log_joint(theta)
    }

    fn record(&self, tape: &mut Tape, theta: &[Var]) -> Var {
        self.record_log_joint(tape, theta)
    }

    fn tape_hint(&self) -> usize {
        4 * self.dim() + 2 * self.num_observations() + 8
    }

    fn coordinates(&self) -> Vec<Coordinate> {
        self.layout.coordinates().to_vec()
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct AdviConfig {
    pub mc_samples: usize,
    pub max_iters: usize,
    pub step_size: f64,
    pub seed: u64,
    pub tolerance: f64,
    /// Iterations per convergence window.
    pub window: usize,
    /// Iterations averaged into each ELBO trace entry.
    pub trace_every: usize,
}

impl Default for AdviConfig {
    fn default() -> Self {
        Self {
            mc_samples: 10,
            max_iters: 20_000,
            step_size: 0.05,
            seed: 0,
            tolerance: 1e-4,
            window: 500,
            trace_every: 10,
        }
    }
}

impl AdviConfig {
    fn validate(&self) -> Result<(), FitError> {
        let bad = |m: &str| Err(FitError::InvalidConfig(m.into()));
        if self.mc_samples == 0 {
            return bad("mc_samples must be at least 1");
        }
        if self.window == 0 || self.trace_every == 0 {
            return bad("window and trace_every must be positive");
        }
        if !(self.step_size > 0.0) {
            return bad("step_size must be positive");
        }
        Ok(())
    }
}

/// Fitted mean-field Gaussian.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct PosteriorApprox {
    pub means: Vec<f64>,
    pub log_stds: Vec<f64>,
    pub index_map: Vec<Coordinate>,
    pub elbo_trace: Vec<(usize, f64)>,
    pub iterations: usize,
    pub converged: bool,
    pub config: AdviConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
}

impl PosteriorApprox {
    /// The variational family at its initialization, `N(0, I)`.
    pub fn standard(index_map: Vec<Coordinate>) -> Self {
        let d = index_map.len();
        Self {
            means: vec![0.0; d],
            log_stds: vec![0.0; d],
            index_map,
            elbo_trace: vec![],
            iterations: 0,
            converged: false,
            config: AdviConfig::default(),
            variant: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn stds(&self) -> Vec<f64> {
        self.log_stds.iter().map(|w| w.exp()).collect()
    }

    /// `(mean, std)` of a named coordinate.
    pub fn coordinate(&self, var: &str, index: &[usize]) -> Option<(f64, f64)> {
        self.index_map
            .iter()
            .position(|c| c.var == var && c.index == index)
            .map(|i| (self.means[i], self.log_stds[i].exp()))
    }

    /// `Σ ωᵢ + D/2 (1 + ln 2π)`.
    pub fn entropy(&self) -> f64 {
        self.log_stds.iter().sum::<f64>() + self.dim() as f64 * HALF_LN_2PI_E
    }

    pub fn sample_theta(&self, rng: &mut impl rand::Rng) -> Vec<f64> {
        self.means
            .iter()
            .zip(&self.log_stds)
            .map(|(m, w)| {
                let e: f64 = StandardNormal.sample(rng);
                m + w.exp() * e
            })
            .collect()
    }

    /// Latent values at the posterior means.
    pub fn mean_params(&self, problem: &Problem) -> LatentParams {
        problem.layout.params_from_theta(&self.means)
    }

    pub fn check_matches(&self, coords: &[Coordinate]) -> Result<(), FitError> {
        if self.means.len() != self.log_stds.len() || self.means.len() != self.index_map.len() {
            return Err(FitError::Mismatch("vector lengths differ".into()));
        }
        if self.index_map != coords {
            return Err(FitError::Mismatch(format!(
                "posterior has {} coordinates, model has {}",
                self.index_map.len(),
                coords.len()
            )));
        }
        Ok(())
    }
}

/// Monte Carlo ELBO and its gradient for a fixed set of standard normal draws.
#[derive(Clone, Debug, PartialEq)]
pub struct ElboGrad {
    pub value: f64,
    pub grad_means: Vec<f64>,
    pub grad_log_stds: Vec<f64>,
}

fn one_draw(model: &impl LogDensity, tape: &mut Tape, means: &[f64], log_stds: &[f64], eps: &[f64]) -> (f64, Vec<f64>) {
    let d = means.len();
    tape.clear();
    let m: Vec<Var> = means.iter().map(|&x| tape.var(x)).collect();
    let w: Vec<Var> = log_stds.iter().map(|&x| tape.var(x)).collect();
    let theta: Vec<Var> = (0..d)
        .map(|i| {
            let s = tape.exp(w[i]);
            let v = tape.value(m[i]) + tape.value(s) * eps[i];
            tape.nary(v, [(m[i], 1.0), (s, eps[i])])
        })
        .collect();
    let lj = model.record(tape, &theta);
    let entropy_value = log_stds.iter().sum::<f64>() + d as f64 * HALF_LN_2PI_E;
    let entropy = tape.nary(entropy_value, w.iter().map(|&v| (v, 1.0)));
    let total = tape.add(lj, entropy);
    let adj = tape.gradient(total);
    let mut grad = Vec::with_capacity(2 * d);
    grad.extend(m.iter().map(|v| adj[v.index()]));
    grad.extend(w.iter().map(|v| adj[v.index()]));
    (tape.value(total), grad)
}

/// ELBO estimate and reparameterized gradient averaged over `draws`. Draws are
/// evaluated in parallel and reduced in order.
pub fn elbo_with_grad(model: &impl LogDensity, means: &[f64], log_stds: &[f64], draws: &[Vec<f64>]) -> ElboGrad {
    let d = means.len();
    let hint = model.tape_hint() + 3 * d;
    let per_draw: Vec<(f64, Vec<f64>)> = draws
        .par_iter()
        .map_init(
            || Tape::with_capacity(hint, 2 * hint),
            |tape, eps| one_draw(model, tape, means, log_stds, eps),
        )
        .collect();
    let k = draws.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; 2 * d];
    for (v, g) in &per_draw {
        value += v;
        for (acc, x) in grad.iter_mut().zip(g) {
            *acc += x;
        }
    }
    grad.iter_mut().for_each(|x| *x /= k);
    let grad_log_stds = grad.split_off(d);
    ElboGrad {
        value: value / k,
        grad_means: grad,
        grad_log_stds,
    }
}

/// Monte Carlo ELBO at fixed draws, computed from the log density alone.
pub fn elbo_at_draws(model: &impl LogDensity, means: &[f64], log_stds: &[f64], draws: &[Vec<f64>]) -> f64 {
    let d = means.len();
    let entropy = log_stds.iter().sum::<f64>() + d as f64 * HALF_LN_2PI_E;
    let total: f64 = draws
        .iter()
        .map(|eps| {
            let theta: Vec<f64> = (0..d).map(|i| means[i] + log_stds[i].exp() * eps[i]).collect();
            model.log_density(&theta)
        })
        .sum();
    total / draws.len() as f64 + entropy
}

pub fn standard_normal_draws(rng: &mut impl rand::Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Ascent step on `params` along `grad`.
    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] += lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Fits the mean-field approximation to `model`. Deterministic given the
/// seed.
pub fn fit_advi(model: &impl LogDensity, config: &AdviConfig) -> Result<PosteriorApprox, FitError> {
    config.validate()?;
    let d = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // [means | log_stds]
    let mut params = vec![0.0; 2 * d];
    let mut adam = Adam::new(2 * d);
    let mut trace = Vec::new();
    let mut block_sum = 0.0;
    let mut window_elbo = 0.0;
    let mut window_params = vec![0.0; 2 * d];
    let mut prev_window_mean: Option<f64> = None;
    let mut averaged: Option<Vec<f64>> = None;
    let mut converged = false;
    let mut iterations = 0;
    let mut grad = vec![0.0; 2 * d];

    for it in 1..=config.max_iters {
        iterations = it;
        let draws = standard_normal_draws(&mut rng, config.mc_samples, d);
        let eg = elbo_with_grad(model, &params[..d], &params[d..], &draws);
        if !eg.value.is_finite()
            || eg.grad_means.iter().chain(&eg.grad_log_stds).any(|g| !g.is_finite())
        {
            return Err(FitError::Diverged {
                iteration: it,
                reason: format!("non-finite ELBO or gradient (ELBO {})", eg.value),
                trace,
            });
        }
        grad[..d].copy_from_slice(&eg.grad_means);
        grad[d..].copy_from_slice(&eg.grad_log_stds);
        adam.step(&mut params, &grad, config.step_size);

        block_sum += eg.value;
        if it % config.trace_every == 0 {
            trace.push((it, block_sum / config.trace_every as f64));
            block_sum = 0.0;
        }
        window_elbo += eg.value;
        for (acc, p) in window_params.iter_mut().zip(&params) {
            *acc += p;
        }
        if it % config.window == 0 {
            let mean = window_elbo / config.window as f64;
            let w = config.window as f64;
            averaged = Some(window_params.iter().map(|s| s / w).collect());
            window_params.iter_mut().for_each(|x| *x = 0.0);
            window_elbo = 0.0;
            if let Some(prev) = prev_window_mean {
                if ((mean - prev) / prev.abs().max(1.0)).abs() < config.tolerance {
                    converged = true;
                    break;
                }
            }
            prev_window_mean = Some(mean);
        }
    }
    let final_params = averaged.unwrap_or(params);
    Ok(PosteriorApprox {
        means: final_params[..d].to_vec(),
        log_stds: final_params[d..].to_vec(),
        index_map: model.coordinates(),
        elbo_trace: trace,
        iterations,
        converged,
        config: config.clone(),
        variant: None,
    })
}

/// Fits the latent model given a spec and aligned observations.
pub fn fit_model(spec: &ModelSpec, observations: &[Observation], config: &AdviConfig) -> Result<PosteriorApprox, FitError> {
    let problem = Problem::new(spec.clone(), observations)?;
    let mut q = fit_advi(&problem, config)?;
    q.variant = Some(spec.variant);
    Ok(q)
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct ElboEstimate {
    pub elbo: f64,
    pub std_error: f64,
    pub mc_samples: usize,
}

/// Unbiased Monte Carlo estimate of the ELBO with its standard error.
pub fn elbo_estimate(
    q: &PosteriorApprox,
    model: &impl LogDensity,
    mc_samples: usize,
    seed: u64,
) -> Result<ElboEstimate, FitError> {
    if mc_samples == 0 {
        return Err(FitError::InvalidConfig("mc_samples must be at least 1".into()));
    }
    q.check_matches(&model.coordinates())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entropy = q.entropy();
    let mut values = Vec::with_capacity(mc_samples);
    for draw in 0..mc_samples {
        let theta = q.sample_theta(&mut rng);
        let lj = model.log_density(&theta);
        if !lj.is_finite() {
            return Err(FitError::NonFinite { draw, sample: theta });
        }
        values.push(lj + entropy);
    }
    let mean = crate::stats::mean(&values);
    let se = crate::stats::sample_std(&values) / (mc_samples as f64).sqrt();
    Ok(ElboEstimate {
        elbo: mean,
        std_error: se,
        mc_samples,
    })
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct RankedModel {
    pub rank: usize,
    pub candidate: usize,
    pub variant: Variant,
    pub constrained: bool,
    /// Evidence lower bound; a lower bound on the log marginal likelihood.
    pub elbo: f64,
    pub std_error: f64,
}

/// Ranks fitted candidates by ELBO, highest first. Every candidate is scored
/// with the same seed so their Monte Carlo errors are positively correlated.
pub fn compare_models(
    candidates: &[(ModelSpec, PosteriorApprox)],
    observations: &[Observation],
    mc_samples: usize,
    seed: u64,
) -> Result<Vec<RankedModel>, FitError> {
    let design: Vec<_> = observations.iter().map(|o| o.cell).collect();
    let mut out = Vec::with_capacity(candidates.len());
    for (i, (spec, q)) in candidates.iter().enumerate() {
        if q.elbo_trace.is_empty() && q.iterations == 0 {
            return Err(FitError::Mismatch(format!("candidate {i} has not been fitted")));
        }
        if spec.design != design {
            return Err(FitError::Mismatch(format!(
                "candidate {i} was built for a different design"
            )));
        }
        let problem = Problem::new(spec.clone(), observations)?;
        let est = elbo_estimate(q, &problem, mc_samples, seed)
            .map_err(|e| FitError::Mismatch(format!("candidate {i}: {e}")))?;
        out.push(RankedModel {
            rank: 0,
            candidate: i,
            variant: spec.variant,
            constrained: spec.constrained,
            elbo: est.elbo,
            std_error: est.std_error,
        });
    }
    out.sort_by(|a, b| b.elbo.total_cmp(&a.elbo).then(a.candidate.cmp(&b.candidate)));
    for (r, m) in out.iter_mut().enumerate() {
        m.rank = r + 1;
    }
    Ok(out)
}
