use std::collections::VecDeque;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::gp::lml_and_gradient;
use super::{MetricModel, PairSample};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSettings {
    pub max_iterations: usize,
    pub gradient_tol: f64,
    pub lml_tol: f64,
    /// Largest change of any log parameter in one step.
    pub max_step: f64,
    /// Number of curvature pairs kept for the quasi-Newton direction.
    pub memory: usize,
    /// Standard deviation of a seeded Gaussian perturbation of the initial
    /// log parameters; zero disables it.
    pub init_perturbation: f64,
    pub seed: u64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            max_iterations: 100,
            gradient_tol: 1e-3,
            lml_tol: 1e-8,
            max_step: 1.0,
            memory: 7,
            init_perturbation: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    LmlTolerance,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GPFitReport {
    pub initial_lml: f64,
    pub final_lml: f64,
    pub iterations: usize,
    pub pair_count: usize,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub final_gradient_norm: f64,
    /// Mean subtracted from the pair targets before fitting.
    pub target_mean: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Quasi-Newton ascent direction from the stored curvature pairs.
fn direction(grad: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>)>) -> Vec<f64> {
    // Work with the minimization of -LML: g = -grad.
    let mut q: Vec<f64> = grad.iter().map(|g| -g).collect();
    let mut coeffs = Vec::with_capacity(history.len());
    for (s, y) in history.iter().rev() {
        let rho = 1.0 / dot(y, s);
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        coeffs.push((rho, a));
    }
    if let Some((s, y)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y), (rho, a)) in history.iter().zip(coeffs.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter().map(|v| -v).collect()
}

fn subtract_mean(pairs: &[PairSample]) -> (Vec<PairSample>, f64) {
    let mean = pairs.iter().map(|p| p.target).sum::<f64>() / pairs.len() as f64;
    let centered = pairs.iter().map(|p| PairSample { target: p.target - mean, ..p.clone() }).collect();
    (centered, mean)
}

/// Maximizes the GP evidence of the mean-centered pair targets.
///
/// Steps follow a limited-memory quasi-Newton direction and are halved until
/// the evidence does not decrease, so the returned model is the best seen.
pub fn fit_metric(
    pairs: &[PairSample],
    init: &MetricModel,
    settings: &OptimizerSettings,
) -> Result<(MetricModel, GPFitReport)> {
    if pairs.is_empty() {
        return Err(Error::data("no pairs to fit"));
    }
    let (pairs, target_mean) = subtract_mean(pairs);
    let d = init.dim();
    let mut x = init.to_params();
    if settings.init_perturbation > 0.0 {
        let mut rng = seed::rng(settings.seed);
        for v in x.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += settings.init_perturbation * z;
        }
    }
    let mut model = MetricModel::from_params(&x, d);
    let (mut lml, grad) = lml_and_gradient(&model, &pairs)?;
    if !lml.is_finite() {
        return Err(Error::numerical(format!(
            "non-finite evidence at initialization (log_signal = {}, log_noise = {})",
            model.log_signal, model.log_noise
        )));
    }
    let mut grad = grad.to_vec();
    let initial_lml = lml;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::new();
    let mut iterations = 0;
    let mut stop = StopReason::MaxIterations;

    while iterations < settings.max_iterations {
        let gnorm = dot(&grad, &grad).sqrt();
        if gnorm < settings.gradient_tol {
            stop = StopReason::GradientTolerance;
            break;
        }
        let mut dir = direction(&grad, &history);
        if dot(&dir, &grad) <= 0.0 {
            history.clear();
            dir = grad.clone();
        }
        if history.is_empty() {
            let dnorm = dot(&dir, &dir).sqrt();
            dir.iter_mut().for_each(|v| *v /= dnorm);
        }
        let biggest = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut step = if biggest > settings.max_step { settings.max_step / biggest } else { 1.0 };

        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let trial_model = MetricModel::from_params(&trial, d);
            if let Ok((trial_lml, trial_grad)) = lml_and_gradient(&trial_model, &pairs) {
                if trial_lml.is_finite() && trial_lml >= lml {
                    accepted = Some((trial, trial_model, trial_lml, trial_grad.to_vec()));
                    break;
                }
            }
            step *= 0.5;
        }
        iterations += 1;
        let Some((trial, trial_model, trial_lml, trial_grad)) = accepted else {
            stop = StopReason::LineSearchFailed;
            break;
        };
        let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        // Curvature of -LML: y = (-g_new) - (-g_old).
        let y: Vec<f64> = grad.iter().zip(&trial_grad).map(|(old, new)| old - new).collect();
        if dot(&s, &y) > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            history.push_back((s, y));
            if history.len() > settings.memory.max(1) {
                history.pop_front();
            }
        }
        let improvement = trial_lml - lml;
        x = trial;
        model = trial_model;
        lml = trial_lml;
        grad = trial_grad;
        if improvement < settings.lml_tol {
            stop = if dot(&grad, &grad).sqrt() < settings.gradient_tol {
                StopReason::GradientTolerance
            } else {
                StopReason::LmlTolerance
            };
            break;
        }
    }
    let final_gradient_norm = dot(&grad, &grad).sqrt();
    if stop == StopReason::MaxIterations && final_gradient_norm < settings.gradient_tol {
        stop = StopReason::GradientTolerance;
    }
    let report = GPFitReport {
        initial_lml,
        final_lml: lml,
        iterations,
        pair_count: pairs.len(),
        converged: matches!(stop, StopReason::GradientTolerance | StopReason::LmlTolerance),
        stop_reason: stop,
        final_gradient_norm,
        target_mean,
    };
    Ok((model, report))
}
