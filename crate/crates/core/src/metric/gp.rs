use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Mat, Side};
use rayon::prelude::*;

use super::{MetricModel, PairSample};
use crate::error::{Error, Result};

const JITTER: [f64; 3] = [1e-8, 1e-6, 1e-4];

/// Gradient of the log marginal likelihood in the log parameterization.
#[derive(Clone, Debug, PartialEq)]
pub struct LmlGradient {
    pub log_weights: Vec<f64>,
    pub log_signal: f64,
    pub log_noise: f64,
}

impl LmlGradient {
    /// `[log_weights..., log_signal, log_noise]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.log_weights.clone();
        v.push(self.log_signal);
        v.push(self.log_noise);
        v
    }

    pub fn norm(&self) -> f64 {
        self.to_vec().iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

fn check(model: &MetricModel, pairs: &[PairSample]) -> Result<usize> {
    if pairs.is_empty() {
        return Err(Error::data("no pairs to evaluate"));
    }
    let d = model.dim();
    if let Some(p) = pairs.iter().find(|p| p.d_vec.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: p.d_vec.len() });
    }
    Ok(d)
}

/// Noise-free kernel matrix `K_ff` over the pair features.
pub fn kernel_matrix(model: &MetricModel, pairs: &[PairSample]) -> Mat<f64> {
    let n = pairs.len();
    let scale: Vec<f64> = model.log_weights.iter().map(|w| (2.0 * w).exp()).collect();
    let sf2 = (2.0 * model.log_signal).exp();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|a| {
            (0..n)
                .map(|b| {
                    let q: f64 = pairs[a]
                        .d_vec
                        .iter()
                        .zip(&pairs[b].d_vec)
                        .zip(&scale)
                        .map(|((x, y), s)| s * (x - y) * (x - y))
                        .sum();
                    sf2 * (-0.5 * q).exp()
                })
                .collect()
        })
        .collect();
    Mat::from_fn(n, n, |a, b| rows[a][b])
}

struct Factored {
    k_ff: Mat<f64>,
    llt: faer::linalg::solvers::Llt<f64>,
    alpha: Mat<f64>,
    lml: f64,
}

fn factor(model: &MetricModel, pairs: &[PairSample]) -> Result<Factored> {
    check(model, pairs)?;
    let n = pairs.len();
    let k_ff = kernel_matrix(model, pairs);
    let noise = (2.0 * model.log_noise).exp();
    let y = Mat::from_fn(n, 1, |a, _| pairs[a].target);
    let mut extra = 0.0;
    let mut attempt = 0;
    let llt = loop {
        let k = Mat::from_fn(n, n, |a, b| k_ff[(a, b)] + if a == b { noise + extra } else { 0.0 });
        match k.llt(Side::Lower) {
            Ok(llt) => break llt,
            Err(_) if attempt < JITTER.len() => {
                extra = JITTER[attempt];
                attempt += 1;
                log::debug!("kernel matrix not positive definite; retrying with jitter {extra:e}");
            }
            Err(_) => {
                return Err(Error::numerical(format!(
                    "kernel matrix factorization failed after {} jitter retries",
                    JITTER.len()
                )))
            }
        }
    };
    let alpha = llt.solve(&y);
    let l = llt.L();
    let fit: f64 = (0..n).map(|a| y[(a, 0)] * alpha[(a, 0)]).sum();
    let log_det_half: f64 = (0..n).map(|a| l[(a, a)].ln()).sum();
    let lml = -0.5 * fit - log_det_half - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    Ok(Factored { k_ff, llt, alpha, lml })
}

/// `-1/2 y^T K^-1 y - 1/2 log|K| - n/2 log 2pi` with `K = K_ff + sigma_eps^2 I`,
/// evaluated through a Cholesky factor.
pub fn log_marginal_likelihood(model: &MetricModel, pairs: &[PairSample]) -> Result<f64> {
    Ok(factor(model, pairs)?.lml)
}

/// Analytic gradient `1/2 tr((alpha alpha^T - K^-1) dK)` for every parameter.
pub fn lml_gradient(model: &MetricModel, pairs: &[PairSample]) -> Result<LmlGradient> {
    Ok(lml_and_gradient(model, pairs)?.1)
}

pub fn lml_and_gradient(model: &MetricModel, pairs: &[PairSample]) -> Result<(f64, LmlGradient)> {
    let f = factor(model, pairs)?;
    let n = pairs.len();
    let d = model.dim();
    let k_inv = f.llt.inverse();
    // M = W o K_ff with W = alpha alpha^T - K^-1.
    let w = Mat::from_fn(n, n, |a, b| f.alpha[(a, 0)] * f.alpha[(b, 0)] - k_inv[(a, b)]);
    let m = Mat::from_fn(n, n, |a, b| w[(a, b)] * f.k_ff[(a, b)]);

    let log_signal: f64 = (0..n).map(|b| (0..n).map(|a| m[(a, b)]).sum::<f64>()).sum();
    let trace_w: f64 = (0..n).map(|a| w[(a, a)]).sum();
    let log_noise = (2.0 * model.log_noise).exp() * trace_w;

    // sum_ab M_ab (x_ak - x_bk)^2 = 2 sum_a x_ak^2 rowsum_a(M) - 2 x_k^T M x_k.
    let x = Mat::from_fn(n, d, |a, k| pairs[a].d_vec[k]);
    let mx = &m * &x;
    let rowsum: Vec<f64> = (0..n).map(|a| (0..n).map(|b| m[(a, b)]).sum()).collect();
    let log_weights = (0..d)
        .map(|k| {
            let mut quad = 0.0;
            let mut diag = 0.0;
            for a in 0..n {
                let xa = x[(a, k)];
                quad += xa * mx[(a, k)];
                diag += xa * xa * rowsum[a];
            }
            let s = 2.0 * diag - 2.0 * quad;
            -0.5 * (2.0 * model.log_weights[k]).exp() * s
        })
        .collect();
    Ok((f.lml, LmlGradient { log_weights, log_signal, log_noise }))
}
