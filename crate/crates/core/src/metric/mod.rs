//! Diagonal Mahalanobis metric learned by maximizing Gaussian-process
//! evidence over pairwise distance features.

mod gp;
mod optimize;
mod pairs;

use std::io::Write;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gp::{kernel_matrix, lml_and_gradient, lml_gradient, log_marginal_likelihood, LmlGradient};
pub use optimize::{fit_metric, GPFitReport, OptimizerSettings, StopReason};
pub use pairs::{build_pairs, PairSample};

/// Diagonal transform `L = diag(exp(w))` with squared-exponential kernel
/// hyperparameters `sigma_f = exp(log_signal)` and `sigma_eps = exp(log_noise)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricModel {
    pub log_weights: Vec<f64>,
    pub log_signal: f64,
    pub log_noise: f64,
}

impl MetricModel {
    /// Identity transform with unit signal and noise 0.1.
    pub fn identity(d: usize) -> Self {
        MetricModel { log_weights: vec![0.0; d], log_signal: 0.0, log_noise: 0.1f64.ln() }
    }

    /// Unit weights, `sigma_f` at the target spread and `sigma_eps` a tenth
    /// of it.
    pub fn initial(d: usize, pairs: &[PairSample]) -> Self {
        let n = pairs.len().max(1) as f64;
        let mean = pairs.iter().map(|p| p.target).sum::<f64>() / n;
        let var = pairs.iter().map(|p| (p.target - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt().max(1e-6);
        MetricModel { log_weights: vec![0.0; d], log_signal: sd.ln(), log_noise: (0.1 * sd).ln() }
    }

    pub fn dim(&self) -> usize {
        self.log_weights.len()
    }

    /// `exp(w_k)`, the diagonal of `L`.
    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    pub fn signal(&self) -> f64 {
        self.log_signal.exp()
    }

    pub fn noise(&self) -> f64 {
        self.log_noise.exp()
    }

    pub(crate) fn to_params(&self) -> Vec<f64> {
        let mut p = self.log_weights.clone();
        p.push(self.log_signal);
        p.push(self.log_noise);
        p
    }

    pub(crate) fn from_params(p: &[f64], d: usize) -> Self {
        MetricModel { log_weights: p[..d].to_vec(), log_signal: p[d], log_noise: p[d + 1] }
    }

    fn check(&self, d: usize) -> Result<()> {
        if d != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: d });
        }
        Ok(())
    }

    /// `sigma_f^2 exp(-1/2 sum_k exp(2 w_k) (a_k - b_k)^2)`.
    pub fn kernel_eval(&self, d_a: &[f64], d_b: &[f64]) -> Result<f64> {
        self.check(d_a.len())?;
        self.check(d_b.len())?;
        let q: f64 = d_a
            .iter()
            .zip(d_b)
            .zip(&self.log_weights)
            .map(|((a, b), w)| (2.0 * w).exp() * (a - b).powi(2))
            .sum();
        Ok((2.0 * self.log_signal).exp() * (-0.5 * q).exp())
    }

    /// `L x`.
    pub fn transform(&self, x: ArrayView1<'_, f64>) -> Result<Vec<f64>> {
        self.check(x.len())?;
        Ok(x.iter().zip(&self.log_weights).map(|(v, w)| v * w.exp()).collect())
    }

    pub fn transform_matrix(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check(x.ncols())?;
        let w = self.weights();
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            row.iter_mut().zip(&w).for_each(|(v, s)| *v *= s);
        }
        Ok(out)
    }

    /// Writes `feature,weight` rows.
    pub fn write_weights_csv<W: Write>(&self, writer: W, feature_names: &[String]) -> Result<()> {
        self.check(feature_names.len())?;
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["feature", "weight", "log_weight"])?;
        for ((name, lw), wt) in feature_names.iter().zip(&self.log_weights).zip(self.weights()) {
            w.write_record([name.clone(), wt.to_string(), lw.to_string()])?;
        }
        w.flush().map_err(|e| Error::Io { path: "<weights csv>".into(), source: e })?;
        Ok(())
    }
}
