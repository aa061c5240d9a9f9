use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of threshold excesses for a parametric tail.
pub const MIN_EXCESSES: usize = 5;

/// `(1 - x / tau)^(-1 / gamma)` on `[0, tau)`, 1 below zero and 0 beyond.
pub fn gpd_survival(x: f64, tau: f64, gamma: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x >= tau {
        0.0
    } else {
        (1.0 - x / tau).powf(-1.0 / gamma)
    }
}

/// Inverse of [`gpd_survival`]: the excess whose survival is `u`.
pub fn gpd_quantile(u: f64, tau: f64, gamma: f64) -> f64 {
    tau * (1.0 - u.powf(-gamma))
}

/// Log-likelihood of `excesses`; `-inf` outside the support.
pub fn gpd_loglik(excesses: &[f64], tau: f64, gamma: f64) -> f64 {
    if !(gamma < 0.0 && tau > 0.0) {
        return f64::NEG_INFINITY;
    }
    let log_scale = (-1.0 / (gamma * tau)).ln();
    let power = -1.0 / gamma - 1.0;
    let mut ll = 0.0;
    for &x in excesses {
        let z = 1.0 - x / tau;
        if z <= 0.0 {
            return f64::NEG_INFINITY;
        }
        ll += log_scale + power * z.ln();
    }
    ll
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpdFit {
    pub tau: f64,
    pub gamma: f64,
    pub loglik: f64,
}

const A_RANGE: (f64, f64) = (-4.0, 3.0);
const B_RANGE: (f64, f64) = (-12.0, 6.0);
const GRID_STEP: f64 = 0.25;

fn unpack(a: f64, b: f64, max: f64) -> (f64, f64) {
    (max * (1.0 + b.exp()), -a.exp())
}

/// Maximum-likelihood tail with `gamma = -exp(a)` and
/// `tau = max(x) (1 + exp(b))`: best point of a coarse `(a, b)` grid,
/// refined by a shrinking compass search.
pub fn fit_gpd(excesses: &[f64]) -> Result<GpdFit> {
    if excesses.len() < MIN_EXCESSES {
        return Err(Error::data(format!(
            "need at least {MIN_EXCESSES} excesses for a tail fit, got {}",
            excesses.len()
        )));
    }
    if let Some(bad) = excesses.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(Error::data(format!("excesses must be positive and finite, got {bad}")));
    }
    let max = excesses.iter().copied().fold(0.0, f64::max);
    let objective = |a: f64, b: f64| {
        let (tau, gamma) = unpack(a, b, max);
        gpd_loglik(excesses, tau, gamma)
    };

    let mut best = (A_RANGE.0, B_RANGE.0, f64::NEG_INFINITY);
    let na = ((A_RANGE.1 - A_RANGE.0) / GRID_STEP).round() as usize;
    let nb = ((B_RANGE.1 - B_RANGE.0) / GRID_STEP).round() as usize;
    for ia in 0..=na {
        let a = A_RANGE.0 + ia as f64 * GRID_STEP;
        for ib in 0..=nb {
            let b = B_RANGE.0 + ib as f64 * GRID_STEP;
            let v = objective(a, b);
            if v > best.2 {
                best = (a, b, v);
            }
        }
    }

    let (mut a, mut b, mut v) = best;
    let mut step = GRID_STEP;
    while step > 1e-9 {
        let mut moved = false;
        for (da, db) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)] {
            let (na, nb) = (a + da, b + db);
            if !(A_RANGE.0..=A_RANGE.1).contains(&na) || !(B_RANGE.0..=B_RANGE.1).contains(&nb) {
                continue;
            }
            let nv = objective(na, nb);
            if nv > v {
                (a, b, v) = (na, nb, nv);
                moved = true;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    if !v.is_finite() {
        return Err(Error::numerical("tail likelihood is not finite anywhere on the search grid"));
    }
    let (tau, gamma) = unpack(a, b, max);
    Ok(GpdFit { tau, gamma, loglik: v })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TailFit {
    Gpd(GpdFit),
    /// Too few excesses: the empirical survival of the training ratios.
    Empirical { sorted_ratios: Vec<f64> },
}

/// Exceedance model for distance ratios above a training quantile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailModel {
    pub t_r: f64,
    pub quantile: f64,
    /// Fraction of training ratios strictly above `t_r`.
    pub p_exceed: f64,
    pub n_excesses: usize,
    pub fit: TailFit,
}

impl TailModel {
    /// Threshold at quantile `q` of `ratios` (which may contain `+inf`) and a
    /// tail fitted to the finite excesses above it.
    pub fn fit(ratios: &[f64], q: f64) -> Result<TailModel> {
        if ratios.is_empty() {
            return Err(Error::data("no training ratios"));
        }
        if !(0.0..1.0).contains(&q) {
            return Err(Error::config(format!("tail quantile must be in [0,1), got {q}")));
        }
        if ratios.iter().any(|r| r.is_nan()) {
            return Err(Error::numerical("training ratio is NaN"));
        }
        let mut sorted = ratios.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let n_exc = (((1.0 - q) * n as f64) - 1e-9).ceil().max(0.0) as usize;
        let t_r = sorted[n.saturating_sub(n_exc + 1)];
        let above = sorted.iter().filter(|&&r| r > t_r).count();
        let p_exceed = above as f64 / n as f64;
        let excesses: Vec<f64> = sorted.iter().filter(|&&r| r > t_r && r.is_finite()).map(|r| r - t_r).collect();
        let fit = if excesses.len() >= MIN_EXCESSES {
            TailFit::Gpd(fit_gpd(&excesses)?)
        } else {
            log::warn!(
                "only {} finite excesses above the ratio threshold; using the empirical tail",
                excesses.len()
            );
            TailFit::Empirical { sorted_ratios: sorted }
        };
        Ok(TailModel { t_r, quantile: q, p_exceed, n_excesses: excesses.len(), fit })
    }

    pub fn tau(&self) -> Option<f64> {
        match self.fit {
            TailFit::Gpd(g) => Some(g.tau),
            TailFit::Empirical { .. } => None,
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match self.fit {
            TailFit::Gpd(g) => Some(g.gamma),
            TailFit::Empirical { .. } => None,
        }
    }

    /// Probability that a known-class ratio exceeds `r`.
    pub fn exceedance_prob(&self, r: f64) -> f64 {
        if r.is_nan() || r == f64::INFINITY {
            return 0.0;
        }
        if r <= self.t_r {
            return self.p_exceed;
        }
        match &self.fit {
            TailFit::Gpd(g) => self.p_exceed * gpd_survival(r - self.t_r, g.tau, g.gamma),
            TailFit::Empirical { sorted_ratios } => {
                let n = sorted_ratios.len();
                let at_or_below = sorted_ratios.partition_point(|&v| v <= r);
                (n - at_or_below) as f64 / n as f64
            }
        }
    }
}
