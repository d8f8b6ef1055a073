//! Dense-versus-sparse timeline analysis from externally supplied per-post
//! sentiment and emotion scores.

use std::collections::HashMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_jsonl;
use crate::model::Post;

/// Score dimensions, in feature order.
pub const DIMENSIONS: [&str; 5] = ["sentiment", "joy", "anger", "sadness", "optimism"];

const STATS: [&str; 4] = ["avg", "std", "min", "max"];

pub const FEATURE_COUNT: usize = DIMENSIONS.len() * STATS.len() * 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostScores {
    pub post_id: String,
    /// In `[-1, 1]`.
    pub sentiment: f64,
    pub joy: f64,
    pub anger: f64,
    pub sadness: f64,
    pub optimism: f64,
}

impl PostScores {
    pub fn validate(&self) -> Result<()> {
        if !(self.sentiment.is_finite() && (-1.0..=1.0).contains(&self.sentiment)) {
            return Err(Error::invalid(format!(
                "post {}: sentiment {} outside [-1, 1]",
                self.post_id, self.sentiment
            )));
        }
        for (name, v) in DIMENSIONS[1..].iter().zip(&self.dims()[1..]) {
            if !(v.is_finite() && (0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!(
                    "post {}: {name} {v} outside [0, 1]",
                    self.post_id
                )));
            }
        }
        Ok(())
    }

    fn dims(&self) -> [f64; 5] {
        [
            self.sentiment,
            self.joy,
            self.anger,
            self.sadness,
            self.optimism,
        ]
    }
}

/// Reads scores-JSONL into a map keyed by post id, validating ranges.
pub fn read_scores<R: Read>(reader: R) -> Result<HashMap<String, PostScores>> {
    let mut out = HashMap::new();
    for (line, rec) in read_jsonl::<PostScores, _>(reader)? {
        rec.validate().map_err(|e| Error::Record {
            line,
            message: e.to_string(),
        })?;
        out.insert(rec.post_id.clone(), rec);
    }
    Ok(out)
}

pub fn feature_names() -> Vec<String> {
    let mut names = Vec::with_capacity(FEATURE_COUNT);
    for dim in DIMENSIONS {
        for stat in STATS {
            names.push(format!("{dim}_{stat}"));
        }
        for stat in STATS {
            names.push(format!("{dim}_diff_{stat}"));
        }
    }
    names
}

/// For each dimension: avg/std/min/max of the scores, then the same four over
/// differences between consecutive posts.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        feature_names()
            .iter()
            .position(|n| n == name)
            .map(|i| self.0[i])
    }
}

/// `(avg, population std, min, max)`; all zero for an empty slice.
fn summary(values: &[f64]) -> [f64; 4] {
    if values.is_empty() {
        return [0.0; 4];
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    [mean, var.sqrt(), min, max]
}

/// Features for one timeline. Posts are ordered by timestamp first; a single
/// post yields zero difference features.
pub fn extract_features(
    posts: &[Post],
    scores: &HashMap<String, PostScores>,
) -> Result<FeatureVector> {
    if posts.is_empty() {
        return Err(Error::EmptyInput("timeline posts"));
    }
    let mut ordered: Vec<&Post> = posts.iter().collect();
    ordered.sort_by_key(|p| p.timestamp);
    let rows = ordered
        .iter()
        .map(|p| {
            scores
                .get(&p.post_id)
                .map(PostScores::dims)
                .ok_or_else(|| Error::MissingScore(p.post_id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = [0.0; FEATURE_COUNT];
    for d in 0..DIMENSIONS.len() {
        let series: Vec<f64> = rows.iter().map(|r| r[d]).collect();
        let diffs: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
        let base = d * 8;
        out[base..base + 4].copy_from_slice(&summary(&series));
        out[base + 4..base + 8].copy_from_slice(&summary(&diffs));
    }
    Ok(FeatureVector(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityLabel {
    Dense,
    Sparse,
    Excluded,
}

impl DensityLabel {
    pub fn sign(self) -> Option<f64> {
        match self {
            DensityLabel::Dense => Some(1.0),
            DensityLabel::Sparse => Some(-1.0),
            DensityLabel::Excluded => None,
        }
    }
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Upper quartile is dense, bottom quartile sparse, the middle half excluded.
pub fn label_by_quartile(densities: &[f64]) -> Result<Vec<DensityLabel>> {
    if densities.len() < 4 {
        return Err(Error::invalid(format!(
            "quartile labelling needs at least 4 timelines, got {}",
            densities.len()
        )));
    }
    let mut sorted = densities.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile(&sorted, 0.25);
    let q3 = quantile(&sorted, 0.75);
    if q1 >= q3 {
        return Err(Error::DegenerateQuartiles);
    }
    Ok(densities
        .iter()
        .map(|&d| {
            if d >= q3 {
                DensityLabel::Dense
            } else if d <= q1 {
                DensityLabel::Sparse
            } else {
                DensityLabel::Excluded
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRegConfig {
    pub l2: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            l2: 1.0,
            tolerance: 1e-6,
            max_iterations: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    /// `(feature name, coefficient)` on standardised features, largest first.
    pub coefficients: Vec<(String, f64)>,
    pub intercept: f64,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Loss after every accepted step, starting with the initial loss.
    pub loss_history: Vec<f64>,
}

impl LogRegModel {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.coefficients
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| *c)
    }

    pub fn coefficient_norm(&self) -> f64 {
        self.coefficients
            .iter()
            .map(|(_, c)| c * c)
            .sum::<f64>()
            .sqrt()
    }
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Mean logistic loss with an L2 penalty `l2 / (2n) * |w|^2` (intercept unpenalised),
/// for labels in `{-1, +1}`. Returns `(loss, d/dw, d/db)`.
pub fn logistic_loss_and_grad(
    weights: &[f64],
    intercept: f64,
    rows: &[Vec<f64>],
    labels: &[f64],
    l2: f64,
) -> (f64, Vec<f64>, f64) {
    let n = rows.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; weights.len()];
    let mut grad_b = 0.0;
    for (x, &y) in rows.iter().zip(labels) {
        let z = intercept + x.iter().zip(weights).map(|(a, b)| a * b).sum::<f64>();
        loss += softplus(-y * z);
        let g = -y * sigmoid(-y * z);
        for (gj, xj) in grad.iter_mut().zip(x) {
            *gj += g * xj;
        }
        grad_b += g;
    }
    let penalty: f64 = weights.iter().map(|w| w * w).sum();
    for (gj, wj) in grad.iter_mut().zip(weights) {
        *gj = *gj / n + l2 * wj / n;
    }
    (loss / n + 0.5 * l2 * penalty / n, grad, grad_b / n)
}

/// Standardises columns (z-scores; constant columns become zero) and fits an
/// L2-regularised logistic regression by gradient descent with backtracking.
pub fn train_logreg(
    rows: &[Vec<f64>],
    labels: &[f64],
    names: &[String],
    config: &LogRegConfig,
) -> Result<LogRegModel> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("training rows"));
    }
    if rows.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} rows but {} labels",
            rows.len(),
            labels.len()
        )));
    }
    let dim = names.len();
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::DimensionMismatch(format!(
            "rows must have {dim} features"
        )));
    }
    if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(Error::invalid("labels must be +1 or -1"));
    }
    if !(labels.contains(&1.0) && labels.contains(&-1.0)) {
        return Err(Error::SingleClass);
    }

    let n = rows.len() as f64;
    let means: Vec<f64> = (0..dim)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let scales: Vec<f64> = (0..dim)
        .map(|j| {
            let var = rows.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let z: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| (0..dim).map(|j| (r[j] - means[j]) / scales[j]).collect())
        .collect();

    let mut w = vec![0.0; dim];
    let mut b: f64 = 0.0;
    let (mut loss, mut gw, mut gb) = logistic_loss_and_grad(&w, b, &z, labels, config.l2);
    let mut history = vec![loss];
    let mut step: f64 = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iterations {
        let gnorm2 = gw.iter().map(|g| g * g).sum::<f64>() + gb * gb;
        if gnorm2.sqrt() < config.tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        step = (step * 2.0).min(1e3);
        loop {
            let w_new: Vec<f64> = w.iter().zip(&gw).map(|(wi, gi)| wi - step * gi).collect();
            let b_new = b - step * gb;
            let (l_new, gw_new, gb_new) =
                logistic_loss_and_grad(&w_new, b_new, &z, labels, config.l2);
            if l_new <= loss - 0.5 * step * gnorm2 {
                w = w_new;
                b = b_new;
                loss = l_new;
                gw = gw_new;
                gb = gb_new;
                history.push(loss);
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                // no further progress possible at machine precision
                converged = true;
                break;
            }
        }
        if converged {
            break;
        }
    }

    let mut coefficients: Vec<(String, f64)> = names.iter().cloned().zip(w).collect();
    coefficients.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(LogRegModel {
        coefficients,
        intercept: b,
        means,
        scales,
        iterations,
        converged,
        loss_history: history,
    })
}
