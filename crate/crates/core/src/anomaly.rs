//! Activity anomalies over a trailing window: days of unusually high volume,
//! and unusually long silences.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    candidates_from_days, to_daily_counts, CandidateMoC, CountSource, EventHistory,
};

/// Smallest bandwidth the Scott rule is allowed to return, in counts.
pub const MIN_BANDWIDTH: f64 = 0.5;

/// Kernel contributions beyond this many bandwidths are skipped (< e^-40).
const KERNEL_CUTOFF: f64 = 9.0;

/// Gaussian kernel density estimate over a window of daily values.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeModel {
    sample: Vec<f64>,
    bandwidth: f64,
    min: f64,
    max: f64,
}

impl KdeModel {
    /// Fits with Scott's rule, `n^(-1/5) * std` (sample std), floored at [`MIN_BANDWIDTH`].
    pub fn fit(sample: Vec<f64>) -> Result<Self> {
        let bw = scott_bandwidth(&sample).max(MIN_BANDWIDTH);
        Self::with_bandwidth(sample, bw)
    }

    pub fn with_bandwidth(sample: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if sample.is_empty() {
            return Err(Error::EmptyInput("kde sample"));
        }
        if sample.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("kde sample contains non-finite values"));
        }
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::invalid(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        let min = sample.iter().copied().fold(f64::INFINITY, f64::min);
        let max = sample.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            sample,
            bandwidth,
            min,
            max,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn sample(&self) -> &[f64] {
        &self.sample
    }

    fn is_constant(&self) -> bool {
        self.min == self.max
    }

    pub fn density(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let norm = 1.0 / (self.sample.len() as f64 * h * (2.0 * PI).sqrt());
        self.sample
            .iter()
            .map(|&s| (x - s) / h)
            .filter(|z| z.abs() <= KERNEL_CUTOFF)
            .map(|z| (-0.5 * z * z).exp())
            .sum::<f64>()
            * norm
    }

    /// `P(X >= x)` by trapezoid integration of [`Self::density`].
    ///
    /// The grid is anchored at `min(sample) - 8h` with step `h/10` and ends at
    /// `max(sample) + 8h`; a query between two nodes interpolates the cumulative
    /// integral linearly, which keeps the result monotone in `x`.
    ///
    /// A constant window has no spread to estimate: values above the constant
    /// get probability 0, anything else 1.
    pub fn tail_probability(&self, x: f64) -> f64 {
        if self.is_constant() {
            return if x > self.max { 0.0 } else { 1.0 };
        }
        let h = self.bandwidth;
        let lo = self.min - 8.0 * h;
        let hi = self.max + 8.0 * h;
        if x >= hi {
            return 0.0;
        }
        let steps = ((hi - lo) / (h / 10.0)).ceil() as usize;
        let dx = (hi - lo) / steps as f64;
        let node = |k: usize| lo + k as f64 * dx;

        let x = x.max(lo);
        // first node at or above x
        let k0 = (((x - lo) / dx).ceil() as usize).min(steps);
        let mut upper = 0.0;
        let mut f_next = self.density(node(steps));
        for k in (k0..steps).rev() {
            let f_k = self.density(node(k));
            upper += 0.5 * dx * (f_k + f_next);
            f_next = f_k;
        }
        let partial = if k0 > 0 && node(k0) > x {
            let cell = 0.5 * dx * (self.density(node(k0 - 1)) + f_next);
            cell * (node(k0) - x) / dx
        } else {
            0.0
        };
        (upper + partial).clamp(0.0, 1.0)
    }
}

pub fn kde_tail_probability(model: &KdeModel, x: f64) -> f64 {
    model.tail_probability(x)
}

fn scott_bandwidth(sample: &[f64]) -> f64 {
    let n = sample.len();
    if n < 2 {
        return 0.0;
    }
    let mean = sample.iter().sum::<f64>() / n as f64;
    let var = sample.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (n as f64).powf(-0.2) * var.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyMode {
    High,
    Low,
    HighAndLow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyConfig {
    pub window_days: usize,
    pub silence_min_days: usize,
    pub prob_threshold: f64,
    pub source: CountSource,
    pub mode: AnomalyMode,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        Self {
            window_days: 90,
            silence_min_days: 14,
            prob_threshold: 0.01,
            source: CountSource::Posts,
            mode: AnomalyMode::High,
        }
    }
}

impl AnomalyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_days < self.silence_min_days {
            return Err(Error::invalid(format!(
                "window_days ({}) must be >= silence_min_days ({})",
                self.window_days, self.silence_min_days
            )));
        }
        if self.silence_min_days == 0 {
            return Err(Error::invalid("silence_min_days must be positive"));
        }
        if !(self.prob_threshold > 0.0 && self.prob_threshold < 1.0) {
            return Err(Error::invalid(format!(
                "prob_threshold must lie in (0, 1), got {}",
                self.prob_threshold
            )));
        }
        Ok(())
    }

    /// e.g. `ad_high_posts`, `ad_both_comments`.
    pub fn method_id(&self) -> String {
        let mode = match self.mode {
            AnomalyMode::High => "high",
            AnomalyMode::Low => "low",
            AnomalyMode::HighAndLow => "both",
        };
        format!("ad_{mode}_{}", self.source)
    }
}

fn daily_values(history: &EventHistory, source: CountSource) -> Option<Vec<u64>> {
    to_daily_counts(history, source).ok().map(|s| s.counts)
}

fn history_day(history: &EventHistory, index: usize) -> chrono::NaiveDate {
    history.first_day() + chrono::Days::new(index as u64)
}

/// Days whose count is improbably high given the preceding `window_days` days.
pub fn high_activity_days(
    history: &EventHistory,
    config: &AnomalyConfig,
) -> Result<Vec<chrono::NaiveDate>> {
    config.validate()?;
    let w = config.window_days;
    let Some(counts) = daily_values(history, config.source) else {
        return Ok(Vec::new());
    };
    if counts.len() <= w {
        return Ok(Vec::new());
    }
    let mut days = Vec::new();
    for t in w..counts.len() {
        let window: Vec<f64> = counts[t - w..t].iter().map(|&c| c as f64).collect();
        let model = KdeModel::fit(window)?;
        if model.tail_probability(counts[t] as f64) < config.prob_threshold {
            days.push(history_day(history, t));
        }
    }
    Ok(days)
}

pub fn detect_high_activity(
    history: &EventHistory,
    config: &AnomalyConfig,
) -> Result<Vec<CandidateMoC>> {
    let days = high_activity_days(history, config)?;
    Ok(candidates_from_days(days, &config.method_id()))
}

/// Maximal runs of zero values as `(start, length)`.
fn zero_runs(counts: &[u64]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &c) in counts.iter().enumerate() {
        match (c == 0, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i - s));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, counts.len() - s));
    }
    runs
}

/// Silent stretches between consecutive active days inside `counts[from..to]`.
fn inter_event_gaps(counts: &[u64], from: usize, to: usize) -> Vec<f64> {
    let active: Vec<usize> = (from..to).filter(|&i| counts[i] > 0).collect();
    active
        .windows(2)
        .map(|w| (w[1] - w[0] - 1) as f64)
        .collect()
}

/// First days of silences that last at least `silence_min_days` and are
/// improbably long given the gap lengths seen in the preceding window.
pub fn silence_days(
    history: &EventHistory,
    config: &AnomalyConfig,
) -> Result<Vec<chrono::NaiveDate>> {
    config.validate()?;
    let w = config.window_days;
    let Some(counts) = daily_values(history, config.source) else {
        return Ok(Vec::new());
    };
    if counts.len() <= w {
        return Ok(Vec::new());
    }
    let mut days = Vec::new();
    for (start, len) in zero_runs(&counts) {
        if len < config.silence_min_days || start < w {
            continue;
        }
        let gaps = inter_event_gaps(&counts, start - w, start);
        if gaps.is_empty() {
            continue;
        }
        let model = KdeModel::fit(gaps)?;
        if model.tail_probability(len as f64) < config.prob_threshold {
            days.push(history_day(history, start));
        }
    }
    Ok(days)
}

pub fn detect_silence(history: &EventHistory, config: &AnomalyConfig) -> Result<Vec<CandidateMoC>> {
    let days = silence_days(history, config)?;
    Ok(candidates_from_days(days, &config.method_id()))
}

/// Dispatches on `config.mode`; the combined mode is the day-level union.
pub fn detect_anomalies(
    history: &EventHistory,
    config: &AnomalyConfig,
) -> Result<Vec<CandidateMoC>> {
    let days: BTreeSet<_> = match config.mode {
        AnomalyMode::High => high_activity_days(history, config)?.into_iter().collect(),
        AnomalyMode::Low => silence_days(history, config)?.into_iter().collect(),
        AnomalyMode::HighAndLow => high_activity_days(history, config)?
            .into_iter()
            .chain(silence_days(history, config)?)
            .collect(),
    };
    Ok(candidates_from_days(days, &config.method_id()))
}
