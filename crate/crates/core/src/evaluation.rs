//! Scoring candidate days against annotated timelines.
//!
//! Three views are provided: margin-matched precision/recall/F1, the
//! segmentation covering score, and Medoid Votes, which rewards candidates
//! close to the medoid of a timeline whose ground truth is dense.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{span_len, AnnotatedTimeline};

pub const DEFAULT_TAU: u32 = 5;

/// Offset added to a medoid distance so that a zero distance still carries
/// the density sign.
pub const MEDOID_EPSILON: f64 = 0.001;

/// Candidate days per user for one detector run.
pub type UserDays = BTreeMap<String, Vec<NaiveDate>>;

fn ordinal(d: NaiveDate) -> i64 {
    (d - NaiveDate::MIN).num_days()
}

fn sorted_unique(days: &[NaiveDate]) -> Vec<NaiveDate> {
    let mut v = days.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub tp: usize,
    /// `(ground truth day, candidate day)`.
    pub matched_pairs: Vec<(NaiveDate, NaiveDate)>,
    pub precision: f64,
    pub recall: f64,
}

/// Maximum one-to-one matching of ground-truth days to candidate days, where a
/// pair may match when the two days are at most `tau` apart.
///
/// Every ground-truth day accepts candidates from a window of the same width,
/// so a left-to-right sweep that matches whenever possible is optimal.
///
/// With no candidates, precision is 0 (or 1 when there is also no ground
/// truth). With no ground truth, recall is 1.
pub fn match_with_margin(g_days: &[NaiveDate], c_days: &[NaiveDate], tau: u32) -> MatchResult {
    let g = sorted_unique(g_days);
    let c = sorted_unique(c_days);
    let tau = i64::from(tau);
    let mut pairs = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < g.len() && j < c.len() {
        let diff = ordinal(c[j]) - ordinal(g[i]);
        if diff < -tau {
            j += 1;
        } else if diff > tau {
            i += 1;
        } else {
            pairs.push((g[i], c[j]));
            i += 1;
            j += 1;
        }
    }
    let tp = pairs.len();
    let precision = if c.is_empty() {
        if g.is_empty() {
            1.0
        } else {
            0.0
        }
    } else {
        tp as f64 / c.len() as f64
    };
    let recall = if g.is_empty() {
        1.0
    } else {
        tp as f64 / g.len() as f64
    };
    MatchResult {
        tp,
        matched_pairs: pairs,
        precision,
        recall,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Mean precision and recall over timelines; F1 is taken from the means.
pub fn aggregate_prf(results: &[MatchResult]) -> Result<Prf> {
    if results.is_empty() {
        return Err(Error::EmptyInput("match results"));
    }
    let n = results.len() as f64;
    let precision = results.iter().map(|r| r.precision).sum::<f64>() / n;
    let recall = results.iter().map(|r| r.recall).sum::<f64>() / n;
    Ok(Prf {
        precision,
        recall,
        f1: f1_score(precision, recall),
    })
}

/// Cuts `[start, end]` at every change day strictly after `start`. Segments are
/// inclusive `(first, last)` offsets from `start`.
fn segments(days: &[NaiveDate], start: NaiveDate, end: NaiveDate) -> Vec<(i64, i64)> {
    let total = span_len(start, end) as i64;
    let mut cuts: Vec<i64> = days
        .iter()
        .map(|d| (*d - start).num_days())
        .filter(|&o| o > 0 && o < total)
        .collect();
    cuts.sort_unstable();
    cuts.dedup();
    let mut out = Vec::with_capacity(cuts.len() + 1);
    let mut first = 0;
    for c in cuts {
        out.push((first, c - 1));
        first = c;
    }
    out.push((first, total - 1));
    out
}

fn jaccard(a: (i64, i64), b: (i64, i64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0) + 1).max(0);
    let union = (a.1 - a.0 + 1) + (b.1 - b.0 + 1) - inter;
    inter as f64 / union as f64
}

/// Segmentation covering of the ground-truth segmentation by the predicted one,
/// both obtained by cutting the timeline span at their change days.
pub fn covering_score(
    g_days: &[NaiveDate],
    c_days: &[NaiveDate],
    start: NaiveDate,
    end: NaiveDate,
) -> f64 {
    let total = span_len(start, end);
    if total == 0 {
        return 0.0;
    }
    let truth = segments(g_days, start, end);
    let pred = segments(c_days, start, end);
    let weighted: f64 = truth
        .iter()
        .map(|&a| {
            let best = pred.iter().map(|&b| jaccard(a, b)).fold(0.0, f64::max);
            (a.1 - a.0 + 1) as f64 * best
        })
        .sum();
    weighted / total as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedoidSummary {
    pub timeline_id: String,
    pub medoid_day: NaiveDate,
    /// Ground-truth days per post.
    pub density: f64,
}

/// Timeline density `|G| / |posts|` (0 for a timeline without posts).
pub fn timeline_density(timeline: &AnnotatedTimeline) -> f64 {
    if timeline.posts.is_empty() {
        0.0
    } else {
        timeline.gtmoc_days.len() as f64 / timeline.posts.len() as f64
    }
}

/// The ground-truth day minimising the summed day distance to all others;
/// the earliest such day wins ties.
pub fn find_medoid(timeline: &AnnotatedTimeline) -> Result<MedoidSummary> {
    let g = sorted_unique(&timeline.gtmoc_days);
    if g.is_empty() {
        return Err(Error::NoMedoid(timeline.timeline_id.clone()));
    }
    let ords: Vec<i64> = g.iter().map(|d| ordinal(*d)).collect();
    let mut best = (0usize, i64::MAX);
    for (i, &a) in ords.iter().enumerate() {
        let cost: i64 = ords.iter().map(|&b| (a - b).abs()).sum();
        if cost < best.1 {
            best = (i, cost);
        }
    }
    Ok(MedoidSummary {
        timeline_id: timeline.timeline_id.clone(),
        medoid_day: g[best.0],
        density: timeline_density(timeline),
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// `+1` where the density reaches the corpus median, `-1` elsewhere.
pub fn binarize_density(densities: &[f64]) -> Result<Vec<i8>> {
    let m = median(densities).ok_or(Error::EmptyInput("densities"))?;
    Ok(densities
        .iter()
        .map(|&d| if d >= m { 1 } else { -1 })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineVote {
    pub timeline_id: String,
    pub medoid_day: NaiveDate,
    pub density_binary: i8,
    /// Whole days to the nearest candidate anywhere in the user's history.
    pub min_distance: Option<i64>,
    /// Signed distance score `(d + eps) * sign`; `None` without candidates.
    pub distance_score: Option<f64>,
    pub vote: u8,
    /// Candidates of the method falling inside the timeline span.
    pub candidates_in_span: usize,
    /// `vote / candidates_in_span`, or 0 when no candidate falls inside.
    pub normalized_vote: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteReport {
    pub total: f64,
    pub per_timeline: Vec<TimelineVote>,
}

/// Medoid Votes for one detector run at margin `tau`.
///
/// Density is binarised against the median over every timeline in the corpus;
/// timelines without ground truth then cast no vote. A vote is cast when the
/// medoid is dense and the nearest candidate is at most `tau` whole days away;
/// the epsilon offset only carries the sign of a zero distance.
pub fn score_method(
    cmocs: &UserDays,
    timelines: &[AnnotatedTimeline],
    tau: u32,
) -> Result<VoteReport> {
    if timelines.is_empty() {
        return Ok(VoteReport {
            total: 0.0,
            per_timeline: Vec::new(),
        });
    }
    let densities: Vec<f64> = timelines.iter().map(timeline_density).collect();
    let binary = binarize_density(&densities)?;

    let mut per_timeline = Vec::new();
    let mut total = 0.0;
    for (t, &sign) in timelines.iter().zip(&binary) {
        let Ok(medoid) = find_medoid(t) else {
            continue;
        };
        let days = cmocs.get(&t.user_id).map(Vec::as_slice).unwrap_or(&[]);
        let min_distance = days
            .iter()
            .map(|d| (ordinal(*d) - ordinal(medoid.medoid_day)).abs())
            .min();
        let distance_score = min_distance.map(|d| (d as f64 + MEDOID_EPSILON) * f64::from(sign));
        let vote = u8::from(sign > 0 && min_distance.is_some_and(|d| d <= i64::from(tau)));
        let in_span = sorted_unique(days)
            .iter()
            .filter(|d| t.contains_day(**d))
            .count();
        let normalized_vote = if in_span == 0 {
            0.0
        } else {
            f64::from(vote) / in_span as f64
        };
        total += normalized_vote;
        per_timeline.push(TimelineVote {
            timeline_id: t.timeline_id.clone(),
            medoid_day: medoid.medoid_day,
            density_binary: sign,
            min_distance,
            distance_score,
            vote,
            candidates_in_span: in_span,
            normalized_vote,
        });
    }
    Ok(VoteReport {
        total,
        per_timeline,
    })
}

/// Min-max scales raw totals to `[0, 1]`; equal totals all map to 0.5.
pub fn rank_methods(raw: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>> {
    if raw.len() < 2 {
        return Err(Error::invalid(format!(
            "ranking needs at least 2 methods, got {}",
            raw.len()
        )));
    }
    let min = raw.values().copied().fold(f64::INFINITY, f64::min);
    let max = raw.values().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(raw
        .iter()
        .map(|(k, &v)| {
            let s = if max == min {
                0.5
            } else {
                (v - min) / (max - min)
            };
            (k.clone(), s)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MvAggregation {
    /// Sum raw totals over the margin range, then scale once.
    #[default]
    SumThenScale,
    /// Scale at each margin, then average the scaled values.
    ScalePerTau,
}

/// One detector, possibly run under several seeds. Scores are averaged over runs.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRuns {
    pub method_id: String,
    pub runs: Vec<UserDays>,
}

impl MethodRuns {
    pub fn single(method_id: impl Into<String>, days: UserDays) -> Self {
        Self {
            method_id: method_id.into(),
            runs: vec![days],
        }
    }

    fn check(&self) -> Result<()> {
        if self.runs.is_empty() {
            return Err(Error::invalid(format!(
                "method {} has no runs",
                self.method_id
            )));
        }
        Ok(())
    }
}

/// Raw vote total at `tau`, averaged over the method's runs.
pub fn mean_raw_votes(
    method: &MethodRuns,
    timelines: &[AnnotatedTimeline],
    tau: u32,
) -> Result<f64> {
    method.check()?;
    let mut sum = 0.0;
    for run in &method.runs {
        sum += score_method(run, timelines, tau)?.total;
    }
    Ok(sum / method.runs.len() as f64)
}

/// Raw totals per method and margin: `result[method][i]` is the total at `taus[i]`.
pub fn raw_vote_table(
    methods: &[MethodRuns],
    timelines: &[AnnotatedTimeline],
    taus: &[u32],
) -> Result<BTreeMap<String, Vec<f64>>> {
    methods
        .iter()
        .map(|m| {
            let row = taus
                .iter()
                .map(|&tau| mean_raw_votes(m, timelines, tau))
                .collect::<Result<Vec<_>>>()?;
            Ok((m.method_id.clone(), row))
        })
        .collect()
}

/// Scales a raw vote table (as from [`raw_vote_table`]) across methods.
pub fn scale_vote_table(
    table: &BTreeMap<String, Vec<f64>>,
    mode: MvAggregation,
) -> Result<BTreeMap<String, f64>> {
    let width = table.values().map(Vec::len).max().unwrap_or(0);
    if width == 0 {
        return Err(Error::EmptyInput("margin range"));
    }
    match mode {
        MvAggregation::SumThenScale => {
            let sums = table
                .iter()
                .map(|(k, row)| (k.clone(), row.iter().sum::<f64>()))
                .collect();
            rank_methods(&sums)
        }
        MvAggregation::ScalePerTau => {
            let mut acc: BTreeMap<String, f64> = table.keys().map(|k| (k.clone(), 0.0)).collect();
            for i in 0..width {
                let column = table
                    .iter()
                    .map(|(k, row)| (k.clone(), row.get(i).copied().unwrap_or(0.0)))
                    .collect();
                for (k, v) in rank_methods(&column)? {
                    *acc.get_mut(&k).expect("same keys") += v;
                }
            }
            Ok(acc
                .into_iter()
                .map(|(k, v)| (k, v / width as f64))
                .collect())
        }
    }
}

/// Scaled Medoid Votes across methods over a range of margins.
pub fn mv_table(
    methods: &[MethodRuns],
    timelines: &[AnnotatedTimeline],
    taus: &[u32],
    mode: MvAggregation,
) -> Result<BTreeMap<String, f64>> {
    if taus.is_empty() {
        return Err(Error::EmptyInput("margin range"));
    }
    scale_vote_table(&raw_vote_table(methods, timelines, taus)?, mode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub tau: u32,
    pub mv_taus: Vec<u32>,
    pub mv_mode: MvAggregation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            mv_taus: (0..=6).collect(),
            mv_mode: MvAggregation::SumThenScale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScorecard {
    pub method_id: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub covering: f64,
    /// Raw Medoid Votes total at the evaluation margin.
    pub raw_votes: f64,
    /// Min-max scaled Medoid Votes over the configured margin range.
    pub mv: f64,
    pub runs: usize,
}

/// Candidates of `run` for the timeline's user that fall inside its span.
pub fn candidates_in_span(run: &UserDays, timeline: &AnnotatedTimeline) -> Vec<NaiveDate> {
    run.get(&timeline.user_id)
        .map(|days| {
            sorted_unique(days)
                .into_iter()
                .filter(|d| timeline.contains_day(*d))
                .collect()
        })
        .unwrap_or_default()
}

/// Precision/recall over timelines for one run, plus mean covering.
pub fn evaluate_run(
    run: &UserDays,
    timelines: &[AnnotatedTimeline],
    tau: u32,
) -> Result<(Prf, f64)> {
    if timelines.is_empty() {
        return Err(Error::EmptyInput("annotated timelines"));
    }
    let mut matches = Vec::with_capacity(timelines.len());
    let mut covering = 0.0;
    for t in timelines {
        let c = candidates_in_span(run, t);
        matches.push(match_with_margin(&t.gtmoc_days, &c, tau));
        covering += covering_score(&t.gtmoc_days, &c, t.start, t.end);
    }
    Ok((aggregate_prf(&matches)?, covering / timelines.len() as f64))
}

/// Full scorecard for every method. Seeded methods average P, R, covering and
/// raw votes over their runs; F1 comes from the averaged P and R.
pub fn evaluate_methods(
    methods: &[MethodRuns],
    timelines: &[AnnotatedTimeline],
    config: &EvalConfig,
) -> Result<Vec<MethodScorecard>> {
    let mv = if methods.len() >= 2 {
        Some(mv_table(
            methods,
            timelines,
            &config.mv_taus,
            config.mv_mode,
        )?)
    } else {
        None
    };
    methods
        .iter()
        .map(|m| {
            m.check()?;
            let (mut p, mut r, mut cov) = (0.0, 0.0, 0.0);
            for run in &m.runs {
                let (prf, c) = evaluate_run(run, timelines, config.tau)?;
                p += prf.precision;
                r += prf.recall;
                cov += c;
            }
            let n = m.runs.len() as f64;
            let (p, r) = (p / n, r / n);
            Ok(MethodScorecard {
                method_id: m.method_id.clone(),
                precision: p,
                recall: r,
                f1: f1_score(p, r),
                covering: cov / n,
                raw_votes: mean_raw_votes(m, timelines, config.tau)?,
                mv: mv.as_ref().map_or(0.5, |t| t[&m.method_id]),
                runs: m.runs.len(),
            })
        })
        .collect()
}
