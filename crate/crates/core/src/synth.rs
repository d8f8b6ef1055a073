//! Synthetic corpora with planted change points: piecewise-constant Poisson
//! daily activity plus a simple stand-in for human annotation.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Days, NaiveDate, TimeZone, Utc};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnnotatedTimeline, EventHistory, GroundTruthAnnotation, MocLabel, Post};
use crate::timeline::{build_timelines, TimelineSpan, DEFAULT_RADIUS_DAYS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration_days: u32,
    /// Expected posts per day.
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotationModel {
    /// Chance that a posting day near a planted change becomes ground truth.
    pub p_moc_near_cp: f64,
    pub near_window_days: u32,
    /// Chance for any other posting day.
    pub p_moc_background: f64,
}

impl AnnotationModel {
    fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_moc_near_cp", self.p_moc_near_cp),
            ("p_moc_background", self.p_moc_background),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!(
                    "{name} must lie in [0, 1], got {p}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for AnnotationModel {
    fn default() -> Self {
        Self {
            p_moc_near_cp: 0.6,
            near_window_days: 3,
            p_moc_background: 0.05,
        }
    }
}

fn default_start_day() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date")
}

fn default_user() -> String {
    "user".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(default = "default_user")]
    pub user_id: String,
    #[serde(default = "default_start_day")]
    pub start_day: NaiveDate,
    pub segments: Vec<Segment>,
    #[serde(default)]
    pub annotation_model: AnnotationModel,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(segments: Vec<Segment>, seed: u64) -> Self {
        Self {
            user_id: default_user(),
            start_day: default_start_day(),
            segments,
            annotation_model: AnnotationModel::default(),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::invalid("scenario needs at least one segment"));
        }
        for s in &self.segments {
            if s.duration_days == 0 {
                return Err(Error::invalid("segment durations must be at least 1 day"));
            }
            if !(s.rate.is_finite() && s.rate >= 0.0) {
                return Err(Error::invalid(format!(
                    "segment rate must be >= 0, got {}",
                    s.rate
                )));
            }
        }
        self.annotation_model.validate()
    }

    pub fn total_days(&self) -> u64 {
        self.segments
            .iter()
            .map(|s| u64::from(s.duration_days))
            .sum()
    }
}

/// Draws one history. Returns it with the planted change days (the first day
/// of every segment after the first).
pub fn generate_history(spec: &ScenarioSpec) -> Result<(EventHistory, Vec<NaiveDate>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut posts = Vec::new();
    let mut planted = Vec::new();
    let mut offset = 0u64;
    for (k, seg) in spec.segments.iter().enumerate() {
        if k > 0 {
            planted.push(spec.start_day + Days::new(offset));
        }
        let dist = if seg.rate > 0.0 {
            Some(Poisson::new(seg.rate).map_err(|e| Error::invalid(e.to_string()))?)
        } else {
            None
        };
        for _ in 0..seg.duration_days {
            let n = dist.as_ref().map_or(0, |d| d.sample(&mut rng) as u64);
            let date = spec.start_day + Days::new(offset);
            let noon = Utc.from_utc_datetime(&date.and_hms_opt(12, 0, 0).expect("valid time"));
            for j in 0..n {
                posts.push(Post {
                    post_id: format!("{}-d{offset}-{j}", spec.user_id),
                    user_id: spec.user_id.clone(),
                    timestamp: noon + chrono::Duration::seconds(j as i64),
                    text: None,
                    comments_received: 0,
                });
            }
            offset += 1;
        }
    }
    let last = spec.start_day + Days::new(offset - 1);
    let history = EventHistory::with_span(spec.user_id.clone(), posts, spec.start_day, last)?;
    Ok((history, planted))
}

/// Turns timelines of one history into annotated timelines: each posting day
/// within `near_window_days` of a planted change is ground truth with
/// probability `p_moc_near_cp`, any other posting day with `p_moc_background`.
pub fn simulate_annotations(
    history: &EventHistory,
    planted_cp_days: &[NaiveDate],
    model: &AnnotationModel,
    timelines: &[TimelineSpan],
    seed: u64,
) -> Result<Vec<AnnotatedTimeline>> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let window = i64::from(model.near_window_days);
    timelines
        .iter()
        .map(|t| {
            if t.user_id != history.user_id() {
                return Err(Error::invalid(format!(
                    "timeline {} belongs to {}, not {}",
                    t.timeline_id,
                    t.user_id,
                    history.user_id()
                )));
            }
            let posting_days: BTreeSet<NaiveDate> = t.posts.iter().map(Post::day).collect();
            let gtmoc_days = posting_days
                .into_iter()
                .filter(|d| {
                    let near = planted_cp_days
                        .iter()
                        .any(|cp| (*d - *cp).num_days().abs() <= window);
                    let p = if near {
                        model.p_moc_near_cp
                    } else {
                        model.p_moc_background
                    };
                    rng.random::<f64>() < p
                })
                .collect();
            Ok(AnnotatedTimeline {
                timeline_id: t.timeline_id.clone(),
                user_id: t.user_id.clone(),
                start: t.start,
                end: t.end,
                posts: t.posts.clone(),
                gtmoc_days,
            })
        })
        .collect()
}

/// One Switch label on the first post of every ground-truth day; aggregating
/// these reproduces the timeline's ground truth exactly.
pub fn annotations_for(
    timeline: &AnnotatedTimeline,
    annotator_id: &str,
) -> Vec<GroundTruthAnnotation> {
    timeline
        .gtmoc_days
        .iter()
        .filter_map(|d| timeline.posts.iter().find(|p| p.day() == *d))
        .map(|p| GroundTruthAnnotation {
            timeline_id: timeline.timeline_id.clone(),
            annotator_id: annotator_id.to_string(),
            post_id: p.post_id.clone(),
            label: MocLabel::Switch,
            region_post_ids: Vec::new(),
        })
        .collect()
}

pub const ANNOTATION_TIMELINE_METHOD: &str = "annotation";
pub const SIMULATED_ANNOTATOR: &str = "simulated";

fn default_radius() -> u32 {
    DEFAULT_RADIUS_DAYS
}

fn default_jitter() -> u32 {
    3
}

fn default_background() -> u32 {
    1
}

/// A multi-user benchmark: every user follows the same segment template with
/// an independent seed. Annotated timelines are centred near each planted
/// change (with jitter) and on uniformly drawn background days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub seed: u64,
    pub users: usize,
    #[serde(default = "default_start_day")]
    pub start_day: NaiveDate,
    pub segments: Vec<Segment>,
    #[serde(default)]
    pub annotation_model: AnnotationModel,
    #[serde(default = "default_radius")]
    pub radius_days: u32,
    #[serde(default = "default_jitter")]
    pub center_jitter_days: u32,
    #[serde(default = "default_background")]
    pub background_timelines_per_user: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub histories: BTreeMap<String, EventHistory>,
    pub planted: BTreeMap<String, Vec<NaiveDate>>,
    pub timelines: Vec<AnnotatedTimeline>,
    pub annotations: Vec<GroundTruthAnnotation>,
}

impl SyntheticCorpus {
    pub fn timeline_spans(&self) -> Vec<TimelineSpan> {
        self.timelines
            .iter()
            .map(|t| TimelineSpan {
                timeline_id: t.timeline_id.clone(),
                user_id: t.user_id.clone(),
                method_id: Some(ANNOTATION_TIMELINE_METHOD.to_string()),
                center: t.start + Days::new(((t.end - t.start).num_days() / 2) as u64),
                radius_days: ((t.end - t.start).num_days() / 2) as u32,
                start: t.start,
                end: t.end,
                posts: t.posts.clone(),
            })
            .collect()
    }
}

pub fn generate_corpus(spec: &CorpusSpec) -> Result<SyntheticCorpus> {
    if spec.users == 0 {
        return Err(Error::invalid("corpus needs at least one user"));
    }
    if spec.radius_days == 0 {
        return Err(Error::invalid("radius_days must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let width = (spec.users - 1).to_string().len();
    let mut out = SyntheticCorpus {
        histories: BTreeMap::new(),
        planted: BTreeMap::new(),
        timelines: Vec::new(),
        annotations: Vec::new(),
    };
    for i in 0..spec.users {
        let user_id = format!("u{i:0width$}");
        let scenario = ScenarioSpec {
            user_id: user_id.clone(),
            start_day: spec.start_day,
            segments: spec.segments.clone(),
            annotation_model: spec.annotation_model,
            seed: rng.next_u64(),
        };
        let (history, planted) = generate_history(&scenario)?;

        // Centres keep the whole window inside the history.
        let span = history.span_days() as i64;
        let r = i64::from(spec.radius_days);
        let (lo, hi) = (r, span - 1 - r);
        if lo > hi {
            return Err(Error::invalid(format!(
                "history of {span} days cannot hold a timeline of radius {r}"
            )));
        }
        let jitter = i64::from(spec.center_jitter_days);
        let mut centers = BTreeSet::new();
        for cp in &planted {
            let shift = rng.random_range(-jitter..=jitter);
            let off = ((*cp - history.first_day()).num_days() + shift).clamp(lo, hi);
            centers.insert(history.first_day() + Days::new(off as u64));
        }
        for _ in 0..spec.background_timelines_per_user {
            let off = rng.random_range(lo..=hi);
            centers.insert(history.first_day() + Days::new(off as u64));
        }
        let cmocs = crate::model::candidates_from_days(centers, ANNOTATION_TIMELINE_METHOD);
        let spans = build_timelines(&history, &cmocs, i64::from(spec.radius_days))?;
        let annotated = simulate_annotations(
            &history,
            &planted,
            &spec.annotation_model,
            &spans,
            rng.next_u64(),
        )?;
        for t in &annotated {
            out.annotations
                .extend(annotations_for(t, SIMULATED_ANNOTATOR));
        }
        out.timelines.extend(annotated);
        out.planted.insert(user_id.clone(), planted);
        out.histories.insert(user_id, history);
    }
    Ok(out)
}
