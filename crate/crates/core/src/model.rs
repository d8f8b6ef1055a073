//! Domain types shared by every detector and by the evaluation code.
//!
//! All calendar arithmetic uses UTC days: a post's day is the UTC date of its
//! timestamp, and a history's span is the inclusive range of days it covers.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeline::TimelineSpan;

/// Number of days in the inclusive range `[start, end]`.
pub fn span_len(start: NaiveDate, end: NaiveDate) -> usize {
    ((end - start).num_days() + 1).max(0) as usize
}

/// Every calendar day in `[start, end]`, in order.
pub fn days_in(start: NaiveDate, end: NaiveDate) -> impl Iterator<Item = NaiveDate> {
    start.iter_days().take(span_len(start, end))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub post_id: String,
    pub user_id: String,
    pub timestamp: DateTime<Utc>,
    pub text: Option<String>,
    pub comments_received: u64,
}

impl Post {
    pub fn day(&self) -> NaiveDate {
        self.timestamp.date_naive()
    }
}

/// One user's posts, sorted by timestamp, together with the inclusive day range
/// they were observed over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventHistory {
    user_id: String,
    posts: Vec<Post>,
    first_day: NaiveDate,
    last_day: NaiveDate,
}

impl EventHistory {
    /// Builds a history whose span is exactly the days of its first and last post.
    pub fn new(user_id: impl Into<String>, posts: Vec<Post>) -> Result<Self> {
        let user_id = user_id.into();
        let posts = sorted_posts(&user_id, posts)?;
        let (first, last) = match (posts.first(), posts.last()) {
            (Some(f), Some(l)) => (f.day(), l.day()),
            _ => return Err(Error::NoEvents),
        };
        Ok(Self {
            user_id,
            posts,
            first_day: first,
            last_day: last,
        })
    }

    /// Builds a history observed over an explicit span, which may extend past the
    /// first and last posts (silent leading or trailing days). `posts` may be empty.
    pub fn with_span(
        user_id: impl Into<String>,
        posts: Vec<Post>,
        first_day: NaiveDate,
        last_day: NaiveDate,
    ) -> Result<Self> {
        if last_day < first_day {
            return Err(Error::invalid(format!(
                "span end {last_day} precedes start {first_day}"
            )));
        }
        let user_id = user_id.into();
        let posts = sorted_posts(&user_id, posts)?;
        if let Some(p) = posts
            .iter()
            .find(|p| p.day() < first_day || p.day() > last_day)
        {
            return Err(Error::invalid(format!(
                "post {} on {} lies outside span [{first_day}, {last_day}]",
                p.post_id,
                p.day()
            )));
        }
        Ok(Self {
            user_id,
            posts,
            first_day,
            last_day,
        })
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn posts(&self) -> &[Post] {
        &self.posts
    }

    pub fn first_day(&self) -> NaiveDate {
        self.first_day
    }

    pub fn last_day(&self) -> NaiveDate {
        self.last_day
    }

    pub fn span_days(&self) -> usize {
        span_len(self.first_day, self.last_day)
    }

    pub fn contains_day(&self, day: NaiveDate) -> bool {
        day >= self.first_day && day <= self.last_day
    }

    pub fn into_posts(self) -> Vec<Post> {
        self.posts
    }
}

fn sorted_posts(user_id: &str, mut posts: Vec<Post>) -> Result<Vec<Post>> {
    let mut seen = HashSet::with_capacity(posts.len());
    for p in &posts {
        if p.user_id != user_id {
            return Err(Error::invalid(format!(
                "post {} belongs to user {:?}, not {user_id:?}",
                p.post_id, p.user_id
            )));
        }
        if !seen.insert(p.post_id.as_str()) {
            return Err(Error::DuplicatePost(p.post_id.clone()));
        }
    }
    // stable: identical timestamps keep input order
    posts.sort_by_key(|p| p.timestamp);
    Ok(posts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountSource {
    Posts,
    Comments,
}

impl fmt::Display for CountSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CountSource::Posts => f.write_str("posts"),
            CountSource::Comments => f.write_str("comments"),
        }
    }
}

/// Dense per-day activity counts; silent days are explicit zeros.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DailyCountSeries {
    pub start_day: NaiveDate,
    pub counts: Vec<u64>,
    pub source: CountSource,
}

impl DailyCountSeries {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn day_at(&self, index: usize) -> NaiveDate {
        self.start_day + chrono::Days::new(index as u64)
    }

    pub fn last_day(&self) -> NaiveDate {
        self.day_at(self.counts.len().saturating_sub(1))
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Reduces a history to one count per day of its span.
pub fn to_daily_counts(history: &EventHistory, source: CountSource) -> Result<DailyCountSeries> {
    if history.posts().is_empty() {
        return Err(Error::NoEvents);
    }
    let mut counts = vec![0u64; history.span_days()];
    for post in history.posts() {
        let idx = (post.day() - history.first_day()).num_days() as usize;
        counts[idx] += match source {
            CountSource::Posts => 1,
            CountSource::Comments => post.comments_received,
        };
    }
    Ok(DailyCountSeries {
        start_day: history.first_day(),
        counts,
        source,
    })
}

/// A detector-emitted day hypothesised to sit near a change in behaviour.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CandidateMoC {
    pub day: NaiveDate,
    pub method_id: String,
}

impl CandidateMoC {
    pub fn new(day: NaiveDate, method_id: impl Into<String>) -> Self {
        Self {
            day,
            method_id: method_id.into(),
        }
    }
}

/// Builds sorted, day-unique candidates from an arbitrary day list.
pub fn candidates_from_days(
    days: impl IntoIterator<Item = NaiveDate>,
    method_id: &str,
) -> Vec<CandidateMoC> {
    days.into_iter()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(|d| CandidateMoC::new(d, method_id))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MocLabel {
    Switch,
    Escalation,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthAnnotation {
    pub timeline_id: String,
    pub annotator_id: String,
    pub post_id: String,
    pub label: MocLabel,
    #[serde(default, rename = "region")]
    pub region_post_ids: Vec<String>,
}

/// A timeline plus its ground-truth moment-of-change days, aggregated across
/// annotators.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedTimeline {
    pub timeline_id: String,
    pub user_id: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub posts: Vec<Post>,
    /// Sorted, unique.
    pub gtmoc_days: Vec<NaiveDate>,
}

impl AnnotatedTimeline {
    pub fn span_days(&self) -> usize {
        span_len(self.start, self.end)
    }

    pub fn contains_day(&self, day: NaiveDate) -> bool {
        day >= self.start && day <= self.end
    }

    /// Number of distinct days on which the timeline has at least one post.
    pub fn posting_days(&self) -> usize {
        self.posts
            .iter()
            .map(Post::day)
            .collect::<BTreeSet<_>>()
            .len()
    }
}

/// Union-aggregates every annotator's labels for one timeline into day-level
/// ground truth. Any post labelled Switch or Escalation, and every post inside a
/// labelled region, contributes its calendar day.
pub fn aggregate_annotations(
    timeline: &TimelineSpan,
    annotations: &[GroundTruthAnnotation],
) -> Result<AnnotatedTimeline> {
    let by_id: HashMap<&str, &Post> = timeline
        .posts
        .iter()
        .map(|p| (p.post_id.as_str(), p))
        .collect();
    let lookup = |post_id: &str| {
        by_id
            .get(post_id)
            .copied()
            .ok_or_else(|| Error::UnknownPost {
                timeline_id: timeline.timeline_id.clone(),
                post_id: post_id.to_string(),
            })
    };

    let mut days = BTreeSet::new();
    for ann in annotations {
        if ann.timeline_id != timeline.timeline_id {
            return Err(Error::invalid(format!(
                "annotation for timeline {:?} passed with timeline {:?}",
                ann.timeline_id, timeline.timeline_id
            )));
        }
        let anchor = lookup(&ann.post_id)?;
        if ann.label == MocLabel::None {
            continue;
        }
        days.insert(anchor.day());
        for id in &ann.region_post_ids {
            days.insert(lookup(id)?.day());
        }
    }

    Ok(AnnotatedTimeline {
        timeline_id: timeline.timeline_id.clone(),
        user_id: timeline.user_id.clone(),
        start: timeline.start,
        end: timeline.end,
        posts: timeline.posts.clone(),
        gtmoc_days: days.into_iter().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn d(offset: i64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Duration::days(offset)
    }

    fn post(id: &str, day: i64, hour: u32, comments: u64) -> Post {
        let date = d(day);
        Post {
            post_id: id.into(),
            user_id: "u".into(),
            timestamp: Utc.from_utc_datetime(&date.and_hms_opt(hour, 0, 0).unwrap()),
            text: None,
            comments_received: comments,
        }
    }

    #[test]
    fn daily_counts_zero_fill() {
        let h = EventHistory::new(
            "u",
            vec![post("a", 0, 1, 0), post("b", 0, 5, 0), post("c", 2, 3, 0)],
        )
        .unwrap();
        let s = to_daily_counts(&h, CountSource::Posts).unwrap();
        assert_eq!(s.counts, vec![2, 0, 1]);
        assert_eq!(s.start_day, d(0));
    }

    #[test]
    fn daily_comment_sums() {
        let h = EventHistory::new("u", vec![post("a", 0, 1, 3), post("b", 0, 2, 1)]).unwrap();
        let s = to_daily_counts(&h, CountSource::Comments).unwrap();
        assert_eq!(s.counts, vec![4]);
    }

    #[test]
    fn singleton_series() {
        let h = EventHistory::new("u", vec![post("a", 0, 1, 0)]).unwrap();
        assert_eq!(
            to_daily_counts(&h, CountSource::Posts).unwrap().counts,
            vec![1]
        );
    }

    #[test]
    fn empty_history_has_no_events() {
        let h = EventHistory::with_span("u", vec![], d(0), d(4)).unwrap();
        assert!(matches!(
            to_daily_counts(&h, CountSource::Posts),
            Err(Error::NoEvents)
        ));
        assert!(matches!(
            EventHistory::new("u", vec![]),
            Err(Error::NoEvents)
        ));
    }

    #[test]
    fn inclusive_span() {
        let h = EventHistory::new("u", vec![post("a", 9, 1, 0), post("b", 0, 1, 0)]).unwrap();
        assert_eq!(h.span_days(), 10);
        assert_eq!(h.posts()[0].post_id, "b");
    }

    #[test]
    fn stable_sort_on_equal_timestamps() {
        let h = EventHistory::new(
            "u",
            vec![post("x", 1, 1, 0), post("y", 1, 1, 0), post("z", 0, 1, 0)],
        )
        .unwrap();
        let ids: Vec<_> = h.posts().iter().map(|p| p.post_id.as_str()).collect();
        assert_eq!(ids, ["z", "x", "y"]);
    }

    #[test]
    fn duplicate_post_ids_rejected() {
        let err = EventHistory::new("u", vec![post("a", 0, 1, 0), post("a", 1, 1, 0)]);
        assert!(matches!(err, Err(Error::DuplicatePost(_))));
    }

    #[test]
    fn span_must_cover_posts() {
        assert!(EventHistory::with_span("u", vec![post("a", 5, 1, 0)], d(0), d(4)).is_err());
    }

    fn timeline(posts: Vec<Post>) -> TimelineSpan {
        TimelineSpan {
            timeline_id: "t".into(),
            user_id: "u".into(),
            method_id: None,
            center: d(2),
            radius_days: 2,
            start: d(0),
            end: d(4),
            posts,
        }
    }

    fn ann(annotator: &str, post: &str, label: MocLabel, region: &[&str]) -> GroundTruthAnnotation {
        GroundTruthAnnotation {
            timeline_id: "t".into(),
            annotator_id: annotator.into(),
            post_id: post.into(),
            label,
            region_post_ids: region.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn union_across_annotators() {
        let t = timeline(vec![post("p1", 0, 1, 0), post("p2", 3, 1, 0)]);
        let a = aggregate_annotations(
            &t,
            &[
                ann("A", "p1", MocLabel::Switch, &[]),
                ann("B", "p2", MocLabel::Escalation, &[]),
            ],
        )
        .unwrap();
        assert_eq!(a.gtmoc_days, vec![d(0), d(3)]);
    }

    #[test]
    fn none_labels_contribute_nothing() {
        let t = timeline(vec![post("p1", 0, 1, 0), post("p2", 3, 1, 0)]);
        let a = aggregate_annotations(
            &t,
            &[
                ann("A", "p1", MocLabel::None, &[]),
                ann("B", "p2", MocLabel::None, &[]),
            ],
        )
        .unwrap();
        assert!(a.gtmoc_days.is_empty());
    }

    #[test]
    fn same_day_region_collapses_to_one_day() {
        let t = timeline(vec![
            post("p2", 1, 1, 0),
            post("p3", 2, 1, 0),
            post("p4", 2, 9, 0),
        ]);
        let a = aggregate_annotations(&t, &[ann("A", "p3", MocLabel::Escalation, &["p3", "p4"])])
            .unwrap();
        assert_eq!(a.gtmoc_days.len(), 1);
        assert_eq!(a.gtmoc_days, vec![d(2)]);
    }

    #[test]
    fn multi_day_region_yields_one_day_each() {
        let t = timeline(vec![
            post("p1", 0, 1, 0),
            post("p2", 1, 1, 0),
            post("p3", 2, 1, 0),
        ]);
        let a =
            aggregate_annotations(&t, &[ann("A", "p1", MocLabel::Switch, &["p2", "p3"])]).unwrap();
        assert_eq!(a.gtmoc_days, vec![d(0), d(1), d(2)]);
    }

    #[test]
    fn unknown_post_rejected() {
        let t = timeline(vec![post("p1", 0, 1, 0)]);
        let err = aggregate_annotations(&t, &[ann("A", "nope", MocLabel::Switch, &[])]);
        assert!(matches!(err, Err(Error::UnknownPost { .. })));
        let err = aggregate_annotations(&t, &[ann("A", "p1", MocLabel::Switch, &["ghost"])]);
        assert!(matches!(err, Err(Error::UnknownPost { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn daily_counts_conserve_mass(
                raw in prop::collection::vec((0i64..60, 0u32..24, 0u64..7), 1..80)
            ) {
                let posts: Vec<Post> = raw
                    .iter()
                    .enumerate()
                    .map(|(i, &(day, hour, c))| post(&format!("p{i}"), day, hour, c))
                    .collect();
                let comments: u64 = posts.iter().map(|p| p.comments_received).sum();
                let h = EventHistory::new("u", posts).unwrap();
                let by_posts = to_daily_counts(&h, CountSource::Posts).unwrap();
                let by_comments = to_daily_counts(&h, CountSource::Comments).unwrap();
                prop_assert_eq!(by_posts.total() as usize, raw.len());
                prop_assert_eq!(by_comments.total(), comments);
                prop_assert_eq!(by_posts.len(), h.span_days());
            }

            #[test]
            fn aggregation_is_order_independent_and_idempotent(
                picks in prop::collection::vec((0usize..6, 0usize..3), 0..10),
                seed in any::<u64>(),
            ) {
                let posts: Vec<Post> = (0..6).map(|i| post(&format!("p{i}"), i as i64 % 5, 1, 0)).collect();
                let t = timeline(posts);
                let labels = [MocLabel::Switch, MocLabel::Escalation, MocLabel::None];
                let anns: Vec<_> = picks
                    .iter()
                    .enumerate()
                    .map(|(i, &(p, l))| ann(&format!("a{}", i % 3), &format!("p{p}"), labels[l], &[]))
                    .collect();
                let forward = aggregate_annotations(&t, &anns).unwrap();
                let mut shuffled = anns.clone();
                // deterministic rotation stands in for a permutation
                let k = if shuffled.is_empty() { 0 } else { (seed as usize) % shuffled.len() };
                shuffled.rotate_left(k);
                shuffled.reverse();
                let backward = aggregate_annotations(&t, &shuffled).unwrap();
                prop_assert_eq!(&forward.gtmoc_days, &backward.gtmoc_days);
                let doubled: Vec<_> = anns.iter().chain(anns.iter()).cloned().collect();
                let twice = aggregate_annotations(&t, &doubled).unwrap();
                prop_assert_eq!(&forward.gtmoc_days, &twice.gtmoc_days);
                prop_assert!(forward.gtmoc_days.len() <= forward.posting_days());
            }
        }
    }
}
