//! Candidate timelines: fixed-radius day spans centred on candidate days,
//! carrying both the history before and the history after the centre.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::TimelineRecord;
use crate::model::{days_in, CandidateMoC, EventHistory, Post};

pub const DEFAULT_RADIUS_DAYS: u32 = 7;
pub const DEFAULT_MIN_POSTS: usize = 10;
pub const DEFAULT_MAX_POSTS: usize = 150;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimelineSpan {
    pub timeline_id: String,
    pub user_id: String,
    pub method_id: Option<String>,
    pub center: NaiveDate,
    pub radius_days: u32,
    pub start: NaiveDate,
    pub end: NaiveDate,
    /// Chronological.
    pub posts: Vec<Post>,
}

impl TimelineSpan {
    pub fn post_count(&self) -> usize {
        self.posts.len()
    }

    pub fn to_record(&self) -> TimelineRecord {
        TimelineRecord {
            timeline_id: self.timeline_id.clone(),
            user_id: self.user_id.clone(),
            method_id: self.method_id.clone(),
            center: Some(self.center),
            start: self.start,
            end: self.end,
            post_ids: self.posts.iter().map(|p| p.post_id.clone()).collect(),
        }
    }

    /// Resolves a stored timeline against its user's history.
    pub fn from_record(record: &TimelineRecord, history: &EventHistory) -> Result<Self> {
        if record.end < record.start {
            return Err(Error::invalid(format!(
                "timeline {} ends before it starts",
                record.timeline_id
            )));
        }
        let by_id: HashMap<&str, &Post> = history
            .posts()
            .iter()
            .map(|p| (p.post_id.as_str(), p))
            .collect();
        let mut posts = record
            .post_ids
            .iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .map(|p| (*p).clone())
                    .ok_or_else(|| Error::UnknownPost {
                        timeline_id: record.timeline_id.clone(),
                        post_id: id.clone(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        posts.sort_by_key(|p| p.timestamp);
        let center = record.center.unwrap_or_else(|| {
            record.start + Days::new(((record.end - record.start).num_days() / 2) as u64)
        });
        let radius = (record.end - record.start).num_days() / 2;
        Ok(Self {
            timeline_id: record.timeline_id.clone(),
            user_id: record.user_id.clone(),
            method_id: record.method_id.clone(),
            center,
            radius_days: radius as u32,
            start: record.start,
            end: record.end,
            posts,
        })
    }
}

pub fn timeline_id(user_id: &str, method_id: &str, center: NaiveDate) -> String {
    format!("{user_id}:{method_id}:{center}")
}

/// One span `[c - radius, c + radius]` per candidate day. Candidates must
/// already be rounded to days and unique per method.
pub fn build_timelines(
    history: &EventHistory,
    cmocs: &[CandidateMoC],
    radius_days: i64,
) -> Result<Vec<TimelineSpan>> {
    if radius_days <= 0 {
        return Err(Error::invalid(format!(
            "radius must be positive, got {radius_days}"
        )));
    }
    let radius = radius_days as u64;
    let mut seen = BTreeSet::new();
    for c in cmocs {
        if !seen.insert((c.method_id.as_str(), c.day)) {
            return Err(Error::DuplicateCandidate(c.day));
        }
    }
    Ok(cmocs
        .iter()
        .map(|c| {
            let start = c.day - Days::new(radius);
            let end = c.day + Days::new(radius);
            let posts = history
                .posts()
                .iter()
                .filter(|p| (start..=end).contains(&p.day()))
                .cloned()
                .collect();
            TimelineSpan {
                timeline_id: timeline_id(history.user_id(), &c.method_id, c.day),
                user_id: history.user_id().to_string(),
                method_id: Some(c.method_id.clone()),
                center: c.day,
                radius_days: radius as u32,
                start,
                end,
                posts,
            }
        })
        .collect())
}

/// Keeps timelines with `min_posts <= |posts| <= max_posts`.
pub fn filter_timelines(
    timelines: Vec<TimelineSpan>,
    min_posts: usize,
    max_posts: usize,
) -> Result<Vec<TimelineSpan>> {
    if min_posts > max_posts {
        return Err(Error::invalid(format!(
            "min_posts ({min_posts}) exceeds max_posts ({max_posts})"
        )));
    }
    Ok(timelines
        .into_iter()
        .filter(|t| (min_posts..=max_posts).contains(&t.post_count()))
        .collect())
}

/// Longest run of consecutive days in the span without a post.
pub fn longest_silence(timeline: &TimelineSpan) -> usize {
    let active: BTreeSet<NaiveDate> = timeline.posts.iter().map(Post::day).collect();
    let mut best = 0;
    let mut run = 0;
    for d in days_in(timeline.start, timeline.end) {
        if active.contains(&d) {
            run = 0;
        } else {
            run += 1;
            best = best.max(run);
        }
    }
    best
}

/// Drops timelines containing a silent stretch longer than `max_silent_days`.
pub fn filter_sparse(timelines: Vec<TimelineSpan>, max_silent_days: usize) -> Vec<TimelineSpan> {
    timelines
        .into_iter()
        .filter(|t| longest_silence(t) <= max_silent_days)
        .collect()
}

/// Uniformly picks one timeline per user. Users are visited in id order and
/// timelines keep their input order, so the pick is a function of the seed.
pub fn sample_one_per_user(timelines: Vec<TimelineSpan>, seed: u64) -> Vec<TimelineSpan> {
    let mut by_user: BTreeMap<String, Vec<TimelineSpan>> = BTreeMap::new();
    for t in timelines {
        by_user.entry(t.user_id.clone()).or_default().push(t);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    by_user
        .into_values()
        .map(|mut group| {
            let pick = rng.random_range(0..group.len());
            group.swap_remove(pick)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};

    fn day(offset: u64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2017, 1, 1).unwrap() + Days::new(offset)
    }

    fn history(user: &str, days: &[u64]) -> EventHistory {
        let posts = days
            .iter()
            .enumerate()
            .map(|(i, &d)| Post {
                post_id: format!("{user}-{i}"),
                user_id: user.into(),
                timestamp: Utc.from_utc_datetime(&day(d).and_hms_opt(12, 0, 0).unwrap()),
                text: None,
                comments_received: 0,
            })
            .collect();
        EventHistory::new(user, posts).unwrap()
    }

    fn cmoc(offset: u64) -> CandidateMoC {
        CandidateMoC::new(day(offset), "m")
    }

    #[test]
    fn radius_seven_span() {
        let h = history("u", &[0, 100, 200]);
        let t = build_timelines(&h, &[cmoc(100)], 7).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!((t[0].start, t[0].end), (day(93), day(107)));
        assert_eq!((t[0].end - t[0].start).num_days(), 14);
    }

    #[test]
    fn boundary_inclusion() {
        let h = history("u", &[92, 93, 150]);
        let t = build_timelines(&h, &[cmoc(100)], 7).unwrap();
        let ids: Vec<_> = t[0].posts.iter().map(|p| p.post_id.as_str()).collect();
        assert_eq!(ids, ["u-1"]);
    }

    #[test]
    fn build_preconditions() {
        let h = history("u", &[0, 10]);
        assert!(matches!(
            build_timelines(&h, &[cmoc(5), cmoc(5)], 7),
            Err(Error::DuplicateCandidate(_))
        ));
        assert!(build_timelines(&h, &[cmoc(5)], 0).is_err());
        assert!(build_timelines(&h, &[cmoc(5)], -3).is_err());
    }

    #[test]
    fn overlapping_spans_allowed() {
        let h = history("u", &(0..30).collect::<Vec<_>>());
        let t = build_timelines(&h, &[cmoc(10), cmoc(12)], 7).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].post_count(), 15);
        assert_eq!(t[1].post_count(), 15);
    }

    fn timeline_with_posts(n: usize) -> TimelineSpan {
        let h = history("u", &vec![50; n]);
        build_timelines(&h, &[cmoc(50)], 7).unwrap().remove(0)
    }

    #[test]
    fn post_count_filter_bounds() {
        let ts = vec![
            timeline_with_posts(9),
            timeline_with_posts(10),
            timeline_with_posts(150),
            timeline_with_posts(151),
        ];
        let kept: Vec<usize> = filter_timelines(ts, DEFAULT_MIN_POSTS, DEFAULT_MAX_POSTS)
            .unwrap()
            .iter()
            .map(TimelineSpan::post_count)
            .collect();
        assert_eq!(kept, vec![10, 150]);
        assert!(filter_timelines(vec![], 5, 4).is_err());
    }

    #[test]
    fn sparse_filter() {
        let h = history("u", &[0, 1, 2, 10, 11, 12, 13, 14]);
        let t = build_timelines(&h, &[cmoc(7)], 7).unwrap();
        assert_eq!(longest_silence(&t[0]), 7);
        assert_eq!(filter_sparse(t.clone(), 7).len(), 1);
        assert!(filter_sparse(t, 6).is_empty());
    }

    #[test]
    fn one_per_user() {
        let a = history("a", &[10, 20, 30]);
        let b = history("b", &[10]);
        let mut ts = build_timelines(&a, &[cmoc(10), cmoc(20), cmoc(30)], 7).unwrap();
        ts.extend(build_timelines(&b, &[cmoc(10)], 7).unwrap());
        let picked = sample_one_per_user(ts.clone(), 3);
        assert_eq!(picked.len(), 2);
        assert_eq!(picked.iter().filter(|t| t.user_id == "a").count(), 1);
        assert_eq!(picked, sample_one_per_user(ts.clone(), 3));
        let centers: BTreeSet<NaiveDate> = (0..50)
            .map(|s| sample_one_per_user(ts.clone(), s)[0].center)
            .collect();
        assert_eq!(centers.len(), 3, "sampling never varies");
        assert!(sample_one_per_user(vec![], 1).is_empty());
    }

    #[test]
    fn record_round_trip() {
        let h = history("u", &[1, 3, 5, 8]);
        let t = build_timelines(&h, &[cmoc(4)], 3).unwrap().remove(0);
        let back = TimelineSpan::from_record(&t.to_record(), &h).unwrap();
        assert_eq!(back, t);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn spans_contain_their_posts_and_filtering_is_monotone(
                post_days in prop::collection::vec(0u64..120, 1..200),
                centers in prop::collection::btree_set(0u64..120, 0..20),
                radius in 1i64..15,
                (lo, hi) in (0usize..20, 20usize..60),
                shrink in 0usize..10,
            ) {
                let h = history("u", &post_days);
                let cmocs: Vec<_> = centers.iter().map(|&c| cmoc(c)).collect();
                let ts = build_timelines(&h, &cmocs, radius).unwrap();
                prop_assert_eq!(ts.len(), cmocs.len());
                for t in &ts {
                    prop_assert_eq!((t.end - t.start).num_days(), 2 * radius);
                    for p in &t.posts {
                        prop_assert!(t.start <= p.day() && p.day() <= t.end);
                    }
                }
                prop_assume!(lo + shrink <= hi - shrink);
                let wide = filter_timelines(ts.clone(), lo, hi).unwrap();
                let narrow = filter_timelines(ts, lo + shrink, hi - shrink).unwrap();
                prop_assert!(narrow.len() <= wide.len());
                for t in &narrow {
                    prop_assert!(wide.contains(t));
                }
            }
        }
    }
}
