//! Glue between the on-disk formats and the detectors / evaluation code.

use std::collections::{BTreeMap, HashSet};

use crate::anomaly::{detect_anomalies, AnomalyConfig, AnomalyMode};
use crate::baselines::{
    detect_every_day, detect_keywords, detect_random_single_day, Lexicon, RANDOM_BASELINE_SEEDS,
    RANDOM_METHOD,
};
use crate::bocpd::{detect_bocpd, BocpdPreset, PoissonGammaPrior};
use crate::error::{Error, Result};
use crate::evaluation::{MethodRuns, UserDays};
use crate::io::{CmocRecord, TimelineRecord};
use crate::model::{
    aggregate_annotations, AnnotatedTimeline, CandidateMoC, CountSource, EventHistory,
    GroundTruthAnnotation,
};
use crate::timeline::{
    build_timelines, filter_sparse, filter_timelines, sample_one_per_user, TimelineSpan,
};

#[derive(Debug, Clone, PartialEq)]
pub enum DetectorSpec {
    Bocpd {
        prior: PoissonGammaPrior,
        method_id: String,
    },
    Anomaly(AnomalyConfig),
    Keywords(Lexicon),
    Random {
        seeds: Vec<u64>,
    },
    EveryDay,
}

impl DetectorSpec {
    pub fn preset(preset: BocpdPreset) -> Self {
        DetectorSpec::Bocpd {
            prior: preset.prior(),
            method_id: preset.method_id().to_string(),
        }
    }

    pub fn random_baseline() -> Self {
        DetectorSpec::Random {
            seeds: RANDOM_BASELINE_SEEDS.collect(),
        }
    }

    pub fn method_id(&self) -> String {
        match self {
            DetectorSpec::Bocpd { method_id, .. } => method_id.clone(),
            DetectorSpec::Anomaly(cfg) => cfg.method_id(),
            DetectorSpec::Keywords(_) => crate::baselines::KEYWORDS_METHOD.to_string(),
            DetectorSpec::Random { .. } => RANDOM_METHOD.to_string(),
            DetectorSpec::EveryDay => crate::baselines::EVERY_DAY_METHOD.to_string(),
        }
    }
}

/// Both presets, anomaly detection in every mode over posts and comments,
/// keywords when a lexicon is given, and the two naive baselines.
pub fn standard_detectors(lexicon: Option<Lexicon>) -> Vec<DetectorSpec> {
    let mut out = vec![
        DetectorSpec::preset(BocpdPreset::One),
        DetectorSpec::preset(BocpdPreset::Two),
    ];
    for source in [CountSource::Posts, CountSource::Comments] {
        for mode in [AnomalyMode::High, AnomalyMode::Low, AnomalyMode::HighAndLow] {
            out.push(DetectorSpec::Anomaly(AnomalyConfig {
                source,
                mode,
                ..AnomalyConfig::default()
            }));
        }
    }
    if let Some(lex) = lexicon {
        out.push(DetectorSpec::Keywords(lex));
    }
    out.push(DetectorSpec::random_baseline());
    out.push(DetectorSpec::EveryDay);
    out
}

fn records(
    user: &str,
    cmocs: Vec<CandidateMoC>,
    seed: Option<u64>,
) -> impl Iterator<Item = CmocRecord> + '_ {
    cmocs.into_iter().map(move |c| CmocRecord {
        user_id: user.to_string(),
        day: c.day,
        method_id: c.method_id,
        seed,
    })
}

/// Candidate records for one user, sorted by (seed, day).
pub fn detect_user(spec: &DetectorSpec, history: &EventHistory) -> Result<Vec<CmocRecord>> {
    let user = history.user_id();
    if history.posts().is_empty()
        && !matches!(spec, DetectorSpec::EveryDay | DetectorSpec::Random { .. })
    {
        return Ok(Vec::new());
    }
    let out: Vec<CmocRecord> = match spec {
        DetectorSpec::Bocpd { prior, method_id } => {
            records(user, detect_bocpd(history, prior, method_id)?, None).collect()
        }
        DetectorSpec::Anomaly(cfg) => {
            records(user, detect_anomalies(history, cfg)?, None).collect()
        }
        DetectorSpec::Keywords(lex) => {
            records(user, detect_keywords(history, lex)?, None).collect()
        }
        DetectorSpec::Random { seeds } => seeds
            .iter()
            .flat_map(|&s| {
                records(user, detect_random_single_day(history, s), Some(s)).collect::<Vec<_>>()
            })
            .collect(),
        DetectorSpec::EveryDay => records(user, detect_every_day(history), None).collect(),
    };
    Ok(out)
}

/// Runs one detector over every history, in user-id order.
pub fn detect_all(
    spec: &DetectorSpec,
    histories: &BTreeMap<String, EventHistory>,
) -> Result<Vec<CmocRecord>> {
    let mut out = Vec::new();
    for h in histories.values() {
        out.extend(detect_user(spec, h)?);
    }
    Ok(out)
}

/// Groups candidate records into per-method runs (one run per seed).
pub fn methods_from_records(records: &[CmocRecord]) -> Vec<MethodRuns> {
    let mut by_method: BTreeMap<&str, BTreeMap<Option<u64>, UserDays>> = BTreeMap::new();
    for r in records {
        by_method
            .entry(r.method_id.as_str())
            .or_default()
            .entry(r.seed)
            .or_default()
            .entry(r.user_id.clone())
            .or_default()
            .push(r.day);
    }
    by_method
        .into_iter()
        .map(|(m, runs)| MethodRuns {
            method_id: m.to_string(),
            runs: runs
                .into_values()
                .map(|mut run| {
                    for days in run.values_mut() {
                        days.sort_unstable();
                        days.dedup();
                    }
                    run
                })
                .collect(),
        })
        .collect()
}

/// Resolves stored timelines against histories and aggregates their annotations.
pub fn annotated_timelines(
    histories: &BTreeMap<String, EventHistory>,
    timelines: &[TimelineRecord],
    annotations: &[GroundTruthAnnotation],
) -> Result<Vec<AnnotatedTimeline>> {
    let known: HashSet<&str> = timelines.iter().map(|t| t.timeline_id.as_str()).collect();
    if let Some(a) = annotations
        .iter()
        .find(|a| !known.contains(a.timeline_id.as_str()))
    {
        return Err(Error::invalid(format!(
            "annotation references unknown timeline {:?}",
            a.timeline_id
        )));
    }
    let mut by_timeline: BTreeMap<&str, Vec<GroundTruthAnnotation>> = BTreeMap::new();
    for a in annotations {
        by_timeline
            .entry(a.timeline_id.as_str())
            .or_default()
            .push(a.clone());
    }
    timelines
        .iter()
        .map(|rec| {
            let history = histories.get(&rec.user_id).ok_or_else(|| {
                Error::invalid(format!(
                    "timeline {} names unknown user {}",
                    rec.timeline_id, rec.user_id
                ))
            })?;
            let span = TimelineSpan::from_record(rec, history)?;
            let anns = by_timeline
                .get(rec.timeline_id.as_str())
                .map(Vec::as_slice)
                .unwrap_or(&[]);
            aggregate_annotations(&span, anns)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractConfig {
    pub radius_days: i64,
    pub min_posts: usize,
    pub max_posts: usize,
    pub max_silent_days: Option<usize>,
    /// Sample one surviving timeline per user (and method) with this seed.
    pub one_per_user_seed: Option<u64>,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            radius_days: i64::from(crate::timeline::DEFAULT_RADIUS_DAYS),
            min_posts: crate::timeline::DEFAULT_MIN_POSTS,
            max_posts: crate::timeline::DEFAULT_MAX_POSTS,
            max_silent_days: None,
            one_per_user_seed: None,
        }
    }
}

/// Detect output to candidate timelines: build, filter by post count (and
/// optionally sparsity), then optionally keep one per user. Seeded runs are
/// skipped; only unseeded detectors define a candidate set.
pub fn extract_timelines(
    histories: &BTreeMap<String, EventHistory>,
    cmocs: &[CmocRecord],
    config: &ExtractConfig,
) -> Result<Vec<TimelineSpan>> {
    let mut grouped: BTreeMap<&str, BTreeMap<&str, Vec<CandidateMoC>>> = BTreeMap::new();
    for r in cmocs.iter().filter(|r| r.seed.is_none()) {
        grouped
            .entry(r.method_id.as_str())
            .or_default()
            .entry(r.user_id.as_str())
            .or_default()
            .push(CandidateMoC::new(r.day, r.method_id.clone()));
    }
    let mut out = Vec::new();
    for users in grouped.into_values() {
        let mut method_spans = Vec::new();
        for (user, mut cands) in users {
            let history = histories
                .get(user)
                .ok_or_else(|| Error::invalid(format!("candidates name unknown user {user}")))?;
            cands.sort();
            cands.dedup();
            let spans = build_timelines(history, &cands, config.radius_days)?;
            let mut kept = filter_timelines(spans, config.min_posts, config.max_posts)?;
            if let Some(max) = config.max_silent_days {
                kept = filter_sparse(kept, max);
            }
            method_spans.extend(kept);
        }
        if let Some(seed) = config.one_per_user_seed {
            method_spans = sample_one_per_user(method_spans, seed);
        }
        out.extend(method_spans);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_corpus, AnnotationModel, CorpusSpec, Segment};

    fn corpus() -> crate::synth::SyntheticCorpus {
        generate_corpus(&CorpusSpec {
            seed: 3,
            users: 4,
            start_day: chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            segments: vec![
                Segment {
                    duration_days: 100,
                    rate: 1.0,
                },
                Segment {
                    duration_days: 100,
                    rate: 8.0,
                },
            ],
            annotation_model: AnnotationModel::default(),
            radius_days: 7,
            center_jitter_days: 2,
            background_timelines_per_user: 1,
        })
        .unwrap()
    }

    #[test]
    fn random_records_carry_seeds() {
        let c = corpus();
        let recs = detect_all(&DetectorSpec::random_baseline(), &c.histories).unwrap();
        assert_eq!(recs.len(), 4 * 100);
        let methods = methods_from_records(&recs);
        assert_eq!(methods.len(), 1);
        assert_eq!(methods[0].runs.len(), 100);
    }

    #[test]
    fn timelines_reload_with_annotations() {
        let c = corpus();
        let recs: Vec<TimelineRecord> = c
            .timeline_spans()
            .iter()
            .map(TimelineSpan::to_record)
            .collect();
        let back = annotated_timelines(&c.histories, &recs, &c.annotations).unwrap();
        assert_eq!(back, c.timelines);
    }

    #[test]
    fn unknown_timeline_annotation_rejected() {
        let c = corpus();
        let mut anns = c.annotations.clone();
        if let Some(a) = anns.first_mut() {
            a.timeline_id = "ghost".into();
        }
        let recs: Vec<TimelineRecord> = c
            .timeline_spans()
            .iter()
            .map(TimelineSpan::to_record)
            .collect();
        assert!(annotated_timelines(&c.histories, &recs, &anns).is_err());
    }

    #[test]
    fn extraction_filters_and_samples() {
        let c = corpus();
        let recs = detect_all(&DetectorSpec::preset(BocpdPreset::Two), &c.histories).unwrap();
        let all = extract_timelines(&c.histories, &recs, &ExtractConfig::default()).unwrap();
        assert!(all.iter().all(|t| (10..=150).contains(&t.post_count())));
        let one = extract_timelines(
            &c.histories,
            &recs,
            &ExtractConfig {
                one_per_user_seed: Some(1),
                ..ExtractConfig::default()
            },
        )
        .unwrap();
        let users: HashSet<&str> = one.iter().map(|t| t.user_id.as_str()).collect();
        assert_eq!(users.len(), one.len());
    }

    #[test]
    fn standard_detector_ids_are_unique() {
        let specs = standard_detectors(Some(Lexicon::from_phrases(["x"])));
        let ids: HashSet<String> = specs.iter().map(DetectorSpec::method_id).collect();
        assert_eq!(ids.len(), specs.len());
    }
}
