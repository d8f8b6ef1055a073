//! Candidate moment-of-change detection over per-user posting histories,
//! candidate timeline extraction, and evaluation of timeline-selection methods
//! against annotated ground truth.
//!
//! Pipeline: histories are reduced to daily counts, detectors ([`bocpd`],
//! [`anomaly`], [`baselines`]) emit candidate days, [`timeline`] cuts
//! fixed-radius spans around them, and [`evaluation`] scores candidate sets
//! with margin-matched P/R/F1, covering and Medoid Votes.

pub mod anomaly;
pub mod baselines;
pub mod bocpd;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod synth;
pub mod timeline;

pub use error::{Error, Result};
pub use model::{
    AnnotatedTimeline, CandidateMoC, CountSource, DailyCountSeries, EventHistory,
    GroundTruthAnnotation, MocLabel, Post,
};
