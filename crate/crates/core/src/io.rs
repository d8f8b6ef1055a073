//! Line-oriented file formats: posts, annotations, timelines, candidate days and
//! per-post scores, all as JSON Lines.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, SecondsFormat, Timelike, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EventHistory, GroundTruthAnnotation, Post};

/// Parses every non-blank line of `reader` as a `T`. Errors carry 1-based line numbers.
pub fn read_jsonl<T: DeserializeOwned, R: Read>(reader: R) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Record {
            line: lineno,
            message: e.to_string(),
        })?;
        out.push((lineno, rec));
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a, W: Write>(
    mut writer: W,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    for rec in records {
        serde_json::to_writer(&mut writer, rec).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostRecord {
    pub post_id: String,
    pub user_id: String,
    pub timestamp: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default)]
    pub comments_received: u64,
}

impl From<&Post> for PostRecord {
    fn from(p: &Post) -> Self {
        Self {
            post_id: p.post_id.clone(),
            user_id: p.user_id.clone(),
            timestamp: p.timestamp.to_rfc3339_opts(SecondsFormat::Secs, true),
            text: p.text.clone(),
            comments_received: p.comments_received,
        }
    }
}

/// Timestamps are RFC 3339; sub-second precision is dropped.
pub fn parse_timestamp(raw: &str) -> std::result::Result<DateTime<Utc>, String> {
    let ts = DateTime::parse_from_rfc3339(raw)
        .map_err(|e| format!("unparseable timestamp {raw:?}: {e}"))?
        .with_timezone(&Utc);
    Ok(ts.with_nanosecond(0).unwrap_or(ts))
}

/// Reads posts-JSONL and groups posts into per-user histories keyed by user id.
pub fn read_histories<R: Read>(reader: R) -> Result<BTreeMap<String, EventHistory>> {
    let mut by_user: BTreeMap<String, Vec<Post>> = BTreeMap::new();
    for (line, rec) in read_jsonl::<PostRecord, _>(reader)? {
        let timestamp =
            parse_timestamp(&rec.timestamp).map_err(|message| Error::Record { line, message })?;
        by_user.entry(rec.user_id.clone()).or_default().push(Post {
            post_id: rec.post_id,
            user_id: rec.user_id,
            timestamp,
            text: rec.text,
            comments_received: rec.comments_received,
        });
    }
    by_user
        .into_iter()
        .map(|(user, posts)| EventHistory::new(user.clone(), posts).map(|h| (user, h)))
        .collect()
}

pub fn ingest_histories(path: impl AsRef<Path>) -> Result<BTreeMap<String, EventHistory>> {
    read_histories(File::open(path)?)
}

pub fn write_histories<'a, W: Write>(
    writer: W,
    histories: impl IntoIterator<Item = &'a EventHistory>,
) -> Result<()> {
    let records: Vec<PostRecord> = histories
        .into_iter()
        .flat_map(|h| h.posts().iter().map(PostRecord::from))
        .collect();
    write_jsonl(writer, &records)
}

pub fn read_annotations<R: Read>(reader: R) -> Result<Vec<GroundTruthAnnotation>> {
    Ok(read_jsonl(reader)?.into_iter().map(|(_, a)| a).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineRecord {
    pub timeline_id: String,
    pub user_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<NaiveDate>,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub post_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CmocRecord {
    pub user_id: String,
    pub day: NaiveDate,
    pub method_id: String,
    /// Present for seeded detectors; evaluation averages over seeds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}
