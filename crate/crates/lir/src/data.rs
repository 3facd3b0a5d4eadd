//! Dataset ingestion and the synthetic topic-drift generator.
//!
//! Two input formats are accepted: tab-separated with a header line, and
//! JSON-lines. In TSV, columns beyond the required five become attributes
//! under their header names (MovieLens-style exports); JSONL records carry
//! an explicit `attributes` object or pair list.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::stream::Behavior;

/// One parsed interaction row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    pub rating: u8,
    pub timestamp: u64,
    pub title: String,
    pub attributes: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LabeledRecord {
    pub record: InteractionRecord,
    pub label: u8,
}

impl LabeledRecord {
    pub fn to_behavior(&self) -> Behavior {
        Behavior {
            user_id: self.record.user_id.clone(),
            item_id: self.record.item_id.clone(),
            title: self.record.title.clone(),
            attributes: self.record.attributes.clone(),
            rating: Some(self.record.rating),
            timestamp: self.record.timestamp,
        }
    }
}

/// Positive-label rule: `rating > threshold`, or `rating == positive_only`
/// when the dataset treats only one rating as positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LabelRule {
    pub threshold: u8,
    pub positive_only: Option<u8>,
}

impl Default for LabelRule {
    fn default() -> Self {
        LabelRule {
            threshold: 3,
            positive_only: None,
        }
    }
}

impl LabelRule {
    pub fn label(&self, rating: u8) -> u8 {
        let positive = match self.positive_only {
            Some(p) => rating == p,
            None => rating > self.threshold,
        };
        positive as u8
    }
}

/// A labeled dataset, sorted by timestamp (ties keep input order).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset {
    pub records: Vec<LabeledRecord>,
    /// Optional profile description per user.
    pub profiles: BTreeMap<String, String>,
    /// Dataset-specific factor words for the prompts.
    pub factors: Vec<String>,
}

impl Dataset {
    pub fn from_records(mut records: Vec<LabeledRecord>, profiles: BTreeMap<String, String>) -> Self {
        records.sort_by_key(|r| r.record.timestamp);
        let mut factors = Vec::new();
        let mut seen = BTreeSet::new();
        for r in &records {
            for (name, _) in &r.record.attributes {
                if seen.insert(name.clone()) {
                    factors.push(name.clone());
                }
            }
        }
        if factors.is_empty() {
            factors.push("general interest".to_string());
        }
        Dataset {
            records,
            profiles,
            factors,
        }
    }

    pub fn user_ids(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.records.iter().map(|r| r.record.user_id.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn user_count(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.record.user_id.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Drops users and items with fewer than `min` interactions (one pass
    /// each, users first).
    pub fn filter_min_interactions(mut self, min: usize) -> Self {
        if min <= 1 {
            return self;
        }
        let mut user_counts: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &self.records {
            *user_counts.entry(r.record.user_id.as_str()).or_default() += 1;
        }
        let keep_users: BTreeSet<String> = user_counts
            .iter()
            .filter(|(_, c)| **c >= min)
            .map(|(u, _)| u.to_string())
            .collect();
        self.records.retain(|r| keep_users.contains(&r.record.user_id));
        let mut item_counts: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &self.records {
            *item_counts.entry(r.record.item_id.as_str()).or_default() += 1;
        }
        let keep_items: BTreeSet<String> = item_counts
            .iter()
            .filter(|(_, c)| **c >= min)
            .map(|(i, _)| i.to_string())
            .collect();
        self.records.retain(|r| keep_items.contains(&r.record.item_id));
        self
    }
}

const REQUIRED_COLUMNS: [&str; 5] = ["user_id", "item_id", "rating", "timestamp", "title"];

fn validate_record(rec: &InteractionRecord, line: usize) -> Result<()> {
    if rec.user_id.is_empty() {
        return Err(Error::data(line, "empty user_id"));
    }
    if rec.item_id.is_empty() {
        return Err(Error::data(line, "empty item_id"));
    }
    if rec.title.is_empty() {
        return Err(Error::data(line, "empty title"));
    }
    if !(1..=5).contains(&rec.rating) {
        return Err(Error::data(line, format!("rating {} out of range 1..=5", rec.rating)));
    }
    Ok(())
}

/// Parses tab-separated content. The first line is a header declaring the
/// schema; unknown columns become attributes in header order.
pub fn parse_tsv(bytes: &[u8], rule: &LabelRule) -> Result<Vec<LabeledRecord>> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::Data { line: None, message: "input is not valid UTF-8".into() })?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Data { line: None, message: "empty file".into() })?;
    let columns: Vec<&str> = header.split('\t').map(str::trim).collect();
    for required in REQUIRED_COLUMNS {
        if !columns.contains(&required) {
            return Err(Error::data(1, format!("header is missing the `{required}` column")));
        }
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != columns.len() {
            return Err(Error::data(
                line_no,
                format!("expected {} columns, found {}", columns.len(), cells.len()),
            ));
        }
        let mut rec = InteractionRecord {
            user_id: String::new(),
            item_id: String::new(),
            rating: 0,
            timestamp: 0,
            title: String::new(),
            attributes: Vec::new(),
        };
        for (col, cell) in columns.iter().zip(&cells) {
            let cell = cell.trim();
            match *col {
                "user_id" => rec.user_id = cell.to_string(),
                "item_id" => rec.item_id = cell.to_string(),
                "title" => rec.title = cell.to_string(),
                "rating" => {
                    rec.rating = cell
                        .parse()
                        .map_err(|_| Error::data(line_no, format!("bad rating `{cell}`")))?
                }
                "timestamp" => {
                    rec.timestamp = cell
                        .parse()
                        .map_err(|_| Error::data(line_no, format!("bad timestamp `{cell}`")))?
                }
                other => {
                    if !cell.is_empty() {
                        rec.attributes.push((other.to_string(), cell.to_string()));
                    }
                }
            }
        }
        validate_record(&rec, line_no)?;
        let label = rule.label(rec.rating);
        records.push(LabeledRecord { record: rec, label });
    }
    if records.is_empty() {
        return Err(Error::Data { line: None, message: "no records in file".into() });
    }
    Ok(records)
}

/// Parses JSON-lines content. Attributes may be an object (sorted by key)
/// or an explicit `[name, value]` pair array.
pub fn parse_jsonl(bytes: &[u8], rule: &LabelRule) -> Result<Vec<LabeledRecord>> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::Data { line: None, message: "input is not valid UTF-8".into() })?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| Error::data(line_no, format!("invalid JSON: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::data(line_no, "line is not a JSON object"))?;
        let get_str = |key: &str| -> Result<String> {
            obj.get(key)
                .and_then(|v| v.as_str())
                .map(String::from)
                .ok_or_else(|| Error::data(line_no, format!("missing string field `{key}`")))
        };
        let get_u64 = |key: &str| -> Result<u64> {
            obj.get(key)
                .and_then(|v| v.as_u64())
                .ok_or_else(|| Error::data(line_no, format!("missing non-negative integer `{key}`")))
        };
        let rating = get_u64("rating")?;
        if rating > u8::MAX as u64 {
            return Err(Error::data(line_no, format!("rating {rating} out of range")));
        }
        let mut attributes = Vec::new();
        match obj.get("attributes") {
            None | Some(serde_json::Value::Null) => {}
            Some(serde_json::Value::Object(map)) => {
                let mut pairs: Vec<(&String, &serde_json::Value)> = map.iter().collect();
                pairs.sort_by_key(|(k, _)| k.as_str().to_string());
                for (k, v) in pairs {
                    let text = v
                        .as_str()
                        .map(String::from)
                        .unwrap_or_else(|| v.to_string());
                    attributes.push((k.clone(), text));
                }
            }
            Some(serde_json::Value::Array(items)) => {
                for item in items {
                    let pair = item.as_array().filter(|p| p.len() == 2).ok_or_else(|| {
                        Error::data(line_no, "attribute entries must be [name, value] pairs")
                    })?;
                    let name = pair[0]
                        .as_str()
                        .ok_or_else(|| Error::data(line_no, "attribute name must be a string"))?;
                    let val = pair[1]
                        .as_str()
                        .map(String::from)
                        .unwrap_or_else(|| pair[1].to_string());
                    attributes.push((name.to_string(), val));
                }
            }
            Some(_) => {
                return Err(Error::data(line_no, "`attributes` must be an object or pair array"))
            }
        }
        let rec = InteractionRecord {
            user_id: get_str("user_id")?,
            item_id: get_str("item_id")?,
            rating: rating as u8,
            timestamp: get_u64("timestamp")?,
            title: get_str("title")?,
            attributes,
        };
        validate_record(&rec, line_no)?;
        let label = rule.label(rec.rating);
        records.push(LabeledRecord { record: rec, label });
    }
    if records.is_empty() {
        return Err(Error::Data { line: None, message: "no records in file".into() });
    }
    Ok(records)
}

/// Loads a dataset file, sniffing the format from the first non-space byte
/// (`{` ⇒ JSON-lines, anything else ⇒ TSV).
pub fn load_interactions(path: &Path, rule: &LabelRule) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    let first = bytes.iter().find(|b| !b.is_ascii_whitespace());
    let records = match first {
        Some(b'{') => parse_jsonl(&bytes, rule)?,
        Some(_) => parse_tsv(&bytes, rule)?,
        None => return Err(Error::Data { line: None, message: "empty file".into() }),
    };
    Ok(Dataset::from_records(records, BTreeMap::new()))
}

/// Writes a dataset as TSV with attribute columns, invertible by
/// [`parse_tsv`].
pub fn write_tsv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut attr_names = Vec::new();
    let mut seen = BTreeSet::new();
    for r in &dataset.records {
        for (name, _) in &r.record.attributes {
            if seen.insert(name.clone()) {
                attr_names.push(name.clone());
            }
        }
    }
    let mut out = String::new();
    out.push_str(&REQUIRED_COLUMNS.join("\t"));
    for name in &attr_names {
        out.push('\t');
        out.push_str(name);
    }
    out.push('\n');
    for r in &dataset.records {
        let rec = &r.record;
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}",
            rec.user_id, rec.item_id, rec.rating, rec.timestamp, rec.title
        ));
        for name in &attr_names {
            out.push('\t');
            if let Some((_, v)) = rec.attributes.iter().find(|(n, _)| n == name) {
                out.push_str(v);
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Ground truth for one synthetic user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SyntheticUser {
    pub user_id: String,
    pub topic_before: String,
    pub topic_after: String,
    /// Behavior index at which the latent topic flips.
    pub drift_index: usize,
}

/// Topic-drift stream generator. Each user follows one latent topic for the
/// first half of their stream and a different one afterwards. Item exposure
/// is uniform over topics, so topic preference is observable only through
/// the labels; ratings are high with probability 0.9 on a topic match and
/// 0.1 otherwise. Item titles carry a machine-readable `topic:<name>` tag.
pub fn generate_synthetic_stream_with_truth(
    users: usize,
    behaviors_per_user: usize,
    topics: &[String],
    seed: u64,
) -> Result<(Dataset, Vec<SyntheticUser>)> {
    if topics.len() < 2 {
        return Err(Error::Config("need at least 2 topics".into()));
    }
    if users == 0 || behaviors_per_user == 0 {
        return Err(Error::Config("need at least 1 user and 1 behavior".into()));
    }
    let items_per_topic = 25usize;
    let rule = LabelRule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(users * behaviors_per_user);
    let mut profiles = BTreeMap::new();
    let mut truth = Vec::with_capacity(users);

    for u in 0..users {
        let user_id = format!("user{u:03}");
        let a = rng.random_range(0..topics.len());
        let mut b = rng.random_range(0..topics.len());
        while b == a {
            b = rng.random_range(0..topics.len());
        }
        let drift_index = behaviors_per_user / 2;
        truth.push(SyntheticUser {
            user_id: user_id.clone(),
            topic_before: topics[a].clone(),
            topic_after: topics[b].clone(),
            drift_index,
        });
        profiles.insert(user_id.clone(), format!("synthetic profile of {user_id}"));

        for i in 0..behaviors_per_user {
            let latent = if i < drift_index { a } else { b };
            let exposed = rng.random_range(0..topics.len());
            let item_no = rng.random_range(0..items_per_topic);
            let matched = exposed == latent;
            let p_high = if matched { 0.95 } else { 0.05 };
            let rating = if rng.random_range(0.0..1.0) < p_high { 5 } else { 2 };
            let topic = &topics[exposed];
            let record = InteractionRecord {
                user_id: user_id.clone(),
                item_id: format!("{topic}-{item_no:02}"),
                rating,
                // global interleave: every user drifts at the same wall time
                timestamp: (i as u64) * 1000 + (u as u64 % 1000),
                title: format!("Story {item_no:02} about topic:{topic}"),
                attributes: vec![("topic".to_string(), topic.clone())],
            };
            let label = rule.label(rating);
            records.push(LabeledRecord { record, label });
        }
    }

    Ok((Dataset::from_records(records, profiles), truth))
}

/// See [`generate_synthetic_stream_with_truth`]; this drops the ground
/// truth.
pub fn generate_synthetic_stream(
    users: usize,
    behaviors_per_user: usize,
    topics: &[String],
    seed: u64,
) -> Result<Dataset> {
    generate_synthetic_stream_with_truth(users, behaviors_per_user, topics, seed).map(|(d, _)| d)
}

pub fn default_topics() -> Vec<String> {
    ["sports", "jazz", "scifi", "cooking"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}
