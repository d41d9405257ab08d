//! Event-sourced dataset of labeled frames.
//!
//! The log is the only source of truth; a manifest at version `v` is the fold
//! of events `1..=v` through [`Manifest::apply`].

mod export;
mod log;
pub mod split;

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::PathBuf;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::align::ReviewState;
use crate::digest::ContentId;
use crate::qc::Verdict;
use crate::store::StoreError;
use crate::taxon::Season;

pub use export::ExportSummary;
pub use log::DatasetStore;
pub use split::{Split, SplitPolicy};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("event id {got} is stale; next id is {expected}")]
    StaleEventId { expected: u64, got: u64 },
    #[error("invalid event: {0}")]
    Validation(String),
    #[error("unknown batch {0}")]
    UnknownBatch(String),
    #[error("unknown taxon {0}")]
    UnknownTaxon(String),
    #[error("unknown dataset version {0}")]
    UnknownVersion(u64),
    #[error("bad split ratios: {0}")]
    BadRatios(String),
    #[error("export root {0} exists and is not empty")]
    ExportTargetNotEmpty(PathBuf),
    #[error("storage full")]
    StorageFull,
    #[error("event log corrupt at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("i/o error: {0}")]
    Io(io::Error),
}

impl From<io::Error> for DatasetError {
    fn from(e: io::Error) -> Self {
        match StoreError::from(e) {
            StoreError::StorageFull => DatasetError::StorageFull,
            StoreError::Io(e) => DatasetError::Io(e),
            other => DatasetError::Store(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub video_id: ContentId,
    pub harvester_id: String,
    pub site: String,
    pub season: Season,
    pub capture_date: NaiveDate,
}

/// A frame as submitted in an `add_batch` event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewEntry {
    pub frame_id: ContentId,
    pub taxon_id: String,
    pub provenance: Provenance,
    pub qc_verdict: Verdict,
    pub review_state: ReviewState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_utterance_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    AddBatch { entries: Vec<NewEntry> },
    QuarantineBatch { reason: String },
    RelabelBatch { new_taxon: String },
    ApproveBatch {},
    SetSplitPolicy(SplitPolicy),
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::AddBatch { .. } => "add_batch",
            EventBody::QuarantineBatch { .. } => "quarantine_batch",
            EventBody::RelabelBatch { .. } => "relabel_batch",
            EventBody::ApproveBatch {} => "approve_batch",
            EventBody::SetSplitPolicy(_) => "set_split_policy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEvent {
    pub event_id: u64,
    #[serde(flatten)]
    pub body: EventBody,
    pub actor: String,
    pub timestamp: DateTime<Utc>,
    /// Empty for `set_split_policy`.
    pub batch_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub frame_id: ContentId,
    pub taxon_id: String,
    pub provenance: Provenance,
    pub qc_verdict: Verdict,
    pub review_state: ReviewState,
    pub split: Split,
    pub quarantined: bool,
    pub quarantine_reason: Option<String>,
    pub batch_id: String,
}

impl ManifestEntry {
    /// Counted in class totals and balance reports.
    pub fn counts(&self) -> bool {
        !self.quarantined && self.qc_verdict == Verdict::Pass
    }

    /// May hold a train/val/test split.
    pub fn splittable(&self) -> bool {
        self.counts() && self.review_state.is_expert_approved()
    }

    /// Written by an export.
    pub fn exportable(&self) -> bool {
        self.splittable() && self.split != Split::Unassigned
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u64,
    #[serde(with = "entry_list")]
    pub entries: BTreeMap<ContentId, ManifestEntry>,
    pub class_counts: BTreeMap<String, u64>,
    pub split_policy: Option<SplitPolicy>,
    pub batches: BTreeSet<String>,
}

/// Entries serialize as a list ordered by frame id.
mod entry_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<ContentId, ManifestEntry>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.values())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<ContentId, ManifestEntry>, D::Error> {
        let v: Vec<ManifestEntry> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|e| (e.frame_id.clone(), e)).collect())
    }
}

/// Sorted-key compact JSON with a trailing newline.
pub fn canonical_json<T: Serialize>(value: &T) -> Vec<u8> {
    let v = serde_json::to_value(value).expect("dataset types serialize");
    let mut out = serde_json::to_vec(&v).expect("value serializes");
    out.push(b'\n');
    out
}

impl Manifest {
    pub fn to_canonical_json(&self) -> Vec<u8> {
        canonical_json(self)
    }

    pub fn batch_members(&self, batch_id: &str) -> impl Iterator<Item = &ManifestEntry> {
        let b = batch_id.to_string();
        self.entries.values().filter(move |e| e.batch_id == b)
    }

    /// Checks `event` against the current state without changing it.
    pub fn validate(&self, event: &DatasetEvent, taxa: &BTreeSet<String>) -> Result<(), DatasetError> {
        if event.event_id != self.version + 1 {
            return Err(DatasetError::StaleEventId {
                expected: self.version + 1,
                got: event.event_id,
            });
        }
        let needs_batch = !matches!(event.body, EventBody::SetSplitPolicy(_));
        if needs_batch && event.batch_id.trim().is_empty() {
            return Err(DatasetError::Validation("batch_id is empty".into()));
        }
        let known = |b: &str| {
            if self.batches.contains(b) {
                Ok(())
            } else {
                Err(DatasetError::UnknownBatch(b.to_string()))
            }
        };
        match &event.body {
            EventBody::AddBatch { entries } => {
                let mut seen = BTreeSet::new();
                for e in entries {
                    if !seen.insert(&e.frame_id) {
                        return Err(DatasetError::Validation(format!("frame {} listed twice", e.frame_id)));
                    }
                    if !taxa.contains(&e.taxon_id) {
                        return Err(DatasetError::UnknownTaxon(e.taxon_id.clone()));
                    }
                    if e.review_state == ReviewState::Rejected {
                        return Err(DatasetError::Validation(format!("frame {} has no label", e.frame_id)));
                    }
                }
            }
            EventBody::QuarantineBatch { reason } => {
                known(&event.batch_id)?;
                if reason.trim().is_empty() {
                    return Err(DatasetError::Validation("quarantine reason is empty".into()));
                }
            }
            EventBody::RelabelBatch { new_taxon } => {
                known(&event.batch_id)?;
                if !taxa.contains(new_taxon) {
                    return Err(DatasetError::UnknownTaxon(new_taxon.clone()));
                }
            }
            EventBody::ApproveBatch {} => known(&event.batch_id)?,
            EventBody::SetSplitPolicy(p) => p.validate()?,
        }
        Ok(())
    }

    /// Applies a validated event.
    pub fn apply(&mut self, event: &DatasetEvent) {
        let batch = event.batch_id.as_str();
        match &event.body {
            EventBody::AddBatch { entries } => {
                self.batches.insert(batch.to_string());
                for n in entries {
                    let split = match self.entries.get(&n.frame_id) {
                        Some(old) if n.review_state.is_expert_approved() => old.split,
                        _ => Split::Unassigned,
                    };
                    self.entries.insert(
                        n.frame_id.clone(),
                        ManifestEntry {
                            frame_id: n.frame_id.clone(),
                            taxon_id: n.taxon_id.clone(),
                            provenance: n.provenance.clone(),
                            qc_verdict: n.qc_verdict,
                            review_state: n.review_state,
                            split,
                            quarantined: false,
                            quarantine_reason: None,
                            batch_id: batch.to_string(),
                        },
                    );
                }
            }
            EventBody::QuarantineBatch { reason } => {
                for e in self.entries.values_mut().filter(|e| e.batch_id == batch) {
                    e.quarantined = true;
                    e.quarantine_reason = Some(reason.clone());
                    e.split = Split::Unassigned;
                }
            }
            EventBody::RelabelBatch { new_taxon } => {
                for e in self.entries.values_mut().filter(|e| e.batch_id == batch) {
                    e.taxon_id = new_taxon.clone();
                    e.review_state = ReviewState::ExpertCorrected;
                    e.quarantined = false;
                    e.quarantine_reason = None;
                }
            }
            EventBody::ApproveBatch {} => {
                for e in self.entries.values_mut().filter(|e| e.batch_id == batch) {
                    if e.review_state == ReviewState::MachineProposed {
                        e.review_state = ReviewState::ExpertConfirmed;
                    }
                }
            }
            EventBody::SetSplitPolicy(policy) => {
                split::assign(&mut self.entries, policy);
                self.split_policy = Some(policy.clone());
            }
        }
        for e in self.entries.values_mut() {
            if !e.splittable() {
                e.split = Split::Unassigned;
            }
        }
        self.version = event.event_id;
        self.class_counts = recount(self.entries.values());
    }

    pub fn fold<'a>(events: impl IntoIterator<Item = &'a DatasetEvent>) -> Self {
        let mut m = Manifest::default();
        for e in events {
            m.apply(e);
        }
        m
    }
}

pub fn recount<'a>(entries: impl IntoIterator<Item = &'a ManifestEntry>) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for e in entries.into_iter().filter(|e| e.counts()) {
        *counts.entry(e.taxon_id.clone()).or_insert(0) += 1;
    }
    counts
}

/// One step in a frame's label history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelChange {
    pub event_id: u64,
    pub kind: String,
    pub actor: String,
    pub timestamp: DateTime<Utc>,
    pub batch_id: String,
    pub taxon_id: String,
    pub review_state: ReviewState,
    pub quarantined: bool,
}
