//! The twelve-step collection loop: tasks, transitions, payments, external
//! results and the expert review queue.

mod engine;
pub mod ledger;

use std::io;

use chrono::{DateTime, Utc};
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::digest::ContentId;

pub use engine::{Snapshot, WorkflowEngine, WorkflowEvent};
pub use ledger::LedgerEntry;

pub const STATE_NAMES: [&str; 12] = [
    "SelectPlantSpecies",
    "ContactLocalTeam",
    "SelectFieldSite",
    "CollectVideo",
    "SendVideo",
    "ExpertAssessment",
    "RemunerateLocalTeam",
    "VideoToImages",
    "ImagesToTrainingData",
    "RetrainClassifiers",
    "EvaluateResults",
    "UpdateCollection",
];

pub const FINAL_STATE: u8 = 12;

/// Rework edges in addition to forward-by-one.
pub const REWORK_EDGES: [(u8, u8); 2] = [(6, 4), (11, 4)];

pub fn state_name(state: u8) -> &'static str {
    STATE_NAMES.get(state.wrapping_sub(1) as usize).copied().unwrap_or("Unknown")
}

pub fn is_legal(from: u8, to: u8) -> bool {
    (1..FINAL_STATE).contains(&from) && to == from + 1 || REWORK_EDGES.contains(&(from, to))
}

#[derive(Debug, thiserror::Error)]
pub enum WorkflowError {
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("unknown taxon {0}")]
    UnknownTaxon(String),
    #[error("illegal transition {from} -> {to}")]
    IllegalTransition { from: u8, to: u8 },
    #[error("guard failed: {0}")]
    GuardFailed(String),
    #[error("task {task_id} is in state {state}, operation needs {needed}")]
    WrongState { task_id: String, state: u8, needed: String },
    #[error("bad amount: {0}")]
    BadAmount(String),
    #[error("unknown review item {0}")]
    UnknownItem(String),
    #[error("review item {0} is already resolved")]
    AlreadyResolved(String),
    #[error("invalid decision: {0}")]
    InvalidDecision(String),
    #[error("workflow log corrupt at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("storage full")]
    StorageFull,
    #[error("i/o error: {0}")]
    Io(io::Error),
}

impl From<io::Error> for WorkflowError {
    fn from(e: io::Error) -> Self {
        match crate::store::StoreError::from(e) {
            crate::store::StoreError::StorageFull => WorkflowError::StorageFull,
            crate::store::StoreError::Io(e) => WorkflowError::Io(e),
            other => WorkflowError::Io(io::Error::other(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub from_state: u8,
    pub to_state: u8,
    pub actor: String,
    pub timestamp: DateTime<Utc>,
    pub note: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultKind {
    TrainingReport,
    EvaluationReport,
}

impl ResultKind {
    pub fn required_state(self) -> u8 {
        match self {
            ResultKind::TrainingReport => 10,
            ResultKind::EvaluationReport => 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultReceipt {
    pub task_id: String,
    pub kind: ResultKind,
    pub document_id: ContentId,
    pub size_bytes: u64,
    pub actor: String,
    pub attached_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionTask {
    pub task_id: String,
    pub target_taxon: String,
    pub state: u8,
    pub state_name: String,
    pub assigned_harvester: Option<String>,
    pub linked_videos: Vec<ContentId>,
    pub linked_batch: Option<String>,
    pub history: Vec<Transition>,
    pub results: Vec<ResultReceipt>,
    pub ledger_entry_ids: Vec<String>,
    /// Payments recorded since the task last entered state 7.
    pub stint_payments: Vec<String>,
    /// Evaluation report attached since the task last entered state 11.
    pub stint_evaluation: Option<ContentId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewKind {
    BatchApproval,
    AmbiguousUtterance,
    LowConfidenceLabel,
}

/// What a review item is about. Unused ids are absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReviewSubject {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_id: Option<ContentId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utterance_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<String>>,
    /// Frames a taxon assignment would label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_ids: Option<Vec<ContentId>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum Decision {
    Approve,
    Reject { reason: String },
    /// Sets the taxon for an ambiguous or low-confidence utterance.
    Assign { taxon_id: String },
    Dismiss,
}

impl Decision {
    pub fn allowed_for(&self, kind: ReviewKind) -> bool {
        match kind {
            ReviewKind::BatchApproval => matches!(self, Decision::Approve | Decision::Reject { .. }),
            _ => matches!(self, Decision::Assign { .. } | Decision::Dismiss),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    #[serde(flatten)]
    pub decision: Decision,
    pub actor: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub item_id: String,
    pub kind: ReviewKind,
    pub subject: ReviewSubject,
    pub created_at: DateTime<Utc>,
    pub resolution: Option<Resolution>,
}

/// Payment request as entered by an operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaymentRequest {
    pub harvester_id: String,
    pub amount_usd: Decimal,
    pub fx_rate: Decimal,
    pub confirmation_ref: String,
}

/// Outside facts a transition guard may need.
pub trait GuardFacts {
    /// True when every frame of the batch is expert-confirmed or corrected.
    fn batch_fully_approved(&self, batch_id: &str) -> bool;
}

/// For callers without a dataset: no batch is approved.
pub struct NoFacts;

impl GuardFacts for NoFacts {
    fn batch_fully_approved(&self, _: &str) -> bool {
        false
    }
}
