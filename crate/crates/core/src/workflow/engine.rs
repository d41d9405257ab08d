//! Write-ahead persisted workflow state.
//!
//! Every mutation is validated against the in-memory state, appended to
//! `events.log` and fsynced, and only then applied. Opening the engine replays
//! the log; a trailing line without a newline is an interrupted write and is
//! cut off.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::ledger::{self, LedgerEntry};
use super::{
    is_legal, state_name, CollectionTask, Decision, GuardFacts, PaymentRequest, Resolution, ResultKind,
    ResultReceipt, ReviewItem, ReviewKind, ReviewSubject, Transition, WorkflowError,
};
use crate::digest::ContentId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkflowEvent {
    TaskCreated {
        task_id: String,
        target_taxon: String,
        actor: String,
        timestamp: DateTime<Utc>,
    },
    Advanced {
        task_id: String,
        #[serde(flatten)]
        transition: Transition,
    },
    VideoLinked {
        task_id: String,
        video_id: ContentId,
        actor: String,
        timestamp: DateTime<Utc>,
    },
    BatchLinked {
        task_id: String,
        batch_id: String,
        actor: String,
        timestamp: DateTime<Utc>,
    },
    HarvesterAssigned {
        task_id: String,
        harvester_id: String,
        actor: String,
        timestamp: DateTime<Utc>,
    },
    PaymentRecorded {
        entry: LedgerEntry,
    },
    ResultAttached {
        receipt: ResultReceipt,
    },
    ReviewOpened {
        item: ReviewItem,
    },
    ReviewResolved {
        item_id: String,
        resolution: Resolution,
    },
}

/// Everything the log folds into. Compared whole in recovery tests.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Snapshot {
    pub tasks: BTreeMap<String, CollectionTask>,
    pub reviews: BTreeMap<String, ReviewItem>,
    pub ledger: Vec<LedgerEntry>,
}

#[derive(Default)]
struct State {
    snap: Snapshot,
    offset: u64,
    lines: usize,
}

fn seq_id(prefix: &str, n: usize) -> String {
    format!("{prefix}{}", n + 1)
}

fn task<'a>(snap: &'a Snapshot, id: &str) -> Result<&'a CollectionTask, WorkflowError> {
    snap.tasks.get(id).ok_or_else(|| WorkflowError::UnknownTask(id.to_string()))
}

fn need_state(t: &CollectionTask, ok: impl Fn(u8) -> bool, needed: &str) -> Result<(), WorkflowError> {
    if ok(t.state) {
        Ok(())
    } else {
        Err(WorkflowError::WrongState {
            task_id: t.task_id.clone(),
            state: t.state,
            needed: needed.to_string(),
        })
    }
}

impl Snapshot {
    /// True when some batch_approval item for `batch_id` was approved.
    pub fn batch_approved(&self, batch_id: &str) -> bool {
        self.reviews.values().any(|r| {
            r.kind == ReviewKind::BatchApproval
                && r.subject.batch_id.as_deref() == Some(batch_id)
                && r.resolution.as_ref().is_some_and(|res| res.decision == Decision::Approve)
        })
    }

    fn guard(&self, t: &CollectionTask, to: u8, facts: &dyn GuardFacts) -> Result<(), WorkflowError> {
        let fail = |why: &str| Err(WorkflowError::GuardFailed(why.to_string()));
        match to {
            5 if t.linked_videos.is_empty() => fail("state 5 needs at least one linked video"),
            7 => match &t.linked_batch {
                None => fail("state 7 needs an assessed batch, none linked"),
                Some(b) if !self.batch_approved(b) => fail(&format!("state 7 needs an approved assessment of batch {b}")),
                _ => Ok(()),
            },
            8 if t.stint_payments.is_empty() => fail("state 8 needs a payment recorded in state 7"),
            9 if t.linked_batch.is_none() => fail("state 9 needs a linked batch"),
            12 => match (&t.stint_evaluation, &t.linked_batch) {
                (None, _) => fail("state 12 needs an evaluation report attached in state 11"),
                (_, None) => fail("state 12 needs a linked batch"),
                (_, Some(b)) if !facts.batch_fully_approved(b) => {
                    fail(&format!("state 12 needs every frame of batch {b} expert-approved"))
                }
                _ => Ok(()),
            },
            _ => Ok(()),
        }
    }

    /// Structural checks that must also hold on replay. Guards that depend on
    /// outside facts are checked by the callers before logging.
    fn check(&self, ev: &WorkflowEvent) -> Result<(), WorkflowError> {
        match ev {
            WorkflowEvent::TaskCreated { task_id, .. } => {
                if self.tasks.contains_key(task_id) {
                    return Err(WorkflowError::Corrupt {
                        line: 0,
                        reason: format!("duplicate task {task_id}"),
                    });
                }
            }
            WorkflowEvent::Advanced { task_id, transition } => {
                let t = task(self, task_id)?;
                if t.state != transition.from_state || !is_legal(transition.from_state, transition.to_state) {
                    return Err(WorkflowError::IllegalTransition {
                        from: t.state,
                        to: transition.to_state,
                    });
                }
            }
            WorkflowEvent::VideoLinked { task_id, .. }
            | WorkflowEvent::BatchLinked { task_id, .. }
            | WorkflowEvent::HarvesterAssigned { task_id, .. } => {
                task(self, task_id)?;
            }
            WorkflowEvent::PaymentRecorded { entry } => {
                need_state(task(self, &entry.task_id)?, |s| s == 7, "7")?;
            }
            WorkflowEvent::ResultAttached { receipt } => {
                let want = receipt.kind.required_state();
                need_state(task(self, &receipt.task_id)?, |s| s == want, &want.to_string())?;
            }
            WorkflowEvent::ReviewOpened { item } => {
                if self.reviews.contains_key(&item.item_id) {
                    return Err(WorkflowError::Corrupt {
                        line: 0,
                        reason: format!("duplicate review item {}", item.item_id),
                    });
                }
            }
            WorkflowEvent::ReviewResolved { item_id, .. } => {
                let item = self
                    .reviews
                    .get(item_id)
                    .ok_or_else(|| WorkflowError::UnknownItem(item_id.clone()))?;
                if item.resolution.is_some() {
                    return Err(WorkflowError::AlreadyResolved(item_id.clone()));
                }
            }
        }
        Ok(())
    }

    fn apply(&mut self, ev: &WorkflowEvent) {
        match ev.clone() {
            WorkflowEvent::TaskCreated {
                task_id, target_taxon, ..
            } => {
                self.tasks.insert(
                    task_id.clone(),
                    CollectionTask {
                        task_id,
                        target_taxon,
                        state: 1,
                        state_name: state_name(1).to_string(),
                        assigned_harvester: None,
                        linked_videos: Vec::new(),
                        linked_batch: None,
                        history: Vec::new(),
                        results: Vec::new(),
                        ledger_entry_ids: Vec::new(),
                        stint_payments: Vec::new(),
                        stint_evaluation: None,
                    },
                );
            }
            WorkflowEvent::Advanced { task_id, transition } => {
                let Some(t) = self.tasks.get_mut(&task_id) else { return };
                t.state = transition.to_state;
                t.state_name = state_name(t.state).to_string();
                match t.state {
                    7 => t.stint_payments.clear(),
                    11 => t.stint_evaluation = None,
                    _ => {}
                }
                t.history.push(transition);
            }
            WorkflowEvent::VideoLinked { task_id, video_id, .. } => {
                if let Some(t) = self.tasks.get_mut(&task_id) {
                    if !t.linked_videos.contains(&video_id) {
                        t.linked_videos.push(video_id);
                    }
                }
            }
            WorkflowEvent::BatchLinked { task_id, batch_id, .. } => {
                if let Some(t) = self.tasks.get_mut(&task_id) {
                    t.linked_batch = Some(batch_id);
                }
            }
            WorkflowEvent::HarvesterAssigned {
                task_id, harvester_id, ..
            } => {
                if let Some(t) = self.tasks.get_mut(&task_id) {
                    t.assigned_harvester = Some(harvester_id);
                }
            }
            WorkflowEvent::PaymentRecorded { entry } => {
                if let Some(t) = self.tasks.get_mut(&entry.task_id) {
                    t.ledger_entry_ids.push(entry.entry_id.clone());
                    t.stint_payments.push(entry.entry_id.clone());
                }
                self.ledger.push(entry);
            }
            WorkflowEvent::ResultAttached { receipt } => {
                if let Some(t) = self.tasks.get_mut(&receipt.task_id) {
                    if receipt.kind == ResultKind::EvaluationReport {
                        t.stint_evaluation = Some(receipt.document_id.clone());
                    }
                    t.results.push(receipt);
                }
            }
            WorkflowEvent::ReviewOpened { item } => {
                self.reviews.insert(item.item_id.clone(), item);
            }
            WorkflowEvent::ReviewResolved { item_id, resolution } => {
                if let Some(item) = self.reviews.get_mut(&item_id) {
                    item.resolution = Some(resolution);
                }
            }
        }
    }
}

struct LockGuard(File);

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = self.0.unlock();
    }
}

pub struct WorkflowEngine {
    dir: PathBuf,
    taxa: BTreeSet<String>,
    state: Mutex<State>,
}

impl WorkflowEngine {
    pub fn open(dir: impl Into<PathBuf>, taxa: impl IntoIterator<Item = String>) -> Result<Self, WorkflowError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let engine = Self {
            dir,
            taxa: taxa.into_iter().collect(),
            state: Mutex::new(State::default()),
        };
        {
            let _lock = engine.lock_file()?;
            let mut st = engine.state();
            engine.catch_up(&mut st)?;
        }
        Ok(engine)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join("events.log")
    }

    fn state(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn lock_file(&self) -> Result<LockGuard, WorkflowError> {
        let f = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(self.dir.join("events.lock"))?;
        f.lock()?;
        Ok(LockGuard(f))
    }

    fn catch_up(&self, st: &mut State) -> Result<(), WorkflowError> {
        let path = self.log_path();
        let mut f = OpenOptions::new().create(true).append(true).read(true).open(&path)?;
        let len = f.metadata()?.len();
        if len < st.offset {
            return Err(WorkflowError::Corrupt {
                line: st.lines,
                reason: "log shrank underneath the engine".into(),
            });
        }
        if len == st.offset {
            return Ok(());
        }
        f.seek(SeekFrom::Start(st.offset))?;
        let mut buf = Vec::with_capacity((len - st.offset) as usize);
        f.read_to_end(&mut buf)?;
        let complete = buf.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if complete < buf.len() {
            log::warn!(
                "truncating {} bytes of interrupted write at end of {}",
                buf.len() - complete,
                path.display()
            );
            f.set_len(st.offset + complete as u64)?;
            f.sync_all()?;
        }
        for raw in buf[..complete].split(|&b| b == b'\n').filter(|l| !l.is_empty()) {
            st.lines += 1;
            let line = st.lines;
            let ev: WorkflowEvent = serde_json::from_slice(raw).map_err(|e| WorkflowError::Corrupt {
                line,
                reason: e.to_string(),
            })?;
            st.snap.check(&ev).map_err(|e| WorkflowError::Corrupt {
                line,
                reason: e.to_string(),
            })?;
            st.snap.apply(&ev);
        }
        st.offset += complete as u64;
        Ok(())
    }

    fn write(&self, st: &mut State, ev: WorkflowEvent) -> Result<(), WorkflowError> {
        st.snap.check(&ev)?;
        let mut line = serde_json::to_vec(&ev).expect("events serialize");
        line.push(b'\n');
        let mut f = OpenOptions::new().append(true).open(self.log_path())?;
        f.write_all(&line)?;
        f.sync_data()?;
        st.offset += line.len() as u64;
        st.lines += 1;
        st.snap.apply(&ev);
        Ok(())
    }

    /// Runs `f` with the file lock held and the state caught up.
    fn with<T, E: From<WorkflowError>>(&self, f: impl FnOnce(&Self, &mut State) -> Result<T, E>) -> Result<T, E> {
        let _lock = self.lock_file()?;
        let mut st = self.state();
        self.catch_up(&mut st)?;
        f(self, &mut st)
    }

    pub fn create_task(&self, target_taxon: &str, actor: &str) -> Result<CollectionTask, WorkflowError> {
        if !self.taxa.contains(target_taxon) {
            return Err(WorkflowError::UnknownTaxon(target_taxon.to_string()));
        }
        self.with(|me, st| {
            let task_id = seq_id("t", st.snap.tasks.len());
            me.write(
                st,
                WorkflowEvent::TaskCreated {
                    task_id: task_id.clone(),
                    target_taxon: target_taxon.to_string(),
                    actor: actor.to_string(),
                    timestamp: Utc::now(),
                },
            )?;
            Ok(st.snap.tasks[&task_id].clone())
        })
    }

    pub fn advance(
        &self,
        task_id: &str,
        to_state: u8,
        actor: &str,
        note: &str,
        facts: &dyn GuardFacts,
    ) -> Result<CollectionTask, WorkflowError> {
        self.with(|me, st| {
            let t = task(&st.snap, task_id)?;
            if !is_legal(t.state, to_state) {
                return Err(WorkflowError::IllegalTransition {
                    from: t.state,
                    to: to_state,
                });
            }
            st.snap.guard(t, to_state, facts)?;
            let transition = Transition {
                from_state: t.state,
                to_state,
                actor: actor.to_string(),
                timestamp: Utc::now(),
                note: note.to_string(),
            };
            me.write(
                st,
                WorkflowEvent::Advanced {
                    task_id: task_id.to_string(),
                    transition,
                },
            )?;
            Ok(st.snap.tasks[task_id].clone())
        })
    }

    /// Videos are collected in states up to assessment.
    pub fn link_video(&self, task_id: &str, video_id: &ContentId, actor: &str) -> Result<CollectionTask, WorkflowError> {
        self.with(|me, st| {
            need_state(task(&st.snap, task_id)?, |s| s <= 6, "1..=6")?;
            me.write(
                st,
                WorkflowEvent::VideoLinked {
                    task_id: task_id.to_string(),
                    video_id: video_id.clone(),
                    actor: actor.to_string(),
                    timestamp: Utc::now(),
                },
            )?;
            Ok(st.snap.tasks[task_id].clone())
        })
    }

    /// Replaces the linked batch. Not allowed once training data is built.
    pub fn link_batch(&self, task_id: &str, batch_id: &str, actor: &str) -> Result<CollectionTask, WorkflowError> {
        self.with(|me, st| {
            need_state(task(&st.snap, task_id)?, |s| s <= 8, "1..=8")?;
            me.write(
                st,
                WorkflowEvent::BatchLinked {
                    task_id: task_id.to_string(),
                    batch_id: batch_id.to_string(),
                    actor: actor.to_string(),
                    timestamp: Utc::now(),
                },
            )?;
            Ok(st.snap.tasks[task_id].clone())
        })
    }

    pub fn assign_harvester(&self, task_id: &str, harvester_id: &str, actor: &str) -> Result<CollectionTask, WorkflowError> {
        self.with(|me, st| {
            task(&st.snap, task_id)?;
            me.write(
                st,
                WorkflowEvent::HarvesterAssigned {
                    task_id: task_id.to_string(),
                    harvester_id: harvester_id.to_string(),
                    actor: actor.to_string(),
                    timestamp: Utc::now(),
                },
            )?;
            Ok(st.snap.tasks[task_id].clone())
        })
    }

    pub fn record_payment(&self, task_id: &str, req: &PaymentRequest, _actor: &str) -> Result<LedgerEntry, WorkflowError> {
        if req.harvester_id.trim().is_empty() {
            return Err(WorkflowError::BadAmount("harvester_id is empty".into()));
        }
        let usd = ledger::normalize_usd(req.amount_usd)?;
        let idr = ledger::convert(usd, req.fx_rate)?;
        self.with(|me, st| {
            need_state(task(&st.snap, task_id)?, |s| s == 7, "7")?;
            let entry = LedgerEntry {
                entry_id: seq_id("p", st.snap.ledger.len()),
                task_id: task_id.to_string(),
                harvester_id: req.harvester_id.clone(),
                amount_usd: usd,
                fx_rate_idr_per_usd: req.fx_rate,
                amount_idr: idr,
                confirmation_ref: req.confirmation_ref.clone(),
                timestamp: Utc::now(),
            };
            me.write(st, WorkflowEvent::PaymentRecorded { entry: entry.clone() })?;
            Ok(entry)
        })
    }

    /// Records a document already placed in the content store.
    pub fn attach_result(
        &self,
        task_id: &str,
        kind: ResultKind,
        document_id: &ContentId,
        size_bytes: u64,
        actor: &str,
    ) -> Result<ResultReceipt, WorkflowError> {
        self.with(|me, st| {
            let want = kind.required_state();
            need_state(task(&st.snap, task_id)?, |s| s == want, &want.to_string())?;
            let receipt = ResultReceipt {
                task_id: task_id.to_string(),
                kind,
                document_id: document_id.clone(),
                size_bytes,
                actor: actor.to_string(),
                attached_at: Utc::now(),
            };
            me.write(st, WorkflowEvent::ResultAttached { receipt: receipt.clone() })?;
            Ok(receipt)
        })
    }

    pub fn open_review(&self, kind: ReviewKind, subject: ReviewSubject) -> Result<ReviewItem, WorkflowError> {
        self.with(|me, st| {
            let item = ReviewItem {
                item_id: seq_id("r", st.snap.reviews.len()),
                kind,
                subject,
                created_at: Utc::now(),
                resolution: None,
            };
            me.write(st, WorkflowEvent::ReviewOpened { item: item.clone() })?;
            Ok(item)
        })
    }

    pub fn resolve_review(&self, item_id: &str, decision: Decision, actor: &str) -> Result<ReviewItem, WorkflowError> {
        self.resolve_review_with(item_id, decision, actor, |_, _| Ok::<(), WorkflowError>(()))
    }

    /// Resolves an item after running `effect`, all under the engine lock, so
    /// two experts racing on one item cannot both apply their effects. If the
    /// effect fails nothing is recorded.
    pub fn resolve_review_with<E: From<WorkflowError>>(
        &self,
        item_id: &str,
        decision: Decision,
        actor: &str,
        effect: impl FnOnce(&ReviewItem, &Decision) -> Result<(), E>,
    ) -> Result<ReviewItem, E> {
        self.with(|me, st| {
            let item = st
                .snap
                .reviews
                .get(item_id)
                .ok_or_else(|| WorkflowError::UnknownItem(item_id.to_string()))?;
            if item.resolution.is_some() {
                return Err(WorkflowError::AlreadyResolved(item_id.to_string()).into());
            }
            if !decision.allowed_for(item.kind) {
                return Err(WorkflowError::InvalidDecision(format!("{decision:?} does not apply to {:?}", item.kind)).into());
            }
            effect(item, &decision)?;
            let resolution = Resolution {
                decision,
                actor: actor.to_string(),
                timestamp: Utc::now(),
            };
            me.write(
                st,
                WorkflowEvent::ReviewResolved {
                    item_id: item_id.to_string(),
                    resolution,
                },
            )?;
            Ok(st.snap.reviews[item_id].clone())
        })
    }

    pub fn refresh(&self) -> Result<(), WorkflowError> {
        self.with(|_, _| Ok(()))
    }

    pub fn task(&self, task_id: &str) -> Result<CollectionTask, WorkflowError> {
        task(&self.state().snap, task_id).cloned()
    }

    pub fn tasks(&self) -> Vec<CollectionTask> {
        self.state().snap.tasks.values().cloned().collect()
    }

    pub fn review(&self, item_id: &str) -> Result<ReviewItem, WorkflowError> {
        self.state()
            .snap
            .reviews
            .get(item_id)
            .cloned()
            .ok_or_else(|| WorkflowError::UnknownItem(item_id.to_string()))
    }

    /// Items in creation order; `unresolved` keeps only open ones.
    pub fn reviews(&self, unresolved: bool) -> Vec<ReviewItem> {
        let st = self.state();
        let mut out: Vec<ReviewItem> = st
            .snap
            .reviews
            .values()
            .filter(|r| !unresolved || r.resolution.is_none())
            .cloned()
            .collect();
        out.sort_by_key(|r| r.item_id[1..].parse::<u64>().unwrap_or(u64::MAX));
        out
    }

    pub fn ledger(&self, task_id: Option<&str>) -> Vec<LedgerEntry> {
        self.state()
            .snap
            .ledger
            .iter()
            .filter(|e| task_id.is_none_or(|t| e.task_id == t))
            .cloned()
            .collect()
    }

    pub fn snapshot(&self) -> Snapshot {
        self.state().snap.clone()
    }

    pub fn batch_approved(&self, batch_id: &str) -> bool {
        self.state().snap.batch_approved(batch_id)
    }
}
