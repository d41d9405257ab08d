//! The append-only event log on disk.
//!
//! `events.log` holds one JSON event per line. Appends hold an exclusive
//! advisory lock on `events.lock`, first catch up with lines written by other
//! processes, then write and fsync before returning. A final line without a
//! newline is the remains of an interrupted write and is truncated.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

use chrono::Utc;

use super::{DatasetError, DatasetEvent, EventBody, LabelChange, Manifest, NewEntry, SplitPolicy};
use crate::digest::ContentId;

struct State {
    events: Vec<DatasetEvent>,
    manifest: Manifest,
    /// Bytes of the log already folded in.
    offset: u64,
}

pub struct DatasetStore {
    dir: PathBuf,
    taxa: BTreeSet<String>,
    state: Mutex<State>,
}

struct LockGuard(File);

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = self.0.unlock();
    }
}

impl DatasetStore {
    /// Opens (creating if needed) the log under `dir`. `taxa` is the set of
    /// valid taxon ids.
    pub fn open(dir: impl Into<PathBuf>, taxa: impl IntoIterator<Item = String>) -> Result<Self, DatasetError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let store = Self {
            dir,
            taxa: taxa.into_iter().collect(),
            state: Mutex::new(State {
                events: Vec::new(),
                manifest: Manifest::default(),
                offset: 0,
            }),
        };
        {
            let _lock = store.lock_file()?;
            let mut st = store.state();
            store.catch_up(&mut st)?;
        }
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join("events.log")
    }

    pub fn taxa(&self) -> &BTreeSet<String> {
        &self.taxa
    }

    fn state(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn lock_file(&self) -> Result<LockGuard, DatasetError> {
        let f = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(self.dir.join("events.lock"))?;
        f.lock()?;
        Ok(LockGuard(f))
    }

    /// Folds in complete lines appended since the last read. Must hold the
    /// file lock.
    fn catch_up(&self, st: &mut State) -> Result<(), DatasetError> {
        let path = self.log_path();
        let mut f = OpenOptions::new().create(true).append(true).read(true).open(&path)?;
        let len = f.metadata()?.len();
        if len < st.offset {
            return Err(DatasetError::Corrupt {
                line: st.events.len(),
                reason: "log shrank underneath the store".into(),
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
            let line = st.events.len() + 1;
            let event: DatasetEvent = serde_json::from_slice(raw).map_err(|e| DatasetError::Corrupt {
                line,
                reason: e.to_string(),
            })?;
            st.manifest.validate(&event, &self.taxa).map_err(|e| DatasetError::Corrupt {
                line,
                reason: e.to_string(),
            })?;
            st.manifest.apply(&event);
            st.events.push(event);
        }
        st.offset += complete as u64;
        Ok(())
    }

    fn write_event(&self, st: &mut State, event: DatasetEvent) -> Result<u64, DatasetError> {
        st.manifest.validate(&event, &self.taxa)?;
        let mut line = serde_json::to_vec(&event).expect("events serialize");
        line.push(b'\n');
        let mut f = OpenOptions::new().append(true).open(self.log_path())?;
        f.write_all(&line)?;
        f.sync_data()?;
        st.offset += line.len() as u64;
        st.manifest.apply(&event);
        st.events.push(event);
        Ok(st.manifest.version)
    }

    /// Appends a fully formed event; its id must be the current version + 1.
    pub fn append_event(&self, event: DatasetEvent) -> Result<u64, DatasetError> {
        let _lock = self.lock_file()?;
        let mut st = self.state();
        self.catch_up(&mut st)?;
        self.write_event(&mut st, event)
    }

    fn append(&self, batch_id: &str, body: EventBody, actor: &str) -> Result<u64, DatasetError> {
        let _lock = self.lock_file()?;
        let mut st = self.state();
        self.catch_up(&mut st)?;
        let event = DatasetEvent {
            event_id: st.manifest.version + 1,
            body,
            actor: actor.to_string(),
            timestamp: Utc::now(),
            batch_id: batch_id.to_string(),
        };
        self.write_event(&mut st, event)
    }

    pub fn add_batch(&self, batch_id: &str, entries: Vec<NewEntry>, actor: &str) -> Result<u64, DatasetError> {
        self.append(batch_id, EventBody::AddBatch { entries }, actor)
    }

    /// Idempotent on an already quarantined batch; the version still moves.
    pub fn quarantine_batch(&self, batch_id: &str, reason: &str, actor: &str) -> Result<u64, DatasetError> {
        self.append(
            batch_id,
            EventBody::QuarantineBatch {
                reason: reason.to_string(),
            },
            actor,
        )
    }

    pub fn relabel_batch(&self, batch_id: &str, new_taxon: &str, actor: &str) -> Result<u64, DatasetError> {
        self.append(
            batch_id,
            EventBody::RelabelBatch {
                new_taxon: new_taxon.to_string(),
            },
            actor,
        )
    }

    pub fn approve_batch(&self, batch_id: &str, actor: &str) -> Result<u64, DatasetError> {
        self.append(batch_id, EventBody::ApproveBatch {}, actor)
    }

    /// Assigns splits over the manifest at `version`, which must be current.
    pub fn assign_splits(&self, version: u64, policy: SplitPolicy, actor: &str) -> Result<u64, DatasetError> {
        policy.validate()?;
        let _lock = self.lock_file()?;
        let mut st = self.state();
        self.catch_up(&mut st)?;
        let current = st.manifest.version;
        if version > current {
            return Err(DatasetError::UnknownVersion(version));
        }
        if version < current {
            return Err(DatasetError::StaleEventId {
                expected: current + 1,
                got: version + 1,
            });
        }
        let event = DatasetEvent {
            event_id: current + 1,
            body: EventBody::SetSplitPolicy(policy),
            actor: actor.to_string(),
            timestamp: Utc::now(),
            batch_id: String::new(),
        };
        self.write_event(&mut st, event)
    }

    /// Picks up events appended by other processes.
    pub fn refresh(&self) -> Result<u64, DatasetError> {
        let _lock = self.lock_file()?;
        let mut st = self.state();
        self.catch_up(&mut st)?;
        Ok(st.manifest.version)
    }

    pub fn version(&self) -> u64 {
        self.state().manifest.version
    }

    /// The live manifest, or the fold up to `version`.
    pub fn manifest(&self, version: Option<u64>) -> Result<Manifest, DatasetError> {
        let st = self.state();
        match version {
            None => Ok(st.manifest.clone()),
            Some(v) if v == st.manifest.version => Ok(st.manifest.clone()),
            Some(v) if v > st.manifest.version => Err(DatasetError::UnknownVersion(v)),
            Some(v) => Ok(Manifest::fold(&st.events[..v as usize])),
        }
    }

    pub fn events(&self) -> Vec<DatasetEvent> {
        self.state().events.clone()
    }

    pub fn has_batch(&self, batch_id: &str) -> bool {
        self.state().manifest.batches.contains(batch_id)
    }

    pub fn batch_frames(&self, batch_id: &str) -> Result<Vec<ContentId>, DatasetError> {
        let st = self.state();
        if !st.manifest.batches.contains(batch_id) {
            return Err(DatasetError::UnknownBatch(batch_id.to_string()));
        }
        Ok(st.manifest.batch_members(batch_id).map(|e| e.frame_id.clone()).collect())
    }

    /// Every change to the frame's label, review state or quarantine flag, in
    /// log order.
    pub fn label_history(&self, frame_id: &ContentId) -> Vec<LabelChange> {
        let st = self.state();
        let mut m = Manifest::default();
        let mut out: Vec<LabelChange> = Vec::new();
        for e in &st.events {
            m.apply(e);
            let Some(entry) = m.entries.get(frame_id) else { continue };
            let same = out.last().is_some_and(|p| {
                p.taxon_id == entry.taxon_id
                    && p.review_state == entry.review_state
                    && p.quarantined == entry.quarantined
                    && p.batch_id == entry.batch_id
            });
            if !same {
                out.push(LabelChange {
                    event_id: e.event_id,
                    kind: e.body.kind().to_string(),
                    actor: e.actor.clone(),
                    timestamp: e.timestamp,
                    batch_id: entry.batch_id.clone(),
                    taxon_id: entry.taxon_id.clone(),
                    review_state: entry.review_state,
                    quarantined: entry.quarantined,
                });
            }
        }
        out
    }
}
