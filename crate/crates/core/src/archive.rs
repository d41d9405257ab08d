//! One store root holding everything: content objects, sidecars, the dataset
//! log and the workflow log. Runs the segment pipeline and applies review
//! decisions to the dataset.
//!
//! Layout under the root: `objects/`, `meta/<kind>/<id>.json`, `dataset/`,
//! `workflow/`. Sidecar kinds are `videos`, `segments`, `narration` (per
//! video), `voiceovers` (per segment), `qc` (per frame) and `batches`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{self, AlignOptions, Label, ReviewNeed, ReviewState};
use crate::config::{Config, SYNTHETIC_DECODER};
use crate::dataset::{DatasetStore, NewEntry, Provenance};
use crate::digest::{short_id, ContentId};
use crate::error::{Error, Result};
use crate::media::synthetic::SyntheticDecoder;
use crate::media::{self, AudioData, AudioTrack, CaptureMeta, CommandDecoder, FieldVideo, FrameDecoder, FrameRef, MediaError, SeasonCalendar, Segment};
use crate::qc::{self, DedupItem, QcReport, QcThresholds, Verdict};
use crate::store::ContentStore;
use crate::taxon::{MatchResult, Registry};
use crate::transcribe::{self, MockTranscriber, RemoteTranscriber, TranscribeError, TranscribeOptions, TranscribeRequest, Transcriber, Utterance, RawSpan};
use crate::workflow::{
    CollectionTask, Decision, GuardFacts, ResultKind, ResultReceipt, ReviewItem, ReviewKind, ReviewSubject, WorkflowEngine,
};

#[derive(Debug, Clone)]
pub struct Settings {
    pub transcribe: TranscribeOptions,
    pub align: AlignOptions,
    pub qc: QcThresholds,
    pub calendar: Option<SeasonCalendar>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            transcribe: TranscribeOptions::default(),
            align: AlignOptions::default(),
            qc: QcThresholds::default(),
            calendar: None,
        }
    }
}

/// Stands in when no transcriber is configured.
struct Unconfigured;

impl Transcriber for Unconfigured {
    fn transcribe(&self, _: &TranscribeRequest<'_>) -> Result<Vec<RawSpan>, TranscribeError> {
        Err(TranscribeError::TranscriberUnavailable(
            "no transcriber configured (set transcriber.mock or transcriber.remote)".into(),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrationRecord {
    pub video_id: ContentId,
    pub audio: Option<AudioTrack>,
    pub utterances: Vec<Utterance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoiceoverRecord {
    pub segment_id: String,
    pub audio: AudioTrack,
    pub utterances: Vec<Utterance>,
    pub actor: String,
    pub recorded_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    #[serde(flatten)]
    pub frame: FrameRef,
    pub labels: Vec<Label>,
    pub review_state: ReviewState,
    pub qc: QcReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub batch_id: String,
    pub segment: Segment,
    pub fps: f64,
    pub task_id: Option<String>,
    pub frames: Vec<FrameRecord>,
    pub utterances: Vec<Utterance>,
    pub review_items: Vec<String>,
    /// Dataset version right after the batch was added.
    pub dataset_version: u64,
    pub actor: String,
    pub created_at: DateTime<Utc>,
}

impl BatchRecord {
    /// Frames per proposed taxon, plus `(unlabeled)`.
    pub fn label_summary(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for f in &self.frames {
            let key = f.labels.first().map_or("(unlabeled)".to_string(), |l| l.taxon_id.clone());
            *out.entry(key).or_insert(0) += 1;
        }
        out
    }

    pub fn verdict_counts(&self) -> BTreeMap<&'static str, usize> {
        qc::verdict_counts(self.frames.iter().map(|f| &f.qc))
    }
}

pub struct Archive {
    root: PathBuf,
    store: ContentStore,
    registry: Registry,
    dataset: DatasetStore,
    workflow: WorkflowEngine,
    decoder: Arc<dyn FrameDecoder>,
    transcriber: Arc<dyn Transcriber>,
    settings: Settings,
    /// Batch ids derive from the dataset version, so runs go one at a time.
    pipeline: Mutex<()>,
}

impl Archive {
    pub fn open_with(
        root: impl Into<PathBuf>,
        registry: Registry,
        decoder: Arc<dyn FrameDecoder>,
        transcriber: Arc<dyn Transcriber>,
        settings: Settings,
    ) -> Result<Self> {
        let root = root.into();
        let store = ContentStore::open(&root)?;
        let taxa: Vec<String> = registry.records().iter().map(|r| r.taxon_id.clone()).collect();
        let dataset = DatasetStore::open(root.join("dataset"), taxa.clone())?;
        let workflow = WorkflowEngine::open(root.join("workflow"), taxa)?;
        Ok(Self {
            root,
            store,
            registry,
            dataset,
            workflow,
            decoder,
            transcriber,
            settings,
            pipeline: Mutex::new(()),
        })
    }

    pub fn open(cfg: &Config) -> Result<Self> {
        let registry = match &cfg.registry {
            Some(p) => Registry::load(p)?,
            None => Registry::bali26(),
        };
        let decoder: Arc<dyn FrameDecoder> = if cfg.decoder_cmd.trim() == SYNTHETIC_DECODER {
            Arc::new(SyntheticDecoder)
        } else {
            Arc::new(CommandDecoder::new(&cfg.decoder_cmd, cfg.audio_cmd.as_deref())?)
        };
        let t = &cfg.transcriber;
        let transcriber: Arc<dyn Transcriber> = match (&t.mock, &t.remote) {
            (Some(p), _) => Arc::new(MockTranscriber::from_path(p)?),
            (None, Some(url)) => {
                let token = t.credential_env.as_ref().and_then(|v| std::env::var(v).ok());
                Arc::new(RemoteTranscriber::new(url, token, t.timeout()))
            }
            (None, None) => Arc::new(Unconfigured),
        };
        let settings = Settings {
            transcribe: TranscribeOptions {
                language_hint: t.language_hint.clone(),
                min_ratio: t.min_ratio,
            },
            align: cfg.align,
            qc: cfg.qc.clone(),
            calendar: cfg.season_calendar.clone(),
        };
        Self::open_with(&cfg.store_root, registry, decoder, transcriber, settings)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn store(&self) -> &ContentStore {
        &self.store
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn dataset(&self) -> &DatasetStore {
        &self.dataset
    }

    pub fn workflow(&self) -> &WorkflowEngine {
        &self.workflow
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    pub fn ingest(&self, bytes: &[u8], capture: CaptureMeta) -> Result<FieldVideo> {
        let video = media::ingest_video(&self.store, bytes, capture, self.settings.calendar.as_ref())?;
        self.store.put_meta("videos", video.video_id.as_str(), &video)?;
        Ok(video)
    }

    pub fn video(&self, video_id: &str) -> Result<FieldVideo> {
        self.store
            .get_meta("videos", video_id)?
            .ok_or_else(|| MediaError::UnknownVideo(video_id.to_string()).into())
    }

    pub fn create_segment(&self, video_id: &str, start_min: u32, start_s: u32, end_min: u32, end_s: u32) -> Result<Segment> {
        let video = self.video(video_id)?;
        let seg = Segment::new(&video, start_min, start_s, end_min, end_s)?;
        self.store.put_meta("segments", &seg.segment_id, &seg)?;
        Ok(seg)
    }

    pub fn segment(&self, segment_id: &str) -> Result<Segment> {
        self.store
            .get_meta("segments", segment_id)?
            .ok_or_else(|| Error::UnknownSegment(segment_id.to_string()))
    }

    /// Transcribes the video's own track once and caches the result.
    pub fn narration(&self, video: &FieldVideo) -> Result<NarrationRecord> {
        if let Some(rec) = self.store.get_meta::<NarrationRecord>("narration", video.video_id.as_str())? {
            return Ok(rec);
        }
        let rec = if video.has_audio {
            let (track, data) = media::extract_audio(&self.store, self.decoder.as_ref(), video)?;
            let utterances = transcribe::transcribe(
                self.transcriber.as_ref(),
                &self.registry,
                video,
                &track.audio_id,
                &data,
                &self.settings.transcribe,
            )?;
            NarrationRecord {
                video_id: video.video_id.clone(),
                audio: Some(track),
                utterances,
            }
        } else {
            log::warn!("video {} has no audio; no field narration", video.video_id);
            NarrationRecord {
                video_id: video.video_id.clone(),
                audio: None,
                utterances: Vec::new(),
            }
        };
        self.store.put_meta("narration", video.video_id.as_str(), &rec)?;
        Ok(rec)
    }

    /// Stores an expert voiceover for the segment, replacing any earlier take.
    pub fn attach_voiceover(&self, segment_id: &str, wav: &[u8], actor: &str) -> Result<VoiceoverRecord> {
        let seg = self.segment(segment_id)?;
        let data = AudioData::from_wav_bytes(wav).map_err(|e| MediaError::AudioDecode(e.to_string()))?;
        let channels = hound::WavReader::new(std::io::Cursor::new(wav))
            .map(|r| r.spec().channels)
            .unwrap_or(1);
        let expected = seg.duration_s();
        if (data.duration_s() - expected).abs() > transcribe::VOICEOVER_TOLERANCE_S {
            return Err(TranscribeError::DurationMismatch {
                expected,
                actual: data.duration_s(),
            }
            .into());
        }
        let track = media::store_audio(&self.store, &data, channels)?;
        let utterances = transcribe::attach_voiceover(
            self.transcriber.as_ref(),
            &self.registry,
            &seg,
            &track.audio_id,
            &data,
            &self.settings.transcribe,
        )?;
        let rec = VoiceoverRecord {
            segment_id: seg.segment_id.clone(),
            audio: track,
            utterances,
            actor: actor.to_string(),
            recorded_at: Utc::now(),
        };
        self.store.put_meta("voiceovers", &seg.segment_id, &rec)?;
        Ok(rec)
    }

    pub fn voiceover(&self, segment_id: &str) -> Result<Option<VoiceoverRecord>> {
        Ok(self.store.get_meta("voiceovers", segment_id)?)
    }

    /// extract -> transcribe -> align -> qc -> dataset batch + review items.
    pub fn run_pipeline(&self, segment_id: &str, fps: f64, task_id: Option<&str>, actor: &str) -> Result<BatchRecord> {
        let seg = self.segment(segment_id)?;
        let video = self.video(seg.video_id.as_str())?;
        if let Some(t) = task_id {
            self.workflow.task(t)?;
        }
        let frames = media::extract_frames(&self.store, self.decoder.as_ref(), &video, &seg, fps)?;

        let mut utterances = self.narration(&video)?.utterances;
        if let Some(vo) = self.voiceover(segment_id)? {
            utterances.extend(vo.utterances);
        }
        let outcome = align::align(&utterances, &frames, &seg, &self.settings.align)?;
        let reports = self.score(&frames, &outcome.assignments)?;
        for r in &reports {
            self.store.put_meta("qc", r.frame_id.as_str(), r)?;
        }

        let _one_at_a_time = self.pipeline.lock().unwrap_or_else(|p| p.into_inner());
        self.dataset.refresh()?;
        let batch_id = short_id(
            "b",
            &[&seg.segment_id, &format!("{fps}"), &self.dataset.version().to_string()],
        );
        let provenance = Provenance {
            video_id: video.video_id.clone(),
            harvester_id: video.capture.harvester_id.clone(),
            site: video.capture.site.clone(),
            season: video.capture.season,
            capture_date: video.capture.capture_date,
        };
        let mut seen = BTreeSet::new();
        let entries: Vec<NewEntry> = outcome
            .assignments
            .iter()
            .zip(&reports)
            .filter(|(a, _)| !a.labels.is_empty() && seen.insert(a.frame_id.clone()))
            .map(|(a, r)| NewEntry {
                frame_id: a.frame_id.clone(),
                taxon_id: a.labels[0].taxon_id.clone(),
                provenance: provenance.clone(),
                qc_verdict: r.verdict,
                review_state: a.review_state,
                source_utterance_id: Some(a.labels[0].source_utterance_id.clone()),
            })
            .collect();
        let version = self.dataset.add_batch(&batch_id, entries, actor)?;

        let mut review_items = Vec::new();
        let approval = self.workflow.open_review(
            ReviewKind::BatchApproval,
            ReviewSubject {
                task_id: task_id.map(str::to_string),
                batch_id: Some(batch_id.clone()),
                video_id: Some(video.video_id.clone()),
                segment_id: Some(seg.segment_id.clone()),
                ..Default::default()
            },
        )?;
        review_items.push(approval.item_id);
        for (kind, subject) in self.review_subjects(&outcome.review, &utterances, &frames, &seg)? {
            let subject = ReviewSubject {
                task_id: task_id.map(str::to_string),
                batch_id: Some(batch_id.clone()),
                video_id: Some(video.video_id.clone()),
                segment_id: Some(seg.segment_id.clone()),
                ..subject
            };
            review_items.push(self.workflow.open_review(kind, subject)?.item_id);
        }
        if let Some(t) = task_id {
            self.workflow.link_batch(t, &batch_id, actor)?;
        }

        let record = BatchRecord {
            batch_id: batch_id.clone(),
            segment: seg,
            fps,
            task_id: task_id.map(str::to_string),
            frames: frames
                .into_iter()
                .zip(outcome.assignments)
                .zip(reports)
                .map(|((frame, a), qc)| FrameRecord {
                    frame,
                    labels: a.labels,
                    review_state: a.review_state,
                    qc,
                })
                .collect(),
            utterances,
            review_items,
            dataset_version: version,
            actor: actor.to_string(),
            created_at: Utc::now(),
        };
        self.store.put_meta("batches", &batch_id, &record)?;
        Ok(record)
    }

    /// QC for every frame. Near-duplicates are looked for among frames that
    /// pass on their own, grouped by video and proposed taxon.
    fn score(&self, frames: &[FrameRef], assignments: &[align::LabelAssignment]) -> Result<Vec<QcReport>> {
        let t = &self.settings.qc;
        let stats = frames
            .par_iter()
            .map(|f| -> Result<qc::FrameStats> { Ok(qc::analyze(&self.store.get(&f.frame_id)?)?) })
            .collect::<Result<Vec<_>>>()?;
        let items: Vec<DedupItem> = frames
            .iter()
            .zip(assignments)
            .zip(&stats)
            .filter(|((_, a), s)| !a.labels.is_empty() && qc::verdict_for(s, t) == Verdict::Pass)
            .map(|((f, a), s)| DedupItem {
                frame_id: f.frame_id.clone(),
                video_id: f.video_id.clone(),
                taxon_id: a.labels[0].taxon_id.clone(),
                timestamp_s: f.timestamp_s,
                phash: s.phash,
            })
            .collect();
        let dups: BTreeMap<ContentId, ContentId> = qc::find_duplicates(&items, t.max_hamming).into_iter().collect();
        Ok(frames
            .iter()
            .zip(&stats)
            .map(|(f, s)| qc::report(f.frame_id.clone(), s, t, dups.get(&f.frame_id).cloned()))
            .collect())
    }

    /// Frames an utterance would own if it were a confident match for `taxon`.
    fn frames_if_assigned(&self, utts: &[Utterance], frames: &[FrameRef], seg: &Segment, utt_id: &str, taxon: &str) -> Result<Vec<ContentId>> {
        let forced: Vec<Utterance> = utts
            .iter()
            .cloned()
            .map(|mut u| {
                if u.utterance_id == utt_id {
                    u.match_result = MatchResult::Matched {
                        taxon_id: taxon.to_string(),
                        ratio: 1.0,
                    };
                    u.confidence = 1.0;
                }
                u
            })
            .collect();
        let out = align::align(&forced, frames, seg, &self.settings.align)?;
        let mut ids: Vec<ContentId> = out
            .assignments
            .into_iter()
            .filter(|a| a.labels.iter().any(|l| l.source_utterance_id == utt_id))
            .map(|a| a.frame_id)
            .collect();
        ids.dedup();
        Ok(ids)
    }

    fn review_subjects(
        &self,
        needs: &[ReviewNeed],
        utts: &[Utterance],
        frames: &[FrameRef],
        seg: &Segment,
    ) -> Result<Vec<(ReviewKind, ReviewSubject)>> {
        let by_id: BTreeMap<&str, &Utterance> = utts.iter().map(|u| (u.utterance_id.as_str(), u)).collect();
        let mut out = Vec::new();
        let mut overlaps: BTreeMap<Vec<String>, Vec<ContentId>> = BTreeMap::new();
        for need in needs {
            match need {
                ReviewNeed::AmbiguousUtterance { utterance_id } | ReviewNeed::LowConfidence { utterance_id } => {
                    let Some(u) = by_id.get(utterance_id.as_str()) else { continue };
                    let candidates: Vec<String> = match &u.match_result {
                        MatchResult::Matched { taxon_id, .. } => vec![taxon_id.clone()],
                        MatchResult::Ambiguous { taxon_ids } => taxon_ids.clone(),
                        MatchResult::NoMatch => continue,
                    };
                    let frame_ids = self.frames_if_assigned(utts, frames, seg, utterance_id, &candidates[0])?;
                    let kind = match need {
                        ReviewNeed::LowConfidence { .. } => ReviewKind::LowConfidenceLabel,
                        _ => ReviewKind::AmbiguousUtterance,
                    };
                    out.push((
                        kind,
                        ReviewSubject {
                            utterance_id: Some(utterance_id.clone()),
                            candidates: Some(candidates),
                            frame_ids: Some(frame_ids),
                            ..Default::default()
                        },
                    ));
                }
                ReviewNeed::OverlappingWindows { frame_id, utterance_ids } => {
                    overlaps.entry(utterance_ids.clone()).or_default().push(frame_id.clone());
                }
            }
        }
        for (ids, frame_ids) in overlaps {
            let mut candidates: Vec<String> = ids
                .iter()
                .filter_map(|id| by_id.get(id.as_str()).and_then(|u| u.match_result.matched_taxon()))
                .map(str::to_string)
                .collect();
            candidates.dedup();
            out.push((
                ReviewKind::AmbiguousUtterance,
                ReviewSubject {
                    utterance_id: ids.first().cloned(),
                    candidates: Some(candidates),
                    frame_ids: Some(frame_ids),
                    ..Default::default()
                },
            ));
        }
        Ok(out)
    }

    pub fn batch(&self, batch_id: &str) -> Result<BatchRecord> {
        self.store
            .get_meta("batches", batch_id)?
            .ok_or_else(|| Error::UnknownBatch(batch_id.to_string()))
    }

    pub fn batch_ids(&self) -> Result<Vec<String>> {
        Ok(self.store.list_meta("batches")?)
    }

    /// Records the decision and carries it into the dataset: approve confirms
    /// the batch, reject quarantines it, assign labels the item's frames.
    pub fn resolve_review(&self, item_id: &str, decision: Decision, actor: &str) -> Result<ReviewItem> {
        self.workflow
            .resolve_review_with(item_id, decision, actor, |item, d| self.apply_decision(item, d, actor))
    }

    fn apply_decision(&self, item: &ReviewItem, d: &Decision, actor: &str) -> Result<()> {
        let batch = || {
            item.subject
                .batch_id
                .clone()
                .ok_or_else(|| Error::BadRequest(format!("review item {} names no batch", item.item_id)))
        };
        match (item.kind, d) {
            (ReviewKind::BatchApproval, Decision::Approve) => {
                self.dataset.approve_batch(&batch()?, actor)?;
            }
            (ReviewKind::BatchApproval, Decision::Reject { reason }) => {
                self.dataset.quarantine_batch(&batch()?, reason, actor)?;
            }
            (_, Decision::Assign { taxon_id }) => {
                if !self.registry.contains(taxon_id) {
                    return Err(crate::dataset::DatasetError::UnknownTaxon(taxon_id.clone()).into());
                }
                let batch_id = batch()?;
                let record = self.batch(&batch_id)?;
                let video = self.video(record.segment.video_id.as_str())?;
                let wanted: BTreeSet<&ContentId> = item.subject.frame_ids.iter().flatten().collect();
                let mut seen = BTreeSet::new();
                let entries: Vec<NewEntry> = record
                    .frames
                    .iter()
                    .filter(|f| wanted.contains(&f.frame.frame_id) && seen.insert(f.frame.frame_id.clone()))
                    .map(|f| NewEntry {
                        frame_id: f.frame.frame_id.clone(),
                        taxon_id: taxon_id.clone(),
                        provenance: Provenance {
                            video_id: video.video_id.clone(),
                            harvester_id: video.capture.harvester_id.clone(),
                            site: video.capture.site.clone(),
                            season: video.capture.season,
                            capture_date: video.capture.capture_date,
                        },
                        qc_verdict: f.qc.verdict,
                        review_state: ReviewState::ExpertCorrected,
                        source_utterance_id: item.subject.utterance_id.clone(),
                    })
                    .collect();
                if !entries.is_empty() {
                    self.dataset.add_batch(&batch_id, entries, actor)?;
                }
            }
            (_, Decision::Dismiss) => {}
            // kind/decision mismatches are refused before the effect runs
            _ => {}
        }
        Ok(())
    }

    pub fn advance(&self, task_id: &str, to_state: u8, actor: &str, note: &str) -> Result<CollectionTask> {
        self.dataset.refresh()?;
        Ok(self.workflow.advance(task_id, to_state, actor, note, self)?)
    }

    /// Stores the document and links it to the task.
    pub fn attach_result(&self, task_id: &str, kind: ResultKind, document: &[u8], actor: &str) -> Result<ResultReceipt> {
        let id = self.store.put(document)?;
        Ok(self
            .workflow
            .attach_result(task_id, kind, &id, document.len() as u64, actor)?)
    }
}

impl GuardFacts for Archive {
    fn batch_fully_approved(&self, batch_id: &str) -> bool {
        let Ok(m) = self.dataset.manifest(None) else { return false };
        let mut members = m.batch_members(batch_id).peekable();
        members.peek().is_some() && members.all(|e| e.review_state.is_expert_approved() && !e.quarantined)
    }
}
