//! Utterance-window labeling of extracted frames.
//!
//! Each eligible utterance (matched, confident enough) opens a label window at
//! `start - lead_pad` that runs until the next eligible utterance of the same
//! origin opens its own, clipped to the aligned segment and to the
//! utterance's scope. Voiceover windows take precedence over field narration.

use serde::{Deserialize, Serialize};

use crate::digest::ContentId;
use crate::media::{FrameRef, Segment};
use crate::taxon::MatchResult;
use crate::transcribe::{Origin, Utterance};

pub const DEFAULT_LEAD_PAD_S: f64 = 0.5;
pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignOptions {
    pub lead_pad_s: f64,
    pub min_confidence: f64,
}

impl Default for AlignOptions {
    fn default() -> Self {
        Self {
            lead_pad_s: DEFAULT_LEAD_PAD_S,
            min_confidence: DEFAULT_MIN_CONFIDENCE,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AlignError {
    #[error("{kind} {id} belongs to video {found}, not {expected}")]
    CrossVideoInput {
        kind: &'static str,
        id: String,
        found: String,
        expected: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewState {
    MachineProposed,
    ExpertConfirmed,
    ExpertCorrected,
    Rejected,
}

impl ReviewState {
    pub fn is_expert_approved(self) -> bool {
        matches!(self, ReviewState::ExpertConfirmed | ReviewState::ExpertCorrected)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub taxon_id: String,
    pub source_utterance_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelAssignment {
    pub frame_id: ContentId,
    pub labels: Vec<Label>,
    pub review_state: ReviewState,
}

/// Something alignment could not decide on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "need", rename_all = "snake_case")]
pub enum ReviewNeed {
    AmbiguousUtterance { utterance_id: String },
    LowConfidence { utterance_id: String },
    OverlappingWindows { frame_id: ContentId, utterance_ids: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignOutcome {
    /// One per input frame, in input order.
    pub assignments: Vec<LabelAssignment>,
    pub review: Vec<ReviewNeed>,
}

impl AlignOutcome {
    pub fn labeled(&self) -> impl Iterator<Item = &LabelAssignment> {
        self.assignments.iter().filter(|a| !a.labels.is_empty())
    }
}

fn eligible<'u>(u: &'u Utterance, opts: &AlignOptions) -> Option<&'u str> {
    match &u.match_result {
        MatchResult::Matched { taxon_id, .. } if u.confidence >= opts.min_confidence => Some(taxon_id),
        _ => None,
    }
}

/// Eligible utterances of one origin, sorted by start.
struct Layer<'u> {
    utts: Vec<(&'u Utterance, &'u str)>,
}

impl<'u> Layer<'u> {
    fn new(all: &'u [Utterance], origin: Origin, opts: &AlignOptions) -> Self {
        let mut utts: Vec<_> = all
            .iter()
            .filter(|u| u.origin == origin)
            .filter_map(|u| eligible(u, opts).map(|t| (u, t)))
            .collect();
        utts.sort_by(|a, b| a.0.start_s.total_cmp(&b.0.start_s));
        Self { utts }
    }

    /// Utterances whose window covers `t`: those with the latest opening
    /// start at or before `t`, restricted to ones whose scope contains `t`.
    fn owners(&self, t: f64, pad: f64) -> Vec<(&'u Utterance, &'u str)> {
        let open = self.utts.partition_point(|(u, _)| u.start_s - pad <= t);
        if open == 0 {
            return Vec::new();
        }
        let latest = self.utts[open - 1].0.start_s;
        let first = self.utts[..open].partition_point(|(u, _)| u.start_s < latest);
        self.utts[first..open]
            .iter()
            .filter(|(u, _)| u.scope.is_none_or(|s| s.start_s <= t && t < s.end_s))
            .copied()
            .collect()
    }
}

pub fn align(
    utterances: &[Utterance],
    frames: &[FrameRef],
    seg: &Segment,
    opts: &AlignOptions,
) -> Result<AlignOutcome, AlignError> {
    let cross = |kind, id: String, found: &ContentId| AlignError::CrossVideoInput {
        kind,
        id,
        found: found.to_string(),
        expected: seg.video_id.to_string(),
    };
    if let Some(u) = utterances.iter().find(|u| u.video_id != seg.video_id) {
        return Err(cross("utterance", u.utterance_id.clone(), &u.video_id));
    }
    if let Some(f) = frames.iter().find(|f| f.video_id != seg.video_id) {
        return Err(cross("frame", f.frame_id.to_string(), &f.video_id));
    }

    let mut review = Vec::new();
    for u in utterances {
        match &u.match_result {
            MatchResult::Ambiguous { .. } => review.push(ReviewNeed::AmbiguousUtterance {
                utterance_id: u.utterance_id.clone(),
            }),
            MatchResult::Matched { .. } if u.confidence < opts.min_confidence => review.push(ReviewNeed::LowConfidence {
                utterance_id: u.utterance_id.clone(),
            }),
            _ => {}
        }
    }

    let layers = [
        Layer::new(utterances, Origin::PostAnnotation, opts),
        Layer::new(utterances, Origin::FieldNarration, opts),
    ];
    let mut assignments = Vec::with_capacity(frames.len());
    for f in frames {
        let t = f.timestamp_s;
        let owners = if seg.contains(t) {
            layers
                .iter()
                .map(|l| l.owners(t, opts.lead_pad_s))
                .find(|o| !o.is_empty())
                .unwrap_or_default()
        } else {
            Vec::new()
        };
        let rejected = LabelAssignment {
            frame_id: f.frame_id.clone(),
            labels: Vec::new(),
            review_state: ReviewState::Rejected,
        };
        match owners.as_slice() {
            [] => assignments.push(rejected),
            [(u, taxon)] => assignments.push(LabelAssignment {
                frame_id: f.frame_id.clone(),
                labels: vec![Label {
                    taxon_id: taxon.to_string(),
                    source_utterance_id: u.utterance_id.clone(),
                }],
                review_state: ReviewState::MachineProposed,
            }),
            many => {
                review.push(ReviewNeed::OverlappingWindows {
                    frame_id: f.frame_id.clone(),
                    utterance_ids: many.iter().map(|(u, _)| u.utterance_id.clone()).collect(),
                });
                assignments.push(rejected);
            }
        }
    }
    Ok(AlignOutcome { assignments, review })
}
