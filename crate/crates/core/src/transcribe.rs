//! Speech-to-text clients and utterance construction.
//!
//! A [`Transcriber`] turns mono audio into raw timed spans. Spans are then
//! normalized (clamped, sorted, made non-overlapping) and matched against the
//! taxon registry to become [`Utterance`]s.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::digest::{short_id, ContentId};
use crate::media::{AudioData, FieldVideo, Segment};
use crate::taxon::{MatchResult, Registry, DEFAULT_MIN_RATIO};

/// Voiceover audio may differ from its segment by at most this much.
pub const VOICEOVER_TOLERANCE_S: f64 = 1.0;

#[derive(Debug, thiserror::Error)]
pub enum TranscribeError {
    #[error("transcriber unavailable: {0}")]
    TranscriberUnavailable(String),
    #[error("transcriber rejected the audio: {0}")]
    TranscriberRejectedAudio(String),
    #[error("voiceover lasts {actual:.3}s but the segment lasts {expected:.3}s")]
    DurationMismatch { expected: f64, actual: f64 },
    #[error("mock script line {line}: {reason}")]
    BadScript { line: usize, reason: String },
}

impl TranscribeError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, TranscribeError::TranscriberUnavailable(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    FieldNarration,
    PostAnnotation,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::FieldNarration => "field_narration",
            Origin::PostAnnotation => "post_annotation",
        }
    }
}

/// Absolute time bounds an utterance's label window may not leave.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scope {
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub utterance_id: String,
    pub video_id: ContentId,
    pub start_s: f64,
    pub end_s: f64,
    pub transcript: String,
    pub confidence: f64,
    #[serde(rename = "match")]
    pub match_result: MatchResult,
    pub origin: Origin,
    /// Set for voiceovers: the segment the recording was made over.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<Scope>,
}

/// One span as returned by a transcription client, times relative to the
/// submitted audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSpan {
    pub text: String,
    pub start_s: f64,
    pub end_s: f64,
    pub confidence: f64,
}

pub struct TranscribeRequest<'a> {
    pub audio_id: &'a ContentId,
    pub video_id: &'a ContentId,
    /// Present for voiceovers.
    pub segment_id: Option<&'a str>,
    pub audio: &'a AudioData,
    pub language_hint: &'a str,
}

pub trait Transcriber: Send + Sync {
    fn transcribe(&self, req: &TranscribeRequest<'_>) -> Result<Vec<RawSpan>, TranscribeError>;
}

#[derive(Debug, Clone)]
pub struct TranscribeOptions {
    pub language_hint: String,
    pub min_ratio: f64,
}

impl Default for TranscribeOptions {
    fn default() -> Self {
        Self {
            language_hint: "id".into(),
            min_ratio: DEFAULT_MIN_RATIO,
        }
    }
}

/// Transcribes a video's narration track.
pub fn transcribe(
    client: &dyn Transcriber,
    registry: &Registry,
    video: &FieldVideo,
    audio_id: &ContentId,
    audio: &AudioData,
    opts: &TranscribeOptions,
) -> Result<Vec<Utterance>, TranscribeError> {
    let req = TranscribeRequest {
        audio_id,
        video_id: &video.video_id,
        segment_id: None,
        audio,
        language_hint: &opts.language_hint,
    };
    let spans = client.transcribe(&req)?;
    let bound = audio.duration_s().min(video.duration_s);
    let spans = normalize_spans(spans, bound);
    Ok(build_utterances(spans, &video.video_id, Origin::FieldNarration, 0.0, None, registry, opts.min_ratio))
}

/// Transcribes an expert voiceover recorded over `seg` and shifts it onto the
/// video timeline.
pub fn attach_voiceover(
    client: &dyn Transcriber,
    registry: &Registry,
    seg: &Segment,
    audio_id: &ContentId,
    audio: &AudioData,
    opts: &TranscribeOptions,
) -> Result<Vec<Utterance>, TranscribeError> {
    let expected = seg.duration_s();
    let actual = audio.duration_s();
    if (actual - expected).abs() > VOICEOVER_TOLERANCE_S {
        return Err(TranscribeError::DurationMismatch { expected, actual });
    }
    let req = TranscribeRequest {
        audio_id,
        video_id: &seg.video_id,
        segment_id: Some(&seg.segment_id),
        audio,
        language_hint: &opts.language_hint,
    };
    let spans = client.transcribe(&req)?;
    let spans = normalize_spans(spans, expected.min(actual));
    let scope = Scope {
        start_s: seg.start_time_s,
        end_s: seg.end_time_s,
    };
    Ok(build_utterances(
        spans,
        &seg.video_id,
        Origin::PostAnnotation,
        seg.start_time_s,
        Some(scope),
        registry,
        opts.min_ratio,
    ))
}

/// Clamps spans to `[0, bound_s]`, sorts them by start and removes overlap by
/// moving each span's start to the end of everything before it. Spans left
/// empty are dropped.
pub fn normalize_spans(spans: Vec<RawSpan>, bound_s: f64) -> Vec<RawSpan> {
    let mut spans: Vec<RawSpan> = spans
        .into_iter()
        .filter(|s| s.start_s.is_finite() && s.end_s.is_finite())
        .map(|mut s| {
            s.start_s = s.start_s.max(0.0);
            s.end_s = s.end_s.min(bound_s);
            s.text = s.text.trim().to_string();
            s.confidence = if s.text.is_empty() {
                0.0
            } else {
                s.confidence.clamp(0.0, 1.0)
            };
            s
        })
        .filter(|s| s.start_s < s.end_s)
        .collect();
    spans.sort_by(|a, b| a.start_s.total_cmp(&b.start_s).then(a.end_s.total_cmp(&b.end_s)));
    let mut out: Vec<RawSpan> = Vec::with_capacity(spans.len());
    let mut frontier = f64::NEG_INFINITY;
    for mut s in spans {
        if s.end_s <= frontier {
            continue;
        }
        s.start_s = s.start_s.max(frontier);
        frontier = s.end_s;
        out.push(s);
    }
    out
}

fn build_utterances(
    spans: Vec<RawSpan>,
    video_id: &ContentId,
    origin: Origin,
    offset_s: f64,
    scope: Option<Scope>,
    registry: &Registry,
    min_ratio: f64,
) -> Vec<Utterance> {
    spans
        .into_iter()
        .map(|s| {
            let start_s = s.start_s + offset_s;
            let end_s = s.end_s + offset_s;
            let (a, b) = (format!("{start_s:.6}"), format!("{end_s:.6}"));
            Utterance {
                utterance_id: short_id("utt", &[video_id.as_str(), origin.as_str(), &a, &b, &s.text]),
                video_id: video_id.clone(),
                start_s,
                end_s,
                match_result: registry.match_label(&s.text, min_ratio),
                transcript: s.text,
                confidence: s.confidence,
                origin,
                scope,
            }
        })
        .collect()
}

/// Parses mock script text: one `start end text` span per line, with an
/// optional trailing `conf=<value>` (default 1.0). Blank lines and lines
/// starting with `#` are ignored.
pub fn parse_script(text: &str) -> Result<Vec<RawSpan>, TranscribeError> {
    let mut spans = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: &str| TranscribeError::BadScript {
            line: i + 1,
            reason: reason.to_string(),
        };
        let mut words: Vec<&str> = line.split_whitespace().collect();
        if words.len() < 2 {
            return Err(bad("expected `start end text`"));
        }
        let start_s: f64 = words[0].parse().map_err(|_| bad("start is not a number"))?;
        let end_s: f64 = words[1].parse().map_err(|_| bad("end is not a number"))?;
        if !(start_s.is_finite() && end_s.is_finite() && 0.0 <= start_s && start_s < end_s) {
            return Err(bad("need 0 <= start < end"));
        }
        let mut confidence = 1.0;
        if let Some(last) = words.last().and_then(|w| w.strip_prefix("conf=")) {
            confidence = last.parse().map_err(|_| bad("conf is not a number"))?;
            if !(0.0..=1.0).contains(&confidence) {
                return Err(bad("conf outside [0, 1]"));
            }
            words.pop();
        }
        spans.push(RawSpan {
            text: words[2..].join(" "),
            start_s,
            end_s,
            confidence,
        });
    }
    Ok(spans)
}

#[derive(Debug, Clone)]
enum MockSource {
    Spans(Vec<RawSpan>),
    Dir(PathBuf),
}

/// Replays scripted spans. Spans that fall entirely on digital silence are
/// dropped, so a silent track transcribes to nothing.
///
/// In directory mode the script is looked up per request as
/// `<video_id>.<segment_id>.txt`, `<video_id>.txt`, then `default.txt`.
#[derive(Debug, Clone)]
pub struct MockTranscriber {
    source: MockSource,
}

impl MockTranscriber {
    pub fn from_spans(spans: Vec<RawSpan>) -> Self {
        Self {
            source: MockSource::Spans(spans),
        }
    }

    pub fn from_script(text: &str) -> Result<Self, TranscribeError> {
        Ok(Self::from_spans(parse_script(text)?))
    }

    pub fn from_path(path: &Path) -> Result<Self, TranscribeError> {
        if path.is_dir() {
            return Ok(Self {
                source: MockSource::Dir(path.to_path_buf()),
            });
        }
        let text = fs::read_to_string(path)
            .map_err(|e| TranscribeError::TranscriberUnavailable(format!("{}: {e}", path.display())))?;
        Self::from_script(&text)
    }

    fn script_for(&self, req: &TranscribeRequest<'_>) -> Result<Vec<RawSpan>, TranscribeError> {
        let dir = match &self.source {
            MockSource::Spans(s) => return Ok(s.clone()),
            MockSource::Dir(d) => d,
        };
        let video = req.video_id.as_str();
        let mut names = Vec::new();
        if let Some(seg) = req.segment_id {
            names.push(format!("{video}.{seg}.txt"));
        }
        names.push(format!("{video}.txt"));
        names.push("default.txt".into());
        for name in names {
            let p = dir.join(&name);
            if p.is_file() {
                let text = fs::read_to_string(&p)
                    .map_err(|e| TranscribeError::TranscriberUnavailable(format!("{}: {e}", p.display())))?;
                return parse_script(&text);
            }
        }
        log::warn!("no mock script for video {video} in {}", dir.display());
        Ok(Vec::new())
    }
}

impl Transcriber for MockTranscriber {
    fn transcribe(&self, req: &TranscribeRequest<'_>) -> Result<Vec<RawSpan>, TranscribeError> {
        let duration = req.audio.duration_s();
        Ok(self
            .script_for(req)?
            .into_iter()
            .filter(|s| s.start_s < duration && !req.audio.is_silent_between(s.start_s, s.end_s))
            .collect())
    }
}

/// HTTP client for an external speech-to-text service.
///
/// Sends the mono track as `audio/wav` in a POST body with query parameters
/// `language`, `video_id` and (for voiceovers) `segment_id`, plus a bearer
/// token when configured. Expects a JSON array of
/// `{text, start_s, end_s, confidence}`.
#[derive(Debug, Clone)]
pub struct RemoteTranscriber {
    endpoint: String,
    token: Option<String>,
    timeout: Duration,
}

impl RemoteTranscriber {
    pub fn new(endpoint: &str, token: Option<String>, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.to_string(),
            token,
            timeout,
        }
    }
}

impl Transcriber for RemoteTranscriber {
    fn transcribe(&self, req: &TranscribeRequest<'_>) -> Result<Vec<RawSpan>, TranscribeError> {
        let unavailable = |e: &dyn std::fmt::Display| TranscribeError::TranscriberUnavailable(e.to_string());
        // Built per call: the blocking client owns a runtime that must not be
        // dropped from async code.
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| unavailable(&e))?;
        let mut query = vec![("language", req.language_hint), ("video_id", req.video_id.as_str())];
        if let Some(seg) = req.segment_id {
            query.push(("segment_id", seg));
        }
        let mut call = client
            .post(&self.endpoint)
            .query(&query)
            .header(reqwest::header::CONTENT_TYPE, "audio/wav")
            .body(req.audio.to_wav_bytes());
        if let Some(t) = &self.token {
            call = call.bearer_auth(t);
        }
        let resp = call.send().map_err(|e| unavailable(&e))?;
        let status = resp.status();
        if status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS {
            return Err(unavailable(&format!("{} returned {status}", self.endpoint)));
        }
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(TranscribeError::TranscriberRejectedAudio(format!("{status}: {}", body.trim())));
        }
        resp.json::<Vec<RawSpan>>()
            .map_err(|e| unavailable(&format!("malformed response: {e}")))
    }
}
