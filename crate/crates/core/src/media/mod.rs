//! Field video ingest, segment selection, frame and audio extraction.

pub mod audio;
pub mod bmff;
pub mod decoder;
pub mod privacy;
pub mod synthetic;

use std::fs;
use std::io::Cursor;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::digest::{short_id, ContentId};
use crate::store::{ContentStore, StoreError};
use crate::taxon::Season;

pub use audio::{AudioData, AudioTrack};
pub use decoder::{CommandDecoder, FrameDecoder};

/// Upper bound on the sampling rate accepted by [`extract_frames`].
pub const MAX_FPS: f64 = 30.0;
pub const DEFAULT_FPS: f64 = 2.0;

#[derive(Debug, thiserror::Error)]
pub enum MediaError {
    #[error("undecodable media: {0}")]
    UndecodableMedia(String),
    #[error("video has zero duration")]
    ZeroDuration,
    #[error("storage full")]
    StorageFull,
    #[error("invalid capture metadata: {0}")]
    InvalidCapture(String),
    #[error("segment is empty (start == end)")]
    EmptySegment,
    #[error("segment out of range: {0}")]
    SegmentOutOfRange(String),
    #[error("fps must be in (0, {MAX_FPS}], got {0}")]
    BadFps(f64),
    #[error("decode failure at t={timestamp_s:.3}s: {detail}")]
    DecodeFailure { timestamp_s: f64, detail: String },
    #[error("video has no audio stream")]
    NoAudioStream,
    #[error("audio decode failed: {0}")]
    AudioDecode(String),
    #[error("decoded audio lasts {actual:.3}s, video lasts {expected:.3}s")]
    AudioLengthMismatch { expected: f64, actual: f64 },
    #[error("decoder configuration: {0}")]
    DecoderConfig(String),
    #[error("unknown video {0}")]
    UnknownVideo(String),
    #[error(transparent)]
    Store(StoreError),
}

impl MediaError {
    pub(crate) fn decode(timestamps: &[f64], detail: impl Into<String>) -> Self {
        MediaError::DecodeFailure {
            timestamp_s: timestamps.first().copied().unwrap_or(0.0),
            detail: detail.into(),
        }
    }
}

impl From<StoreError> for MediaError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::StorageFull => MediaError::StorageFull,
            other => MediaError::Store(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureMeta {
    pub harvester_id: String,
    pub site: String,
    pub capture_date: NaiveDate,
    pub season: Season,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_note: Option<String>,
}

/// Months (1-12) that count as wet season; the rest are dry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeasonCalendar {
    pub wet_months: Vec<u32>,
}

impl SeasonCalendar {
    pub fn season_of(&self, date: NaiveDate) -> Season {
        if self.wet_months.contains(&date.month()) {
            Season::Wet
        } else {
            Season::Dry
        }
    }
}

impl CaptureMeta {
    pub fn validate(&self, calendar: Option<&SeasonCalendar>) -> Result<(), MediaError> {
        if self.harvester_id.trim().is_empty() {
            return Err(MediaError::InvalidCapture("empty harvester_id".into()));
        }
        if self.site.trim().is_empty() {
            return Err(MediaError::InvalidCapture("empty site".into()));
        }
        if let Some(cal) = calendar {
            let expected = cal.season_of(self.capture_date);
            if expected != self.season {
                return Err(MediaError::InvalidCapture(format!(
                    "{} falls in the {expected} season, not {}",
                    self.capture_date, self.season
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldVideo {
    pub video_id: ContentId,
    pub duration_s: f64,
    pub width_px: u32,
    pub height_px: u32,
    pub has_audio: bool,
    pub capture: CaptureMeta,
    pub location_stripped: bool,
}

/// A time window entered as four minute/second fields, each 0-59.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub segment_id: String,
    pub video_id: ContentId,
    pub start_min: u32,
    pub start_s: u32,
    pub end_min: u32,
    pub end_s: u32,
    pub start_time_s: f64,
    pub end_time_s: f64,
}

impl Segment {
    pub fn new(video: &FieldVideo, start_min: u32, start_s: u32, end_min: u32, end_s: u32) -> Result<Self, MediaError> {
        for (name, v) in [("start_min", start_min), ("start_s", start_s), ("end_min", end_min), ("end_s", end_s)] {
            if v > 59 {
                return Err(MediaError::SegmentOutOfRange(format!("{name} = {v} exceeds 59")));
            }
        }
        let start = (start_min * 60 + start_s) as f64;
        let end = (end_min * 60 + end_s) as f64;
        if start == end {
            return Err(MediaError::EmptySegment);
        }
        if start > end {
            return Err(MediaError::SegmentOutOfRange(format!("start {start}s is after end {end}s")));
        }
        if end > video.duration_s {
            return Err(MediaError::SegmentOutOfRange(format!(
                "end {end}s beyond video duration {:.3}s",
                video.duration_s
            )));
        }
        let fields = format!("{start_min}:{start_s}-{end_min}:{end_s}");
        Ok(Self {
            segment_id: short_id("seg", &[video.video_id.as_str(), &fields]),
            video_id: video.video_id.clone(),
            start_min,
            start_s,
            end_min,
            end_s,
            start_time_s: start,
            end_time_s: end,
        })
    }

    /// Parses `MM:SS` into (minutes, seconds), each 0-59.
    pub fn parse_clock(text: &str) -> Result<(u32, u32), MediaError> {
        let bad = || MediaError::SegmentOutOfRange(format!("{text:?} is not MM:SS with both parts in 0-59"));
        let (m, s) = text.trim().split_once(':').ok_or_else(bad)?;
        let m: u32 = m.parse().map_err(|_| bad())?;
        let s: u32 = s.parse().map_err(|_| bad())?;
        if m > 59 || s > 59 {
            return Err(bad());
        }
        Ok((m, s))
    }

    pub fn duration_s(&self) -> f64 {
        self.end_time_s - self.start_time_s
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start_time_s <= t && t < self.end_time_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRef {
    pub frame_id: ContentId,
    pub video_id: ContentId,
    pub timestamp_s: f64,
    pub width_px: u32,
    pub height_px: u32,
}

/// Validates, strips location metadata, probes and stores an uploaded video.
///
/// Stripping happens on the in-memory copy; the unstripped bytes never reach
/// the store.
pub fn ingest_video(
    store: &ContentStore,
    bytes: &[u8],
    capture: CaptureMeta,
    calendar: Option<&SeasonCalendar>,
) -> Result<FieldVideo, MediaError> {
    capture.validate(calendar)?;
    bmff::probe(bytes).map_err(|e| MediaError::UndecodableMedia(e.to_string()))?;
    let (clean, removed) = bmff::strip_location(bytes).map_err(|e| MediaError::UndecodableMedia(e.to_string()))?;
    if !removed.is_empty() {
        log::info!("stripped {} location box(es) before storing upload", removed.len());
    }
    let info = bmff::probe(&clean).map_err(|e| MediaError::UndecodableMedia(e.to_string()))?;
    if !(info.duration_s > 0.0) {
        return Err(MediaError::ZeroDuration);
    }
    if info.width_px == 0 || info.height_px == 0 {
        return Err(MediaError::UndecodableMedia("video track has no frame size".into()));
    }
    let video_id = store.put(&clean)?;
    let video = FieldVideo {
        video_id,
        duration_s: info.duration_s,
        width_px: info.width_px,
        height_px: info.height_px,
        has_audio: info.has_audio,
        capture,
        location_stripped: true,
    };
    Ok(video)
}

/// Sample instants `start + k/fps` strictly before `end`.
pub fn sample_timestamps(start_s: f64, end_s: f64, fps: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 0u64;
    loop {
        let t = start_s + k as f64 / fps;
        if t >= end_s {
            break;
        }
        out.push(t);
        k += 1;
    }
    out
}

/// Decodes frames of `seg` at `fps` and stores them as metadata-free PNGs.
pub fn extract_frames(
    store: &ContentStore,
    decoder: &dyn FrameDecoder,
    video: &FieldVideo,
    seg: &Segment,
    fps: f64,
) -> Result<Vec<FrameRef>, MediaError> {
    if !(fps > 0.0 && fps <= MAX_FPS) {
        return Err(MediaError::BadFps(fps));
    }
    if seg.video_id != video.video_id {
        return Err(MediaError::SegmentOutOfRange("segment belongs to another video".into()));
    }
    if seg.start_time_s == seg.end_time_s {
        return Err(MediaError::EmptySegment);
    }
    if seg.start_time_s > seg.end_time_s || seg.end_time_s > video.duration_s {
        return Err(MediaError::SegmentOutOfRange(format!(
            "[{}, {}) not within video of {:.3}s",
            seg.start_time_s, seg.end_time_s, video.duration_s
        )));
    }
    let timestamps = sample_timestamps(seg.start_time_s, seg.end_time_s, fps);
    let scratch = store.scratch_dir()?;
    decoder.decode_frames(&store.object_path(&video.video_id), &timestamps, scratch.path())?;
    let files = decoder::collect_frame_files(scratch.path())?;

    let mut frames = Vec::with_capacity(timestamps.len());
    for (i, &t) in timestamps.iter().enumerate() {
        let fail = |detail: String| MediaError::DecodeFailure { timestamp_s: t, detail };
        let path = files.get(&i).ok_or_else(|| fail("decoder produced no image".into()))?;
        let raw = fs::read(path).map_err(|e| fail(e.to_string()))?;
        let img = image::load_from_memory(&raw).map_err(|e| fail(e.to_string()))?.to_rgb8();
        let png = encode_png(&img);
        let frame_id = store.put(&png)?;
        frames.push(FrameRef {
            frame_id,
            video_id: video.video_id.clone(),
            timestamp_s: t,
            width_px: img.width(),
            height_px: img.height(),
        });
    }
    Ok(frames)
}

/// PNG with no ancillary chunks: re-encoding drops EXIF/XMP from decoder output.
pub fn encode_png(img: &image::RgbImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png).expect("in-memory png encode");
    buf.into_inner()
}

/// Decodes the audio track, downmixes to mono and stores it.
pub fn extract_audio(
    store: &ContentStore,
    decoder: &dyn FrameDecoder,
    video: &FieldVideo,
) -> Result<(AudioTrack, AudioData), MediaError> {
    if !video.has_audio {
        return Err(MediaError::NoAudioStream);
    }
    let scratch = store.scratch_dir()?;
    let wav_path = scratch.path().join("audio.wav");
    decoder.decode_audio(&store.object_path(&video.video_id), &wav_path)?;
    let raw = fs::read(&wav_path).map_err(|e| MediaError::AudioDecode(e.to_string()))?;
    let channels = hound::WavReader::new(Cursor::new(&raw))
        .map(|r| r.spec().channels)
        .map_err(|e| MediaError::AudioDecode(e.to_string()))?;
    let data = AudioData::from_wav_bytes(&raw).map_err(|e| MediaError::AudioDecode(e.to_string()))?;
    if (data.duration_s() - video.duration_s).abs() > 0.1 {
        return Err(MediaError::AudioLengthMismatch {
            expected: video.duration_s,
            actual: data.duration_s(),
        });
    }
    let track = store_audio(store, &data, channels)?;
    Ok((track, data))
}

pub fn store_audio(store: &ContentStore, data: &AudioData, source_channels: u16) -> Result<AudioTrack, MediaError> {
    let audio_id = store.put(&data.to_wav_bytes())?;
    Ok(AudioTrack {
        audio_id,
        sample_rate_hz: data.sample_rate_hz,
        duration_s: data.duration_s(),
        source_channels,
    })
}

#[cfg(test)]
mod tests {
    use super::synthetic::{LocationEmbed, SyntheticClip, SyntheticDecoder, ToneBurst};
    use super::*;

    fn capture() -> CaptureMeta {
        CaptureMeta {
            harvester_id: "gusti".into(),
            site: "Bukian".into(),
            capture_date: NaiveDate::from_ymd_opt(2020, 3, 2).unwrap(),
            season: Season::Wet,
            device_note: None,
        }
    }

    fn setup(clip: &SyntheticClip) -> (tempfile::TempDir, ContentStore, FieldVideo) {
        let dir = tempfile::tempdir().unwrap();
        let store = ContentStore::open(dir.path()).unwrap();
        let v = ingest_video(&store, &clip.to_mp4(), capture(), None).unwrap();
        (dir, store, v)
    }

    #[test]
    fn ingest_probes_63s_hd_clip() {
        let clip = SyntheticClip::with_scenes(1920, 1080, 63.0, 3);
        let (_d, _s, v) = setup(&clip);
        assert_eq!((v.duration_s, v.width_px, v.height_px), (63.0, 1920, 1080));
        assert!(v.location_stripped);
    }

    #[test]
    fn same_bytes_same_id_single_copy() {
        let clip = SyntheticClip::with_scenes(32, 32, 5.0, 1);
        let (_d, store, v1) = setup(&clip);
        let v2 = ingest_video(&store, &clip.to_mp4(), capture(), None).unwrap();
        assert_eq!(v1.video_id, v2.video_id);
        assert_eq!(store.object_paths().unwrap().len(), 1);
    }

    #[test]
    fn gps_removed_before_storage() {
        let clip = SyntheticClip::with_scenes(32, 32, 5.0, 1).with_location(LocationEmbed::Xyz("+08.4095+115.1889/".into()));
        let raw = clip.to_mp4();
        assert!(!privacy::scan_location_tags(&raw).is_empty());
        let (_d, store, v) = setup(&clip);
        let stored = store.get(&v.video_id).unwrap();
        assert!(privacy::scan_location_tags(&stored).is_empty());
        assert_ne!(v.video_id, ContentId::of(&raw));
        assert_eq!(v.video_id, ContentId::of(&stored));
    }

    #[test]
    fn undecodable_and_zero_duration() {
        let dir = tempfile::tempdir().unwrap();
        let store = ContentStore::open(dir.path()).unwrap();
        assert!(matches!(
            ingest_video(&store, b"not a video at all", capture(), None),
            Err(MediaError::UndecodableMedia(_))
        ));
        let zero = SyntheticClip::with_scenes(32, 32, 0.0, 1).to_mp4();
        assert!(matches!(ingest_video(&store, &zero, capture(), None), Err(MediaError::ZeroDuration)));
    }

    #[test]
    fn capture_validation() {
        let mut c = capture();
        c.site = " ".into();
        assert!(c.validate(None).is_err());
        let cal = SeasonCalendar {
            wet_months: vec![10, 11, 12, 1, 2, 3],
        };
        assert!(capture().validate(Some(&cal)).is_ok());
        let mut dry = capture();
        dry.season = Season::Dry;
        assert!(dry.validate(Some(&cal)).is_err());
    }

    #[test]
    fn segment_field_rules() {
        let clip = SyntheticClip::with_scenes(16, 16, 90.0, 1);
        let (_d, _s, v) = setup(&clip);
        let s = Segment::new(&v, 1, 0, 1, 10).unwrap();
        assert_eq!((s.start_time_s, s.end_time_s), (60.0, 70.0));
        assert!(matches!(Segment::new(&v, 0, 5, 0, 5), Err(MediaError::EmptySegment)));
        assert!(matches!(Segment::new(&v, 0, 60, 1, 0), Err(MediaError::SegmentOutOfRange(_))));
        assert!(matches!(Segment::new(&v, 0, 10, 0, 5), Err(MediaError::SegmentOutOfRange(_))));
        assert!(matches!(Segment::new(&v, 1, 0, 1, 31), Err(MediaError::SegmentOutOfRange(_))));
        assert_eq!(Segment::parse_clock("01:05").unwrap(), (1, 5));
        assert!(Segment::parse_clock("00:60").is_err());
        assert!(Segment::parse_clock("60:00").is_err());
        assert!(Segment::parse_clock("5").is_err());
    }

    #[test]
    fn ten_frames_at_one_fps() {
        let clip = SyntheticClip::with_scenes(16, 16, 10.0, 2);
        let (_d, store, v) = setup(&clip);
        let seg = Segment::new(&v, 0, 0, 0, 10).unwrap();
        let frames = extract_frames(&store, &SyntheticDecoder, &v, &seg, 1.0).unwrap();
        let ts: Vec<f64> = frames.iter().map(|f| f.timestamp_s).collect();
        assert_eq!(ts, (0..10).map(f64::from).collect::<Vec<_>>());
        for f in &frames {
            assert!(store.get_verified(&f.frame_id).is_ok());
        }
        let again = extract_frames(&store, &SyntheticDecoder, &v, &seg, 1.0).unwrap();
        assert_eq!(frames, again);
    }

    #[test]
    fn bad_fps_rejected() {
        let clip = SyntheticClip::with_scenes(16, 16, 10.0, 1);
        let (_d, store, v) = setup(&clip);
        let seg = Segment::new(&v, 0, 0, 0, 10).unwrap();
        for fps in [0.0, -1.0, 30.5, f64::NAN] {
            assert!(matches!(extract_frames(&store, &SyntheticDecoder, &v, &seg, fps), Err(MediaError::BadFps(_))));
        }
    }

    #[test]
    fn missing_frame_is_decode_failure() {
        struct Lazy;
        impl FrameDecoder for Lazy {
            fn decode_frames(&self, _: &std::path::Path, _: &[f64], _: &std::path::Path) -> Result<(), MediaError> {
                Ok(())
            }
            fn decode_audio(&self, _: &std::path::Path, _: &std::path::Path) -> Result<(), MediaError> {
                Ok(())
            }
        }
        let clip = SyntheticClip::with_scenes(16, 16, 4.0, 1);
        let (_d, store, v) = setup(&clip);
        let seg = Segment::new(&v, 0, 1, 0, 3).unwrap();
        match extract_frames(&store, &Lazy, &v, &seg, 2.0) {
            Err(MediaError::DecodeFailure { timestamp_s, .. }) => assert_eq!(timestamp_s, 1.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn decoder_exif_is_not_stored() {
        struct ExifDecoder;
        impl FrameDecoder for ExifDecoder {
            fn decode_frames(&self, _: &std::path::Path, ts: &[f64], out: &std::path::Path) -> Result<(), MediaError> {
                for i in 0..ts.len() {
                    fs::write(out.join(format!("frame_{i:06}.jpg")), privacy::tests::jpeg_with_gps(24, 24)).unwrap();
                }
                Ok(())
            }
            fn decode_audio(&self, _: &std::path::Path, _: &std::path::Path) -> Result<(), MediaError> {
                Ok(())
            }
        }
        let clip = SyntheticClip::with_scenes(24, 24, 3.0, 1);
        let (_d, store, v) = setup(&clip);
        let seg = Segment::new(&v, 0, 0, 0, 3).unwrap();
        extract_frames(&store, &ExifDecoder, &v, &seg, 1.0).unwrap();
        for p in store.object_paths().unwrap() {
            assert!(privacy::scan_location_tags(&fs::read(p).unwrap()).is_empty());
        }
    }

    #[test]
    fn audio_silent_and_stereo() {
        let silent = SyntheticClip::with_scenes(16, 16, 6.0, 1).with_audio(8000, 1, vec![]);
        let (_d, store, v) = setup(&silent);
        let (track, data) = extract_audio(&store, &SyntheticDecoder, &v).unwrap();
        assert!((track.duration_s - 6.0).abs() <= 0.1);
        assert!(data.samples.iter().all(|&s| s == 0.0));

        let burst = ToneBurst {
            start_s: 1.0,
            end_s: 2.0,
            freq_hz: 440.0,
            amplitude: 0.5,
        };
        let mono = SyntheticClip::with_scenes(16, 16, 3.0, 1).with_audio(8000, 1, vec![burst.clone()]);
        let stereo = SyntheticClip::with_scenes(16, 16, 3.0, 1).with_audio(8000, 2, vec![burst]);
        let (_d1, s1, v1) = setup(&mono);
        let (_d2, s2, v2) = setup(&stereo);
        let (t1, a1) = extract_audio(&s1, &SyntheticDecoder, &v1).unwrap();
        let (t2, a2) = extract_audio(&s2, &SyntheticDecoder, &v2).unwrap();
        assert_eq!(a1, a2);
        assert_eq!((t1.source_channels, t2.source_channels), (1, 2));
    }

    #[test]
    fn no_audio_stream() {
        let clip = SyntheticClip::with_scenes(16, 16, 3.0, 1);
        let (_d, store, v) = setup(&clip);
        assert!(matches!(extract_audio(&store, &SyntheticDecoder, &v), Err(MediaError::NoAudioStream)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn timestamp_count_and_order(start in 0u32..3000, len in 1u32..600, fps in 0.01f64..30.0) {
                let (s, e) = (start as f64, (start + len) as f64);
                let ts = sample_timestamps(s, e, fps);
                let ideal = (e - s) * fps;
                prop_assert!((ts.len() as f64 - ideal).abs() <= 1.0);
                prop_assert!(ts.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(ts.iter().all(|&t| s <= t && t < e));
            }
        }
    }
}
