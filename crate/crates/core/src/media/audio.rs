//! Mono audio tracks. Stored as 32-bit float WAV objects.

use std::io::Cursor;

use serde::{Deserialize, Serialize};

use crate::digest::ContentId;

/// Decoded mono samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioData {
    pub sample_rate_hz: u32,
    pub samples: Vec<f32>,
}

#[derive(Debug, thiserror::Error)]
#[error("unreadable audio: {0}")]
pub struct AudioFormatError(pub String);

impl AudioData {
    /// Reads any PCM/float WAV and averages channels down to mono.
    pub fn from_wav_bytes(bytes: &[u8]) -> Result<Self, AudioFormatError> {
        let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(|e| AudioFormatError(e.to_string()))?;
        let spec = reader.spec();
        let channels = spec.channels.max(1) as usize;
        let interleaved: Vec<f32> = match spec.sample_format {
            hound::SampleFormat::Float => reader
                .into_samples::<f32>()
                .collect::<Result<_, _>>()
                .map_err(|e| AudioFormatError(e.to_string()))?,
            hound::SampleFormat::Int => {
                let scale = (1u64 << (spec.bits_per_sample.saturating_sub(1))) as f32;
                reader
                    .into_samples::<i32>()
                    .map(|s| s.map(|v| v as f32 / scale))
                    .collect::<Result<_, _>>()
                    .map_err(|e| AudioFormatError(e.to_string()))?
            }
        };
        let samples = interleaved
            .chunks(channels)
            .map(|frame| frame.iter().sum::<f32>() / frame.len() as f32)
            .collect();
        Ok(Self {
            sample_rate_hz: spec.sample_rate,
            samples,
        })
    }

    pub fn to_wav_bytes(&self) -> Vec<u8> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate_hz,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut buf = Cursor::new(Vec::new());
        {
            let mut w = hound::WavWriter::new(&mut buf, spec).expect("in-memory wav writer");
            for s in &self.samples {
                w.write_sample(*s).expect("in-memory write");
            }
            w.finalize().expect("in-memory finalize");
        }
        buf.into_inner()
    }

    pub fn duration_s(&self) -> f64 {
        if self.sample_rate_hz == 0 {
            return 0.0;
        }
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// True when every sample in `[start_s, end_s)` is exactly zero.
    pub fn is_silent_between(&self, start_s: f64, end_s: f64) -> bool {
        let sr = self.sample_rate_hz as f64;
        let a = ((start_s.max(0.0) * sr).floor() as usize).min(self.samples.len());
        let b = ((end_s.max(0.0) * sr).ceil() as usize).min(self.samples.len());
        self.samples[a..b].iter().all(|&s| s == 0.0)
    }
}

/// A stored mono track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioTrack {
    pub audio_id: ContentId,
    pub sample_rate_hz: u32,
    pub duration_s: f64,
    pub source_channels: u16,
}
