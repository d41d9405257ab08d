//! Frame and audio decoding through an external executable.
//!
//! Decoding is delegated; the contract is:
//!
//! * frames: given an input file and a list of timestamps, write one image per
//!   timestamp into the output directory as `frame_<index:06>.<ext>`, where
//!   `index` is the position in the timestamp list.
//! * audio: given an input file, write a WAV file to the output path.
//!
//! Command templates are split shell-style and the placeholders `{input}`,
//! `{timestamps}` (comma-separated seconds), `{timestamps_file}` (one per
//! line), `{outdir}` and `{output}` are substituted per argument. No shell is
//! involved.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use super::MediaError;

pub trait FrameDecoder: Send + Sync {
    fn decode_frames(&self, input: &Path, timestamps: &[f64], out_dir: &Path) -> Result<(), MediaError>;

    fn decode_audio(&self, input: &Path, out_wav: &Path) -> Result<(), MediaError>;
}

#[derive(Debug, Clone)]
pub struct CommandDecoder {
    frames: Vec<String>,
    audio: Option<Vec<String>>,
}

impl CommandDecoder {
    pub fn new(frames_template: &str, audio_template: Option<&str>) -> Result<Self, MediaError> {
        let split = |t: &str| {
            let argv = shell_words::split(t)
                .map_err(|e| MediaError::DecoderConfig(format!("{t:?}: {e}")))?;
            if argv.is_empty() {
                return Err(MediaError::DecoderConfig("empty command template".into()));
            }
            Ok(argv)
        };
        let frames = split(frames_template)?;
        if !frames.iter().any(|a| a.contains("{input}")) || !frames.iter().any(|a| a.contains("{outdir}")) {
            return Err(MediaError::DecoderConfig(
                "decoder_cmd needs {input} and {outdir} placeholders".into(),
            ));
        }
        let audio = audio_template.map(split).transpose()?;
        Ok(Self { frames, audio })
    }

    fn run(argv: &[String], vars: &[(&str, String)]) -> Result<(), String> {
        let args: Vec<String> = argv
            .iter()
            .map(|a| vars.iter().fold(a.clone(), |acc, (k, v)| acc.replace(k, v)))
            .collect();
        let output = Command::new(&args[0])
            .args(&args[1..])
            .output()
            .map_err(|e| format!("cannot run {}: {e}", args[0]))?;
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            return Err(format!("{} exited with {}: {}", args[0], output.status, stderr.trim()));
        }
        Ok(())
    }
}

pub fn format_timestamps(ts: &[f64]) -> String {
    ts.iter().map(|t| format!("{t:.6}")).collect::<Vec<_>>().join(",")
}

impl FrameDecoder for CommandDecoder {
    fn decode_frames(&self, input: &Path, timestamps: &[f64], out_dir: &Path) -> Result<(), MediaError> {
        let ts_file = out_dir.join("timestamps.txt");
        let listing: String = timestamps.iter().map(|t| format!("{t:.6}\n")).collect();
        fs::write(&ts_file, listing).map_err(|e| MediaError::decode(timestamps, e.to_string()))?;
        let vars = [
            ("{input}", input.display().to_string()),
            ("{timestamps_file}", ts_file.display().to_string()),
            ("{timestamps}", format_timestamps(timestamps)),
            ("{outdir}", out_dir.display().to_string()),
        ];
        Self::run(&self.frames, &vars).map_err(|e| MediaError::decode(timestamps, e))
    }

    fn decode_audio(&self, input: &Path, out_wav: &Path) -> Result<(), MediaError> {
        let Some(argv) = &self.audio else {
            return Err(MediaError::DecoderConfig("no audio_cmd configured".into()));
        };
        let vars = [
            ("{input}", input.display().to_string()),
            ("{output}", out_wav.display().to_string()),
        ];
        Self::run(argv, &vars).map_err(MediaError::AudioDecode)
    }
}

/// Maps `frame_<index>.<ext>` files in a decoder output directory by index.
pub fn collect_frame_files(out_dir: &Path) -> Result<BTreeMap<usize, PathBuf>, MediaError> {
    let mut found = BTreeMap::new();
    let entries = fs::read_dir(out_dir).map_err(|e| MediaError::DecoderConfig(e.to_string()))?;
    for entry in entries.flatten() {
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(rest) = name.strip_prefix("frame_") else { continue };
        let digits = rest.split('.').next().unwrap_or("");
        if let Ok(i) = digits.parse::<usize>() {
            found.insert(i, entry.path());
        }
    }
    Ok(found)
}
