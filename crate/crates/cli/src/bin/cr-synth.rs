//! Generates synthetic field clips, voiceover recordings and matching mock
//! transcriber scripts for demos and tests.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use catchrelease_core::media::synthetic::{LocationEmbed, SyntheticClip, ToneBurst};

#[derive(Debug, Parser)]
#[command(name = "cr-synth", version, about = "Synthetic clips and narration scripts")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// A video of color-pattern scenes with narration tones.
    Clip {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 6)]
        scenes: usize,
        /// WIDTHxHEIGHT
        #[arg(long, default_value = "640x512")]
        size: String,
        /// Embed a GPS location (ISO 6709), to exercise stripping.
        #[arg(long, allow_hyphen_values = true)]
        gps: Option<String>,
    },
    /// A mono WAV recording, e.g. a voiceover.
    Wav {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
struct Common {
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 60.0)]
    duration: f64,
    /// START:WORDS, spoken for one second from START seconds; repeatable.
    #[arg(long)]
    say: Vec<String>,
    /// Also write a mock transcriber script for the spoken words.
    #[arg(long)]
    script: Option<PathBuf>,
}

fn parse_say(s: &str) -> Result<(f64, String), String> {
    let (t, words) = s.split_once(':').ok_or_else(|| format!("{s:?} is not START:WORDS"))?;
    let t: f64 = t.trim().parse().map_err(|_| format!("{s:?}: bad start time"))?;
    Ok((t, words.trim().to_string()))
}

fn run(cli: Cli) -> Result<(), String> {
    let common = match &cli.command {
        Cmd::Clip { common, .. } | Cmd::Wav { common } => common,
    };
    let says = common.say.iter().map(|s| parse_say(s)).collect::<Result<Vec<_>, _>>()?;
    let bursts = says
        .iter()
        .map(|(t, _)| ToneBurst {
            start_s: *t,
            end_s: t + 1.0,
            freq_hz: 440.0,
            amplitude: 0.5,
        })
        .collect();
    let bytes = match &cli.command {
        Cmd::Clip { scenes, size, gps, .. } => {
            let (w, h) = size
                .split_once('x')
                .and_then(|(w, h)| Some((w.parse().ok()?, h.parse().ok()?)))
                .ok_or_else(|| format!("--size {size:?} is not WIDTHxHEIGHT"))?;
            let mut clip = SyntheticClip::with_scenes(w, h, common.duration, *scenes).with_audio(8000, 2, bursts);
            if let Some(g) = gps {
                clip = clip.with_location(LocationEmbed::Xyz(g.clone()));
            }
            clip.to_mp4()
        }
        Cmd::Wav { .. } => SyntheticClip::with_scenes(16, 16, common.duration, 1)
            .with_audio(8000, 1, bursts)
            .render_audio_wav()
            .expect("clip has audio"),
    };
    std::fs::write(&common.out, bytes).map_err(|e| format!("{}: {e}", common.out.display()))?;
    if let Some(p) = &common.script {
        let mut text = String::new();
        for (t, words) in &says {
            let _ = writeln!(text, "{t} {} {words}", t + 1.0);
        }
        std::fs::write(p, text).map_err(|e| format!("{}: {e}", p.display()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
