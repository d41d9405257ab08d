//! Synthetic field clips.
//!
//! A synthetic clip is a real ISO media container (ftyp/moov/mdat) whose
//! `mdat` payload is a scene description rather than compressed video. It
//! probes like a phone recording and can carry the same location boxes, and
//! [`SyntheticDecoder`] renders it deterministically. The `cr-synth` tool
//! wraps the decoder so that it can be configured as `decoder_cmd`.

use std::f64::consts::PI;
use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::bmff::{self, make_box};
use super::decoder::FrameDecoder;
use super::MediaError;

const MAGIC: &[u8; 8] = b"CRSYNTH1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub start_s: f64,
    pub end_s: f64,
    pub background: [u8; 3],
    pub foreground: [u8; 3],
    /// Checker cell size in pixels; 0 draws a flat background.
    pub cell_px: u32,
    /// A disc that crosses the frame left to right over the scene.
    pub disc: Option<[u8; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToneBurst {
    pub start_s: f64,
    pub end_s: f64,
    pub freq_hz: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticAudio {
    pub sample_rate_hz: u32,
    pub channels: u16,
    pub bursts: Vec<ToneBurst>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LocationEmbed {
    /// `udta/©xyz` ISO 6709 string, as written by most Android phones.
    Xyz(String),
    /// 3GPP `udta/loci`.
    Loci { latitude: f64, longitude: f64 },
    /// QuickTime `meta/keys` with `com.apple.quicktime.location.ISO6709`.
    QuickTimeKeys(String),
    /// XMP packet in a `uuid` box with exif:GPS properties.
    Xmp { latitude: String, longitude: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticClip {
    pub width: u32,
    pub height: u32,
    pub duration_s: f64,
    pub scenes: Vec<Scene>,
    pub audio: Option<SyntheticAudio>,
    #[serde(default, skip_serializing)]
    pub location: Vec<LocationEmbed>,
}

impl SyntheticClip {
    /// Scenes of equal length cycling through a fixed palette.
    pub fn with_scenes(width: u32, height: u32, duration_s: f64, scene_count: usize) -> Self {
        const PALETTE: [([u8; 3], [u8; 3], [u8; 3]); 6] = [
            ([40, 110, 40], [200, 220, 120], [250, 250, 250]),
            ([120, 70, 30], [230, 190, 140], [20, 20, 20]),
            ([30, 60, 140], [150, 200, 240], [240, 200, 0]),
            ([150, 30, 60], [250, 170, 190], [10, 80, 10]),
            ([80, 80, 80], [210, 210, 210], [200, 30, 30]),
            ([20, 100, 110], [160, 240, 220], [90, 0, 120]),
        ];
        let n = scene_count.max(1);
        let len = duration_s / n as f64;
        let scenes = (0..n)
            .map(|i| {
                let (bg, fg, disc) = PALETTE[i % PALETTE.len()];
                Scene {
                    start_s: i as f64 * len,
                    end_s: if i + 1 == n { duration_s } else { (i + 1) as f64 * len },
                    background: bg,
                    foreground: fg,
                    cell_px: 4 + 2 * (i as u32 % 4),
                    disc: Some(disc),
                }
            })
            .collect();
        Self {
            width,
            height,
            duration_s,
            scenes,
            audio: None,
            location: Vec::new(),
        }
    }

    pub fn with_audio(mut self, sample_rate_hz: u32, channels: u16, bursts: Vec<ToneBurst>) -> Self {
        self.audio = Some(SyntheticAudio {
            sample_rate_hz,
            channels,
            bursts,
        });
        self
    }

    pub fn with_location(mut self, embed: LocationEmbed) -> Self {
        self.location.push(embed);
        self
    }

    pub fn to_mp4(&self) -> Vec<u8> {
        let duration_ms = (self.duration_s * 1000.0).round() as u32;
        let mut moov = Vec::new();
        moov.extend(mvhd(1000, duration_ms));
        moov.extend(trak(1, b"vide", 1000, duration_ms, duration_ms, self.width, self.height));
        if let Some(a) = &self.audio {
            let samples = (self.duration_s * a.sample_rate_hz as f64).round() as u32;
            moov.extend(trak(2, b"soun", a.sample_rate_hz, samples, duration_ms, 0, 0));
        }
        let mut udta = Vec::new();
        for loc in &self.location {
            match loc {
                LocationEmbed::Xyz(iso) => {
                    let mut p = (iso.len() as u16).to_be_bytes().to_vec();
                    p.extend_from_slice(&0x15c7u16.to_be_bytes());
                    p.extend_from_slice(iso.as_bytes());
                    udta.extend(make_box(&bmff::xyz_kind(), &p));
                }
                LocationEmbed::Loci { latitude, longitude } => {
                    let mut p = vec![0u8; 4]; // version + flags
                    p.extend_from_slice(&0x15c7u16.to_be_bytes());
                    p.extend_from_slice(b"field\0");
                    p.push(0); // role
                    p.extend_from_slice(&fixed16(*longitude).to_be_bytes());
                    p.extend_from_slice(&fixed16(*latitude).to_be_bytes());
                    p.extend_from_slice(&0i32.to_be_bytes());
                    p.extend_from_slice(b"earth\0\0");
                    udta.extend(make_box(b"loci", &p));
                }
                LocationEmbed::QuickTimeKeys(iso) => {
                    let key = b"com.apple.quicktime.location.ISO6709";
                    let mut keys = vec![0u8; 4];
                    keys.extend_from_slice(&1u32.to_be_bytes());
                    keys.extend_from_slice(&((key.len() + 8) as u32).to_be_bytes());
                    keys.extend_from_slice(b"mdta");
                    keys.extend_from_slice(key);
                    let mut data = vec![0, 0, 0, 1, 0, 0, 0, 0];
                    data.extend_from_slice(iso.as_bytes());
                    let item = make_box(&1u32.to_be_bytes(), &make_box(b"data", &data));
                    let mut hdlr = vec![0u8; 24];
                    hdlr[8..12].copy_from_slice(b"mdta");
                    let meta = [make_box(b"hdlr", &hdlr), make_box(b"keys", &keys), make_box(b"ilst", &item)].concat();
                    moov.extend(make_box(b"meta", &meta));
                }
                LocationEmbed::Xmp { latitude, longitude } => {
                    let xmp = format!(
                        "<x:xmpmeta xmlns:x=\"adobe:ns:meta/\"><rdf:RDF xmlns:rdf=\"http://www.w3.org/1999/02/22-rdf-syntax-ns#\">\
                         <rdf:Description xmlns:exif=\"http://ns.adobe.com/exif/1.0/\" exif:GPSLatitude=\"{latitude}\" \
                         exif:GPSLongitude=\"{longitude}\"/></rdf:RDF></x:xmpmeta>"
                    );
                    let mut p = bmff::xmp_uuid().to_vec();
                    p.extend_from_slice(xmp.as_bytes());
                    moov.extend(make_box(b"uuid", &p));
                }
            }
        }
        if !udta.is_empty() {
            moov.extend(make_box(b"udta", &udta));
        }
        let mut payload = MAGIC.to_vec();
        payload.extend(serde_json::to_vec(self).expect("clip serializes"));
        [
            make_box(b"ftyp", b"isom\0\0\x02\0isommp42"),
            make_box(b"moov", &moov),
            make_box(b"mdat", &payload),
        ]
        .concat()
    }

    pub fn from_mp4(bytes: &[u8]) -> Result<Self, String> {
        let top = bmff::parse_boxes(bytes, 0, bytes.len()).map_err(|e| e.to_string())?;
        let mdat = top
            .iter()
            .find(|b| &b.kind == b"mdat")
            .ok_or("no mdat box")?;
        let payload = &bytes[mdat.payload..mdat.end];
        let body = payload.strip_prefix(MAGIC).ok_or("mdat is not a synthetic clip")?;
        serde_json::from_slice(body).map_err(|e| e.to_string())
    }

    fn scene_at(&self, t: f64) -> Option<&Scene> {
        self.scenes.iter().find(|s| s.start_s <= t && t < s.end_s)
    }

    pub fn render_frame(&self, t: f64) -> RgbImage {
        let (w, h) = (self.width, self.height);
        let Some(scene) = self.scene_at(t) else {
            return RgbImage::new(w, h);
        };
        let progress = ((t - scene.start_s) / (scene.end_s - scene.start_s)).clamp(0.0, 1.0);
        let radius = h.min(w) as f64 / 5.0;
        let cx = w as f64 * (0.2 + 0.6 * progress);
        let cy = h as f64 / 2.0;
        RgbImage::from_fn(w, h, |x, y| {
            if let Some(disc) = scene.disc {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                if dx * dx + dy * dy <= radius * radius {
                    return Rgb(disc);
                }
            }
            if scene.cell_px > 0 && ((x / scene.cell_px) + (y / scene.cell_px)) % 2 == 1 {
                Rgb(scene.foreground)
            } else {
                Rgb(scene.background)
            }
        })
    }

    /// Interleaved 16-bit samples for every channel.
    pub fn render_audio_wav(&self) -> Option<Vec<u8>> {
        let a = self.audio.as_ref()?;
        let n = (self.duration_s * a.sample_rate_hz as f64).round() as usize;
        let spec = hound::WavSpec {
            channels: a.channels,
            sample_rate: a.sample_rate_hz,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut buf = Cursor::new(Vec::new());
        let mut w = hound::WavWriter::new(&mut buf, spec).expect("in-memory wav");
        for i in 0..n {
            let t = i as f64 / a.sample_rate_hz as f64;
            let v: f64 = a
                .bursts
                .iter()
                .filter(|b| b.start_s <= t && t < b.end_s)
                .map(|b| b.amplitude * (2.0 * PI * b.freq_hz * t).sin())
                .sum();
            let s = (v.clamp(-1.0, 1.0) * 32767.0).round() as i16;
            for _ in 0..a.channels {
                w.write_sample(s).expect("in-memory write");
            }
        }
        w.finalize().expect("in-memory finalize");
        Some(buf.into_inner())
    }
}

fn fixed16(v: f64) -> i32 {
    (v * 65536.0).round() as i32
}

fn mvhd(timescale: u32, duration: u32) -> Vec<u8> {
    let mut p = vec![0u8; 100];
    p[12..16].copy_from_slice(&timescale.to_be_bytes());
    p[16..20].copy_from_slice(&duration.to_be_bytes());
    p[20..24].copy_from_slice(&0x0001_0000u32.to_be_bytes());
    p[24..26].copy_from_slice(&0x0100u16.to_be_bytes());
    for (i, v) in [0x0001_0000u32, 0, 0, 0, 0x0001_0000, 0, 0, 0, 0x4000_0000].iter().enumerate() {
        p[36 + i * 4..40 + i * 4].copy_from_slice(&v.to_be_bytes());
    }
    p[96..100].copy_from_slice(&3u32.to_be_bytes());
    make_box(b"mvhd", &p)
}

fn trak(id: u32, handler: &[u8; 4], timescale: u32, media_duration: u32, movie_duration: u32, w: u32, h: u32) -> Vec<u8> {
    let mut tkhd = vec![0u8; 84];
    tkhd[3] = 3; // enabled | in movie
    tkhd[12..16].copy_from_slice(&id.to_be_bytes());
    tkhd[20..24].copy_from_slice(&movie_duration.to_be_bytes());
    for (i, v) in [0x0001_0000u32, 0, 0, 0, 0x0001_0000, 0, 0, 0, 0x4000_0000].iter().enumerate() {
        tkhd[40 + i * 4..44 + i * 4].copy_from_slice(&v.to_be_bytes());
    }
    tkhd[76..80].copy_from_slice(&(w << 16).to_be_bytes());
    tkhd[80..84].copy_from_slice(&(h << 16).to_be_bytes());
    let mut mdhd = vec![0u8; 24];
    mdhd[12..16].copy_from_slice(&timescale.to_be_bytes());
    mdhd[16..20].copy_from_slice(&media_duration.to_be_bytes());
    mdhd[20..22].copy_from_slice(&0x55c4u16.to_be_bytes());
    let mut hdlr = vec![0u8; 24];
    hdlr[8..12].copy_from_slice(handler);
    hdlr.extend_from_slice(b"Handler\0");
    let mdia = [make_box(b"mdhd", &mdhd), make_box(b"hdlr", &hdlr)].concat();
    make_box(b"trak", &[make_box(b"tkhd", &tkhd), make_box(b"mdia", &mdia)].concat())
}

/// In-process renderer for synthetic clips, following the decoder contract.
#[derive(Debug, Default, Clone, Copy)]
pub struct SyntheticDecoder;

impl SyntheticDecoder {
    fn load(input: &Path) -> Result<SyntheticClip, String> {
        let bytes = fs::read(input).map_err(|e| format!("{}: {e}", input.display()))?;
        SyntheticClip::from_mp4(&bytes)
    }
}

impl FrameDecoder for SyntheticDecoder {
    fn decode_frames(&self, input: &Path, timestamps: &[f64], out_dir: &Path) -> Result<(), MediaError> {
        let clip = Self::load(input).map_err(|e| MediaError::decode(timestamps, e))?;
        for (i, &t) in timestamps.iter().enumerate() {
            if !(0.0..=clip.duration_s).contains(&t) {
                return Err(MediaError::DecodeFailure {
                    timestamp_s: t,
                    detail: "timestamp outside clip".into(),
                });
            }
            clip.render_frame(t)
                .save(out_dir.join(format!("frame_{i:06}.png")))
                .map_err(|e| MediaError::DecodeFailure {
                    timestamp_s: t,
                    detail: e.to_string(),
                })?;
        }
        Ok(())
    }

    fn decode_audio(&self, input: &Path, out_wav: &Path) -> Result<(), MediaError> {
        let clip = Self::load(input).map_err(MediaError::AudioDecode)?;
        let wav = clip
            .render_audio_wav()
            .ok_or_else(|| MediaError::AudioDecode("clip has no audio".into()))?;
        fs::write(out_wav, wav).map_err(|e| MediaError::AudioDecode(e.to_string()))
    }
}
