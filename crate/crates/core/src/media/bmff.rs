//! Minimal ISO base media file (MP4/MOV/3GP) box walker.
//!
//! Only what ingest needs: probing duration, frame size and audio presence,
//! and neutralising boxes that carry capture location. Location boxes are
//! rewritten in place as `free` boxes with zeroed payload so that every other
//! byte offset in the file (chunk offset tables in particular) stays valid.

use std::fmt;

pub type FourCc = [u8; 4];

const XYZ: FourCc = [0xA9, b'x', b'y', b'z'];
const XMP_UUID: [u8; 16] = [
    0xBE, 0x7A, 0xCF, 0xCB, 0x97, 0xA9, 0x42, 0xE8, 0x9C, 0x71, 0x99, 0x94, 0x91, 0xE3, 0xAF, 0xAC,
];

const CONTAINERS: &[&FourCc] = &[
    b"moov", b"trak", b"mdia", b"minf", b"stbl", b"udta", b"edts", b"dinf", b"mvex", b"moof",
    b"traf", b"ilst", b"meta",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BmffError(pub String);

impl fmt::Display for BmffError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for BmffError {}

fn err<T>(msg: impl Into<String>) -> Result<T, BmffError> {
    Err(BmffError(msg.into()))
}

/// A box located inside a byte buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoxRef {
    pub kind: FourCc,
    pub start: usize,
    pub payload: usize,
    pub end: usize,
}

impl BoxRef {
    pub fn kind_str(&self) -> String {
        self.kind.iter().map(|&b| if b.is_ascii_graphic() { b as char } else { '?' }).collect()
    }
}

/// Parses the sibling boxes tiling `data[start..end]`.
pub fn parse_boxes(data: &[u8], start: usize, end: usize) -> Result<Vec<BoxRef>, BmffError> {
    let mut out = Vec::new();
    let mut pos = start;
    while pos < end {
        if end - pos < 8 {
            return err(format!("truncated box header at offset {pos}"));
        }
        let size32 = u32::from_be_bytes(data[pos..pos + 4].try_into().unwrap()) as u64;
        let kind: FourCc = data[pos + 4..pos + 8].try_into().unwrap();
        let (size, header) = match size32 {
            0 => ((end - pos) as u64, 8),
            1 => {
                if end - pos < 16 {
                    return err(format!("truncated large box header at offset {pos}"));
                }
                (u64::from_be_bytes(data[pos + 8..pos + 16].try_into().unwrap()), 16)
            }
            n => (n, 8),
        };
        if size < header as u64 || size > (end - pos) as u64 {
            return err(format!("box size {size} out of bounds at offset {pos}"));
        }
        let box_end = pos + size as usize;
        let mut payload = pos + header;
        if &kind == b"uuid" {
            payload += 16;
            if payload > box_end {
                return err("truncated uuid box");
            }
        }
        out.push(BoxRef {
            kind,
            start: pos,
            payload,
            end: box_end,
        });
        pos = box_end;
    }
    Ok(out)
}

/// Offset of the first child inside a container box. `meta` is a full box in
/// ISO files but a plain container in QuickTime files.
fn children_start(data: &[u8], b: &BoxRef) -> usize {
    if &b.kind == b"meta" && b.end - b.payload >= 12 && &data[b.payload + 8..b.payload + 12] == b"hdlr" {
        return b.payload + 4;
    }
    b.payload
}

/// Depth-first walk over every box; the callback receives the box and its path.
pub fn walk(data: &[u8], mut visit: impl FnMut(&BoxRef, &[FourCc])) -> Result<(), BmffError> {
    fn rec(
        data: &[u8],
        start: usize,
        end: usize,
        path: &mut Vec<FourCc>,
        visit: &mut dyn FnMut(&BoxRef, &[FourCc]),
    ) -> Result<(), BmffError> {
        for b in parse_boxes(data, start, end)? {
            visit(&b, path);
            if CONTAINERS.contains(&&b.kind) {
                path.push(b.kind);
                rec(data, children_start(data, &b), b.end, path, visit)?;
                path.pop();
            }
        }
        Ok(())
    }
    rec(data, 0, data.len(), &mut Vec::new(), &mut visit)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MediaInfo {
    pub duration_s: f64,
    pub width_px: u32,
    pub height_px: u32,
    pub has_audio: bool,
}

fn be_u32(d: &[u8], at: usize) -> Result<u32, BmffError> {
    d.get(at..at + 4)
        .map(|s| u32::from_be_bytes(s.try_into().unwrap()))
        .ok_or_else(|| BmffError(format!("short read at {at}")))
}

fn be_u64(d: &[u8], at: usize) -> Result<u64, BmffError> {
    d.get(at..at + 8)
        .map(|s| u64::from_be_bytes(s.try_into().unwrap()))
        .ok_or_else(|| BmffError(format!("short read at {at}")))
}

/// Reads duration from `mvhd`, frame size from the first video track's `tkhd`.
pub fn probe(data: &[u8]) -> Result<MediaInfo, BmffError> {
    let top = parse_boxes(data, 0, data.len())?;
    if top.first().map(|b| &b.kind) != Some(b"ftyp") {
        return err("not an ISO media file (no leading ftyp box)");
    }
    let Some(moov) = top.iter().find(|b| &b.kind == b"moov") else {
        return err("no moov box");
    };

    let mut duration_s = None;
    let mut video_size = None;
    let mut has_audio = false;
    for b in parse_boxes(data, moov.payload, moov.end)? {
        match &b.kind {
            b"mvhd" => {
                let p = b.payload;
                let version = *data.get(p).ok_or_else(|| BmffError("empty mvhd".into()))?;
                let (timescale, duration) = if version == 1 {
                    (be_u32(data, p + 20)?, be_u64(data, p + 24)?)
                } else {
                    (be_u32(data, p + 12)?, be_u32(data, p + 16)? as u64)
                };
                if timescale == 0 {
                    return err("mvhd timescale is zero");
                }
                duration_s = Some(duration as f64 / timescale as f64);
            }
            b"trak" => {
                let mut handler = None;
                let mut size = None;
                for t in parse_boxes(data, b.payload, b.end)? {
                    match &t.kind {
                        b"tkhd" => {
                            let version = *data.get(t.payload).ok_or_else(|| BmffError("empty tkhd".into()))?;
                            let at = t.payload + if version == 1 { 88 } else { 76 };
                            size = Some((be_u32(data, at)? >> 16, be_u32(data, at + 4)? >> 16));
                        }
                        b"mdia" => {
                            for m in parse_boxes(data, t.payload, t.end)? {
                                if &m.kind == b"hdlr" {
                                    let h = data
                                        .get(m.payload + 8..m.payload + 12)
                                        .ok_or_else(|| BmffError("short hdlr".into()))?;
                                    handler = Some(<[u8; 4]>::try_from(h).unwrap());
                                }
                            }
                        }
                        _ => {}
                    }
                }
                match handler.as_ref() {
                    Some(b"vide") if video_size.is_none() => video_size = size,
                    Some(b"soun") => has_audio = true,
                    _ => {}
                }
            }
            _ => {}
        }
    }
    let Some(duration_s) = duration_s else {
        return err("no mvhd box");
    };
    let Some((width_px, height_px)) = video_size else {
        return err("no video track");
    };
    Ok(MediaInfo {
        duration_s,
        width_px,
        height_px,
        has_audio,
    })
}

/// Why a box counts as location metadata.
fn location_reason(data: &[u8], b: &BoxRef) -> Option<&'static str> {
    let payload = &data[b.payload..b.end];
    match &b.kind {
        k if *k == XYZ => Some("©xyz ISO 6709 location"),
        b"loci" => Some("3GPP loci location"),
        b"meta" => {
            let start = children_start(data, b);
            let keys = parse_boxes(data, start, b.end).ok()?;
            keys.iter()
                .filter(|k| &k.kind == b"keys")
                .any(|k| contains_ci(&data[k.payload..k.end], b"location"))
                .then_some("QuickTime location key")
        }
        b"uuid" if data[b.payload - 16..b.payload] == XMP_UUID && contains_ci(payload, b"gps") => {
            Some("XMP GPS properties")
        }
        b"XMP_" if contains_ci(payload, b"gps") => Some("XMP GPS properties"),
        _ => None,
    }
}

pub(crate) fn contains_ci(hay: &[u8], needle: &[u8]) -> bool {
    hay.windows(needle.len()).any(|w| w.eq_ignore_ascii_case(needle))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocationBox {
    pub offset: usize,
    pub kind: String,
    pub reason: &'static str,
}

/// Every box in the file that carries location metadata.
pub fn find_location_boxes(data: &[u8]) -> Result<Vec<LocationBox>, BmffError> {
    let mut found = Vec::new();
    walk(data, |b, _| {
        if let Some(reason) = location_reason(data, b) {
            found.push(LocationBox {
                offset: b.start,
                kind: b.kind_str(),
                reason,
            });
        }
    })?;
    Ok(found)
}

/// Returns a copy with every location box turned into a zero-filled `free` box.
pub fn strip_location(data: &[u8]) -> Result<(Vec<u8>, Vec<LocationBox>), BmffError> {
    let mut targets: Vec<BoxRef> = Vec::new();
    walk(data, |b, _| {
        if location_reason(data, b).is_some() {
            targets.push(*b);
        }
    })?;
    let mut out = data.to_vec();
    let mut removed = Vec::new();
    let mut cleared_until = 0;
    for b in &targets {
        if b.start < cleared_until {
            continue;
        }
        cleared_until = b.end;
        if let Some(reason) = location_reason(&out, b) {
            removed.push(LocationBox {
                offset: b.start,
                kind: b.kind_str(),
                reason,
            });
        }
        // Large-size boxes keep their 16-byte header; only type and payload change.
        let header_end = if u32::from_be_bytes(out[b.start..b.start + 4].try_into().unwrap()) == 1 {
            b.start + 16
        } else {
            b.start + 8
        };
        out[b.start + 4..b.start + 8].copy_from_slice(b"free");
        out[header_end..b.end].fill(0);
    }
    Ok((out, removed))
}

/// Box builder used by synthetic media and tests.
pub fn make_box(kind: &FourCc, payload: &[u8]) -> Vec<u8> {
    let mut b = Vec::with_capacity(payload.len() + 8);
    b.extend_from_slice(&((payload.len() + 8) as u32).to_be_bytes());
    b.extend_from_slice(kind);
    b.extend_from_slice(payload);
    b
}

pub fn xyz_kind() -> FourCc {
    XYZ
}

pub fn xmp_uuid() -> [u8; 16] {
    XMP_UUID
}
