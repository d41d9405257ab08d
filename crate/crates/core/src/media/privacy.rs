//! Location-metadata detection over arbitrary stored files.
//!
//! Used as the audit side of location stripping: ingest strips container
//! location boxes, frame normalisation re-encodes images without metadata,
//! and [`scan_location_tags`] checks any byte stream for what might remain.

use super::bmff;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocationTag {
    pub format: &'static str,
    pub detail: String,
}

/// Finds GPS / location metadata in media bytes (ISO media, JPEG, PNG, TIFF).
pub fn scan_location_tags(bytes: &[u8]) -> Vec<LocationTag> {
    let mut tags = Vec::new();
    if bytes.len() >= 8 && &bytes[4..8] == b"ftyp" {
        match bmff::find_location_boxes(bytes) {
            Ok(found) => tags.extend(found.into_iter().map(|b| LocationTag {
                format: "iso-bmff",
                detail: format!("{} box at {}: {}", b.kind, b.offset, b.reason),
            })),
            // Unparseable container: fall back to a raw signature search.
            Err(_) => tags.extend(raw_signatures(bytes)),
        }
    } else if bytes.starts_with(&[0xFF, 0xD8]) {
        tags.extend(scan_jpeg(bytes));
    } else if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        tags.extend(scan_png(bytes));
    } else if bytes.starts_with(b"II*\0") || bytes.starts_with(b"MM\0*") {
        if tiff_has_gps(bytes) {
            tags.push(LocationTag {
                format: "tiff",
                detail: "GPS IFD pointer".into(),
            });
        }
    } else {
        tags.extend(raw_signatures(bytes));
    }
    tags
}

fn raw_signatures(bytes: &[u8]) -> Vec<LocationTag> {
    let mut tags = Vec::new();
    if bytes.windows(4).any(|w| w == bmff::xyz_kind()) {
        tags.push(LocationTag {
            format: "raw",
            detail: "©xyz signature".into(),
        });
    }
    if bmff::contains_ci(bytes, b"GPSLatitude") || bmff::contains_ci(bytes, b"location.ISO6709") {
        tags.push(LocationTag {
            format: "raw",
            detail: "GPS property signature".into(),
        });
    }
    tags
}

fn scan_jpeg(bytes: &[u8]) -> Vec<LocationTag> {
    let mut tags = Vec::new();
    let mut pos = 2;
    while pos + 4 <= bytes.len() {
        if bytes[pos] != 0xFF {
            break;
        }
        let marker = bytes[pos + 1];
        // Start of scan: metadata segments are over.
        if marker == 0xDA || marker == 0xD9 {
            break;
        }
        let len = u16::from_be_bytes([bytes[pos + 2], bytes[pos + 3]]) as usize;
        let end = (pos + 2 + len).min(bytes.len());
        let seg = &bytes[(pos + 4).min(end)..end];
        if marker == 0xE1 {
            if let Some(tiff) = seg.strip_prefix(b"Exif\0\0") {
                if tiff_has_gps(tiff) {
                    tags.push(LocationTag {
                        format: "jpeg",
                        detail: "EXIF GPS IFD".into(),
                    });
                }
            } else if bmff::contains_ci(seg, b"GPSLatitude") || bmff::contains_ci(seg, b"GPSLongitude") {
                tags.push(LocationTag {
                    format: "jpeg",
                    detail: "XMP GPS properties".into(),
                });
            }
        }
        pos = end;
    }
    tags
}

fn scan_png(bytes: &[u8]) -> Vec<LocationTag> {
    let mut tags = Vec::new();
    let mut pos = 8;
    while pos + 12 <= bytes.len() {
        let len = u32::from_be_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let kind = &bytes[pos + 4..pos + 8];
        let data = &bytes[(pos + 8).min(bytes.len())..(pos + 8 + len).min(bytes.len())];
        match kind {
            b"eXIf" if tiff_has_gps(data) => tags.push(LocationTag {
                format: "png",
                detail: "eXIf GPS IFD".into(),
            }),
            b"tEXt" | b"iTXt" | b"zTXt" if bmff::contains_ci(data, b"GPS") => tags.push(LocationTag {
                format: "png",
                detail: format!("{} chunk with GPS text", String::from_utf8_lossy(kind)),
            }),
            _ => {}
        }
        pos += 12 + len;
    }
    tags
}

/// True when IFD0 of a TIFF structure contains the GPSInfo pointer (tag 0x8825).
pub fn tiff_has_gps(tiff: &[u8]) -> bool {
    if tiff.len() < 8 {
        return false;
    }
    let le = match &tiff[..2] {
        b"II" => true,
        b"MM" => false,
        _ => return false,
    };
    let u16_at = |at: usize| -> Option<u16> {
        let b: [u8; 2] = tiff.get(at..at + 2)?.try_into().ok()?;
        Some(if le { u16::from_le_bytes(b) } else { u16::from_be_bytes(b) })
    };
    let u32_at = |at: usize| -> Option<u32> {
        let b: [u8; 4] = tiff.get(at..at + 4)?.try_into().ok()?;
        Some(if le { u32::from_le_bytes(b) } else { u32::from_be_bytes(b) })
    };
    let Some(ifd) = u32_at(4) else { return false };
    let ifd = ifd as usize;
    let Some(count) = u16_at(ifd) else { return false };
    (0..count as usize).any(|i| u16_at(ifd + 2 + i * 12) == Some(0x8825))
}
