//! Frame quality scoring, near-duplicate detection and class-balance reports.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::digest::ContentId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QcThresholds {
    /// Laplacian variance below this is blur.
    pub min_sharpness: f64,
    pub min_luma: f64,
    pub max_luma: f64,
    /// Shorter image side must be at least this.
    pub min_side_px: u32,
    /// Negative disables duplicate marking.
    pub max_hamming: i32,
    /// Classes with fewer passing frames are listed as underfilled.
    pub min_class_count: u64,
}

impl Default for QcThresholds {
    fn default() -> Self {
        Self {
            min_sharpness: 100.0,
            min_luma: 20.0,
            max_luma: 235.0,
            min_side_px: 512,
            max_hamming: 8,
            min_class_count: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    RejectBlur,
    RejectExposure,
    RejectResolution,
    RejectDuplicate,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::RejectBlur => "reject_blur",
            Verdict::RejectExposure => "reject_exposure",
            Verdict::RejectResolution => "reject_resolution",
            Verdict::RejectDuplicate => "reject_duplicate",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum QcError {
    #[error("undecodable image: {0}")]
    UndecodableImage(String),
}

/// Grayscale measurements of one image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameStats {
    pub width_px: u32,
    pub height_px: u32,
    pub sharpness: f64,
    pub mean_luma: f64,
    pub phash: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcReport {
    pub frame_id: ContentId,
    pub sharpness: f64,
    pub mean_luma: f64,
    pub resolution_ok: bool,
    pub duplicate_of: Option<ContentId>,
    pub verdict: Verdict,
    pub phash: String,
}

/// Rec. 601 luma plane, row-major.
pub struct Luma {
    pub width: usize,
    pub height: usize,
    pub px: Vec<f64>,
}

impl Luma {
    pub fn from_rgb(img: &image::RgbImage) -> Self {
        let px = img
            .pixels()
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect();
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            px,
        }
    }

    fn at(&self, x: usize, y: usize) -> f64 {
        self.px[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        if self.px.is_empty() {
            return 0.0;
        }
        self.px.iter().sum::<f64>() / self.px.len() as f64
    }

    /// Population variance of the 4-neighbour Laplacian over interior pixels.
    pub fn laplacian_variance(&self) -> f64 {
        if self.width < 3 || self.height < 3 {
            return 0.0;
        }
        let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
        for y in 1..self.height - 1 {
            let row = y * self.width;
            for x in 1..self.width - 1 {
                let i = row + x;
                let l = 4.0 * self.px[i] - self.px[i - 1] - self.px[i + 1] - self.px[i - self.width] - self.px[i + self.width];
                sum += l;
                sum_sq += l * l;
            }
        }
        let n = ((self.width - 2) * (self.height - 2)) as f64;
        let mean = sum / n;
        (sum_sq / n - mean * mean).max(0.0)
    }

    /// Box-average resample to `size`×`size`.
    pub fn shrink(&self, size: usize) -> Vec<f64> {
        let span = |i: usize, n: usize| {
            let a = i * n / size;
            let b = ((i + 1) * n / size).max(a + 1).min(n);
            (a.min(n - 1), b)
        };
        let mut out = Vec::with_capacity(size * size);
        for j in 0..size {
            let (y0, y1) = span(j, self.height);
            for i in 0..size {
                let (x0, x1) = span(i, self.width);
                let mut acc = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        acc += self.at(x, y);
                    }
                }
                out.push(acc / ((y1 - y0) * (x1 - x0)) as f64);
            }
        }
        out
    }
}

pub const HASH_GRID: usize = 32;
const HASH_KEEP: usize = 8;

fn cos_table() -> &'static [[f64; HASH_GRID]; HASH_KEEP] {
    static T: OnceLock<[[f64; HASH_GRID]; HASH_KEEP]> = OnceLock::new();
    T.get_or_init(|| {
        let mut t = [[0.0; HASH_GRID]; HASH_KEEP];
        for (k, row) in t.iter_mut().enumerate() {
            for (n, c) in row.iter_mut().enumerate() {
                *c = (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / (2 * HASH_GRID) as f64).cos();
            }
        }
        t
    })
}

/// Lowest 8×8 unnormalized DCT-II coefficients of a 32×32 grid, row-major
/// (vertical frequency first).
pub fn low_dct(grid: &[f64]) -> [f64; 64] {
    let c = cos_table();
    let mut rows = [[0.0f64; HASH_KEEP]; HASH_GRID];
    for (y, out) in rows.iter_mut().enumerate() {
        let line = &grid[y * HASH_GRID..(y + 1) * HASH_GRID];
        for (v, o) in out.iter_mut().enumerate() {
            *o = line.iter().zip(&c[v]).map(|(p, k)| p * k).sum();
        }
    }
    let mut coeffs = [0.0; 64];
    for u in 0..HASH_KEEP {
        for v in 0..HASH_KEEP {
            coeffs[u * HASH_KEEP + v] = (0..HASH_GRID).map(|y| rows[y][v] * c[u][y]).sum();
        }
    }
    coeffs
}

/// Sets bit `63 - i` when coefficient `i` exceeds the median of all 64 by more
/// than a tiny tolerance relative to the largest magnitude.
pub fn hash_bits(coeffs: &[f64; 64]) -> u64 {
    let mut sorted = *coeffs;
    sorted.sort_by(f64::total_cmp);
    let median = (sorted[31] + sorted[32]) / 2.0;
    let eps = 1e-9 * coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    coeffs
        .iter()
        .fold(0u64, |h, c| (h << 1) | u64::from(c - median > eps))
}

pub fn phash(luma: &Luma) -> u64 {
    hash_bits(&low_dct(&luma.shrink(HASH_GRID)))
}

pub fn hamming(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}

pub fn decode(bytes: &[u8]) -> Result<image::RgbImage, QcError> {
    image::load_from_memory(bytes)
        .map(|i| i.to_rgb8())
        .map_err(|e| QcError::UndecodableImage(e.to_string()))
}

pub fn analyze_image(img: &image::RgbImage) -> FrameStats {
    let luma = Luma::from_rgb(img);
    FrameStats {
        width_px: img.width(),
        height_px: img.height(),
        sharpness: luma.laplacian_variance(),
        mean_luma: luma.mean(),
        phash: phash(&luma),
    }
}

pub fn analyze(bytes: &[u8]) -> Result<FrameStats, QcError> {
    Ok(analyze_image(&decode(bytes)?))
}

/// Resolution, then exposure, then blur.
pub fn verdict_for(stats: &FrameStats, t: &QcThresholds) -> Verdict {
    if stats.width_px.min(stats.height_px) < t.min_side_px {
        Verdict::RejectResolution
    } else if stats.mean_luma < t.min_luma || stats.mean_luma > t.max_luma {
        Verdict::RejectExposure
    } else if stats.sharpness < t.min_sharpness {
        Verdict::RejectBlur
    } else {
        Verdict::Pass
    }
}

pub fn report(frame_id: ContentId, stats: &FrameStats, t: &QcThresholds, duplicate_of: Option<ContentId>) -> QcReport {
    let verdict = if duplicate_of.is_some() {
        Verdict::RejectDuplicate
    } else {
        verdict_for(stats, t)
    };
    QcReport {
        frame_id,
        sharpness: stats.sharpness,
        mean_luma: stats.mean_luma,
        resolution_ok: stats.width_px.min(stats.height_px) >= t.min_side_px,
        duplicate_of,
        verdict,
        phash: format!("{:016x}", stats.phash),
    }
}

pub fn score_frame(frame_id: ContentId, bytes: &[u8], t: &QcThresholds) -> Result<QcReport, QcError> {
    Ok(report(frame_id, &analyze(bytes)?, t, None))
}

#[derive(Debug, Clone)]
pub struct DedupItem {
    pub frame_id: ContentId,
    pub video_id: ContentId,
    pub taxon_id: String,
    pub timestamp_s: f64,
    pub phash: u64,
}

/// Marks temporal near-duplicates within each (video, taxon) group.
///
/// Frames are visited in timestamp order; a frame within `max_hamming` of an
/// already kept frame becomes a duplicate of the earliest such keeper, so
/// duplicates never chain. Repeated occurrences of one frame id count once.
pub fn find_duplicates(items: &[DedupItem], max_hamming: i32) -> Vec<(ContentId, ContentId)> {
    if max_hamming < 0 {
        return Vec::new();
    }
    let limit = max_hamming as u32;
    let mut groups: BTreeMap<(&str, &str), Vec<&DedupItem>> = BTreeMap::new();
    for it in items {
        groups.entry((it.video_id.as_str(), &it.taxon_id)).or_default().push(it);
    }
    let mut out = Vec::new();
    for (_, mut group) in groups {
        group.sort_by(|a, b| a.timestamp_s.total_cmp(&b.timestamp_s).then(a.frame_id.cmp(&b.frame_id)));
        let mut seen: HashSet<&ContentId> = HashSet::new();
        let mut keepers: Vec<&DedupItem> = Vec::new();
        for it in group {
            if !seen.insert(&it.frame_id) {
                continue;
            }
            match keepers.iter().find(|k| hamming(k.phash, it.phash) <= limit) {
                Some(k) => out.push((it.frame_id.clone(), k.frame_id.clone())),
                None => keepers.push(it),
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub version: u64,
    pub total: u64,
    pub per_taxon: BTreeMap<String, u64>,
    pub per_season: BTreeMap<String, u64>,
    pub gini_imbalance: f64,
    /// Classes below the configured floor.
    pub underfilled: Vec<String>,
}

/// Gini coefficient of class counts; 0 for an empty or all-zero list.
pub fn gini(counts: &[u64]) -> f64 {
    let n = counts.len();
    let total: u64 = counts.iter().sum();
    if n == 0 || total == 0 {
        return 0.0;
    }
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let weighted: f64 = sorted.iter().enumerate().map(|(i, &x)| (i as f64 + 1.0) * x as f64).sum();
    let g = 2.0 * weighted / (n as f64 * total as f64) - (n as f64 + 1.0) / n as f64;
    g.max(0.0)
}

impl BalanceReport {
    /// `classes` lists every class to report, including empty ones; `frames`
    /// yields (taxon_id, season) for each counted frame.
    pub fn build<'a>(
        version: u64,
        classes: impl IntoIterator<Item = &'a str>,
        frames: impl IntoIterator<Item = (&'a str, &'a str)>,
        min_class_count: u64,
    ) -> Self {
        let mut per_taxon: BTreeMap<String, u64> = classes.into_iter().map(|c| (c.to_string(), 0)).collect();
        let mut per_season: BTreeMap<String, u64> = BTreeMap::new();
        let mut total = 0;
        for (taxon, season) in frames {
            *per_taxon.entry(taxon.to_string()).or_default() += 1;
            *per_season.entry(season.to_string()).or_default() += 1;
            total += 1;
        }
        let counts: Vec<u64> = per_taxon.values().copied().collect();
        let underfilled = per_taxon
            .iter()
            .filter(|(_, &c)| c < min_class_count)
            .map(|(k, _)| k.clone())
            .collect();
        Self {
            version,
            total,
            gini_imbalance: gini(&counts),
            per_taxon,
            per_season,
            underfilled,
        }
    }

    /// `kind,key,count` rows; the Gini value is the last row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let write = |w: &mut csv::Writer<Vec<u8>>, row: [&str; 3]| w.write_record(row).expect("in-memory csv");
        write(&mut w, ["kind", "key", "count"]);
        for (k, v) in &self.per_taxon {
            write(&mut w, ["taxon", k, &v.to_string()]);
        }
        for (k, v) in &self.per_season {
            write(&mut w, ["season", k, &v.to_string()]);
        }
        write(&mut w, ["total", "all", &self.total.to_string()]);
        write(&mut w, ["summary", "gini_imbalance", &format!("{:.6}", self.gini_imbalance)]);
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("ascii csv")
    }
}

/// Per-verdict counts of a set of reports.
pub fn verdict_counts<'a>(reports: impl IntoIterator<Item = &'a QcReport>) -> BTreeMap<&'static str, usize> {
    let mut m: HashMap<&'static str, usize> = HashMap::new();
    for r in reports {
        *m.entry(r.verdict.as_str()).or_default() += 1;
    }
    m.into_iter().collect()
}
