//! Sticky, stratified train/val/test assignment.
//!
//! Within each class, target sizes are the largest-remainder apportionment of
//! the eligible frames. Frames that already hold a split keep it; unassigned
//! frames are ordered by a seed-keyed hash of their id and poured into the
//! splits that are short of their target, train first.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DatasetError, ManifestEntry};
use crate::digest::ContentId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl Split {
    pub const ASSIGNED: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ratios are quantized to parts per billion so apportionment is exact
/// integer arithmetic.
pub const RATIO_SCALE: u64 = 1_000_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitPolicy {
    /// (train, val, test)
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitPolicy {
    fn default() -> Self {
        Self {
            ratios: [0.8, 0.1, 0.1],
            seed: 0,
        }
    }
}

impl SplitPolicy {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(DatasetError::BadRatios(format!("{:?}: each ratio must be positive", self.ratios)));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DatasetError::BadRatios(format!("{:?} sums to {sum}, not 1", self.ratios)));
        }
        Ok(())
    }

    pub fn weights(&self) -> [u64; 3] {
        self.ratios.map(|r| (r * RATIO_SCALE as f64).round() as u64)
    }
}

/// Largest-remainder split of `n` items by integer `weights`; remainder ties
/// go to the earlier index.
pub fn apportion(n: u64, weights: &[u64]) -> Vec<u64> {
    let total: u128 = weights.iter().map(|&w| w as u128).sum();
    if total == 0 {
        return vec![0; weights.len()];
    }
    let mut seats: Vec<u64> = Vec::with_capacity(weights.len());
    let mut rems: Vec<(u128, usize)> = Vec::with_capacity(weights.len());
    for (i, &w) in weights.iter().enumerate() {
        let q = n as u128 * w as u128;
        seats.push((q / total) as u64);
        rems.push((q % total, i));
    }
    let left = n - seats.iter().sum::<u64>();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in rems.iter().take(left as usize) {
        seats[i] += 1;
    }
    seats
}

/// First 8 bytes (big-endian) of SHA-256(seed LE ‖ frame id).
pub fn keyed_hash(seed: u64, frame_id: &ContentId) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(frame_id.as_str().as_bytes());
    let d = h.finalize();
    u64::from_be_bytes(d[..8].try_into().expect("sha256 has 32 bytes"))
}

pub(super) fn assign(entries: &mut BTreeMap<ContentId, ManifestEntry>, policy: &SplitPolicy) {
    let weights = policy.weights();
    let mut by_class: BTreeMap<String, Vec<ContentId>> = BTreeMap::new();
    for e in entries.values().filter(|e| e.splittable()) {
        by_class.entry(e.taxon_id.clone()).or_default().push(e.frame_id.clone());
    }
    for ids in by_class.values() {
        let target = apportion(ids.len() as u64, &weights);
        let mut have = [0u64; 3];
        let mut fresh: Vec<(u64, &ContentId)> = Vec::new();
        for id in ids {
            match Split::ASSIGNED.iter().position(|s| *s == entries[id].split) {
                Some(i) => have[i] += 1,
                None => fresh.push((keyed_hash(policy.seed, id), id)),
            }
        }
        let deficit: Vec<u64> = (0..3).map(|i| target[i].saturating_sub(have[i])).collect();
        let quota = if deficit.iter().sum::<u64>() == fresh.len() as u64 {
            deficit
        } else {
            apportion(fresh.len() as u64, &deficit)
        };
        fresh.sort();
        let mut order = fresh.into_iter();
        for (i, q) in quota.into_iter().enumerate() {
            for (_, id) in order.by_ref().take(q as usize) {
                if let Some(e) = entries.get_mut(id) {
                    e.split = Split::ASSIGNED[i];
                }
            }
        }
    }
}
