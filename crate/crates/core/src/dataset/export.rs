//! Classifier-ready directory export.
//!
//! Layout: `<root>/<split>/<taxon_id>/<frame_id>.png`, one directory per
//! registry taxon under every split (empty ones included, so class indices are
//! stable), plus `manifest.json`, `taxa.json` and `SHA256SUMS` at the root.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{canonical_json, DatasetError, DatasetStore, Split};
use crate::store::ContentStore;
use crate::taxon::Registry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub version: u64,
    pub root: PathBuf,
    /// split -> taxon -> frames written
    pub counts: BTreeMap<String, BTreeMap<String, u64>>,
    pub total: u64,
}

impl ExportSummary {
    pub fn split_total(&self, split: Split) -> u64 {
        self.counts.get(split.as_str()).map_or(0, |m| m.values().sum())
    }
}

#[derive(Serialize)]
struct TaxonName<'a> {
    common_name: &'a str,
    scientific_name: &'a str,
}

fn ensure_empty(root: &Path) -> Result<(), DatasetError> {
    match fs::read_dir(root) {
        Ok(mut it) => {
            if it.next().is_some() {
                return Err(DatasetError::ExportTargetNotEmpty(root.to_path_buf()));
            }
            Ok(())
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(fs::create_dir_all(root)?),
        Err(e) => Err(e.into()),
    }
}

impl DatasetStore {
    pub fn export(
        &self,
        version: Option<u64>,
        root: &Path,
        objects: &ContentStore,
        registry: &Registry,
    ) -> Result<ExportSummary, DatasetError> {
        let manifest = self.manifest(version)?;
        ensure_empty(root)?;

        let mut counts: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
        for split in Split::ASSIGNED {
            let per = counts.entry(split.to_string()).or_default();
            for t in registry.records() {
                fs::create_dir_all(root.join(split.as_str()).join(&t.taxon_id))?;
                per.insert(t.taxon_id.clone(), 0);
            }
        }

        let mut sums: Vec<(String, String)> = Vec::new();
        for e in manifest.entries.values().filter(|e| e.exportable()) {
            let bytes = objects.get_verified(&e.frame_id)?;
            let rel = format!("{}/{}/{}.png", e.split, e.taxon_id, e.frame_id);
            let dir = root.join(e.split.as_str()).join(&e.taxon_id);
            if !dir.is_dir() {
                fs::create_dir_all(&dir)?;
            }
            fs::write(root.join(&rel), &bytes)?;
            *counts.entry(e.split.to_string()).or_default().entry(e.taxon_id.clone()).or_insert(0) += 1;
            sums.push((e.frame_id.to_string(), rel));
        }

        let manifest_bytes = canonical_json(&manifest);
        let taxa: BTreeMap<&str, TaxonName> = registry
            .records()
            .iter()
            .map(|t| {
                (
                    t.taxon_id.as_str(),
                    TaxonName {
                        common_name: &t.common_name,
                        scientific_name: &t.scientific_name,
                    },
                )
            })
            .collect();
        let taxa_bytes = canonical_json(&taxa);
        for (name, bytes) in [("manifest.json", &manifest_bytes), ("taxa.json", &taxa_bytes)] {
            fs::write(root.join(name), bytes)?;
            sums.push((hex::encode(Sha256::digest(bytes)), name.to_string()));
        }
        sums.sort_by(|a, b| a.1.cmp(&b.1));
        let listing: String = sums.iter().map(|(d, p)| format!("{d}  {p}\n")).collect();
        fs::write(root.join("SHA256SUMS"), listing)?;

        let total = counts.values().flat_map(|m| m.values()).sum();
        Ok(ExportSummary {
            version: manifest.version,
            root: root.to_path_buf(),
            counts,
            total,
        })
    }

    /// Balance report over counted (passing, non-quarantined) frames.
    pub fn balance_report(
        &self,
        version: Option<u64>,
        registry: &Registry,
        min_class_count: u64,
    ) -> Result<crate::qc::BalanceReport, DatasetError> {
        let m = self.manifest(version)?;
        let seasons: Vec<(String, String)> = m
            .entries
            .values()
            .filter(|e| e.counts())
            .map(|e| (e.taxon_id.clone(), e.provenance.season.to_string()))
            .collect();
        Ok(crate::qc::BalanceReport::build(
            m.version,
            registry.records().iter().map(|r| r.taxon_id.as_str()),
            seasons.iter().map(|(t, s)| (t.as_str(), s.as_str())),
            min_class_count,
        ))
    }
}
