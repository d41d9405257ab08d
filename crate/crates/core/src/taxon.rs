//! Taxon registry: the canonical category vocabulary and spoken-name resolution.
//!
//! The registry file is TOML with one `[[taxon]]` table per record (see
//! `taxa-bali26.seed`). Loading validates every record; the resulting
//! [`Registry`] is immutable and cheap to share behind an `Arc`.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// The seed registry shipped with the crate.
pub const BALI26_SEED: &str = include_str!("../taxa-bali26.seed");

/// Default minimum similarity for [`Registry::match_label`].
pub const DEFAULT_MIN_RATIO: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Season {
    Wet,
    Dry,
}

impl fmt::Display for Season {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Season::Wet => "wet",
            Season::Dry => "dry",
        })
    }
}

impl std::str::FromStr for Season {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "wet" => Ok(Season::Wet),
            "dry" => Ok(Season::Dry),
            other => Err(format!("unknown season {other:?} (expected wet or dry)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UseRecord {
    pub plant_part: String,
    pub stage: String,
    pub use_description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonRecord {
    pub taxon_id: String,
    pub common_name: String,
    pub scientific_name: String,
    pub aliases: Vec<String>,
    pub seasons_observed: Vec<Season>,
    #[serde(default)]
    pub growth_stages: Vec<String>,
    #[serde(default)]
    pub uses: Vec<UseRecord>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("registry parse error: {0}")]
    Parse(String),
    #[error("invalid taxon record {taxon_id:?}: {reason}")]
    Invariant { taxon_id: String, reason: String },
}

/// Outcome of resolving spoken text against the registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MatchResult {
    Matched { taxon_id: String, ratio: f64 },
    Ambiguous { taxon_ids: Vec<String> },
    NoMatch,
}

impl MatchResult {
    pub fn matched_taxon(&self) -> Option<&str> {
        match self {
            MatchResult::Matched { taxon_id, .. } => Some(taxon_id),
            _ => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RegistryFile {
    #[serde(default)]
    taxon: Vec<TaxonRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    records: Vec<TaxonRecord>,
    index: HashMap<String, usize>,
    // Normalized aliases per record, parallel to `records`.
    normalized: Vec<Vec<Vec<char>>>,
}

impl Registry {
    /// The bundled 26-entry seed.
    pub fn bali26() -> Self {
        Self::parse(BALI26_SEED).expect("bundled seed registry is valid")
    }

    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RegistryError::Parse(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, RegistryError> {
        let file: RegistryFile =
            toml::from_str(text).map_err(|e| RegistryError::Parse(e.to_string()))?;
        if file.taxon.is_empty() {
            return Err(RegistryError::Parse("no [[taxon]] records".into()));
        }
        Self::from_records(file.taxon)
    }

    pub fn from_records(records: Vec<TaxonRecord>) -> Result<Self, RegistryError> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            validate_record(r)?;
            if index.insert(r.taxon_id.clone(), i).is_some() {
                return Err(RegistryError::Invariant {
                    taxon_id: r.taxon_id.clone(),
                    reason: "duplicate taxon_id".into(),
                });
            }
        }
        let normalized = records
            .iter()
            .map(|r| r.aliases.iter().map(|a| normalize(a).chars().collect()).collect())
            .collect();
        Ok(Self {
            records,
            index,
            normalized,
        })
    }

    pub fn to_toml(&self) -> String {
        let file = RegistryFile {
            taxon: self.records.clone(),
        };
        toml::to_string(&file).expect("registry records serialize")
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[TaxonRecord] {
        &self.records
    }

    pub fn get(&self, taxon_id: &str) -> Option<&TaxonRecord> {
        self.index.get(taxon_id).map(|&i| &self.records[i])
    }

    pub fn contains(&self, taxon_id: &str) -> bool {
        self.index.contains_key(taxon_id)
    }

    /// Resolves spoken text to a taxon by normalized Levenshtein ratio.
    ///
    /// Each taxon scores the best ratio over its aliases. A unique top scorer
    /// at or above `min_ratio` is `Matched`; ties at the top are `Ambiguous`.
    pub fn match_label(&self, spoken: &str, min_ratio: f64) -> MatchResult {
        let spoken: Vec<char> = normalize(spoken).chars().collect();
        if spoken.is_empty() {
            return MatchResult::NoMatch;
        }
        let mut best = f64::NEG_INFINITY;
        let mut top: Vec<usize> = Vec::new();
        for (i, aliases) in self.normalized.iter().enumerate() {
            let score = aliases
                .iter()
                .map(|a| similarity_ratio(&spoken, a))
                .fold(0.0_f64, f64::max);
            if score > best {
                best = score;
                top.clear();
                top.push(i);
            } else if score == best {
                top.push(i);
            }
        }
        if top.is_empty() || best < min_ratio {
            return MatchResult::NoMatch;
        }
        if top.len() == 1 {
            MatchResult::Matched {
                taxon_id: self.records[top[0]].taxon_id.clone(),
                ratio: best,
            }
        } else {
            MatchResult::Ambiguous {
                taxon_ids: top.iter().map(|&i| self.records[i].taxon_id.clone()).collect(),
            }
        }
    }
}

/// Case-folds, trims and collapses internal whitespace.
pub fn normalize(text: &str) -> String {
    text.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// `1 - distance / max(len)`, 0 when both are empty.
pub fn similarity_ratio(a: &[char], b: &[char]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 0.0;
    }
    1.0 - levenshtein(a, b) as f64 / longest as f64
}

pub fn levenshtein(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let subst = prev[j] + usize::from(ca != cb);
            cur[j + 1] = subst.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn validate_record(r: &TaxonRecord) -> Result<(), RegistryError> {
    let fail = |reason: &str| RegistryError::Invariant {
        taxon_id: r.taxon_id.clone(),
        reason: reason.to_owned(),
    };
    if r.taxon_id.is_empty() {
        return Err(fail("empty taxon_id"));
    }
    let id_ok = r
        .taxon_id
        .split('-')
        .all(|part| !part.is_empty() && part.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit()));
    if !id_ok {
        return Err(fail("taxon_id must be lowercase and hyphenated"));
    }
    if r.common_name.trim().is_empty() {
        return Err(fail("empty common_name"));
    }
    let tokens: Vec<&str> = r.scientific_name.split_whitespace().collect();
    let binomial_ok = tokens.len() == 2
        && tokens[0].chars().next().is_some_and(char::is_uppercase)
        && tokens.iter().all(|t| t.chars().all(char::is_alphabetic));
    if !binomial_ok {
        return Err(fail(&format!(
            "scientific_name {:?} is not a \"Genus species\" binomial",
            r.scientific_name
        )));
    }
    let common = normalize(&r.common_name);
    if !r.aliases.iter().any(|a| normalize(a) == common) {
        return Err(fail("aliases must include the common name"));
    }
    if r.aliases.iter().any(|a| normalize(a).is_empty()) {
        return Err(fail("empty alias"));
    }
    if r.seasons_observed.is_empty() {
        return Err(fail("seasons_observed is empty"));
    }
    for u in &r.uses {
        if u.plant_part.trim().is_empty() || u.stage.trim().is_empty() || u.use_description.trim().is_empty() {
            return Err(fail("use record with empty field"));
        }
    }
    Ok(())
}
