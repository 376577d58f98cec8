//! Dataset records, manifests, tag merging, curation and splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::PixelBox;
use crate::seed;

/// A planted icon location, known for synthetic data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtIcon {
    pub tag: String,
    #[serde(flatten)]
    pub bbox: PixelBox,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfographicRecord {
    pub id: String,
    #[serde(rename = "image")]
    pub image_path: PathBuf,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub tags: BTreeSet<String>,
    pub transcript: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_icons: Option<Vec<GtIcon>>,
}

impl InfographicRecord {
    pub fn aspect_ratio(&self) -> f64 {
        self.width as f64 / self.height as f64
    }
}

const REQUIRED_FIELDS: [&str; 6] = ["id", "image", "width", "height", "tags", "transcript"];

/// Reads a JSON Lines manifest. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<InfographicRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_manifest(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_manifest(reader: impl BufRead) -> Result<Vec<InfographicRecord>> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<manifest>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let obj = value.as_object().ok_or_else(|| Error::Parse {
            line: line_no,
            message: "expected a JSON object".into(),
        })?;
        if let Some(field) = REQUIRED_FIELDS.iter().find(|f| !obj.contains_key(**f)) {
            return Err(Error::MissingField {
                line: line_no,
                field: field.to_string(),
            });
        }
        let record: InfographicRecord = serde_json::from_value(value).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if record.width == 0 || record.height == 0 {
            return Err(Error::Parse {
                line: line_no,
                message: "width and height must be at least 1".into(),
            });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn write_manifest(records: &[InfographicRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).expect("records always serialize");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Raw tag → canonical tag. Chains are resolved on construction so lookups
/// are idempotent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeMap {
    map: BTreeMap<String, String>,
}

impl MergeMap {
    pub fn new(pairs: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let raw: BTreeMap<String, String> = pairs.into_iter().filter(|(a, b)| a != b).collect();
        let mut map = BTreeMap::new();
        for start in raw.keys() {
            let mut current = start;
            let mut seen = BTreeSet::new();
            while let Some(next) = raw.get(current) {
                if !seen.insert(current.clone()) {
                    return Err(Error::Config(format!("merge map has a cycle through `{start}`")));
                }
                current = next;
            }
            map.insert(start.clone(), current.clone());
        }
        Ok(MergeMap { map })
    }

    /// Parses `raw<TAB>canonical` lines; `#` starts a comment line.
    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (raw, canonical) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: idx + 1,
                message: "expected `raw<TAB>canonical`".into(),
            })?;
            pairs.push((raw.trim().to_string(), canonical.trim().to_string()));
        }
        Self::new(pairs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text)
    }

    pub fn canonical<'a>(&'a self, tag: &'a str) -> &'a str {
        self.map.get(tag).map(String::as_str).unwrap_or(tag)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

pub fn merge_tags<'a>(raw_tags: impl IntoIterator<Item = &'a String>, merge_map: &MergeMap) -> BTreeSet<String> {
    raw_tags
        .into_iter()
        .map(|t| merge_map.canonical(t).to_string())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagVocabulary {
    /// Canonical tags in sorted order; a tag's position is its label index.
    pub tags: Vec<String>,
    pub counts: BTreeMap<String, usize>,
    pub merge_map: MergeMap,
}

impl TagVocabulary {
    pub fn index_of(&self, tag: &str) -> Option<usize> {
        self.tags.binary_search_by(|t| t.as_str().cmp(tag)).ok()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("vocabulary serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurateConfig {
    pub min_tag_count: usize,
    /// Inclusive bounds on width / height.
    pub aspect_bounds: (f64, f64),
    /// Records carrying more retained tags than this are dropped.
    pub max_tags_per_image: Option<usize>,
    /// Keep records without a category (they train the background class).
    pub admit_uncategorized: bool,
}

impl Default for CurateConfig {
    fn default() -> Self {
        CurateConfig {
            min_tag_count: 50,
            aspect_bounds: (1.0 / 5.0, 5.0),
            max_tags_per_image: None,
            admit_uncategorized: false,
        }
    }
}

/// Filters records and tags down to a consistent subset: every surviving
/// tag has at least `min_tag_count` surviving images, and every surviving
/// record has at least one surviving tag. The two filters alternate until
/// neither removes anything.
pub fn curate(
    records: &[InfographicRecord],
    merge_map: &MergeMap,
    config: &CurateConfig,
) -> Result<(Vec<InfographicRecord>, TagVocabulary)> {
    if config.min_tag_count == 0 {
        return Err(Error::Config("min_tag_count must be at least 1".into()));
    }
    let (lo, hi) = config.aspect_bounds;
    let mut kept: Vec<InfographicRecord> = records
        .iter()
        .filter(|r| config.admit_uncategorized || r.category.is_some())
        .filter(|r| {
            let aspect = r.aspect_ratio();
            aspect >= lo && aspect <= hi
        })
        .map(|r| {
            let mut r = r.clone();
            r.tags = merge_tags(&r.tags, merge_map);
            r
        })
        .filter(|r| !r.tags.is_empty())
        .collect();

    let counts = loop {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for r in &kept {
            for t in &r.tags {
                *counts.entry(t.clone()).or_default() += 1;
            }
        }
        let before = kept.len();
        let mut tags_removed = false;
        for r in &mut kept {
            let n = r.tags.len();
            r.tags.retain(|t| counts[t] >= config.min_tag_count);
            tags_removed |= r.tags.len() != n;
        }
        kept.retain(|r| !r.tags.is_empty());
        if let Some(cap) = config.max_tags_per_image {
            kept.retain(|r| r.tags.len() <= cap);
        }
        if kept.len() == before && !tags_removed {
            break counts;
        }
    };

    if kept.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let vocab = TagVocabulary {
        tags: counts.keys().cloned().collect(),
        counts,
        merge_map: merge_map.clone(),
    };
    Ok((kept, vocab))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
}

impl DatasetSplit {
    /// `(train, test)` records, in input order.
    pub fn partition(&self, records: &[InfographicRecord]) -> (Vec<InfographicRecord>, Vec<InfographicRecord>) {
        let test: BTreeSet<&str> = self.test_ids.iter().map(String::as_str).collect();
        records.iter().cloned().partition(|r| !test.contains(r.id.as_str()))
    }
}

/// Holds out `round(ratio · N)` records. Membership depends only on the
/// seed and each record's id, never on input order; both id lists keep the
/// input order.
pub fn split(records: &[InfographicRecord], ratio: f64, seed: u64) -> Result<DatasetSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    let n_test = (ratio * records.len() as f64).round() as usize;
    let mut keyed: Vec<(u64, &str)> = records
        .iter()
        .map(|r| (id_hash(seed, &r.id), r.id.as_str()))
        .collect();
    keyed.sort_unstable();
    let test: BTreeSet<&str> = keyed.iter().take(n_test).map(|(_, id)| *id).collect();
    let (test_ids, train_ids): (Vec<String>, Vec<String>) = records
        .iter()
        .map(|r| r.id.clone())
        .partition(|id| test.contains(id.as_str()));
    Ok(DatasetSplit {
        train_ids,
        test_ids,
        seed,
    })
}

fn id_hash(seed: u64, id: &str) -> u64 {
    seed::derive(seed, id)
}

/// Sorted distinct categories present in `records`.
pub fn categories(records: &[InfographicRecord]) -> Vec<String> {
    records
        .iter()
        .filter_map(|r| r.category.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}
