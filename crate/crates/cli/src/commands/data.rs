//! File helpers shared by the subcommands.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Component, Path, PathBuf};

use image::RgbImage;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use vishash::corpus::{self, InfographicRecord, TagVocabulary};
use vishash::mlp::{StepSchedule, Target, BACKGROUND_LABEL};
use vishash::{Error, PixelBox, Result};

use crate::cli::ScheduleArgs;

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub ranking: Vec<ScoredLabel>,
    /// Tags found verbatim in the transcript, when snapping was requested.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snapped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredLabel {
    pub label: String,
    pub score: f64,
}

impl Prediction {
    pub fn labels(&self) -> Vec<String> {
        self.ranking.iter().map(|s| s.label.clone()).collect()
    }
}

pub fn say(out: &mut dyn Write, line: impl AsRef<str>) -> Result<()> {
    writeln!(out, "{}", line.as_ref()).map_err(|e| Error::io("<stdout>", e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let text: String = items
        .iter()
        .map(|i| serde_json::to_string(i).expect("record serializes") + "\n")
        .collect();
    write_text(path, &text)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("{}: {e}", path.display()),
            })
        })
        .collect()
}

/// Loads a manifest and makes relative image paths absolute, taking them
/// relative to the manifest's directory.
pub fn load_records(manifest: &Path) -> Result<Vec<InfographicRecord>> {
    let mut records = corpus::load_manifest(manifest)?;
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let base = std::path::absolute(&base).map_err(|e| Error::io(&base, e))?;
    for r in &mut records {
        if r.image_path.is_relative() {
            r.image_path = base.join(&r.image_path);
        }
    }
    Ok(records)
}

/// `path` relative to the directory `base`, when both share a root; `path`
/// unchanged otherwise. Neither needs to exist.
pub fn relative_to(path: &Path, base: &Path) -> Result<PathBuf> {
    let path = std::path::absolute(path).map_err(|e| Error::io(path, e))?;
    let base = std::path::absolute(base).map_err(|e| Error::io(base, e))?;
    let (p, b): (Vec<Component>, Vec<Component>) = (path.components().collect(), base.components().collect());
    if p.first() != b.first() {
        return Ok(path);
    }
    let common = p.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let mut rel: PathBuf = b[common..].iter().map(|_| Component::ParentDir).collect();
    rel.extend(&p[common..]);
    Ok(rel)
}

pub fn load_image(path: &Path) -> Result<RgbImage> {
    image::open(path)
        .map(|i| i.to_rgb8())
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

pub fn load_predictions(path: &Path) -> Result<HashMap<String, Prediction>> {
    Ok(read_jsonl::<Prediction>(path)?
        .into_iter()
        .map(|p| (p.id.clone(), p))
        .collect())
}

/// Background label followed by the sorted categories present.
pub fn category_labels(records: &[InfographicRecord]) -> Vec<String> {
    let mut labels = vec![BACKGROUND_LABEL.to_string()];
    labels.extend(corpus::categories(records));
    labels
}

/// The vocabulary file's tags, or the sorted tags present in `records`.
pub fn tag_labels(vocab: Option<&PathBuf>, records: &[InfographicRecord]) -> Result<Vec<String>> {
    match vocab {
        Some(path) => Ok(TagVocabulary::load(path)?.tags),
        None => Ok(records
            .iter()
            .flat_map(|r| r.tags.iter().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()),
    }
}

/// Class index of the record's category; records without one map to the
/// background class.
pub fn category_target(record: &InfographicRecord, labels: &[String]) -> Result<Target> {
    match &record.category {
        None => Ok(Target::Class(0)),
        Some(c) => labels
            .iter()
            .position(|l| l == c)
            .map(Target::Class)
            .ok_or_else(|| Error::UnknownLabel(c.clone())),
    }
}

/// 0/1 vector over `labels`; tags outside the label set are ignored.
pub fn tag_target(record: &InfographicRecord, labels: &[String]) -> Target {
    Target::Multi(
        labels
            .iter()
            .map(|l| if record.tags.contains(l) { 1.0 } else { 0.0 })
            .collect(),
    )
}

pub fn schedule(args: &ScheduleArgs, default: Option<StepSchedule>) -> Result<Option<StepSchedule>> {
    match (args.lr_step_factor, args.lr_step_period) {
        (None, None) => Ok(default),
        (Some(factor), Some(period)) if period > 0 => Ok(Some(StepSchedule { factor, period })),
        _ => Err(Error::Config(
            "--lr-step-factor and --lr-step-period must be given together, with a positive period".into(),
        )),
    }
}

pub fn side_range(min: f64, max: f64) -> Result<(f64, f64)> {
    if !(min > 0.0 && min <= max && max <= 1.0) {
        return Err(Error::Config(format!("side range must satisfy 0 < min <= max <= 1, got ({min}, {max})")));
    }
    Ok((min, max))
}

/// File-name-safe rendering of a tag.
pub fn file_stem(text: &str) -> String {
    text.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone, Deserialize)]
struct ScoredBox {
    #[serde(flatten)]
    bbox: PixelBox,
    #[serde(default)]
    score: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct BoxList {
    id: String,
    boxes: Vec<ScoredBox>,
}

/// Proposal boxes per image id, best score first.
pub fn load_box_lists(path: &Path) -> Result<HashMap<String, Vec<PixelBox>>> {
    Ok(read_jsonl::<BoxList>(path)?
        .into_iter()
        .map(|mut l| {
            l.boxes.sort_by(|a, b| b.score.total_cmp(&a.score));
            (l.id, l.boxes.into_iter().map(|b| b.bbox).collect())
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_climb_to_the_common_ancestor() {
        let rel = |p: &str, b: &str| relative_to(Path::new(p), Path::new(b)).unwrap();
        assert_eq!(rel("/x/synth/images/a.png", "/x/cur"), PathBuf::from("../synth/images/a.png"));
        assert_eq!(rel("/x/cur/a.png", "/x/cur"), PathBuf::from("a.png"));
        assert_eq!(rel("/a.png", "/x/y"), PathBuf::from("../../a.png"));
    }
}
