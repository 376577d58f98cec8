//! Metrics and baselines.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::PixelBox;
use crate::seed;
use crate::vision::patch::sample_crop_boxes;

/// One annotator's answer for an (image, tag) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthBoxSet {
    pub image_id: String,
    pub tag: String,
    pub annotator: String,
    pub no_visual: bool,
    pub boxes: Vec<PixelBox>,
}

impl GroundTruthBoxSet {
    pub fn validate(&self, width: u32, height: u32) -> Result<()> {
        if self.no_visual && !self.boxes.is_empty() {
            return Err(Error::Config(format!(
                "{}/{}: no_visual answers cannot carry boxes",
                self.image_id, self.tag
            )));
        }
        for b in &self.boxes {
            if b.is_empty() {
                return Err(Error::DegenerateBox(*b));
            }
            if !b.fits_in(width, height) {
                return Err(Error::Config(format!("box {b:?} exceeds {width}x{height}")));
            }
        }
        Ok(())
    }
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<Vec<GroundTruthBoxSet>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ground_truth(&text)
}

pub fn parse_ground_truth(text: &str) -> Result<Vec<GroundTruthBoxSet>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn ground_truth_jsonl(sets: &[GroundTruthBoxSet]) -> String {
    sets.iter()
        .map(|s| serde_json::to_string(s).expect("ground truth serializes") + "\n")
        .collect()
}

/// Intersection over union of the pixel sets covered by two boxes.
pub fn iou(a: &PixelBox, b: &PixelBox) -> Result<f64> {
    for bx in [a, b] {
        if bx.is_empty() {
            return Err(Error::DegenerateBox(*bx));
        }
    }
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    Ok(inter as f64 / union as f64)
}

/// Fraction of images whose ground-truth label is within the top `k` of
/// their ranking, for each `k`.
pub fn topk_accuracy(
    rankings: &HashMap<String, Vec<String>>,
    ground_truth: &[(String, String)],
    ks: &[usize],
) -> Result<Vec<(usize, f64)>> {
    let max_k = ks.iter().copied().max().unwrap_or(0);
    let mut hits = vec![0usize; ks.len()];
    for (id, label) in ground_truth {
        let ranking = rankings
            .get(id)
            .ok_or_else(|| Error::MissingPrediction(id.clone()))?;
        if ranking.len() < max_k {
            return Err(Error::MissingPrediction(format!("{id} (ranking shorter than {max_k})")));
        }
        let pos = ranking.iter().position(|r| r == label);
        for (h, &k) in hits.iter_mut().zip(ks) {
            if pos.is_some_and(|p| p < k) {
                *h += 1;
            }
        }
    }
    let n = ground_truth.len().max(1) as f64;
    Ok(ks.iter().zip(hits).map(|(&k, h)| (k, h as f64 / n)).collect())
}

/// Precision and recall of the top `k` predicted tags.
pub fn tag_pr_at_k(predicted: &[String], ground_truth: &BTreeSet<String>, k: usize) -> Result<(f64, f64)> {
    if ground_truth.is_empty() {
        return Err(Error::EmptyGroundTruth("tag set".into()));
    }
    let hit = predicted.iter().take(k).filter(|t| ground_truth.contains(*t)).count() as f64;
    Ok((hit / k as f64, hit / ground_truth.len() as f64))
}

/// Mean precision and recall at `k` over images.
pub fn mean_tag_pr(
    rankings: &HashMap<String, Vec<String>>,
    ground_truth: &[(String, BTreeSet<String>)],
    k: usize,
) -> Result<(f64, f64)> {
    let mut sum = (0.0, 0.0);
    for (id, gt) in ground_truth {
        let ranking = rankings
            .get(id)
            .ok_or_else(|| Error::MissingPrediction(id.clone()))?;
        let (p, r) = tag_pr_at_k(ranking, gt, k).map_err(|_| Error::EmptyGroundTruth(id.clone()))?;
        sum.0 += p;
        sum.1 += r;
    }
    let n = ground_truth.len().max(1) as f64;
    Ok((sum.0 / n, sum.1 / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HashtagMetrics {
    /// Hits over pairs that received a proposal.
    pub precision: f64,
    /// Hits over all evaluated pairs.
    pub accuracy: f64,
    /// Mean best IOU over all pairs; 0 for pairs without a proposal.
    pub mean_iou: f64,
    /// Pairs with a proposal over all pairs.
    pub success_rate: f64,
    pub pairs: usize,
    pub with_proposal: usize,
    pub hits: usize,
    pub excluded_no_visual: usize,
}

/// Union of every annotator's boxes per (image, tag). Pairs where nobody
/// drew a box are dropped and counted.
pub fn evaluation_pairs(gts: &[GroundTruthBoxSet]) -> (BTreeMap<(String, String), Vec<PixelBox>>, usize) {
    let mut all: BTreeMap<(String, String), Vec<PixelBox>> = BTreeMap::new();
    for g in gts {
        all.entry((g.image_id.clone(), g.tag.clone()))
            .or_default()
            .extend(g.boxes.iter().copied());
    }
    let before = all.len();
    all.retain(|_, boxes| !boxes.is_empty());
    let excluded = before - all.len();
    (all, excluded)
}

/// A pair is a hit when its proposal has IOU strictly above `threshold`
/// with at least one ground-truth box.
pub fn hashtag_metrics(
    proposals: &HashMap<(String, String), PixelBox>,
    gts: &[GroundTruthBoxSet],
    threshold: f64,
) -> Result<HashtagMetrics> {
    let (pairs, excluded) = evaluation_pairs(gts);
    let mut with_proposal = 0;
    let mut hits = 0;
    let mut iou_sum = 0.0;
    for (key, boxes) in &pairs {
        let Some(p) = proposals.get(key) else { continue };
        with_proposal += 1;
        let best = boxes
            .iter()
            .map(|b| iou(p, b))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        iou_sum += best;
        if best > threshold {
            hits += 1;
        }
    }
    let n = pairs.len();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(HashtagMetrics {
        precision: ratio(hits, with_proposal),
        accuracy: ratio(hits, n),
        mean_iou: if n == 0 { 0.0 } else { iou_sum / n as f64 },
        success_rate: ratio(with_proposal, n),
        pairs: n,
        with_proposal,
        hits,
        excluded_no_visual: excluded,
    })
}

/// One random multi-scale crop per pair, scored like a pipeline proposal.
pub fn random_crop_baseline(
    image_dims: &HashMap<String, (u32, u32)>,
    gts: &[GroundTruthBoxSet],
    side_range: (f64, f64),
    seed: u64,
    threshold: f64,
) -> Result<HashtagMetrics> {
    let (pairs, _) = evaluation_pairs(gts);
    let mut proposals = HashMap::new();
    for (image_id, tag) in pairs.keys() {
        let &(w, h) = image_dims
            .get(image_id)
            .ok_or_else(|| Error::MissingPrediction(image_id.clone()))?;
        let s = seed::derive(seed::derive(seed, image_id), tag);
        let crop = sample_crop_boxes(w, h, 1, side_range, s)?[0];
        proposals.insert((image_id.clone(), tag.clone()), crop);
    }
    hashtag_metrics(&proposals, gts, threshold)
}

/// Top-k rate of always predicting the `k` most frequent labels (ties by
/// label order).
pub fn category_chance(labels: &[String], ks: &[usize]) -> Vec<(usize, f64)> {
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *freq.entry(l).or_default() += 1;
    }
    let mut counts: Vec<(&str, usize)> = freq.into_iter().collect();
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let n = labels.len().max(1) as f64;
    ks.iter()
        .map(|&k| (k, counts.iter().take(k).map(|c| c.1).sum::<usize>() as f64 / n))
        .collect()
}

/// Serializes with object keys sorted, pretty-printed, newline-terminated.
pub fn canonical_json(value: &impl Serialize) -> String {
    // `serde_json::Value` objects are BTreeMaps, so a round trip sorts keys.
    let v = serde_json::to_value(value).expect("report serializes");
    serde_json::to_string_pretty(&v).expect("value serializes") + "\n"
}
