//! Visual hashtag extraction: dense crop scoring → per-pixel activation map
//! → threshold → connected components → refinement → best box per tag.

use std::collections::VecDeque;
use std::fs;
use std::io::Write;
use std::path::Path;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::PixelBox;
use crate::seed;
use crate::vision::mil::VisionModel;
use crate::vision::patch::{extract_patch, sample_crop_boxes, DEFAULT_SIDE_RANGE};

pub const DEFAULT_CROPS: usize = 3500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredCrop {
    pub bbox: PixelBox,
    pub confidence: f64,
}

/// Scores `n` random multi-scale crops for one label.
pub fn score_crops(
    image: &RgbImage,
    model: &VisionModel,
    tag: &str,
    n: usize,
    side_range: (f64, f64),
    seed: u64,
) -> Result<Vec<ScoredCrop>> {
    let idx = model.label_index(tag)?;
    Ok(score_crops_multi(image, model, &[idx], n, side_range, seed)?.remove(0))
}

/// Scores the same crops for several labels, encoding each crop once.
/// Returns one list per entry of `label_indices`.
pub fn score_crops_multi(
    image: &RgbImage,
    model: &VisionModel,
    label_indices: &[usize],
    n: usize,
    side_range: (f64, f64),
    seed: u64,
) -> Result<Vec<Vec<ScoredCrop>>> {
    let boxes = sample_crop_boxes(image.width(), image.height(), n, side_range, seed)?;
    let size = model.patch_size();
    let hidden: Vec<Vec<f64>> = boxes
        .par_iter()
        .map(|b| model.encoder.encode(&extract_patch(image, b, size).pixels))
        .collect::<Result<_>>()?;
    Ok(label_indices
        .iter()
        .map(|&label| {
            boxes
                .iter()
                .zip(&hidden)
                .map(|(b, h)| ScoredCrop {
                    bbox: *b,
                    confidence: model.score_hidden(h, label),
                })
                .collect()
        })
        .collect())
}

/// Per-pixel confidence sums and coverage counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMap {
    pub width: u32,
    pub height: u32,
    pub sum: Vec<f64>,
    pub count: Vec<u32>,
}

impl ActivationMap {
    pub fn new(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        ActivationMap {
            width,
            height,
            sum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    fn idx(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn value_at(&self, x: u32, y: u32) -> f64 {
        let i = self.idx(x, y);
        self.value(i)
    }

    fn value(&self, i: usize) -> f64 {
        match self.count[i] {
            0 => 0.0,
            c => self.sum[i] / c as f64,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.sum.len()).map(|i| self.value(i)).collect()
    }

    pub fn covered_fraction(&self) -> f64 {
        self.count.iter().filter(|&&c| c > 0).count() as f64 / self.count.len() as f64
    }

    /// Mean of the pixel values inside `bbox` (uncovered pixels count as 0).
    pub fn mean_in_box(&self, bbox: &PixelBox) -> f64 {
        let mut acc = 0.0;
        for y in bbox.y..bbox.bottom() {
            for x in bbox.x..bbox.right() {
                acc += self.value_at(x, y);
            }
        }
        acc / bbox.area() as f64
    }

    /// Binary PGM (P5), min-max normalized to 0..=255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let values = self.values();
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(values.iter().map(|v| {
            if range > 0.0 {
                ((v - lo) / range * 255.0).round() as u8
            } else {
                0
            }
        }));
        out
    }

    /// Raw grid: magic `IHMF`, u32 width, u32 height, u32 reserved, then
    /// row-major f32 values, all little-endian.
    pub fn to_raw(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.sum.len());
        out.extend_from_slice(b"IHMF");
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for v in self.values() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }

    pub fn write_raw(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_raw()).map_err(|e| Error::io(path, e))
    }
}

/// Adds each crop's confidence to every pixel it covers, in crop order.
pub fn accumulate_heatmap(width: u32, height: u32, crops: &[ScoredCrop]) -> ActivationMap {
    let mut map = ActivationMap::new(width, height);
    let w = width as usize;
    for crop in crops {
        let b = crop.bbox;
        debug_assert!(b.fits_in(width, height));
        for y in b.y as usize..b.bottom() as usize {
            let row = y * w;
            for i in row + b.x as usize..row + b.right() as usize {
                map.sum[i] += crop.confidence;
                map.count[i] += 1;
            }
        }
    }
    map
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// Strictly above μ + k·σ over covered pixels.
    MeanPlusKStd(f64),
    /// Every covered pixel.
    AllCovered,
}

impl ThresholdPolicy {
    /// `k = −∞` selects [`ThresholdPolicy::AllCovered`].
    pub fn from_k(k: f64) -> Self {
        if k == f64::NEG_INFINITY {
            ThresholdPolicy::AllCovered
        } else {
            ThresholdPolicy::MeanPlusKStd(k)
        }
    }
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::MeanPlusKStd(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Mask {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, on: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = on;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

pub fn threshold_map(map: &ActivationMap, policy: ThresholdPolicy) -> Mask {
    let mut mask = Mask::new(map.width, map.height);
    let policy = match policy {
        ThresholdPolicy::MeanPlusKStd(k) => ThresholdPolicy::from_k(k),
        p => p,
    };
    let covered: Vec<usize> = (0..map.count.len()).filter(|&i| map.count[i] > 0).collect();
    match policy {
        ThresholdPolicy::AllCovered => covered.iter().for_each(|&i| mask.bits[i] = true),
        ThresholdPolicy::MeanPlusKStd(k) => {
            if covered.is_empty() {
                return mask;
            }
            // Statistics of offsets from the first covered value keep a
            // constant map exactly constant.
            let n = covered.len() as f64;
            let origin = map.value(covered[0]);
            let mean = covered.iter().map(|&i| map.value(i) - origin).sum::<f64>() / n;
            let var = covered
                .iter()
                .map(|&i| (map.value(i) - origin - mean).powi(2))
                .sum::<f64>()
                / n;
            let cut = mean + k * var.sqrt();
            for &i in &covered {
                mask.bits[i] = map.value(i) - origin > cut;
            }
        }
    }
    mask
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    /// Row-major pixel indices, ascending.
    pub pixels: Vec<usize>,
    pub bbox: PixelBox,
}

impl Component {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    pub fn fill_ratio(&self) -> f64 {
        self.area() as f64 / self.bbox.area() as f64
    }
}

/// Breadth-first labelling from a row-major scan, so components come out
/// ordered by their first (minimum) pixel.
pub fn connected_components(mask: &Mask, connectivity: Connectivity) -> Vec<Component> {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut seen = vec![false; mask.bits.len()];
    let mut out = Vec::new();
    let four: &[(i64, i64)] = &[(0, -1), (-1, 0), (1, 0), (0, 1)];
    let eight: &[(i64, i64)] = &[(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];
    let offsets = match connectivity {
        Connectivity::Four => four,
        Connectivity::Eight => eight,
    };
    let mut queue = VecDeque::new();
    for start in 0..mask.bits.len() {
        if !mask.bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        let (mut x0, mut y0, mut x1, mut y1) = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
        while let Some(i) = queue.pop_front() {
            pixels.push(i);
            let (x, y) = ((i as i64) % w, (i as i64) / w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for (dx, dy) in offsets {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                let j = (ny * w + nx) as usize;
                if mask.bits[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        pixels.sort_unstable();
        out.push(Component {
            pixels,
            bbox: PixelBox::new(x0 as u32, y0 as u32, (x1 - x0 + 1) as u32, (y1 - y0 + 1) as u32),
        });
    }
    out
}

/// Turns a candidate region into a final box, or discards it.
pub trait Refiner {
    fn refine(&self, component: &Component, map: &ActivationMap) -> Option<PixelBox>;
}

/// Keeps components that are large enough and compact enough; returns their
/// tight bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateRefiner {
    pub min_area_fraction: f64,
    pub fill_ratio_min: f64,
}

impl Default for GateRefiner {
    fn default() -> Self {
        GateRefiner {
            min_area_fraction: 0.005,
            fill_ratio_min: 0.25,
        }
    }
}

impl Refiner for GateRefiner {
    fn refine(&self, component: &Component, map: &ActivationMap) -> Option<PixelBox> {
        let image_area = map.width as f64 * map.height as f64;
        if (component.area() as f64) < self.min_area_fraction * image_area {
            return None;
        }
        if component.fill_ratio() < self.fill_ratio_min {
            return None;
        }
        Some(component.bbox)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashtagProposal {
    pub image_id: String,
    pub tag: String,
    pub bbox: PixelBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractConfig {
    pub n_crops: usize,
    pub side_range: (f64, f64),
    pub threshold: ThresholdPolicy,
    pub connectivity: Connectivity,
    pub refiner: GateRefiner,
    pub seed: u64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            n_crops: DEFAULT_CROPS,
            side_range: DEFAULT_SIDE_RANGE,
            threshold: ThresholdPolicy::default(),
            connectivity: Connectivity::Four,
            refiner: GateRefiner::default(),
            seed: 0,
        }
    }
}

/// Outcome for one (image, tag) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TagResult {
    pub image_id: String,
    pub tag: String,
    /// Refined proposals by descending confidence (or the single fallback).
    pub proposals: Vec<HashtagProposal>,
    pub fallback_used: bool,
    pub heatmap: ActivationMap,
}

impl TagResult {
    pub fn best(&self) -> Option<&HashtagProposal> {
        self.proposals.first()
    }

    /// `{"image_id","tag","proposals":[{"x","y","w","h","confidence"}],"fallback_used"}`
    pub fn to_json(&self) -> ProposalRecord {
        ProposalRecord {
            image_id: self.image_id.clone(),
            tag: self.tag.clone(),
            proposals: self
                .proposals
                .iter()
                .map(|p| ProposalBox {
                    bbox: p.bbox,
                    confidence: p.confidence,
                })
                .collect(),
            fallback_used: self.fallback_used,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalBox {
    #[serde(flatten)]
    pub bbox: PixelBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub image_id: String,
    pub tag: String,
    pub proposals: Vec<ProposalBox>,
    pub fallback_used: bool,
}

pub fn write_proposals(records: &[ProposalRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("proposal serializes");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn load_proposals(path: impl AsRef<Path>) -> Result<Vec<ProposalRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
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

/// Turns one tag's heatmap into ranked proposals.
pub fn proposals_from_map(
    image_id: &str,
    tag: &str,
    map: &ActivationMap,
    crops: &[ScoredCrop],
    config: &ExtractConfig,
    refiner: &dyn Refiner,
    fallback: bool,
) -> (Vec<HashtagProposal>, bool) {
    let mask = threshold_map(map, config.threshold);
    let components = connected_components(&mask, config.connectivity);
    let proposal = |bbox: PixelBox| HashtagProposal {
        image_id: image_id.to_string(),
        tag: tag.to_string(),
        bbox,
        confidence: map.mean_in_box(&bbox),
    };
    let mut kept: Vec<HashtagProposal> = components
        .iter()
        .filter_map(|c| refiner.refine(c, map))
        .map(proposal)
        .collect();
    if !kept.is_empty() || !fallback {
        kept.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        return (kept, false);
    }
    // Fallback: the most confident raw component, else the most confident crop.
    let candidate = components
        .iter()
        .map(|c| proposal(c.bbox))
        .reduce(|best, p| if p.confidence > best.confidence { p } else { best })
        .or_else(|| {
            crops
                .iter()
                .copied()
                .reduce(|best, c| if c.confidence > best.confidence { c } else { best })
                .map(|c| proposal(c.bbox))
        });
    (candidate.into_iter().collect(), true)
}

/// Full pipeline for one image and its (predicted) tags.
pub fn extract_hashtags(
    image_id: &str,
    image: &RgbImage,
    tags: &[String],
    model: &VisionModel,
    config: &ExtractConfig,
    fallback: bool,
) -> Result<Vec<TagResult>> {
    let indices = tags
        .iter()
        .map(|t| model.label_index(t))
        .collect::<Result<Vec<_>>>()?;
    let crop_seed = seed::derive(config.seed, image_id);
    let scored = score_crops_multi(image, model, &indices, config.n_crops, config.side_range, crop_seed)?;
    Ok(tags
        .iter()
        .zip(scored)
        .map(|(tag, crops)| {
            let map = accumulate_heatmap(image.width(), image.height(), &crops);
            let (proposals, fallback_used) =
                proposals_from_map(image_id, tag, &map, &crops, config, &config.refiner, fallback);
            TagResult {
                image_id: image_id.to_string(),
                tag: tag.clone(),
                proposals,
                fallback_used,
                heatmap: map,
            }
        })
        .collect())
}
