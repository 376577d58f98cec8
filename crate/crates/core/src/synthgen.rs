//! Synthetic infographics: planted icon glyphs on a cluttered canvas, with
//! transcripts correlated to the planted tags.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::corpus::{write_manifest, GtIcon, InfographicRecord, MergeMap, TagVocabulary};
use crate::error::{Error, Result};
use crate::eval::{ground_truth_jsonl, GroundTruthBoxSet};
use crate::geom::PixelBox;
use crate::seed;
use crate::text::EmbeddingTable;

/// Glyph shapes, combined with [`PALETTE`] colors to give each tag its own look.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Circle,
    Triangle,
    Bars,
    Ring,
    Cross,
    Star,
}

pub const SHAPES: [Shape; 6] = [
    Shape::Circle,
    Shape::Triangle,
    Shape::Bars,
    Shape::Ring,
    Shape::Cross,
    Shape::Star,
];

/// Ordered so that, with six categories, the four colors inside any one
/// category are far apart in RGB.
pub const PALETTE: [[u8; 3]; 10] = [
    [215, 40, 40],
    [30, 150, 50],
    [245, 150, 0],
    [130, 40, 180],
    [215, 205, 0],
    [230, 50, 170],
    [0, 170, 170],
    [100, 170, 250],
    [40, 70, 220],
    [110, 60, 20],
];

/// Largest tag count with distinct shape–color pairs.
pub const MAX_TAGS: usize = SHAPES.len() * PALETTE.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Glyph {
    pub shape: Shape,
    pub color: [u8; 3],
}

/// Glyph of tag `i`. The map `i = 6a + b ↦ (b, (7a + b) mod 10)` is injective
/// on `0..60`.
pub fn glyph_for_tag(i: usize) -> Glyph {
    let (a, b) = (i / SHAPES.len(), i % SHAPES.len());
    Glyph {
        shape: SHAPES[b],
        color: PALETTE[(7 * a + b) % PALETTE.len()],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_images: usize,
    pub canvas: (u32, u32),
    pub n_categories: usize,
    pub n_tags: usize,
    /// Total glyphs per image, inclusive.
    pub icons_per_image: (usize, usize),
    /// Distinct tags per image, inclusive; capped by the category's tag count.
    pub tags_per_image: (usize, usize),
    pub icon_side: (u32, u32),
    pub words_per_image: usize,
    pub noise_word_fraction: f64,
    pub words_per_category: usize,
    pub noise_vocabulary: usize,
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_images: 500,
            canvas: (1024, 1536),
            n_categories: 6,
            n_tags: 20,
            icons_per_image: (1, 4),
            tags_per_image: (1, 3),
            icon_side: (64, 160),
            words_per_image: 95,
            noise_word_fraction: 0.2,
            words_per_category: 12,
            noise_vocabulary: 150,
            embedding_dim: 64,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_categories == 0 || self.n_tags < self.n_categories {
            return fail(format!(
                "need 1 ≤ n_categories ≤ n_tags, got {} and {}",
                self.n_categories, self.n_tags
            ));
        }
        if self.n_tags > MAX_TAGS {
            return fail(format!("at most {MAX_TAGS} tags have distinct glyphs"));
        }
        let (ilo, ihi) = self.icons_per_image;
        let (tlo, thi) = self.tags_per_image;
        if ilo == 0 || ilo > ihi || tlo == 0 || tlo > thi {
            return fail("icon and tag ranges must be non-empty and start at 1 or more".into());
        }
        let (slo, shi) = self.icon_side;
        if slo < 4 || slo > shi || shi > self.canvas.0.min(self.canvas.1) {
            return fail(format!("icon side range ({slo}, {shi}) does not fit the canvas"));
        }
        if !(0.0..=1.0).contains(&self.noise_word_fraction) {
            return fail("noise_word_fraction must lie in [0, 1]".into());
        }
        if self.words_per_image < thi.min(3) || self.embedding_dim == 0 || self.words_per_category == 0 {
            return fail("words_per_image, words_per_category and embedding_dim must be positive".into());
        }
        Ok(())
    }
}

/// The synthetic vocabulary: tag names, category names and their word lists.
#[derive(Debug, Clone)]
pub struct Lexicon {
    pub tag_names: Vec<String>,
    pub tag_category: Vec<usize>,
    pub category_names: Vec<String>,
    pub category_words: Vec<Vec<String>>,
    pub noise_words: Vec<String>,
}

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr", "st", "pl",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

impl Lexicon {
    /// Words depend only on the counts, never on the seed, so that tag
    /// names stay stable across datasets.
    pub fn new(config: &SynthConfig) -> Lexicon {
        let mut rng = seed::rng(seed::derive(0, "synth-lexicon"));
        let mut seen = BTreeSet::new();
        let mut fresh = |rng: &mut ChaCha8Rng, syllables: usize| loop {
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS.choose(rng).unwrap());
                w.push_str(VOWELS.choose(rng).unwrap());
            }
            if seen.insert(w.clone()) {
                return w;
            }
        };
        let tag_names: Vec<String> = (0..config.n_tags).map(|_| fresh(&mut rng, 3)).collect();
        let category_names: Vec<String> = (0..config.n_categories).map(|_| fresh(&mut rng, 2)).collect();
        let category_words = (0..config.n_categories)
            .map(|_| (0..config.words_per_category).map(|_| fresh(&mut rng, 2)).collect())
            .collect();
        let noise_words = (0..config.noise_vocabulary).map(|_| fresh(&mut rng, 2)).collect();
        Lexicon {
            tag_category: (0..config.n_tags).map(|i| i % config.n_categories).collect(),
            tag_names,
            category_names,
            category_words,
            noise_words,
        }
    }

    pub fn tags_of(&self, category: usize) -> Vec<usize> {
        (0..self.tag_names.len())
            .filter(|&t| self.tag_category[t] == category)
            .collect()
    }

    /// Category-clustered word vectors: a Gaussian center per category,
    /// members at center plus half-scale noise, noise words unclustered.
    pub fn embeddings(&self, dim: usize, seed_value: u64) -> EmbeddingTable {
        let mut rng = seed::rng(seed::derive(seed_value, "synth-embeddings"));
        let gauss = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..dim).map(|_| rng.sample(StandardNormal)).collect() };
        let centers: Vec<Vec<f64>> = (0..self.category_names.len()).map(|_| gauss(&mut rng)).collect();
        let mut table = EmbeddingTable::new(dim);
        let add = |table: &mut EmbeddingTable, rng: &mut ChaCha8Rng, word: &str, center: Option<&[f64]>| {
            let noise = gauss(rng);
            let v: Vec<f64> = match center {
                Some(c) => c.iter().zip(&noise).map(|(c, n)| c + 0.5 * n).collect(),
                None => noise,
            };
            table.insert(word, &v).expect("dimension matches");
        };
        for (c, name) in self.category_names.iter().enumerate() {
            add(&mut table, &mut rng, name, Some(&centers[c]));
            for w in &self.category_words[c] {
                add(&mut table, &mut rng, w, Some(&centers[c]));
            }
        }
        for (t, name) in self.tag_names.iter().enumerate() {
            add(&mut table, &mut rng, name, Some(&centers[self.tag_category[t]]));
        }
        for w in &self.noise_words {
            add(&mut table, &mut rng, w, None);
        }
        table
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub records: Vec<InfographicRecord>,
    pub images: Vec<RgbImage>,
    pub vocabulary: TagVocabulary,
    pub categories: Vec<String>,
    pub embeddings: EmbeddingTable,
}

pub fn image_id(index: usize) -> String {
    format!("synth_{index:05}")
}

/// Generates the whole dataset in memory.
pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let lexicon = Lexicon::new(config);
    let pairs = (0..config.n_images)
        .into_par_iter()
        .map(|i| render_image(config, &lexicon, i))
        .collect::<Result<Vec<_>>>()?;
    let (records, images): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok(SynthDataset {
        vocabulary: vocabulary_of(&records),
        categories: sorted(&lexicon.category_names),
        embeddings: lexicon.embeddings(config.embedding_dim, config.seed),
        records,
        images,
    })
}

/// Streams the dataset to `dir`: `images/*.png`, `manifest.jsonl`,
/// `ground_truth.jsonl`, `embeddings.txt` and `vocab.json`. Returns the
/// records.
pub fn generate_to_dir(config: &SynthConfig, dir: impl AsRef<Path>) -> Result<Vec<InfographicRecord>> {
    config.validate()?;
    let dir = dir.as_ref();
    let image_dir = dir.join("images");
    fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
    let lexicon = Lexicon::new(config);
    let mut records = Vec::with_capacity(config.n_images);
    let indices: Vec<usize> = (0..config.n_images).collect();
    for chunk in indices.chunks(64) {
        let rendered = chunk
            .par_iter()
            .map(|&i| {
                let (record, image) = render_image(config, &lexicon, i)?;
                let path = dir.join(&record.image_path);
                image.save(&path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
                Ok(record)
            })
            .collect::<Result<Vec<_>>>()?;
        records.extend(rendered);
    }
    write_manifest(&records, dir.join("manifest.jsonl"))?;
    let gt_path = dir.join("ground_truth.jsonl");
    fs::write(&gt_path, ground_truth_jsonl(&ground_truth(&records))).map_err(|e| Error::io(&gt_path, e))?;
    lexicon
        .embeddings(config.embedding_dim, config.seed)
        .save(dir.join("embeddings.txt"))?;
    vocabulary_of(&records).save(dir.join("vocab.json"))?;
    Ok(records)
}

/// Ground truth for every (image, tag) pair, taken from the planted icons.
pub fn ground_truth(records: &[InfographicRecord]) -> Vec<GroundTruthBoxSet> {
    let mut out = Vec::new();
    for r in records {
        let icons = r.gt_icons.as_deref().unwrap_or_default();
        for tag in &r.tags {
            let boxes: Vec<PixelBox> = icons.iter().filter(|g| &g.tag == tag).map(|g| g.bbox).collect();
            out.push(GroundTruthBoxSet {
                image_id: r.id.clone(),
                tag: tag.clone(),
                annotator: "synthetic".into(),
                no_visual: boxes.is_empty(),
                boxes,
            });
        }
    }
    out
}

fn sorted(words: &[String]) -> Vec<String> {
    let mut v = words.to_vec();
    v.sort();
    v
}

fn vocabulary_of(records: &[InfographicRecord]) -> TagVocabulary {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        for t in &r.tags {
            *counts.entry(t.clone()).or_default() += 1;
        }
    }
    TagVocabulary {
        tags: counts.keys().cloned().collect(),
        counts,
        merge_map: MergeMap::default(),
    }
}

/// Renders image `index`. Each image has its own derived seed, so images
/// can be produced in any order.
pub fn render_image(config: &SynthConfig, lexicon: &Lexicon, index: usize) -> Result<(InfographicRecord, RgbImage)> {
    let mut rng = seed::rng(seed::derive_indexed(config.seed, "synth-image", index as u64));
    let id = image_id(index);
    let (w, h) = config.canvas;

    let category = rng.random_range(0..config.n_categories);
    let mut candidates = lexicon.tags_of(category);
    candidates.shuffle(&mut rng);
    let n_icons = rng.random_range(config.icons_per_image.0..=config.icons_per_image.1);
    let max_tags = config.tags_per_image.1.min(candidates.len()).min(n_icons);
    let min_tags = config.tags_per_image.0.min(max_tags);
    let n_tags = rng.random_range(min_tags..=max_tags);
    let chosen = &candidates[..n_tags];
    let mut icon_tags: Vec<usize> = chosen.to_vec();
    while icon_tags.len() < n_icons {
        icon_tags.push(*chosen.choose(&mut rng).unwrap());
    }

    let mut image = background(w, h, &mut rng);
    let mut placed: Vec<PixelBox> = Vec::new();
    let mut gt_icons = Vec::new();
    for &t in &icon_tags {
        let cell = place(&placed, config, &mut rng)
            .ok_or_else(|| Error::Config(format!("{id}: could not place {n_icons} non-overlapping glyphs")))?;
        placed.push(cell);
        let bbox = draw_glyph(&mut image, cell, glyph_for_tag(t));
        gt_icons.push(GtIcon {
            tag: lexicon.tag_names[t].clone(),
            bbox,
        });
    }

    let transcript = transcript(config, lexicon, category, chosen, &mut rng);
    let record = InfographicRecord {
        image_path: format!("images/{id}.png").into(),
        id,
        width: w,
        height: h,
        category: Some(lexicon.category_names[category].clone()),
        tags: chosen.iter().map(|&t| lexicon.tag_names[t].clone()).collect(),
        transcript,
        gt_icons: Some(gt_icons),
    };
    Ok((record, image))
}

const PLACEMENT_RETRIES: usize = 500;
const GLYPH_MARGIN: u32 = 3;

fn place(placed: &[PixelBox], config: &SynthConfig, rng: &mut ChaCha8Rng) -> Option<PixelBox> {
    let (w, h) = config.canvas;
    for _ in 0..PLACEMENT_RETRIES {
        let side = rng.random_range(config.icon_side.0..=config.icon_side.1);
        let cell = PixelBox::new(rng.random_range(0..=w - side), rng.random_range(0..=h - side), side, side);
        let padded = PixelBox::new(
            cell.x.saturating_sub(GLYPH_MARGIN),
            cell.y.saturating_sub(GLYPH_MARGIN),
            side + 2 * GLYPH_MARGIN,
            side + 2 * GLYPH_MARGIN,
        );
        if placed.iter().all(|p| !p.intersects(&padded)) {
            return Some(cell);
        }
    }
    None
}

fn background(w: u32, h: u32, rng: &mut ChaCha8Rng) -> RgbImage {
    let base = rng.random_range(236u8..=250);
    let tint: [u8; 3] = std::array::from_fn(|_| base - rng.random_range(0u8..6));
    let mut img = RgbImage::from_pixel(w, h, Rgb(tint));

    let grid = rng.random_range(16u32..=40);
    let line = Rgb(tint.map(|c| c - 22));
    for y in (grid / 2..h).step_by(grid as usize) {
        for x in 0..w {
            img.put_pixel(x, y, line);
        }
    }
    for x in (grid / 2..w).step_by(grid as usize) {
        for y in 0..h {
            img.put_pixel(x, y, line);
        }
    }

    // Text-like strokes: short dark dashes arranged in lines.
    let n_lines = (h / 14).max(1);
    for _ in 0..n_lines {
        if rng.random_bool(0.4) {
            continue;
        }
        let y = rng.random_range(0..h.saturating_sub(2).max(1));
        let thick = rng.random_range(1u32..=2);
        let ink = rng.random_range(30u8..=100);
        let mut x = rng.random_range(0..(w / 4).max(1));
        let end = rng.random_range(x..=w);
        while x < end {
            let len = rng.random_range(3u32..=12);
            for dx in 0..len.min(end - x) {
                for dy in 0..thick {
                    if y + dy < h {
                        img.put_pixel(x + dx, y + dy, Rgb([ink; 3]));
                    }
                }
            }
            x += len + rng.random_range(2u32..=5);
        }
    }
    img
}

/// Whether the normalized point `(u, v)` in `[-1, 1]²` (v pointing down)
/// lies inside the shape.
pub fn shape_contains(shape: Shape, u: f64, v: f64) -> bool {
    let r2 = u * u + v * v;
    match shape {
        Shape::Circle => r2 <= 0.9 * 0.9,
        Shape::Ring => (0.5 * 0.5..=0.9 * 0.9).contains(&r2),
        Shape::Cross => (u.abs() <= 0.28 && v.abs() <= 0.9) || (v.abs() <= 0.28 && u.abs() <= 0.9),
        Shape::Bars => {
            v <= 0.9
                && ((-0.9..=-0.4).contains(&u) && v >= 0.2
                    || (-0.25..=0.25).contains(&u) && v >= -0.4
                    || (0.4..=0.9).contains(&u) && v >= -0.9)
        }
        Shape::Triangle => point_in_polygon(u, v, &[(0.0, -0.9), (0.9, 0.85), (-0.9, 0.85)]),
        Shape::Star => {
            let pts: Vec<(f64, f64)> = (0..10)
                .map(|k| {
                    let r = if k % 2 == 0 { 0.95 } else { 0.42 };
                    let a = std::f64::consts::PI * (k as f64 / 5.0 - 0.5);
                    (r * a.cos(), r * a.sin())
                })
                .collect();
            point_in_polygon(u, v, &pts)
        }
    }
}

fn point_in_polygon(x: f64, y: f64, pts: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = pts.len() - 1;
    for i in 0..pts.len() {
        let (xi, yi) = pts[i];
        let (xj, yj) = pts[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Draws the glyph inside `cell` and returns the tight box of drawn pixels.
pub fn draw_glyph(image: &mut RgbImage, cell: PixelBox, glyph: Glyph) -> PixelBox {
    let s = cell.w as f64;
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for py in cell.y..cell.bottom() {
        for px in cell.x..cell.right() {
            let u = 2.0 * ((px - cell.x) as f64 + 0.5) / s - 1.0;
            let v = 2.0 * ((py - cell.y) as f64 + 0.5) / s - 1.0;
            if shape_contains(glyph.shape, u, v) {
                image.put_pixel(px, py, Rgb(glyph.color));
                x0 = x0.min(px);
                y0 = y0.min(py);
                x1 = x1.max(px);
                y1 = y1.max(py);
            }
        }
    }
    if x0 == u32::MAX {
        return PixelBox::new(cell.x, cell.y, 0, 0);
    }
    PixelBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1)
}

const PUNCTUATION: [&str; 5] = [",", ".", ";", ":", "!"];

fn transcript(
    config: &SynthConfig,
    lexicon: &Lexicon,
    category: usize,
    tags: &[usize],
    rng: &mut ChaCha8Rng,
) -> Vec<String> {
    let mut words: Vec<String> = tags.iter().map(|&t| lexicon.tag_names[t].clone()).collect();
    let rest = config.words_per_image.saturating_sub(words.len());
    let n_noise = (config.noise_word_fraction * rest as f64).round() as usize;
    let pool = &lexicon.category_words[category];
    words.push(lexicon.category_names[category].clone());
    for _ in 1..rest - n_noise.min(rest) {
        words.push(pool.choose(rng).unwrap().clone());
    }
    for _ in 0..n_noise {
        words.push(lexicon.noise_words.choose(rng).unwrap().clone());
    }
    words.truncate(config.words_per_image.max(tags.len()));
    words.shuffle(rng);
    words
        .into_iter()
        .map(|w| {
            let mut w = if rng.random_bool(0.2) {
                let mut c = w.chars();
                let first = c.next().unwrap().to_uppercase().collect::<String>();
                first + c.as_str()
            } else {
                w
            };
            if rng.random_bool(0.1) {
                w.push_str(PUNCTUATION.choose(rng).unwrap());
            }
            w
        })
        .collect()
}
