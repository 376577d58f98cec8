//! Independent reference implementations used as test oracles. Shared by
//! the property tests here and the CLI acceptance harness.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use vishash::corpus::InfographicRecord;
use vishash::gradcheck::{check_mlp, check_vision};
use vishash::hashtag::{Mask, ScoredCrop};
use vishash::mlp::{HeadKind, MlpModel, Target};
use vishash::seed;
use vishash::vision::{Aggregation, EncoderConfig, Patch, VisionModel};
use vishash::PixelBox;

/// IOU by rasterizing both boxes and counting pixels.
pub fn raster_iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let (x1, y1) = (a.x.min(b.x), a.y.min(b.y));
    let (x2, y2) = ((a.x + a.w).max(b.x + b.w), (a.y + a.h).max(b.y + b.h));
    let inside = |r: &PixelBox, x: u32, y: u32| x >= r.x && x < r.x + r.w && y >= r.y && y < r.y + r.h;
    let (mut inter, mut union) = (0u64, 0u64);
    for y in y1..y2 {
        for x in x1..x2 {
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += (ia && ib) as u64;
            union += (ia || ib) as u64;
        }
    }
    inter as f64 / union as f64
}

pub fn random_box(rng: &mut impl Rng, max: u32) -> PixelBox {
    let w = rng.random_range(1..=max / 2);
    let h = rng.random_range(1..=max / 2);
    PixelBox::new(rng.random_range(0..=max - w), rng.random_range(0..=max - h), w, h)
}

/// Connected components by depth-first flood fill, as a set of pixel sets.
pub fn flood_fill(mask: &Mask, eight: bool) -> BTreeSet<BTreeSet<usize>> {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut seen = vec![false; mask.bits.len()];
    let mut parts = BTreeSet::new();
    let mut offsets = vec![(1, 0), (-1, 0), (0, 1), (0, -1)];
    if eight {
        offsets.extend([(1, 1), (1, -1), (-1, 1), (-1, -1)]);
    }
    for start in 0..mask.bits.len() {
        if !mask.bits[start] || seen[start] {
            continue;
        }
        let mut part = BTreeSet::new();
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            part.insert(i);
            let (x, y) = (i as i64 % w, i as i64 / w);
            for (dx, dy) in &offsets {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                let j = (ny * w + nx) as usize;
                if mask.bits[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        parts.insert(part);
    }
    parts
}

pub fn random_mask(rng: &mut impl Rng, w: u32, h: u32, density: f64) -> Mask {
    let mut m = Mask::new(w, h);
    for b in m.bits.iter_mut() {
        *b = rng.random_bool(density);
    }
    m
}

/// Per-pixel average over the crops covering it, by looping over every
/// pixel and every crop; 0 where nothing covers the pixel.
pub fn brute_heatmap(w: u32, h: u32, crops: &[ScoredCrop]) -> Vec<f64> {
    let mut out = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0;
            let mut n = 0u32;
            for c in crops {
                let b = c.bbox;
                if x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h {
                    sum += c.confidence;
                    n += 1;
                }
            }
            out.push(if n == 0 { 0.0 } else { sum / n as f64 });
        }
    }
    out
}

pub fn random_crops(rng: &mut impl Rng, w: u32, h: u32, n: usize) -> Vec<ScoredCrop> {
    (0..n)
        .map(|_| {
            let side = rng.random_range(1..=w.min(h));
            ScoredCrop {
                bbox: PixelBox::new(rng.random_range(0..=w - side), rng.random_range(0..=h - side), side, side),
                confidence: rng.random_range(0.0..1.0),
            }
        })
        .collect()
}

/// Curation by the literal definition: drop tags under the count, drop
/// records left without tags, repeat until nothing changes.
pub fn curate_oracle(records: &[InfographicRecord], min_count: usize) -> (Vec<String>, BTreeSet<String>) {
    let mut kept: Vec<(String, BTreeSet<String>)> = records
        .iter()
        .filter(|r| r.category.is_some() && !r.tags.is_empty())
        .map(|r| (r.id.clone(), r.tags.clone()))
        .collect();
    loop {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for (_, tags) in &kept {
            for t in tags {
                *counts.entry(t).or_default() += 1;
            }
        }
        let good: BTreeSet<String> = counts
            .iter()
            .filter(|(_, &c)| c >= min_count)
            .map(|(t, _)| t.to_string())
            .collect();
        let next: Vec<(String, BTreeSet<String>)> = kept
            .iter()
            .map(|(id, tags)| (id.clone(), tags.intersection(&good).cloned().collect::<BTreeSet<_>>()))
            .filter(|(_, tags)| !tags.is_empty())
            .collect();
        if next == kept {
            return (kept.into_iter().map(|(id, _)| id).collect(), good);
        }
        kept = next;
    }
}

pub fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("l{i}")).collect()
}

fn jitter(slices: Vec<&mut [f64]>, rng: &mut impl Rng) {
    for s in slices {
        s.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
}

fn random_target(head: HeadKind, d_out: usize, rng: &mut impl Rng) -> Target {
    match head {
        HeadKind::Softmax => Target::Class(rng.random_range(0..d_out)),
        HeadKind::Sigmoid => Target::Multi((0..d_out).map(|_| rng.random_range(0..2) as f64).collect()),
    }
}

/// Worst relative error of analytic vs central-difference gradients over
/// `n` random 5-4-3 networks, alternating heads.
pub fn text_gradient_worst(n: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let mut rng = seed::rng(seed::derive_indexed(11, "text-gradcheck", i));
        let head = if i % 2 == 0 { HeadKind::Softmax } else { HeadKind::Sigmoid };
        let mut model = MlpModel::init(5, 4, labels(3), head, i);
        jitter(model.slices_mut().into_iter().collect(), &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target = random_target(head, 3, &mut rng);
        let check = check_mlp(&model, &x, &target, 1e-5).unwrap();
        assert_eq!(check.n_params, 5 * 4 + 4 + 4 * 3 + 3);
        worst = worst.max(check.max_rel_error);
    }
    worst
}

pub fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        patch_size: 8,
        conv1_channels: 3,
        conv2_channels: 4,
        kernel: 5,
        stride: 2,
        padding: 2,
        hidden: 5,
    }
}

pub fn random_patch(rng: &mut impl Rng, size: usize) -> Patch {
    Patch {
        source: PixelBox::new(0, 0, size as u32, size as u32),
        size,
        pixels: (0..3 * size * size).map(|_| rng.random_range(0.0..1.0)).collect(),
    }
}

/// Same check end to end through conv, pooling, bag aggregation and head,
/// cycling through both heads and both aggregations.
pub fn vision_gradient_worst(n: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let mut rng = seed::rng(seed::derive_indexed(12, "vision-gradcheck", i));
        let head = if i % 2 == 0 { HeadKind::Softmax } else { HeadKind::Sigmoid };
        let agg = if (i / 2) % 2 == 0 { Aggregation::Mean } else { Aggregation::Max };
        let mut model = VisionModel::init(tiny_encoder(), labels(3), head, agg, i).unwrap();
        jitter(model.slices_mut(), &mut rng);
        let bag: Vec<Patch> = (0..rng.random_range(1..=3)).map(|_| random_patch(&mut rng, 8)).collect();
        let target = random_target(head, 3, &mut rng);
        let check = check_vision(&model, &bag, &target, 1e-5).unwrap();
        worst = worst.max(check.max_rel_error);
    }
    worst
}

/// Exact MIL invariants on `n` random models and bags. Returns the names
/// of the invariants that failed.
pub fn mil_invariant_failures(n: u64) -> Vec<String> {
    let mut failures = BTreeSet::new();
    for i in 0..n {
        let mut rng = seed::rng(seed::derive_indexed(13, "mil-invariants", i));
        for agg in [Aggregation::Mean, Aggregation::Max] {
            let head = if i % 2 == 0 { HeadKind::Softmax } else { HeadKind::Sigmoid };
            let mut model = VisionModel::init(tiny_encoder(), labels(4), head, agg, i).unwrap();
            jitter(model.slices_mut(), &mut rng);
            let bag: Vec<Patch> = (0..rng.random_range(2..=6)).map(|_| random_patch(&mut rng, 8)).collect();
            let base = model.predict_bag(&bag).unwrap();

            let mut shuffled = bag.clone();
            shuffled.reverse();
            shuffled.rotate_left(1);
            if model.predict_bag(&shuffled).unwrap() != base {
                failures.insert(format!("permutation ({agg:?})"));
            }

            let single = model.predict_bag(&bag[..1]).unwrap();
            let hidden = model.encoder.encode(&bag[0].pixels).unwrap();
            if model.predict_hidden(std::slice::from_ref(&hidden)).unwrap() != single {
                failures.insert(format!("singleton ({agg:?})"));
            }

            match agg {
                Aggregation::Mean => {
                    let doubled: Vec<Patch> = bag.iter().chain(&bag).cloned().collect();
                    if model.predict_bag(&doubled).unwrap() != base {
                        failures.insert("mean duplicate".into());
                    }
                }
                Aggregation::Max => {
                    let mut hidden = model.encode_all(&bag).unwrap();
                    let before = model.predict_hidden(&hidden).unwrap();
                    let k = rng.random_range(0..hidden.len());
                    let dominated: Vec<f64> = hidden[k].iter().map(|v| v - rng.random_range(0.0..1.0)).collect();
                    hidden.insert(rng.random_range(0..=hidden.len()), dominated);
                    if model.predict_hidden(&hidden).unwrap() != before {
                        failures.insert("max dominated".into());
                    }
                }
            }
        }
    }
    failures.into_iter().collect()
}
