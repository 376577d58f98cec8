use image::RgbImage;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geom::PixelBox;
use crate::seed;

/// Default range of crop side lengths, as fractions of the image's shorter side.
pub const DEFAULT_SIDE_RANGE: (f64, f64) = (0.1, 0.4);

/// Smallest image side accepted by the random sampler.
pub const MIN_IMAGE_SIDE: u32 = 10;

/// A crop resized to `size × size`, channel-major (RGB planes), values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub source: PixelBox,
    pub size: usize,
    pub pixels: Vec<f64>,
}

/// Square boxes with side `u · min(W, H)` for `u` uniform in `side_range`,
/// and a uniformly drawn top-left corner that keeps the box inside the image.
pub fn sample_crop_boxes(
    width: u32,
    height: u32,
    n: usize,
    side_range: (f64, f64),
    seed: u64,
) -> Result<Vec<PixelBox>> {
    let min_side = width.min(height);
    if min_side < MIN_IMAGE_SIDE {
        return Err(Error::ImageTooSmall {
            width,
            height,
            min_side: MIN_IMAGE_SIDE,
        });
    }
    let (lo, hi) = side_range;
    if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
        return Err(Error::Config(format!("invalid side range ({lo}, {hi})")));
    }
    let mut rng = seed::rng(seed);
    Ok((0..n)
        .map(|_| {
            let u: f64 = if lo == hi { lo } else { rng.random_range(lo..=hi) };
            let side = ((u * min_side as f64).round() as u32).clamp(1, min_side);
            let x = rng.random_range(0..=width - side);
            let y = rng.random_range(0..=height - side);
            PixelBox::new(x, y, side, side)
        })
        .collect())
}

pub fn sample_random_patches(
    image: &RgbImage,
    n: usize,
    side_range: (f64, f64),
    patch_size: usize,
    seed: u64,
) -> Result<Vec<Patch>> {
    let boxes = sample_crop_boxes(image.width(), image.height(), n, side_range, seed)?;
    Ok(boxes.iter().map(|b| extract_patch(image, b, patch_size)).collect())
}

/// Tight square around each box: side `max(w, h)`, same center, shifted to
/// stay inside the image. The side shrinks only if it exceeds the image.
pub fn squarify(bbox: &PixelBox, width: u32, height: u32) -> PixelBox {
    let side = bbox.w.max(bbox.h).min(width).min(height);
    let place = |start: u32, extent: u32, limit: u32| -> u32 {
        let start = start as i64 + (extent as i64 - side as i64).div_euclid(2);
        start.clamp(0, (limit - side) as i64) as u32
    };
    PixelBox::new(place(bbox.x, bbox.w, width), place(bbox.y, bbox.h, height), side, side)
}

pub fn squarify_proposals(boxes: &[PixelBox], image: &RgbImage, patch_size: usize) -> Vec<Patch> {
    boxes
        .iter()
        .map(|b| extract_patch(image, &squarify(b, image.width(), image.height()), patch_size))
        .collect()
}

/// Bilinear resample of `bbox` to `size × size`, sampling at pixel centers.
pub fn extract_patch(image: &RgbImage, bbox: &PixelBox, size: usize) -> Patch {
    let (iw, ih) = (image.width() as usize, image.height() as usize);
    let raw = image.as_raw();
    let plane = size * size;
    let mut pixels = vec![0.0; 3 * plane];
    let sx = bbox.w as f64 / size as f64;
    let sy = bbox.h as f64 / size as f64;
    let axis = |i: usize, start: u32, scale: f64, limit: usize| -> (usize, usize, f64) {
        let pos = (start as f64 + (i as f64 + 0.5) * scale - 0.5).clamp(0.0, (limit - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(limit - 1);
        (i0, i1, pos - i0 as f64)
    };
    let xs: Vec<_> = (0..size).map(|i| axis(i, bbox.x, sx, iw)).collect();
    for oy in 0..size {
        let (y0, y1, fy) = axis(oy, bbox.y, sy, ih);
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for c in 0..3 {
                let at = |x: usize, y: usize| raw[(y * iw + x) * 3 + c] as f64;
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                pixels[c * plane + oy * size + ox] = (top * (1.0 - fy) + bottom * fy) / 255.0;
            }
        }
    }
    Patch {
        source: *bbox,
        size,
        pixels,
    }
}
