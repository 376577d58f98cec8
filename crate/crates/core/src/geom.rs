use serde::{Deserialize, Serialize};

/// Integer pixel box with a top-left origin. It covers the `w × h` pixels
/// `x..x + w` by `y..y + h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PixelBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl PixelBox {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        PixelBox { x, y, w, h }
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn is_empty(&self) -> bool {
        self.w == 0 || self.h == 0
    }

    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        self.x as u64 + self.w as u64 <= width as u64 && self.y as u64 + self.h as u64 <= height as u64
    }

    pub fn contains(&self, px: u32, py: u32) -> bool {
        px >= self.x && px < self.right() && py >= self.y && py < self.bottom()
    }

    pub fn intersection_area(&self, other: &PixelBox) -> u64 {
        let iw = self.right().min(other.right()).saturating_sub(self.x.max(other.x));
        let ih = self.bottom().min(other.bottom()).saturating_sub(self.y.max(other.y));
        iw as u64 * ih as u64
    }

    pub fn intersects(&self, other: &PixelBox) -> bool {
        self.intersection_area(other) > 0
    }
}
