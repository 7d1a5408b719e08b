//! Drawing primitives for synthetic figures.
//!
//! Text is drawn with pseudo-glyphs: each character maps to a fixed 5x7
//! bitmap whose first column is solid and whose other columns each carry
//! at least one pixel, so a rendered string's ink box is exactly its
//! layout box. Glyphs are 1 px apart and words 2 px apart, close enough
//! for the segmenter to merge a whole label into one component.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::imgio::{BBox, RasterImage};

pub const GLYPH_W: u32 = 5;
pub const GLYPH_H: u32 = 7;
const CHAR_GAP: u32 = 1;
const WORD_GAP: u32 = 2;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Column bitmasks (bit r = row r) of a character's glyph.
pub fn glyph(c: char) -> [u8; GLYPH_W as usize] {
    let mut cols = [0u8; GLYPH_W as usize];
    cols[0] = 0x7f;
    let mut h = splitmix64(c as u64);
    for col in cols.iter_mut().skip(1) {
        h = splitmix64(h);
        for r in 0..GLYPH_H {
            if (h >> (r * 4)) & 0xf < 5 {
                *col |= 1 << r;
            }
        }
        if *col == 0 {
            *col = 1 << ((h >> 40) % GLYPH_H as u64);
        }
    }
    cols
}

/// Layout width and height of `text` at `scale`.
pub fn text_size(text: &str, scale: u32) -> (u32, u32) {
    let mut w = 0;
    for (i, word) in text.split_whitespace().enumerate() {
        if i > 0 {
            w += WORD_GAP;
        }
        let n = word.chars().count() as u32;
        w += n * GLYPH_W * scale + (n - 1) * CHAR_GAP;
    }
    (w, GLYPH_H * scale)
}

/// Draws `text` with its top-left ink pixel at (x, y); returns the ink box.
pub fn draw_text(img: &mut RasterImage, x: u32, y: u32, text: &str, scale: u32, ink: u8) -> BBox {
    let (w, h) = text_size(text, scale);
    let mut cx = x;
    for (i, word) in text.split_whitespace().enumerate() {
        if i > 0 {
            cx += WORD_GAP - CHAR_GAP;
        }
        for c in word.chars() {
            for (col, bits) in glyph(c).iter().enumerate() {
                for r in 0..GLYPH_H {
                    if bits & (1 << r) == 0 {
                        continue;
                    }
                    for dy in 0..scale {
                        for dx in 0..scale {
                            img.set(cx + col as u32 * scale + dx, y + r * scale + dy, [ink; 3]);
                        }
                    }
                }
            }
            cx += GLYPH_W * scale + CHAR_GAP;
        }
    }
    BBox::from_origin_size(x, y, w, h)
}

pub fn fill_rect(img: &mut RasterImage, b: &BBox, rgb: [u8; 3]) {
    for y in b.y0..=b.y1 {
        for x in b.x0..=b.x1 {
            img.set(x, y, rgb);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GelVariant {
    Normal,
    WhiteOnBlack,
    LowContrast,
}

/// One elliptical band, in coordinates local to its gel cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    pub level: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GelStyle {
    pub variant: GelVariant,
    pub background: u8,
    pub noise_sigma: f64,
}

/// Gel cell with noisy flat background and soft-edged bands. Pixel values
/// stay within 1..=250 so every cell pixel differs from page white.
pub fn draw_gel(img: &mut RasterImage, rng: &mut ChaCha8Rng, b: &BBox, style: &GelStyle, bands: &[Band]) {
    let noise = Normal::new(0.0, style.noise_sigma).expect("finite sigma");
    for y in b.y0..=b.y1 {
        for x in b.x0..=b.x1 {
            let (lx, ly) = ((x - b.x0) as f64, (y - b.y0) as f64);
            let mut v = style.background as f64;
            for band in bands {
                let d = ((lx - band.cx) / band.rx).powi(2) + ((ly - band.cy) / band.ry).powi(2);
                if d < 1.0 {
                    let t = (1.0 - d).powf(0.6);
                    v += (band.level as f64 - v) * t;
                }
            }
            v += noise.sample(rng);
            let g = v.round().clamp(1.0, 250.0) as u8;
            img.set(x, y, [g; 3]);
        }
    }
}

/// Smooth two-color gradient with heavy per-channel noise.
pub fn draw_photo(img: &mut RasterImage, rng: &mut ChaCha8Rng, b: &BBox, c0: [u8; 3], c1: [u8; 3], sigma: f64) {
    let noise = Normal::new(0.0, sigma).expect("finite sigma");
    let (w, h) = (b.width() as f64, b.height() as f64);
    for y in b.y0..=b.y1 {
        for x in b.x0..=b.x1 {
            let t = (((x - b.x0) as f64 / w) + ((y - b.y0) as f64 / h)) / 2.0;
            let mut px = [0u8; 3];
            for c in 0..3 {
                let base = c0[c] as f64 * (1.0 - t) + c1[c] as f64 * t;
                px[c] = (base + noise.sample(rng)).round().clamp(0.0, 250.0) as u8;
            }
            img.set(x, y, px);
        }
    }
}

/// Dark tinted field with bright round blobs; blob centers are local.
pub fn draw_microscopy(
    img: &mut RasterImage,
    rng: &mut ChaCha8Rng,
    b: &BBox,
    background: u8,
    tint: [f64; 3],
    blobs: &[(f64, f64, f64)],
) {
    let noise = Normal::new(0.0, 6.0).expect("finite sigma");
    for y in b.y0..=b.y1 {
        for x in b.x0..=b.x1 {
            let (lx, ly) = ((x - b.x0) as f64, (y - b.y0) as f64);
            let mut v = background as f64;
            for &(cx, cy, r) in blobs {
                let d2 = ((lx - cx).powi(2) + (ly - cy).powi(2)) / (r * r);
                v += 200.0 * (-d2).exp();
            }
            let n = noise.sample(rng);
            let mut px = [0u8; 3];
            for c in 0..3 {
                px[c] = ((v + n) * tint[c]).round().clamp(0.0, 250.0) as u8;
            }
            img.set(x, y, px);
        }
    }
}

pub fn random_color(rng: &mut ChaCha8Rng) -> [u8; 3] {
    let palette = [
        [31, 119, 180],
        [255, 127, 14],
        [44, 160, 44],
        [214, 39, 40],
        [148, 103, 189],
        [140, 86, 75],
        [23, 190, 207],
    ];
    palette[rng.random_range(0..palette.len())]
}
