//! Raster decoding, grayscale conversion, cropping and the box geometry
//! shared by every later stage.
//!
//! Coordinates are pixel indices with the origin at the top-left corner.
//! Boxes are inclusive at both corners, so a box with `x0 == x1` is one
//! pixel wide. Every distance rule downstream counts the background pixels
//! strictly between two boxes: boxes that overlap or touch are 0 apart.

use std::io::Cursor;

use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error("unsupported image format {0}")]
    Unsupported(String),
    #[error("box {bbox:?} exceeds {width}x{height} image")]
    OutOfBounds { bbox: BBox, width: u32, height: u32 },
    #[error("invalid dimensions {width}x{height} for {len} pixels")]
    Dimensions { width: u32, height: u32, len: usize },
    #[error("cannot encode image: {0}")]
    Encode(String),
}

/// Axis-aligned box with inclusive corners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    /// Builds a box, swapping corners if they were given out of order.
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        BBox {
            x0: x0.min(x1),
            y0: y0.min(y1),
            x1: x0.max(x1),
            y1: y0.max(y1),
        }
    }

    pub fn from_origin_size(x: u32, y: u32, w: u32, h: u32) -> Self {
        debug_assert!(w > 0 && h > 0);
        BBox::new(x, y, x + w - 1, y + h - 1)
    }

    pub fn full(width: u32, height: u32) -> Self {
        BBox::new(0, 0, width - 1, height - 1)
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0 + 1
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    /// Center in continuous coordinates (pixel `i` spans `[i, i+1)`).
    pub fn center(&self) -> (f64, f64) {
        (
            (self.x0 as f64 + self.x1 as f64 + 1.0) / 2.0,
            (self.y0 as f64 + self.y1 as f64 + 1.0) / 2.0,
        )
    }

    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        self.x1 < width && self.y1 < height
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && self.x1 >= other.x1 && self.y1 >= other.y1
    }

    pub fn contains_point(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.x1.min(other.x1);
        let y1 = self.y1.min(other.y1);
        (x0 <= x1 && y0 <= y1).then_some(BBox { x0, y0, x1, y1 })
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.intersection(other).is_some()
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other).map_or(0, |b| b.area());
        if inter == 0 {
            return 0.0;
        }
        let union = self.area() + other.area() - inter;
        inter as f64 / union as f64
    }

    /// Shifts a box expressed relative to `origin`'s top-left corner into
    /// the coordinate frame `origin` lives in.
    pub fn translate(&self, origin: &BBox) -> BBox {
        BBox {
            x0: self.x0 + origin.x0,
            y0: self.y0 + origin.y0,
            x1: self.x1 + origin.x0,
            y1: self.y1 + origin.y0,
        }
    }

    /// Background columns strictly between the two boxes (0 if their
    /// x-projections overlap or touch).
    pub fn gap_x(&self, other: &BBox) -> u32 {
        axis_gap(self.x0, self.x1, other.x0, other.x1)
    }

    pub fn gap_y(&self, other: &BBox) -> u32 {
        axis_gap(self.y0, self.y1, other.y0, other.y1)
    }

    /// Edge-to-edge distance: the larger of the two per-axis gaps.
    pub fn gap(&self, other: &BBox) -> u32 {
        self.gap_x(other).max(self.gap_y(other))
    }

    /// Distance from pixel `(x, y)` to this box, counted as background
    /// pixels strictly between them along the farther axis.
    pub fn point_distance(&self, x: u32, y: u32) -> u32 {
        axis_gap(x, x, self.x0, self.x1).max(axis_gap(y, y, self.y0, self.y1))
    }

    /// Distance of the farthest pixel of `other` from this box.
    pub fn farthest_distance(&self, other: &BBox) -> u32 {
        [
            (other.x0, other.y0),
            (other.x1, other.y0),
            (other.x0, other.y1),
            (other.x1, other.y1),
        ]
        .into_iter()
        .map(|(x, y)| self.point_distance(x, y))
        .max()
        .unwrap_or(0)
    }
}

fn axis_gap(a0: u32, a1: u32, b0: u32, b1: u32) -> u32 {
    if b0 > a1 {
        b0 - a1 - 1
    } else if a0 > b1 {
        a0 - b1 - 1
    } else {
        0
    }
}

/// 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<[u8; 3]>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, pixels: Vec<[u8; 3]>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || pixels.len() != width as usize * height as usize {
            return Err(ImageError::Dimensions {
                width,
                height,
                len: pixels.len(),
            });
        }
        Ok(RasterImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        RasterImage {
            width,
            height,
            pixels: vec![rgb; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bounds(&self) -> BBox {
        BBox::full(self.width, self.height)
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let w = self.width as usize;
        self.pixels[y as usize * w + x as usize] = rgb;
    }

    pub fn crop(&self, bbox: &BBox) -> Result<RasterImage, ImageError> {
        check_bounds(bbox, self.width, self.height)?;
        let mut pixels = Vec::with_capacity(bbox.area() as usize);
        for y in bbox.y0..=bbox.y1 {
            let row = y as usize * self.width as usize;
            pixels.extend_from_slice(&self.pixels[row + bbox.x0 as usize..=row + bbox.x1 as usize]);
        }
        Ok(RasterImage {
            width: bbox.width(),
            height: bbox.height(),
            pixels,
        })
    }

    /// Single-channel view (0 = red, 1 = green, 2 = blue).
    pub fn channel(&self, c: usize) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            values: self.pixels.iter().map(|p| p[c]).collect(),
        }
    }
}

/// 8-bit luminance raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    values: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, values: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || values.len() != width as usize * height as usize {
            return Err(ImageError::Dimensions {
                width,
                height,
                len: values.len(),
            });
        }
        Ok(GrayImage {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        GrayImage {
            width,
            height,
            values: vec![value; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bounds(&self) -> BBox {
        BBox::full(self.width, self.height)
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        let w = self.width as usize;
        self.values[y as usize * w + x as usize] = v;
    }

    pub fn crop(&self, bbox: &BBox) -> Result<GrayImage, ImageError> {
        check_bounds(bbox, self.width, self.height)?;
        let mut values = Vec::with_capacity(bbox.area() as usize);
        for y in bbox.y0..=bbox.y1 {
            let row = y as usize * self.width as usize;
            values.extend_from_slice(&self.values[row + bbox.x0 as usize..=row + bbox.x1 as usize]);
        }
        Ok(GrayImage {
            width: bbox.width(),
            height: bbox.height(),
            values,
        })
    }
}

fn check_bounds(bbox: &BBox, width: u32, height: u32) -> Result<(), ImageError> {
    if bbox.fits_in(width, height) {
        Ok(())
    } else {
        Err(ImageError::OutOfBounds {
            bbox: *bbox,
            width,
            height,
        })
    }
}

/// BT.601 luma with round-half-up, in exact integer arithmetic.
#[inline]
pub fn luma(rgb: [u8; 3]) -> u8 {
    let v = 299 * rgb[0] as u32 + 587 * rgb[1] as u32 + 114 * rgb[2] as u32;
    ((v + 500) / 1000).min(255) as u8
}

pub fn to_gray(img: &RasterImage) -> GrayImage {
    GrayImage {
        width: img.width,
        height: img.height,
        values: img.pixels.iter().map(|&p| luma(p)).collect(),
    }
}

/// Decodes a PNG or JPEG stream. Alpha is composited over white.
pub fn decode_image(bytes: &[u8]) -> Result<RasterImage, ImageError> {
    let format = image::guess_format(bytes).map_err(|e| ImageError::Decode(e.to_string()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
        return Err(ImageError::Unsupported(format!("{format:?}")));
    }
    let dynamic = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| ImageError::Decode(e.to_string()))?;
    let rgba = dynamic.to_rgba8();
    let (width, height) = rgba.dimensions();
    let pixels = rgba
        .pixels()
        .map(|p| {
            let [r, g, b, a] = p.0;
            [over_white(r, a), over_white(g, a), over_white(b, a)]
        })
        .collect();
    RasterImage::new(width, height, pixels)
}

#[inline]
fn over_white(c: u8, a: u8) -> u8 {
    let v = c as u32 * a as u32 + 255 * (255 - a as u32);
    ((v + 127) / 255) as u8
}

pub fn encode_png(img: &RasterImage) -> Result<Vec<u8>, ImageError> {
    let buf: Vec<u8> = img.pixels.iter().flatten().copied().collect();
    let rgb = RgbImage::from_raw(img.width, img.height, buf).ok_or(ImageError::Dimensions {
        width: img.width,
        height: img.height,
        len: img.pixels.len(),
    })?;
    let mut out = Cursor::new(Vec::new());
    rgb.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| ImageError::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn encode_gray_png(img: &GrayImage) -> Result<Vec<u8>, ImageError> {
    let g = image::GrayImage::from_raw(img.width, img.height, img.values.clone()).ok_or(
        ImageError::Dimensions {
            width: img.width,
            height: img.height,
            len: img.values.len(),
        },
    )?;
    let mut out = Cursor::new(Vec::new());
    g.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| ImageError::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

/// Summed-area table of values and squared values, padded with a zero
/// row and column so window sums need no branches.
#[derive(Debug, Clone)]
pub struct IntegralImage {
    width: u32,
    height: u32,
    sum: Vec<u64>,
    sq: Vec<u64>,
}

impl IntegralImage {
    pub fn new(gray: &GrayImage) -> Self {
        let (w, h) = (gray.width as usize, gray.height as usize);
        let stride = w + 1;
        let mut sum = vec![0u64; stride * (h + 1)];
        let mut sq = vec![0u64; stride * (h + 1)];
        for y in 0..h {
            let mut row_sum = 0u64;
            let mut row_sq = 0u64;
            for x in 0..w {
                let v = gray.values[y * w + x] as u64;
                row_sum += v;
                row_sq += v * v;
                sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + row_sum;
                sq[(y + 1) * stride + x + 1] = sq[y * stride + x + 1] + row_sq;
            }
        }
        IntegralImage {
            width: gray.width,
            height: gray.height,
            sum,
            sq,
        }
    }

    /// Returns `(pixel count, sum, sum of squares)` over an inclusive box.
    pub fn window(&self, bbox: &BBox) -> (u64, u64, u64) {
        let stride = self.width as usize + 1;
        let (x0, y0) = (bbox.x0 as usize, bbox.y0 as usize);
        let (x1, y1) = (bbox.x1 as usize + 1, bbox.y1 as usize + 1);
        let at = |t: &[u64], x: usize, y: usize| t[y * stride + x];
        let s = at(&self.sum, x1, y1) + at(&self.sum, x0, y0) - at(&self.sum, x0, y1) - at(&self.sum, x1, y0);
        let q = at(&self.sq, x1, y1) + at(&self.sq, x0, y0) - at(&self.sq, x0, y1) - at(&self.sq, x1, y0);
        (bbox.area(), s, q)
    }

    /// Window of the given radius around `(x, y)`, clipped to the image.
    pub fn window_around(&self, x: u32, y: u32, radius: u32) -> (u64, u64, u64) {
        let b = BBox {
            x0: x.saturating_sub(radius),
            y0: y.saturating_sub(radius),
            x1: (x + radius).min(self.width - 1),
            y1: (y + radius).min(self.height - 1),
        };
        self.window(&b)
    }
}
