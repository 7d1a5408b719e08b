//! The 39-value description of a segment that the gel classifier reads.
//!
//! Slot order is a compatibility contract with saved forest models:
//!
//! | slots  | content                                             |
//! |--------|-----------------------------------------------------|
//! | 0-1    | box center relative to image width/height           |
//! | 2-5    | relative width, relative height, width px, height px|
//! | 6-21   | 16-bin gray histogram (bin width 16), normalized    |
//! | 22-24  | mean red, green, blue in [0, 1]                     |
//! | 25-37  | Haralick f1-f13 averaged over GLCM directions       |
//! | 38     | recognized non-whitespace character count           |

pub mod haralick;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use haralick::{glcm, haralick13, texture_features, Direction, Glcm, GlcmConfig, HARALICK_NAMES};

use crate::imgio::{GrayImage, RasterImage};
use crate::ocr::TextRecognition;
use crate::segmentation::Segment;

pub const FEATURE_COUNT: usize = 39;
pub const HISTOGRAM_BINS: usize = 16;
pub const HISTOGRAM_OFFSET: usize = 6;
pub const COLOR_OFFSET: usize = 22;
pub const TEXTURE_OFFSET: usize = 25;
pub const CHAR_COUNT_INDEX: usize = 38;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("segment has zero area")]
    DegenerateSegment,
    #[error("segment box exceeds the image")]
    OutOfBounds,
    #[error("no pixel pair exists for the offset")]
    TooSmall,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(#[serde(with = "array39")] pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn histogram(&self) -> &[f64] {
        &self.0[HISTOGRAM_OFFSET..HISTOGRAM_OFFSET + HISTOGRAM_BINS]
    }

    pub fn texture(&self) -> &[f64] {
        &self.0[TEXTURE_OFFSET..TEXTURE_OFFSET + 13]
    }

    pub fn to_csv_row(&self) -> String {
        self.0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
}

mod array39 {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    use super::FEATURE_COUNT;

    pub fn serialize<S: Serializer>(v: &[f64; FEATURE_COUNT], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; FEATURE_COUNT], D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        let n = v.len();
        v.try_into()
            .map_err(|_| D::Error::custom(format!("expected {FEATURE_COUNT} values, got {n}")))
    }
}

pub fn feature_names() -> Vec<String> {
    let mut names: Vec<String> = [
        "rel_center_x",
        "rel_center_y",
        "rel_width",
        "rel_height",
        "abs_width",
        "abs_height",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    names.extend((0..HISTOGRAM_BINS).map(|i| format!("gray_hist_{i:02}")));
    names.extend(["mean_red", "mean_green", "mean_blue"].iter().map(|s| s.to_string()));
    names.extend(HARALICK_NAMES.iter().map(|s| format!("haralick_{s}")));
    names.push("char_count".into());
    names
}

pub fn extract_features(
    img: &RasterImage,
    gray: &GrayImage,
    seg: &Segment,
    rec: &TextRecognition,
    glcm_cfg: &GlcmConfig,
) -> Result<FeatureVector, FeatureError> {
    let b = seg.bbox;
    if b.area() == 0 {
        return Err(FeatureError::DegenerateSegment);
    }
    if !b.fits_in(img.width(), img.height()) || !b.fits_in(gray.width(), gray.height()) {
        return Err(FeatureError::OutOfBounds);
    }
    let (iw, ih) = (img.width() as f64, img.height() as f64);
    let mut v = [0.0; FEATURE_COUNT];
    let (cx, cy) = b.center();
    v[0] = cx / iw;
    v[1] = cy / ih;
    v[2] = b.width() as f64 / iw;
    v[3] = b.height() as f64 / ih;
    v[4] = b.width() as f64;
    v[5] = b.height() as f64;

    let crop = gray.crop(&b).map_err(|_| FeatureError::OutOfBounds)?;
    let n = crop.values().len() as f64;
    let mut hist = [0u64; HISTOGRAM_BINS];
    for &g in crop.values() {
        hist[g as usize / 16] += 1;
    }
    for (slot, &c) in v[HISTOGRAM_OFFSET..HISTOGRAM_OFFSET + HISTOGRAM_BINS].iter_mut().zip(&hist) {
        *slot = c as f64 / n;
    }

    let mut rgb = [0u64; 3];
    for y in b.y0..=b.y1 {
        for x in b.x0..=b.x1 {
            let p = img.get(x, y);
            for c in 0..3 {
                rgb[c] += p[c] as u64;
            }
        }
    }
    for c in 0..3 {
        v[COLOR_OFFSET + c] = rgb[c] as f64 / n / 255.0;
    }

    let tex = texture_features(&crop, glcm_cfg)?;
    v[TEXTURE_OFFSET..TEXTURE_OFFSET + 13].copy_from_slice(&tex);
    v[CHAR_COUNT_INDEX] = rec.char_count as f64;
    Ok(FeatureVector(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgio::{to_gray, BBox};
    use crate::segmentation::{SegmentKind, SegmentSource};

    fn seg(b: BBox) -> Segment {
        Segment::new(0, b, SegmentKind::Graphic, SegmentSource::ComponentDetector)
    }

    fn no_text() -> TextRecognition {
        TextRecognition {
            segment_id: 0,
            text: String::new(),
            char_count: 0,
            coverage: 0.0,
        }
    }

    #[test]
    fn full_image_relative_size_is_one() {
        let img = RasterImage::filled(40, 30, [120, 130, 140]);
        let gray = to_gray(&img);
        let f = extract_features(&img, &gray, &seg(img.bounds()), &no_text(), &GlcmConfig::default()).unwrap();
        assert_eq!(f.0[0], 0.5);
        assert_eq!(f.0[1], 0.5);
        assert_eq!(f.0[2], 1.0);
        assert_eq!(f.0[3], 1.0);
        assert_eq!(f.0[4], 40.0);
        assert_eq!(f.0[5], 30.0);
    }

    #[test]
    fn black_segment_histogram_and_color() {
        let mut img = RasterImage::filled(50, 50, [255; 3]);
        let b = BBox::new(10, 10, 29, 19);
        for y in b.y0..=b.y1 {
            for x in b.x0..=b.x1 {
                img.set(x, y, [0, 0, 0]);
            }
        }
        let gray = to_gray(&img);
        let rec = TextRecognition { char_count: 4, ..no_text() };
        let f = extract_features(&img, &gray, &seg(b), &rec, &GlcmConfig::default()).unwrap();
        assert_eq!(f.histogram()[0], 1.0);
        assert!(f.histogram()[1..].iter().all(|&h| h == 0.0));
        assert_eq!(&f.0[COLOR_OFFSET..COLOR_OFFSET + 3], &[0.0, 0.0, 0.0]);
        assert_eq!(f.0[CHAR_COUNT_INDEX], 4.0);
        assert!(f.0.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn out_of_bounds_segment_rejected() {
        let img = RasterImage::filled(10, 10, [255; 3]);
        let gray = to_gray(&img);
        let r = extract_features(&img, &gray, &seg(BBox::new(0, 0, 10, 9)), &no_text(), &GlcmConfig::default());
        assert_eq!(r, Err(FeatureError::OutOfBounds));
    }

    #[test]
    fn names_match_layout() {
        let names = feature_names();
        assert_eq!(names.len(), FEATURE_COUNT);
        assert_eq!(names[HISTOGRAM_OFFSET], "gray_hist_00");
        assert_eq!(names[COLOR_OFFSET], "mean_red");
        assert_eq!(names[TEXTURE_OFFSET], "haralick_angular_second_moment");
        assert_eq!(names[CHAR_COUNT_INDEX], "char_count");
    }

    #[test]
    fn vector_json_has_39_numbers() {
        let v = FeatureVector([0.25; FEATURE_COUNT]);
        let s = serde_json::to_string(&v).unwrap();
        let back: FeatureVector = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
        assert!(serde_json::from_str::<FeatureVector>("[1.0, 2.0]").is_err());
        assert_eq!(v.to_csv_row().split(',').count(), FEATURE_COUNT);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn textured(w: u32, h: u32, seed: u64) -> RasterImage {
            let mut s = seed;
            let px = (0..w * h)
                .map(|_| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    let v = (s >> 33) as u8;
                    [v, v.wrapping_add(17), v / 2]
                })
                .collect();
            RasterImage::new(w, h, px).unwrap()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn translation_keeps_content_features(
                w in 2u32..20, h in 2u32..20, seed in any::<u64>(),
                ox in 0u32..30, oy in 0u32..30, pad in 1u32..30,
            ) {
                let patch = textured(w, h, seed);
                let place = |x: u32, y: u32, cw: u32, ch: u32| {
                    let mut canvas = RasterImage::filled(cw, ch, [255; 3]);
                    for py in 0..h {
                        for px in 0..w {
                            canvas.set(x + px, y + py, patch.get(px, py));
                        }
                    }
                    canvas
                };
                let a = place(0, 0, w, h);
                let b = place(ox, oy, w + ox + pad, h + oy + pad);
                let cfg = GlcmConfig::default();
                let fa = extract_features(&a, &to_gray(&a), &seg(BBox::from_origin_size(0, 0, w, h)), &no_text(), &cfg).unwrap();
                let fb = extract_features(&b, &to_gray(&b), &seg(BBox::from_origin_size(ox, oy, w, h)), &no_text(), &cfg).unwrap();
                prop_assert_eq!(&fa.0[6..38], &fb.0[6..38]);
                prop_assert_eq!(fa.0[4], fb.0[4]);
                prop_assert_eq!(fa.0[5], fb.0[5]);
                prop_assert!(fb.0[2] < 1.0 || fb.0[3] < 1.0);
            }

            #[test]
            fn vector_invariants(w in 1u32..24, h in 1u32..24, seed in any::<u64>()) {
                let img = textured(w, h, seed);
                let f = extract_features(&img, &to_gray(&img), &seg(img.bounds()), &no_text(), &GlcmConfig::default()).unwrap();
                prop_assert!(f.0.iter().all(|v| v.is_finite()));
                prop_assert!((f.histogram().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                prop_assert!(f.0[..4].iter().all(|v| (0.0..=1.0).contains(v)));
                // f8, f9, f11 are entropies
                let t = f.texture();
                prop_assert!(t[7] >= 0.0 && t[8] >= 0.0 && t[10] >= 0.0);
            }

            #[test]
            fn glcm_sums_to_one(w in 1u32..16, h in 1u32..16, seed in any::<u64>(), levels in 2usize..40) {
                let img = to_gray(&textured(w, h, seed));
                let cfg = GlcmConfig { levels, ..GlcmConfig::default() };
                for dir in Direction::ALL {
                    if let Ok(m) = glcm(&img, &cfg, dir) {
                        prop_assert!((m.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                        for i in 0..levels {
                            for j in 0..levels {
                                prop_assert_eq!(m.get(i, j), m.get(j, i));
                            }
                        }
                    }
                }
            }
        }
    }
}
