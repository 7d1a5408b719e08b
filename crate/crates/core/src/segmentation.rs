//! Candidate segment detection.
//!
//! Two detectors feed the classifier. The component detector binarizes
//! with an adaptive mean threshold, labels 8-connected foreground
//! components and merges components that lie within a few pixels of each
//! other. It finds text and high-contrast graphics but only sees the rim
//! of rectangles whose interior is nearly as bright as the page. The
//! rectangle detector covers that case: it grows flat regions and keeps
//! the ones that fill an axis-aligned box with a luminance step at the
//! box border.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgio::{BBox, GrayImage, IntegralImage};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SegmentationError {
    #[error("no segment found")]
    EmptyResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Text,
    Graphic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentSource {
    ComponentDetector,
    RectangleDetector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: usize,
    pub bbox: BBox,
    pub kind: SegmentKind,
    pub source: SegmentSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ocr_text: Option<String>,
}

impl Segment {
    pub fn new(id: usize, bbox: BBox, kind: SegmentKind, source: SegmentSource) -> Self {
        Segment {
            id,
            bbox,
            kind,
            source,
            ocr_text: None,
        }
    }

    pub fn is_text(&self) -> bool {
        self.kind == SegmentKind::Text
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationConfig {
    /// Side of the square averaging window used for binarization.
    pub window: u32,
    /// A pixel is foreground when darker than its window mean by more than this.
    pub offset: u32,
    pub min_segment_area: u64,
    /// Components closer than this many pixels on both axes are merged.
    pub merge_gap: u32,
    pub text_max_height: u32,
    pub text_max_fill: f64,
    /// Upper bound on the luminance std-dev of a rectangle body.
    pub rect_std_tolerance: f64,
    pub rect_min_size: u32,
    /// Minimum luminance step between a rectangle's rim and its surroundings.
    pub rect_border_step: f64,
    /// Fraction of each box side that must belong to the grown region.
    pub rect_side_coverage: f64,
    pub duplicate_iou: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            window: 31,
            offset: 10,
            min_segment_area: 64,
            merge_gap: 3,
            text_max_height: 32,
            text_max_fill: 0.5,
            rect_std_tolerance: 6.0,
            rect_min_size: 8,
            rect_border_step: 20.0,
            rect_side_coverage: 0.9,
            duplicate_iou: 0.8,
        }
    }
}

/// Adaptive mean-threshold binarization. `true` marks foreground (ink).
pub fn binarize(img: &GrayImage, cfg: &SegmentationConfig) -> Vec<bool> {
    let ii = IntegralImage::new(img);
    let radius = cfg.window / 2;
    let mut mask = Vec::with_capacity(img.values().len());
    for y in 0..img.height() {
        for x in 0..img.width() {
            let (n, sum, _) = ii.window_around(x, y, radius);
            let v = img.get(x, y) as u64;
            mask.push((v + cfg.offset as u64) * n < sum);
        }
    }
    mask
}

#[derive(Debug, Clone, Copy)]
struct Component {
    bbox: BBox,
    pixels: u64,
}

fn label_components(mask: &[bool], width: u32, height: u32) -> Vec<Component> {
    let (w, h) = (width as usize, height as usize);
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (sx, sy) = ((start % w) as u32, (start / w) as u32);
        let mut bbox = BBox::new(sx, sy, sx, sy);
        let mut pixels = 0u64;
        while let Some(i) = stack.pop() {
            pixels += 1;
            let (x, y) = (i % w, i / w);
            bbox = bbox.union(&BBox::new(x as u32, y as u32, x as u32, y as u32));
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        out.push(Component { bbox, pixels });
    }
    out
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Repeatedly unions components whose boxes are within `gap` pixels on
/// both axes until no further pair qualifies.
fn merge_close(mut comps: Vec<Component>, gap: u32) -> Vec<Component> {
    loop {
        let n = comps.len();
        comps.sort_by_key(|c| (c.bbox.x0, c.bbox.y0, c.bbox.x1, c.bbox.y1));
        let mut parent: Vec<usize> = (0..n).collect();
        for i in 0..n {
            let reach = comps[i].bbox.x1 as u64 + gap as u64;
            for j in i + 1..n {
                if comps[j].bbox.x0 as u64 > reach {
                    break;
                }
                let (a, b) = (&comps[i].bbox, &comps[j].bbox);
                if a.gap_x(b) < gap && a.gap_y(b) < gap {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    if ri != rj {
                        parent[ri.max(rj)] = ri.min(rj);
                    }
                }
            }
        }
        let mut merged: Vec<Option<Component>> = vec![None; n];
        for i in 0..n {
            let r = find(&mut parent, i);
            merged[r] = Some(match merged[r] {
                None => comps[i],
                Some(m) => Component {
                    bbox: m.bbox.union(&comps[i].bbox),
                    pixels: m.pixels + comps[i].pixels,
                },
            });
        }
        let next: Vec<Component> = merged.into_iter().flatten().collect();
        if next.len() == n {
            return next;
        }
        comps = next;
    }
}

fn provisional_kind(c: &Component, cfg: &SegmentationConfig) -> SegmentKind {
    let fill = c.pixels as f64 / c.bbox.area() as f64;
    if c.bbox.height() <= cfg.text_max_height && fill <= cfg.text_max_fill {
        SegmentKind::Text
    } else {
        SegmentKind::Graphic
    }
}

fn assign_ids(mut segs: Vec<Segment>) -> Vec<Segment> {
    segs.sort_by_key(|s| (s.bbox.y0, s.bbox.x0, s.bbox.y1, s.bbox.x1));
    for (i, s) in segs.iter_mut().enumerate() {
        s.id = i;
    }
    segs
}

/// Component-detector segments: one per merged foreground component,
/// ordered by top-left corner with consecutive ids.
pub fn detect_segments(
    img: &GrayImage,
    cfg: &SegmentationConfig,
) -> Result<Vec<Segment>, SegmentationError> {
    let mask = binarize(img, cfg);
    let comps = merge_close(label_components(&mask, img.width(), img.height()), cfg.merge_gap);
    let segs: Vec<Segment> = comps
        .iter()
        .filter(|c| c.bbox.area() >= cfg.min_segment_area)
        .map(|c| Segment::new(0, c.bbox, provisional_kind(c, cfg), SegmentSource::ComponentDetector))
        .collect();
    if segs.is_empty() {
        return Err(SegmentationError::EmptyResult);
    }
    Ok(assign_ids(segs))
}

fn median3x3(img: &GrayImage, x: u32, y: u32) -> u8 {
    let mut vals = Vec::with_capacity(9);
    for ny in y.saturating_sub(1)..=(y + 1).min(img.height() - 1) {
        for nx in x.saturating_sub(1)..=(x + 1).min(img.width() - 1) {
            vals.push(img.get(nx, ny));
        }
    }
    vals.sort_unstable();
    vals[vals.len() / 2]
}

struct Region {
    bbox: BBox,
    count: u64,
    sum: f64,
    sumsq: f64,
}

/// Flat-region rectangles (graphic, rectangle-detector source).
///
/// Regions are grown 4-connected from each unvisited pixel, admitting
/// pixels within half the border step of the seed's 3x3 median. A region
/// is reported when its box is at least `rect_min_size` on each side,
/// every box side is mostly covered by the region, the body std-dev is
/// within tolerance, and the mean just outside the box differs from the
/// mean of the box rim by at least the border step. Duplicates of
/// component-detector segments are removed by [`merge_segment_lists`].
pub fn detect_lowcontrast_rectangles(img: &GrayImage, cfg: &SegmentationConfig) -> Vec<Segment> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut label = vec![u32::MAX; w * h];
    let mut regions: Vec<Region> = Vec::new();
    let mut queue = VecDeque::new();
    let half_step = cfg.rect_border_step / 2.0;

    for start in 0..w * h {
        if label[start] != u32::MAX {
            continue;
        }
        let rid = regions.len() as u32;
        let (sx, sy) = ((start % w) as u32, (start / w) as u32);
        let reference = median3x3(img, sx, sy) as f64;
        let mut region = Region {
            bbox: BBox::new(sx, sy, sx, sy),
            count: 0,
            sum: 0.0,
            sumsq: 0.0,
        };
        let admits = |v: u8| (v as f64 - reference).abs() < half_step;
        if !admits(img.values()[start]) {
            // Seed pixel is an outlier relative to its own neighborhood.
            label[start] = rid;
            region.count = 1;
            regions.push(region);
            continue;
        }
        label[start] = rid;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let v = img.values()[i] as f64;
            region.count += 1;
            region.sum += v;
            region.sumsq += v * v;
            let (x, y) = (i % w, i / w);
            region.bbox = region.bbox.union(&BBox::new(x as u32, y as u32, x as u32, y as u32));
            let mut visit = |j: usize| {
                if label[j] == u32::MAX && admits(img.values()[j]) {
                    label[j] = rid;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        regions.push(region);
    }

    let mut out = Vec::new();
    for (rid, r) in regions.iter().enumerate() {
        let b = r.bbox;
        if b.width() < cfg.rect_min_size
            || b.height() < cfg.rect_min_size
            || b.area() < cfg.min_segment_area
            || r.count * 2 < b.area()
        {
            continue;
        }
        let mean = r.sum / r.count as f64;
        let var = (r.sumsq / r.count as f64 - mean * mean).max(0.0);
        if var.sqrt() > cfg.rect_std_tolerance {
            continue;
        }
        if !sides_covered(&label, w, rid as u32, &b, cfg.rect_side_coverage) {
            continue;
        }
        let Some(step) = border_step(img, &b) else {
            continue;
        };
        if step >= cfg.rect_border_step {
            out.push(Segment::new(0, b, SegmentKind::Graphic, SegmentSource::RectangleDetector));
        }
    }
    assign_ids(out)
}

fn sides_covered(label: &[u32], w: usize, rid: u32, b: &BBox, frac: f64) -> bool {
    let at = |x: u32, y: u32| label[y as usize * w + x as usize] == rid;
    let row = |y: u32| (b.x0..=b.x1).filter(|&x| at(x, y)).count() as f64 / b.width() as f64;
    let col = |x: u32| (b.y0..=b.y1).filter(|&y| at(x, y)).count() as f64 / b.height() as f64;
    row(b.y0) >= frac && row(b.y1) >= frac && col(b.x0) >= frac && col(b.x1) >= frac
}

/// |mean(ring just outside the box) - mean(box rim)| over the sides that
/// have an outside neighbor; `None` if the box touches every image edge.
fn border_step(img: &GrayImage, b: &BBox) -> Option<f64> {
    let mut outside = (0u64, 0u64);
    let mut rim = (0u64, 0u64);
    let add = |acc: &mut (u64, u64), v: u8| {
        acc.0 += 1;
        acc.1 += v as u64;
    };
    if b.y0 > 0 {
        for x in b.x0..=b.x1 {
            add(&mut outside, img.get(x, b.y0 - 1));
            add(&mut rim, img.get(x, b.y0));
        }
    }
    if b.y1 + 1 < img.height() {
        for x in b.x0..=b.x1 {
            add(&mut outside, img.get(x, b.y1 + 1));
            add(&mut rim, img.get(x, b.y1));
        }
    }
    if b.x0 > 0 {
        for y in b.y0..=b.y1 {
            add(&mut outside, img.get(b.x0 - 1, y));
            add(&mut rim, img.get(b.x0, y));
        }
    }
    if b.x1 + 1 < img.width() {
        for y in b.y0..=b.y1 {
            add(&mut outside, img.get(b.x1 + 1, y));
            add(&mut rim, img.get(b.x1, y));
        }
    }
    if outside.0 == 0 {
        return None;
    }
    let mo = outside.1 as f64 / outside.0 as f64;
    let mr = rim.1 as f64 / rim.0 as f64;
    Some((mo - mr).abs())
}

/// Union of two detector outputs. A segment is dropped when it overlaps an
/// already kept one with IoU above `dup_iou`; `a` is kept first, so its
/// segments win duplicates. Ids are reassigned consecutively.
pub fn merge_segment_lists(a: &[Segment], b: &[Segment], dup_iou: f64) -> Vec<Segment> {
    let mut kept: Vec<Segment> = Vec::with_capacity(a.len() + b.len());
    for s in a.iter().chain(b) {
        if kept.iter().all(|k| k.bbox.iou(&s.bbox) <= dup_iou) {
            kept.push(s.clone());
        }
    }
    for (i, s) in kept.iter_mut().enumerate() {
        s.id = i;
    }
    kept
}

/// Both detectors followed by the merge.
pub fn segment_figure(
    img: &GrayImage,
    cfg: &SegmentationConfig,
) -> Result<Vec<Segment>, SegmentationError> {
    let components = match detect_segments(img, cfg) {
        Ok(s) => s,
        Err(SegmentationError::EmptyResult) => Vec::new(),
    };
    let rects = detect_lowcontrast_rectangles(img, cfg);
    let merged = merge_segment_lists(&components, &rects, cfg.duplicate_iou);
    if merged.is_empty() {
        return Err(SegmentationError::EmptyResult);
    }
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canvas(w: u32, h: u32) -> GrayImage {
        GrayImage::filled(w, h, 255)
    }

    fn fill(img: &mut GrayImage, b: BBox, v: u8) {
        for y in b.y0..=b.y1 {
            for x in b.x0..=b.x1 {
                img.set(x, y, v);
            }
        }
    }

    #[test]
    fn blank_image_is_empty() {
        let cfg = SegmentationConfig::default();
        assert_eq!(detect_segments(&canvas(80, 60), &cfg), Err(SegmentationError::EmptyResult));
        assert!(detect_lowcontrast_rectangles(&canvas(80, 60), &cfg).is_empty());
        assert_eq!(segment_figure(&canvas(80, 60), &cfg), Err(SegmentationError::EmptyResult));
    }

    #[test]
    fn black_rectangle_has_exact_box() {
        let mut img = canvas(100, 60);
        fill(&mut img, BBox::from_origin_size(10, 10, 40, 20), 0);
        let segs = detect_segments(&img, &SegmentationConfig::default()).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].bbox, BBox::new(10, 10, 49, 29));
        assert_eq!(segs[0].kind, SegmentKind::Graphic);
    }

    #[test]
    fn close_rectangles_merge_and_far_ones_do_not() {
        let cfg = SegmentationConfig::default();
        // x1 = 29, next x0 = 32: two background columns between.
        let mut img = canvas(120, 50);
        fill(&mut img, BBox::new(10, 10, 29, 29), 0);
        fill(&mut img, BBox::new(32, 10, 51, 29), 0);
        let segs = detect_segments(&img, &cfg).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].bbox, BBox::new(10, 10, 51, 29));

        let mut img = canvas(120, 50);
        fill(&mut img, BBox::new(10, 10, 29, 29), 0);
        fill(&mut img, BBox::new(33, 10, 52, 29), 0);
        assert_eq!(detect_segments(&img, &cfg).unwrap().len(), 2);
    }

    #[test]
    fn thin_sparse_component_is_text() {
        let mut img = canvas(80, 40);
        // comb of 10 px strokes joined along the top row
        for x in (10..58).step_by(3) {
            fill(&mut img, BBox::new(x, 10, x, 19), 0);
            fill(&mut img, BBox::new(x + 1, 10, x + 2, 10), 0);
        }
        let segs = detect_segments(&img, &SegmentationConfig::default()).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].kind, SegmentKind::Text);
    }

    #[test]
    fn uniform_gray_rectangle_found_by_rectangle_detector() {
        let mut img = canvas(200, 100);
        let b = BBox::from_origin_size(50, 30, 100, 40);
        fill(&mut img, b, 180);
        let rects = detect_lowcontrast_rectangles(&img, &SegmentationConfig::default());
        assert_eq!(rects.len(), 1);
        assert_eq!(rects[0].bbox, b);
        assert_eq!(rects[0].kind, SegmentKind::Graphic);
        assert_eq!(rects[0].source, SegmentSource::RectangleDetector);
    }

    #[test]
    fn low_contrast_rectangle_missed_by_components_found_by_rectangles() {
        let cfg = SegmentationConfig::default();
        let mut img = canvas(200, 100);
        let b = BBox::from_origin_size(40, 20, 120, 50);
        fill(&mut img, b, 235);
        let components = detect_segments(&img, &cfg).unwrap_or_default();
        assert!(components.iter().all(|s| s.bbox.iou(&b) <= cfg.duplicate_iou));
        let segs = segment_figure(&img, &cfg).unwrap();
        assert_eq!(segs.iter().filter(|s| s.bbox == b).count(), 1);
    }

    #[test]
    fn background_valued_rectangle_not_found() {
        let mut img = canvas(200, 100);
        fill(&mut img, BBox::from_origin_size(50, 30, 100, 40), 255);
        assert!(detect_lowcontrast_rectangles(&img, &SegmentationConfig::default()).is_empty());
        // a step below 20 is not a rectangle either
        let mut img = canvas(200, 100);
        fill(&mut img, BBox::from_origin_size(50, 30, 100, 40), 240);
        assert!(detect_lowcontrast_rectangles(&img, &SegmentationConfig::default()).is_empty());
    }

    #[test]
    fn noisy_texture_not_a_rectangle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut img = canvas(200, 100);
        for y in 30..70 {
            for x in 50..150 {
                img.set(x, y, rng.random_range(60..200));
            }
        }
        let rects = detect_lowcontrast_rectangles(&img, &SegmentationConfig::default());
        assert!(rects.is_empty(), "{rects:?}");
    }

    #[test]
    fn merge_lists_rules() {
        let s = |x0, y0, x1, y1, src| Segment::new(7, BBox::new(x0, y0, x1, y1), SegmentKind::Graphic, src);
        let a = vec![s(0, 0, 9, 9, SegmentSource::ComponentDetector)];
        assert_eq!(merge_segment_lists(&a, &[], 0.8).len(), 1);
        assert_eq!(merge_segment_lists(&a, &[], 0.8)[0].id, 0);
        assert_eq!(merge_segment_lists(&a, &a, 0.8).len(), 1);
        // IoU of (0..9) and (5..14) on x, same y: 50 / 150
        let b = vec![s(5, 0, 14, 9, SegmentSource::RectangleDetector)];
        let m = merge_segment_lists(&a, &b, 0.8);
        assert_eq!(m.len(), 2);
        assert_eq!(m.iter().map(|s| s.id).collect::<Vec<_>>(), vec![0, 1]);
        // near-duplicate: component wins
        let c = vec![s(0, 0, 9, 10, SegmentSource::RectangleDetector)];
        let m = merge_segment_lists(&a, &c, 0.8);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].source, SegmentSource::ComponentDetector);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn boxes_in_bounds_and_deterministic(
                rects in proptest::collection::vec((0u32..90, 0u32..50, 1u32..30, 1u32..20, 0u8..250), 1..6)
            ) {
                let mut img = canvas(100, 60);
                for (x, y, w, h, v) in rects {
                    let b = BBox::new(x, y, (x + w).min(99), (y + h).min(59));
                    fill(&mut img, b, v);
                }
                let cfg = SegmentationConfig::default();
                let first = segment_figure(&img, &cfg);
                let second = segment_figure(&img, &cfg);
                prop_assert_eq!(&first, &second);
                if let Ok(segs) = first {
                    for (i, s) in segs.iter().enumerate() {
                        prop_assert_eq!(s.id, i);
                        prop_assert!(s.bbox.fits_in(100, 60));
                        prop_assert!(s.bbox.area() >= cfg.min_segment_area);
                    }
                }
            }

            #[test]
            fn duplicate_pair_keeps_exactly_one(
                a in (0u32..40, 0u32..40, 1u32..30, 1u32..30),
                d in (0u32..3, 0u32..3, 0u32..3, 0u32..3),
            ) {
                let b1 = BBox::new(a.0, a.1, a.0 + a.2, a.1 + a.3);
                let b2 = BBox::new(a.0 + d.0, a.1 + d.1, a.0 + a.2 + d.2, a.1 + a.3 + d.3);
                let s1 = Segment::new(0, b1, SegmentKind::Graphic, SegmentSource::ComponentDetector);
                let s2 = Segment::new(0, b2, SegmentKind::Graphic, SegmentSource::RectangleDetector);
                let m = merge_segment_lists(&[s1], &[s2], 0.8);
                if b1.iou(&b2) > 0.8 {
                    prop_assert_eq!(m.len(), 1);
                } else {
                    prop_assert_eq!(m.len(), 2);
                }
                for (i, x) in m.iter().enumerate() {
                    for y in &m[i + 1..] {
                        prop_assert!(x.bbox.iou(&y.bbox) <= 0.8);
                    }
                }
            }
        }
    }
}
