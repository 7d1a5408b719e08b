//! Synthetic gel figures with complete ground truth, plus the evaluation
//! metrics used on them.
//!
//! Every figure is drawn from its own ChaCha stream (master seed, figure
//! index), so corpora are reproducible and figures can be generated in
//! parallel. Ground-truth panels and label attachments are derived from
//! the planted geometry with the same grouping rules the detector uses.
//!
//! Per figure three files are written: `<id>.png`, `<id>.gt.json` and the
//! OCR sidecar `<id>.ocr.tsv`.

pub mod metrics;
pub mod render;

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgio::{encode_png, BBox, ImageError, RasterImage};
use crate::ner::{tag_text, tokenize, ExclusionRules, GeneLexicon};
use crate::ocr::SidecarEngine;
use crate::panels::{detect_regions, label_qualifies, PanelConfig};
use crate::segmentation::{Segment, SegmentKind, SegmentSource};

pub use metrics::{classification_report, f_score, match_boxes, prf, roc_auc, EvalReport, MetricError, Prf, ThresholdRow};
use render::{draw_gel, draw_microscopy, draw_photo, draw_text, fill_rect, random_color, text_size, Band, GelStyle};
pub use render::GelVariant;

pub const GROUND_TRUTH_SCHEMA_VERSION: u32 = 1;
const MAX_CANVAS: u32 = 4096;
const MARGIN: u32 = 20;
const ITEM_SEPARATION: u32 = 60;
const PAGE: [u8; 3] = [255; 3];

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("ground truth json: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GenError + '_ {
    move |source| GenError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Fixed grid layout forced onto every gel figure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: u32,
    pub cols: u32,
    pub left_labels: bool,
    pub top_labels: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub figure_count: usize,
    /// Share of ordinary (non-boundary) figures that carry gel panels.
    pub gel_fraction: f64,
    /// Every k-th figure is a rule-boundary figure; 0 disables them.
    pub boundary_every: usize,
    pub grid: Option<GridSpec>,
    pub min_width: u32,
    pub max_width: u32,
    pub max_distractors: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 0,
            figure_count: 200,
            gel_fraction: 0.3,
            boundary_every: 10,
            grid: None,
            min_width: 560,
            max_width: 720,
            max_distractors: 4,
        }
    }
}

impl SyntheticSpec {
    /// One figure holding a 2x4 gel grid with protein names on the left
    /// and cell lines or conditions on top.
    pub fn grid_replica(seed: u64) -> Self {
        SyntheticSpec {
            seed,
            figure_count: 1,
            gel_fraction: 1.0,
            boundary_every: 0,
            grid: Some(GridSpec {
                rows: 2,
                cols: 4,
                left_labels: true,
                top_labels: true,
            }),
            ..SyntheticSpec::default()
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let fail = |m: &str| Err(GenError::Spec(m.to_owned()));
        if !(0.0..=1.0).contains(&self.gel_fraction) {
            return fail("gel_fraction must lie in [0, 1]");
        }
        if self.min_width < 200 || self.min_width > self.max_width || self.max_width > MAX_CANVAS {
            return fail("width range must satisfy 200 <= min <= max <= 4096");
        }
        if let Some(g) = &self.grid {
            if g.rows == 0 || g.cols == 0 {
                return fail("grid needs at least one row and column");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureKind {
    Plain,
    Gel,
    Boundary(usize),
}

/// Kind of figure `index`: boundary figures at every k-th slot, and gel
/// figures spread evenly so that their share is `gel_fraction` exactly
/// up to rounding.
pub fn figure_kind(spec: &SyntheticSpec, index: usize) -> FigureKind {
    let k = spec.boundary_every;
    if k > 0 && index % k == k - 1 {
        return FigureKind::Boundary(index / k);
    }
    let f = spec.gel_fraction;
    if ((index + 1) as f64 * f).floor() > (index as f64 * f).floor() {
        FigureKind::Gel
    } else {
        FigureKind::Plain
    }
}

pub fn figure_id(index: usize) -> String {
    format!("fig_{index:05}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtGel {
    pub id: usize,
    pub bbox: BBox,
    pub variant: GelVariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtPanel {
    pub id: usize,
    pub gel_ids: Vec<usize>,
    pub bbox: BBox,
    pub label_ids: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextRole {
    /// Attached to a panel under the label rules.
    Label,
    /// Placed with a panel but outside the label rules.
    Decoy,
    Distractor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtText {
    pub id: usize,
    pub bbox: BBox,
    pub text: String,
    pub tokens: Vec<String>,
    pub gene_tokens: Vec<String>,
    pub role: TextRole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistractorKind {
    ScatterPlot,
    BarChart,
    TextBlock,
    Photo,
    Microscopy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtDistractor {
    pub kind: DistractorKind,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryCase {
    pub strip_gap: u32,
    pub label_near: u32,
    pub label_far: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub schema_version: u32,
    pub figure_id: String,
    pub width: u32,
    pub height: u32,
    pub gels: Vec<GtGel>,
    pub panels: Vec<GtPanel>,
    pub texts: Vec<GtText>,
    pub distractors: Vec<GtDistractor>,
    pub boundary: Option<BoundaryCase>,
}

impl GroundTruth {
    pub fn label_count(&self) -> usize {
        self.panels.iter().map(|p| p.label_ids.len()).sum()
    }

    /// Gene tokens over panel labels, counted once per attachment.
    pub fn label_gene_tokens(&self) -> usize {
        self.panels
            .iter()
            .flat_map(|p| &p.label_ids)
            .map(|&i| self.texts[i].gene_tokens.len())
            .sum()
    }

    pub fn label_tokens(&self) -> usize {
        self.panels
            .iter()
            .flat_map(|p| &p.label_ids)
            .map(|&i| self.texts[i].tokens.len())
            .sum()
    }

    pub fn text_tokens(&self) -> usize {
        self.texts.iter().map(|t| t.tokens.len()).sum()
    }

    pub fn text_gene_tokens(&self) -> usize {
        self.texts.iter().map(|t| t.gene_tokens.len()).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ground truth serializes")
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticFigure {
    pub id: String,
    pub image: RasterImage,
    pub truth: GroundTruth,
    pub sidecar: SidecarEngine,
}

const PROTEINS: &[&str] = &[
    "β-actin", "p53", "14-3-3σ", "GAPDH", "p-p38", "p38", "ERK1", "ERK2", "AKT", "c-Myc", "Bcl-2", "PARP", "VEGF",
    "EGFR", "STAT3", "c-Jun", "PTEN", "HIF1A", "KRAS", "ACTB", "Tubulin", "Histone H3", "Lamin B", "p-AKT",
    "Cyclin D1", "Caspase-3",
];
const CONDITIONS: &[&str] = &[
    "LOX", "HeLa", "MCF7", "A549", "HEK293", "U2OS", "0 min", "5 min", "15 min", "30 min", "1 h", "siRNA", "DMSO",
    "Ctrl", "WT", "KO", "shRNA", "IgG",
];
const WEIGHTS: &[&str] = &["55 kDa", "42 kDa", "17 kDa", "100 kDa", "36 kDa"];
const CAPTIONS: &[&str] = &["IB: p53", "IP: EGFR", "IB: GAPDH", "Western blot", "input"];
const LONG_LABELS: &[&str] = &["phospho-STAT", "anti-β-actin", "total-ERK1/2", "cleaved-PARP"];
const PROSE: &[&str] = &[
    "the", "cells", "were", "treated", "with", "and", "expression", "of", "was", "analyzed", "by", "western",
    "blotting", "in", "response", "to", "levels", "p53", "ACTB", "EGFR", "increased", "after", "figure", "shows",
    "representative", "results", "from", "three", "independent", "experiments", "MYC", "protein", "mRNA", "min",
];

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items[rng.random_range(0..items.len())]
}

enum Prim {
    Gel { bbox: BBox, style: GelStyle, bands: Vec<Band> },
    Text { x: u32, y: u32, text: String, scale: u32 },
    Fill { bbox: BBox, rgb: [u8; 3] },
    Photo { bbox: BBox, c0: [u8; 3], c1: [u8; 3], sigma: f64 },
    Micro { bbox: BBox, background: u8, tint: [f64; 3], blobs: Vec<(f64, f64, f64)> },
}

impl Prim {
    fn shift(&mut self, dx: u32, dy: u32) {
        let t = |b: &mut BBox| *b = BBox::new(b.x0 + dx, b.y0 + dy, b.x1 + dx, b.y1 + dy);
        match self {
            Prim::Gel { bbox, .. } | Prim::Fill { bbox, .. } | Prim::Photo { bbox, .. } | Prim::Micro { bbox, .. } => t(bbox),
            Prim::Text { x, y, .. } => {
                *x += dx;
                *y += dy;
            }
        }
    }
}

/// A block of primitives in local coordinates with its footprint size.
struct Item {
    w: u32,
    h: u32,
    prims: Vec<Prim>,
    distractor: Option<DistractorKind>,
}

impl Item {
    fn new(prims: Vec<Prim>, distractor: Option<DistractorKind>) -> Item {
        let mut w = 0;
        let mut h = 0;
        for p in &prims {
            let b = prim_bbox(p);
            w = w.max(b.x1 + 1);
            h = h.max(b.y1 + 1);
        }
        Item { w, h, prims, distractor }
    }
}

fn prim_bbox(p: &Prim) -> BBox {
    match p {
        Prim::Gel { bbox, .. } | Prim::Fill { bbox, .. } | Prim::Photo { bbox, .. } | Prim::Micro { bbox, .. } => *bbox,
        Prim::Text { x, y, text, scale } => {
            let (w, h) = text_size(text, *scale);
            BBox::from_origin_size(*x, *y, w, h)
        }
    }
}

fn gel_style(rng: &mut ChaCha8Rng) -> GelStyle {
    let r: f64 = rng.random();
    let (variant, background) = if r < 0.7 {
        (GelVariant::Normal, rng.random_range(185..=225))
    } else if r < 0.85 {
        (GelVariant::WhiteOnBlack, rng.random_range(15..=45))
    } else {
        (GelVariant::LowContrast, rng.random_range(226..=232))
    };
    GelStyle {
        variant,
        background,
        noise_sigma: rng.random_range(2.0..3.0),
    }
}

/// Lane bands kept at least 3 px inside the cell.
fn gel_bands(rng: &mut ChaCha8Rng, w: u32, h: u32, variant: GelVariant) -> Vec<Band> {
    let lanes = (w / rng.random_range(10..=18)).max(1);
    let lane_w = w as f64 / lanes as f64;
    let mut bands = Vec::new();
    let rows = if h >= 30 && rng.random_bool(0.4) { 2 } else { 1 };
    for row in 0..rows {
        let base_cy = h as f64 * (row as f64 + 0.5) / rows as f64;
        let max_ry = ((h as f64 / rows as f64) / 2.0 - 3.5).clamp(1.5, 5.0);
        for lane in 0..lanes {
            if !rng.random_bool(0.85) {
                continue;
            }
            let ry = rng.random_range(1.5..=max_ry);
            let cy = (base_cy + rng.random_range(-1.5..=1.5)).clamp(3.0 + ry, h as f64 - 4.0 - ry);
            let cx = lane_w * (lane as f64 + 0.5);
            let rx = (lane_w * rng.random_range(0.3..0.45)).min(cx - 3.0).min(w as f64 - cx - 4.0).max(1.5);
            let level = match variant {
                GelVariant::Normal => rng.random_range(30..=120),
                GelVariant::WhiteOnBlack => rng.random_range(170..=245),
                GelVariant::LowContrast => rng.random_range(140..=190),
            };
            bands.push(Band {
                cx,
                cy,
                rx,
                ry,
                level,
            });
        }
    }
    bands
}

fn panel_item(rng: &mut ChaCha8Rng, grid: Option<&GridSpec>) -> Item {
    let style = gel_style(rng);
    let (rows, cols) = match grid {
        Some(g) => (g.rows, g.cols),
        None => (rng.random_range(1..=3), rng.random_range(1..=6)),
    };
    let cell_w = if cols == 1 { rng.random_range(120..=240) } else { rng.random_range(30..=90) };
    let cell_h = rng.random_range(18..=40);
    let col_gap = rng.random_range(4..=20);
    let row_gap = rng.random_range(4..=20);
    let left = grid.map_or_else(|| rng.random_bool(0.9), |g| g.left_labels);
    let top = grid.map_or_else(|| rng.random_bool(0.7), |g| g.top_labels);
    let right = grid.is_none() && rng.random_bool(0.3);
    let bottom = grid.is_none() && rng.random_bool(0.3);

    let left_scale = rng.random_range(1..=2);
    let left_near = rng.random_range(6..=16);
    let top_near = rng.random_range(4..=12);
    let left_texts: Vec<&str> = (0..rows).map(|_| pick(rng, PROTEINS)).collect();
    let left_ext = if left {
        left_texts.iter().map(|t| text_size(t, left_scale).0).max().unwrap_or(0) + left_near
    } else {
        0
    };
    let pitch = cell_w + col_gap;
    let ox = left_ext.max(10);
    let oy = if top { top_near + 7 } else { 0 };

    let mut prims = Vec::new();
    for r in 0..rows {
        let y = oy + r * (cell_h + row_gap);
        for c in 0..cols {
            let x = ox + c * pitch;
            let bands = gel_bands(rng, cell_w, cell_h, style.variant);
            prims.push(Prim::Gel {
                bbox: BBox::from_origin_size(x, y, cell_w, cell_h),
                style: style.clone(),
                bands,
            });
        }
        if left {
            let t = left_texts[r as usize];
            let (w, h) = text_size(t, left_scale);
            prims.push(Prim::Text {
                x: ox - left_near - w,
                y: y + (cell_h - h) / 2,
                text: t.to_owned(),
                scale: left_scale,
            });
        }
    }
    let grid_w = cols * pitch - col_gap;
    let grid_h = rows * (cell_h + row_gap) - row_gap;
    if top {
        for c in 0..cols {
            let fits: Vec<&str> = CONDITIONS.iter().copied().filter(|t| text_size(t, 1).0 + 4 <= pitch).collect();
            if fits.is_empty() {
                continue;
            }
            let t = pick(rng, &fits);
            let w = text_size(t, 1).0;
            let center = ox + c * pitch + cell_w / 2;
            prims.push(Prim::Text {
                x: (center + 1).saturating_sub(w.div_ceil(2)),
                y: 0,
                text: t.to_owned(),
                scale: 1,
            });
        }
    }
    if right {
        let near = rng.random_range(6..=14);
        for r in 0..rows {
            prims.push(Prim::Text {
                x: ox + grid_w + near,
                y: oy + r * (cell_h + row_gap) + (cell_h - 7) / 2,
                text: pick(rng, WEIGHTS).to_owned(),
                scale: 1,
            });
        }
    }
    if bottom {
        let t = pick(rng, CAPTIONS);
        let w = text_size(t, 1).0;
        if w <= grid_w {
            prims.push(Prim::Text {
                x: ox + (grid_w - w) / 2,
                y: oy + grid_h + rng.random_range(6..=20),
                text: t.to_owned(),
                scale: 1,
            });
        }
    }
    Item::new(prims, None)
}

const BOUNDARY_GAPS: [u32; 3] = [49, 50, 51];
const BOUNDARY_NEAR: [u32; 2] = [30, 31];
const BOUNDARY_FAR: [u32; 2] = [150, 151];

pub fn boundary_case(j: usize) -> BoundaryCase {
    BoundaryCase {
        strip_gap: BOUNDARY_GAPS[j % 3],
        label_near: BOUNDARY_NEAR[j % 2],
        label_far: BOUNDARY_FAR[(j / 2) % 2],
    }
}

/// Two gel strips `strip_gap` apart, a short label `label_near` above the
/// left strip and a 12-character label whose far edge is `label_far` from
/// the strips.
fn boundary_item(rng: &mut ChaCha8Rng, case: BoundaryCase) -> Item {
    let style = gel_style(rng);
    let (sw, sh) = (rng.random_range(100..=160), rng.random_range(24..=34));
    let long = pick(rng, LONG_LABELS);
    let lh = text_size(long, 2).1;
    let ox = case.label_far + 1;
    let top_text = pick(rng, &["LOX", "HeLa", "MCF7", "A549", "U2OS"]);
    let oy = case.label_near + 7;
    let mut prims = Vec::new();
    for k in 0..2 {
        let bbox = BBox::from_origin_size(ox + k * (sw + case.strip_gap), oy, sw, sh);
        prims.push(Prim::Gel {
            bbox,
            style: style.clone(),
            bands: gel_bands(rng, sw, sh, style.variant),
        });
    }
    prims.push(Prim::Text {
        x: ox - case.label_far - 1,
        y: oy + (sh - lh) / 2,
        text: long.to_owned(),
        scale: 2,
    });
    prims.push(Prim::Text {
        x: ox,
        y: 0,
        text: top_text.to_owned(),
        scale: 1,
    });
    Item::new(prims, None)
}

fn axes(w: u32, h: u32, y0: u32) -> Vec<Prim> {
    let ink = [40, 40, 40];
    vec![
        Prim::Fill {
            bbox: BBox::new(0, y0, 1, y0 + h - 1),
            rgb: ink,
        },
        Prim::Fill {
            bbox: BBox::new(0, y0 + h - 2, w - 1, y0 + h - 1),
            rgb: ink,
        },
    ]
}

fn title(rng: &mut ChaCha8Rng, max_w: u32) -> Option<Prim> {
    let mut words: Vec<&str> = Vec::new();
    for _ in 0..rng.random_range(2..=3) {
        let w = pick(rng, PROSE);
        let mut trial = words.clone();
        trial.push(w);
        if text_size(&trial.join(" "), 1).0 <= max_w {
            words = trial;
        }
    }
    (!words.is_empty()).then(|| Prim::Text {
        x: 0,
        y: 0,
        text: words.join(" "),
        scale: 1,
    })
}

fn distractor_item(rng: &mut ChaCha8Rng) -> Item {
    let kind = match rng.random_range(0..5) {
        0 => DistractorKind::ScatterPlot,
        1 => DistractorKind::BarChart,
        2 => DistractorKind::TextBlock,
        3 => DistractorKind::Photo,
        _ => DistractorKind::Microscopy,
    };
    let mut prims = Vec::new();
    match kind {
        DistractorKind::ScatterPlot | DistractorKind::BarChart => {
            let (w, h) = (rng.random_range(120..=220), rng.random_range(90..=160));
            let y0 = if let Some(t) = title(rng, w) {
                prims.push(t);
                7 + rng.random_range(6..=10)
            } else {
                0
            };
            prims.extend(axes(w, h, y0));
            if kind == DistractorKind::ScatterPlot {
                let color = random_color(rng);
                for _ in 0..rng.random_range(20..=60) {
                    let x = rng.random_range(5..w - 4);
                    let y = rng.random_range(y0..y0 + h - 6);
                    prims.push(Prim::Fill {
                        bbox: BBox::from_origin_size(x, y, 3, 3),
                        rgb: color,
                    });
                }
            } else {
                let n = rng.random_range(3..=8);
                let slot = (w - 6) / n;
                let bar_w = (slot * 2 / 3).max(3);
                for i in 0..n {
                    let bh = rng.random_range(10..h - 4);
                    prims.push(Prim::Fill {
                        bbox: BBox::new(4 + i * slot, y0 + h - 2 - bh, 4 + i * slot + bar_w - 1, y0 + h - 3),
                        rgb: random_color(rng),
                    });
                }
            }
        }
        DistractorKind::TextBlock => {
            let max_w = rng.random_range(160..=300);
            for line in 0..rng.random_range(3..=8) {
                let mut words: Vec<&str> = vec![pick(rng, PROSE)];
                for _ in 0..12 {
                    let w = pick(rng, PROSE);
                    words.push(w);
                    if text_size(&words.join(" "), 1).0 > max_w {
                        words.pop();
                        break;
                    }
                }
                prims.push(Prim::Text {
                    x: 0,
                    y: line * 12,
                    text: words.join(" "),
                    scale: 1,
                });
            }
        }
        DistractorKind::Photo => {
            let (w, h) = (rng.random_range(80..=200), rng.random_range(60..=150));
            prims.push(Prim::Photo {
                bbox: BBox::from_origin_size(0, 0, w, h),
                c0: random_color(rng),
                c1: random_color(rng),
                sigma: rng.random_range(20.0..35.0),
            });
        }
        DistractorKind::Microscopy => {
            let (w, h) = (rng.random_range(80..=180), rng.random_range(80..=180));
            let tints = [[0.3, 1.0, 0.35], [1.0, 0.3, 0.3], [0.4, 0.5, 1.0]];
            let blobs = (0..rng.random_range(5..=20))
                .map(|_| {
                    (
                        rng.random_range(0.0..w as f64),
                        rng.random_range(0.0..h as f64),
                        rng.random_range(3.0..10.0),
                    )
                })
                .collect();
            prims.push(Prim::Micro {
                bbox: BBox::from_origin_size(0, 0, w, h),
                background: rng.random_range(10..=40),
                tint: tints[rng.random_range(0..3)],
                blobs,
            });
        }
    }
    Item::new(prims, Some(kind))
}

/// Packs items onto shelves left to right, `ITEM_SEPARATION` apart.
/// Returns the canvas size and each item's origin.
fn pack(items: &[Item], min_width: u32) -> (u32, u32, Vec<(u32, u32)>) {
    let widest = items.iter().map(|i| i.w).max().unwrap_or(0);
    let width = min_width.max(widest + 2 * MARGIN);
    let (mut x, mut y, mut shelf) = (MARGIN, MARGIN, 0);
    let mut origins = Vec::new();
    for it in items {
        if x > MARGIN && x + it.w + MARGIN > width {
            x = MARGIN;
            y += shelf + ITEM_SEPARATION;
            shelf = 0;
        }
        origins.push((x, y));
        x += it.w + ITEM_SEPARATION;
        shelf = shelf.max(it.h);
    }
    (width, (y + shelf + MARGIN).max(120), origins)
}

pub fn generate_figure(spec: &SyntheticSpec, index: usize) -> Result<SyntheticFigure, GenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let kind = figure_kind(spec, index);
    let mut items = Vec::new();
    let mut boundary = None;
    match kind {
        FigureKind::Boundary(j) => {
            let case = boundary_case(j);
            boundary = Some(case);
            items.push(boundary_item(&mut rng, case));
        }
        FigureKind::Gel => {
            let panels = if spec.grid.is_some() || rng.random_bool(0.75) { 1 } else { 2 };
            for _ in 0..panels {
                items.push(panel_item(&mut rng, spec.grid.as_ref()));
            }
        }
        FigureKind::Plain => {}
    }
    let min_d = usize::from(kind == FigureKind::Plain).min(spec.max_distractors);
    let n_distractors = rng.random_range(min_d..=spec.max_distractors.max(min_d));
    for _ in 0..n_distractors {
        items.push(distractor_item(&mut rng));
    }
    let (width, height, origins) = pack(&items, rng.random_range(spec.min_width..=spec.max_width));
    if width > MAX_CANVAS || height > MAX_CANVAS {
        return Err(GenError::Spec(format!("figure {index} needs a {width}x{height} canvas")));
    }

    let mut img = RasterImage::filled(width, height, PAGE);
    let mut gels = Vec::new();
    let mut texts: Vec<(BBox, String, bool)> = Vec::new();
    let mut distractors = Vec::new();
    for (mut it, (ox, oy)) in items.into_iter().zip(origins) {
        let mut extent: Option<BBox> = None;
        for p in &mut it.prims {
            p.shift(ox, oy);
            let b = prim_bbox(p);
            extent = Some(extent.map_or(b, |e| e.union(&b)));
            match p {
                Prim::Gel { bbox, style, bands } => {
                    draw_gel(&mut img, &mut rng, bbox, style, bands);
                    gels.push(GtGel {
                        id: gels.len(),
                        bbox: *bbox,
                        variant: style.variant,
                    });
                }
                Prim::Text { x, y, text, scale } => {
                    let ink = rng.random_range(0..=40);
                    let b = draw_text(&mut img, *x, *y, text, *scale, ink);
                    texts.push((b, text.clone(), it.distractor.is_none()));
                }
                Prim::Fill { bbox, rgb } => fill_rect(&mut img, bbox, *rgb),
                Prim::Photo { bbox, c0, c1, sigma } => draw_photo(&mut img, &mut rng, bbox, *c0, *c1, *sigma),
                Prim::Micro {
                    bbox,
                    background,
                    tint,
                    blobs,
                } => draw_microscopy(&mut img, &mut rng, bbox, *background, *tint, blobs),
            }
        }
        if let (Some(kind), Some(bbox)) = (it.distractor, extent) {
            distractors.push(GtDistractor { kind, bbox });
        }
    }

    let id = figure_id(index);
    let truth = annotate(&id, width, height, gels, &texts, distractors, boundary);
    let sidecar = SidecarEngine::new(texts.into_iter().map(|(b, t, _)| (b, t)).collect());
    Ok(SyntheticFigure {
        id,
        image: img,
        truth,
        sidecar,
    })
}

/// Applies the grouping and label rules to the planted geometry.
fn annotate(
    id: &str,
    width: u32,
    height: u32,
    gels: Vec<GtGel>,
    texts: &[(BBox, String, bool)],
    distractors: Vec<GtDistractor>,
    boundary: Option<BoundaryCase>,
) -> GroundTruth {
    let cfg = PanelConfig::default();
    let lexicon = GeneLexicon::demo();
    let rules = ExclusionRules::default();
    let mut segments: Vec<Segment> = gels
        .iter()
        .map(|g| Segment::new(g.id, g.bbox, SegmentKind::Graphic, SegmentSource::ComponentDetector))
        .collect();
    for (k, (b, t, _)) in texts.iter().enumerate() {
        let mut s = Segment::new(gels.len() + k, *b, SegmentKind::Text, SegmentSource::ComponentDetector);
        s.ocr_text = Some(t.clone());
        segments.push(s);
    }
    let scores: Vec<f64> = segments.iter().map(|s| if s.is_text() { 0.0 } else { 1.0 }).collect();
    let panels: Vec<GtPanel> = detect_regions(&segments, &scores, &cfg)
        .into_iter()
        .enumerate()
        .map(|(pid, r)| GtPanel {
            id: pid,
            label_ids: (0..texts.len())
                .filter(|&k| label_qualifies(&r.union_bbox, &texts[k].0, &cfg))
                .collect(),
            gel_ids: r.segment_ids,
            bbox: r.union_bbox,
        })
        .collect();
    let texts = texts
        .iter()
        .enumerate()
        .map(|(k, (b, t, with_panel))| {
            let role = if panels.iter().any(|p| p.label_ids.contains(&k)) {
                TextRole::Label
            } else if *with_panel {
                TextRole::Decoy
            } else {
                TextRole::Distractor
            };
            GtText {
                id: k,
                bbox: *b,
                text: t.clone(),
                tokens: tokenize(t),
                gene_tokens: tag_text(t, &lexicon, &rules).into_iter().map(|(tok, _)| tok).collect(),
                role,
            }
        })
        .collect();
    GroundTruth {
        schema_version: GROUND_TRUTH_SCHEMA_VERSION,
        figure_id: id.to_owned(),
        width,
        height,
        gels,
        panels,
        texts,
        distractors,
        boundary,
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<Vec<SyntheticFigure>, GenError> {
    spec.validate()?;
    (0..spec.figure_count).into_par_iter().map(|i| generate_figure(spec, i)).collect()
}

/// Tight box of non-white pixels inside `b` grown by one pixel.
fn remeasure(img: &RasterImage, b: &BBox) -> Option<BBox> {
    let grown = BBox::new(
        b.x0.saturating_sub(1),
        b.y0.saturating_sub(1),
        (b.x1 + 1).min(img.width() - 1),
        (b.y1 + 1).min(img.height() - 1),
    );
    let mut out: Option<BBox> = None;
    for y in grown.y0..=grown.y1 {
        for x in grown.x0..=grown.x1 {
            if img.get(x, y) != PAGE {
                let p = BBox::new(x, y, x, y);
                out = Some(out.map_or(p, |o| o.union(&p)));
            }
        }
    }
    out
}

/// Checks that every planted gel and text box is exactly the ink box of
/// what was drawn there.
pub fn validate_figure(fig: &SyntheticFigure) -> Result<(), String> {
    let boxes = fig
        .truth
        .gels
        .iter()
        .map(|g| ("gel", g.id, g.bbox))
        .chain(fig.truth.texts.iter().map(|t| ("text", t.id, t.bbox)));
    for (what, id, b) in boxes {
        let got = remeasure(&fig.image, &b);
        if got != Some(b) {
            return Err(format!("{}: {what} {id} planted at {b:?}, measured {got:?}", fig.id));
        }
    }
    Ok(())
}

pub fn write_figure(dir: &Path, fig: &SyntheticFigure) -> Result<(), GenError> {
    let png = dir.join(format!("{}.png", fig.id));
    fs::write(&png, encode_png(&fig.image)?).map_err(io_err(&png))?;
    let gt = dir.join(format!("{}.gt.json", fig.id));
    fs::write(&gt, fig.truth.to_json()).map_err(io_err(&gt))?;
    let ocr = dir.join(format!("{}.ocr.tsv", fig.id));
    fs::write(&ocr, fig.sidecar.to_sidecar_string()).map_err(io_err(&ocr))?;
    Ok(())
}

/// Generates and writes a corpus; returns the ground truth in index order.
pub fn write_corpus(dir: &Path, spec: &SyntheticSpec) -> Result<Vec<GroundTruth>, GenError> {
    spec.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    (0..spec.figure_count)
        .into_par_iter()
        .map(|i| {
            let fig = generate_figure(spec, i)?;
            write_figure(dir, &fig)?;
            Ok(fig.truth)
        })
        .collect()
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruth, GenError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}
