//! Gel panel grouping and label attachment.
//!
//! Segments scoring at or above the high-recall threshold are linked when
//! they are neighbors; a linked group becomes a gel region only if at
//! least one member also clears the high-precision threshold. Text
//! segments near the region's bounding box are then attached as labels.
//!
//! All distances are edge-to-edge pixel counts: the number of background
//! pixels strictly between two boxes along the farther axis (see
//! [`BBox::gap`]). Thresholds are inclusive.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::imgio::BBox;
use crate::segmentation::{Segment, SegmentKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelConfig {
    pub neighbor_max_gap: u32,
    pub label_near_max: u32,
    pub label_far_max: u32,
    pub high_precision_threshold: f64,
    pub high_recall_threshold: f64,
}

impl Default for PanelConfig {
    fn default() -> Self {
        PanelConfig {
            neighbor_max_gap: 50,
            label_near_max: 30,
            label_far_max: 150,
            high_precision_threshold: 0.60,
            high_recall_threshold: 0.15,
        }
    }
}

impl PanelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.label_near_max > self.label_far_max {
            return Err("label near distance exceeds far distance".into());
        }
        for t in [self.high_precision_threshold, self.high_recall_threshold] {
            if !(0.0..=1.0).contains(&t) {
                return Err(format!("threshold {t} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GelRegion {
    pub segment_ids: Vec<usize>,
    pub union_bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelLabel {
    pub segment_id: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GelPanel {
    pub id: usize,
    pub region: GelRegion,
    pub labels: Vec<PanelLabel>,
}

/// The strip of background between two boxes' facing edges, limited to
/// the overlap of their projections on the other axis. `None` when the
/// boxes overlap or touch, or when neither projection overlaps.
pub fn between_rect(a: &BBox, b: &BBox) -> Option<BBox> {
    let y_overlap = (a.y0.max(b.y0), a.y1.min(b.y1));
    let x_overlap = (a.x0.max(b.x0), a.x1.min(b.x1));
    if y_overlap.0 <= y_overlap.1 && a.gap_x(b) > 0 {
        let (left, right) = if a.x1 < b.x0 { (a, b) } else { (b, a) };
        return Some(BBox::new(left.x1 + 1, y_overlap.0, right.x0 - 1, y_overlap.1));
    }
    if x_overlap.0 <= x_overlap.1 && a.gap_y(b) > 0 {
        let (top, bottom) = if a.y1 < b.y0 { (a, b) } else { (b, a) };
        return Some(BBox::new(x_overlap.0, top.y1 + 1, x_overlap.1, bottom.y0 - 1));
    }
    None
}

/// Whether two segments are at most `neighbor_max_gap` apart with no text
/// segment (other than themselves) intersecting the strip between them.
pub fn neighbors(a: &Segment, b: &Segment, all_text: &[Segment], cfg: &PanelConfig) -> bool {
    if a.bbox.gap(&b.bbox) > cfg.neighbor_max_gap {
        return false;
    }
    match between_rect(&a.bbox, &b.bbox) {
        None => true,
        Some(strip) => !all_text
            .iter()
            .filter(|t| t.id != a.id && t.id != b.id)
            .any(|t| t.bbox.intersects(&strip)),
    }
}

/// Connected components of the high-recall candidates under
/// [`neighbors`], kept when they contain a high-precision seed. Text
/// segments never join. `scores[i]` belongs to `segments[i]`; missing
/// scores count as 0.
pub fn detect_regions(segments: &[Segment], scores: &[f64], cfg: &PanelConfig) -> Vec<GelRegion> {
    let score = |i: usize| scores.get(i).copied().unwrap_or(0.0);
    let text: Vec<Segment> = segments.iter().filter(|s| s.kind == SegmentKind::Text).cloned().collect();
    let candidates: Vec<usize> = (0..segments.len())
        .filter(|&i| segments[i].kind == SegmentKind::Graphic && score(i) >= cfg.high_recall_threshold)
        .collect();

    let mut component = vec![usize::MAX; candidates.len()];
    let mut next = 0;
    for start in 0..candidates.len() {
        if component[start] != usize::MAX {
            continue;
        }
        component[start] = next;
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for v in 0..candidates.len() {
                if component[v] == usize::MAX
                    && neighbors(&segments[candidates[u]], &segments[candidates[v]], &text, cfg)
                {
                    component[v] = next;
                    stack.push(v);
                }
            }
        }
        next += 1;
    }

    let mut regions = Vec::new();
    for c in 0..next {
        let members: Vec<usize> = (0..candidates.len())
            .filter(|&k| component[k] == c)
            .map(|k| candidates[k])
            .collect();
        if !members.iter().any(|&i| score(i) >= cfg.high_precision_threshold) {
            continue;
        }
        let mut ids: Vec<usize> = members.iter().map(|&i| segments[i].id).collect();
        ids.sort_unstable();
        let union_bbox = members
            .iter()
            .map(|&i| segments[i].bbox)
            .reduce(|a, b| a.union(&b))
            .expect("component is non-empty");
        regions.push(GelRegion {
            segment_ids: ids,
            union_bbox,
        });
    }
    regions.sort_by_key(|r| r.segment_ids[0]);
    regions
}

/// Whether a text box qualifies as a label of a region with this bbox.
pub fn label_qualifies(region_bbox: &BBox, text_bbox: &BBox, cfg: &PanelConfig) -> bool {
    region_bbox.gap(text_bbox) <= cfg.label_near_max
        && region_bbox.farthest_distance(text_bbox) <= cfg.label_far_max
}

/// Attaches text segments carrying recognized text whose nearest edge is
/// within `label_near_max` of the region box and whose farthest edge is
/// within `label_far_max`. Labels are ordered by segment id.
pub fn attach_labels(id: usize, region: &GelRegion, text_segments: &[Segment], cfg: &PanelConfig) -> GelPanel {
    let mut labels: Vec<PanelLabel> = text_segments
        .iter()
        .filter(|t| t.kind == SegmentKind::Text)
        .filter(|t| label_qualifies(&region.union_bbox, &t.bbox, cfg))
        .map(|t| PanelLabel {
            segment_id: t.id,
            text: t.ocr_text.clone().unwrap_or_default(),
        })
        .collect();
    labels.sort_by_key(|l| l.segment_id);
    labels.dedup_by_key(|l| l.segment_id);
    GelPanel {
        id,
        region: region.clone(),
        labels,
    }
}

/// Regions plus labels for one figure, numbered in region order.
pub fn detect_panels(segments: &[Segment], scores: &[f64], cfg: &PanelConfig) -> Vec<GelPanel> {
    let text: Vec<Segment> = segments.iter().filter(|s| s.kind == SegmentKind::Text).cloned().collect();
    detect_regions(segments, scores, cfg)
        .iter()
        .enumerate()
        .map(|(i, r)| attach_labels(i, r, &text, cfg))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSide {
    Top,
    Bottom,
    Left,
    Right,
    Inside,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportLabel {
    pub segment_id: usize,
    pub text: String,
    pub side: LabelSide,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridCell {
    pub segment_id: usize,
    pub row: usize,
    pub col: usize,
}

/// Structural reading of a panel as a grid of gel segments with labels
/// tagged by side. No semantic roles are assigned. Members lying inside
/// another member (bands picked up inside a gel strip) are not cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelReport {
    pub panel_id: usize,
    pub bbox: BBox,
    pub n_rows: usize,
    pub n_cols: usize,
    /// Segment ids per row, top to bottom, each row left to right.
    pub rows: Vec<Vec<usize>>,
    pub cells: Vec<GridCell>,
    pub labels: Vec<ReportLabel>,
}

/// Side of the region a label sits on, by the larger per-axis gap.
pub fn label_side(region: &BBox, label: &BBox) -> LabelSide {
    let horizontal = if label.x1 < region.x0 {
        Some((LabelSide::Left, region.x0 - label.x1))
    } else if label.x0 > region.x1 {
        Some((LabelSide::Right, label.x0 - region.x1))
    } else {
        None
    };
    let vertical = if label.y1 < region.y0 {
        Some((LabelSide::Top, region.y0 - label.y1))
    } else if label.y0 > region.y1 {
        Some((LabelSide::Bottom, label.y0 - region.y1))
    } else {
        None
    };
    match (horizontal, vertical) {
        (None, None) => LabelSide::Inside,
        (Some((s, _)), None) | (None, Some((s, _))) => s,
        (Some((h, dh)), Some((v, dv))) => {
            if dh > dv {
                h
            } else {
                v
            }
        }
    }
}

/// Groups sorted 1-D coordinates: a new cluster starts whenever the step
/// to the previous value exceeds `gap`. Returns the cluster of each input.
fn cluster_1d(values: &[f64], gap: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut out = vec![0; values.len()];
    let mut cluster = 0;
    for w in 0..order.len() {
        if w > 0 && values[order[w]] - values[order[w - 1]] > gap {
            cluster += 1;
        }
        out[order[w]] = cluster;
    }
    out
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn panel_report(panel: &GelPanel, segments: &[Segment]) -> PanelReport {
    let by_id: BTreeMap<usize, &Segment> = segments.iter().map(|s| (s.id, s)).collect();
    let all: Vec<&Segment> = panel
        .region
        .segment_ids
        .iter()
        .filter_map(|id| by_id.get(id).copied())
        .collect();
    let nested = |s: &Segment| {
        all.iter()
            .any(|o| o.id != s.id && o.bbox.contains(&s.bbox) && (o.bbox != s.bbox || o.id < s.id))
    };
    let members: Vec<&Segment> = all.iter().copied().filter(|s| !nested(s)).collect();
    let (mut rows, mut cells, mut n_rows, mut n_cols) = (Vec::new(), Vec::new(), 0, 0);
    if !members.is_empty() {
        let cy: Vec<f64> = members.iter().map(|s| s.bbox.center().1).collect();
        let cx: Vec<f64> = members.iter().map(|s| s.bbox.center().0).collect();
        let row_gap = median(members.iter().map(|s| s.bbox.height() as f64).collect());
        let col_gap = median(members.iter().map(|s| s.bbox.width() as f64).collect());
        let row_of = cluster_1d(&cy, row_gap);
        let col_of = cluster_1d(&cx, col_gap);
        n_rows = row_of.iter().max().map_or(0, |m| m + 1);
        n_cols = col_of.iter().max().map_or(0, |m| m + 1);
        rows = vec![Vec::new(); n_rows];
        let mut order: Vec<usize> = (0..members.len()).collect();
        order.sort_by(|&a, &b| cx[a].total_cmp(&cx[b]).then(members[a].id.cmp(&members[b].id)));
        for k in order {
            rows[row_of[k]].push(members[k].id);
            cells.push(GridCell {
                segment_id: members[k].id,
                row: row_of[k],
                col: col_of[k],
            });
        }
        cells.sort_by_key(|c| (c.row, c.col, c.segment_id));
    }
    let labels = panel
        .labels
        .iter()
        .map(|l| ReportLabel {
            segment_id: l.segment_id,
            text: l.text.clone(),
            side: by_id
                .get(&l.segment_id)
                .map_or(LabelSide::Inside, |s| label_side(&panel.region.union_bbox, &s.bbox)),
        })
        .collect();
    PanelReport {
        panel_id: panel.id,
        bbox: panel.region.union_bbox,
        n_rows,
        n_cols,
        rows,
        cells,
        labels,
    }
}
