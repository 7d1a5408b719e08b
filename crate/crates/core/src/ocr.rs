//! Text recognition behind a pluggable engine.
//!
//! The pipeline never fails because of OCR: engine errors are logged and
//! the segment is treated as carrying no text. Two engines ship here: a
//! sidecar stub answering from a box/text file, and an adapter around any
//! external command that reads a PNG on stdin and prints UTF-8 text.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::imgio::{encode_png, BBox, RasterImage};
use crate::segmentation::{Segment, SegmentKind};

#[derive(Debug, Error)]
pub enum OcrError {
    #[error("sidecar line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("engine failed: {0}")]
    Engine(String),
    #[error("engine timed out after {0:?}")]
    Timeout(Duration),
}

/// What an engine reports for one region.
#[derive(Debug, Clone, PartialEq)]
pub struct RawText {
    pub text: String,
    /// Fraction of the region covered by character boxes, when known.
    pub coverage: Option<f64>,
}

pub trait OcrEngine: Send + Sync {
    fn recognize_region(&self, img: &RasterImage, bbox: &BBox) -> Result<RawText, OcrError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextRecognition {
    pub segment_id: usize,
    pub text: String,
    pub char_count: usize,
    pub coverage: f64,
}

pub fn char_count(text: &str) -> usize {
    text.chars().filter(|c| !c.is_whitespace()).count()
}

/// Runs the engine on one segment. Engine faults degrade to empty text.
pub fn recognize(engine: &dyn OcrEngine, img: &RasterImage, seg: &Segment) -> TextRecognition {
    let raw = match engine.recognize_region(img, &seg.bbox) {
        Ok(raw) => raw,
        Err(e) => {
            warn!("ocr failed on segment {}: {e}", seg.id);
            RawText {
                text: String::new(),
                coverage: None,
            }
        }
    };
    let text = raw.text.trim().to_string();
    let char_count = char_count(&text);
    let coverage = if char_count == 0 {
        0.0
    } else {
        raw.coverage.unwrap_or(1.0).clamp(0.0, 1.0)
    };
    TextRecognition {
        segment_id: seg.id,
        text,
        char_count,
        coverage,
    }
}

/// Stores recognized text on the segments and revises their kind: a
/// segment is text when it has recognized text and either looked like
/// text geometrically or its character boxes cover at least
/// `min_coverage` of it. Segments without recognized text are graphic.
pub fn apply_recognitions(segments: &mut [Segment], recs: &[TextRecognition], min_coverage: f64) {
    for (seg, rec) in segments.iter_mut().zip(recs) {
        debug_assert_eq!(seg.id, rec.segment_id);
        let has_text = rec.char_count > 0;
        seg.kind = if has_text && (seg.kind == SegmentKind::Text || rec.coverage >= min_coverage) {
            SegmentKind::Text
        } else {
            SegmentKind::Graphic
        };
        seg.ocr_text = Some(rec.text.clone());
    }
}

/// Engine answering from a list of boxes with known text.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SidecarEngine {
    entries: Vec<(BBox, String)>,
    min_iou: f64,
}

impl SidecarEngine {
    pub const MATCH_IOU: f64 = 0.5;

    pub fn new(entries: Vec<(BBox, String)>) -> Self {
        SidecarEngine {
            entries,
            min_iou: Self::MATCH_IOU,
        }
    }

    pub fn entries(&self) -> &[(BBox, String)] {
        &self.entries
    }

    /// Parses `x0 y0 x1 y1<TAB>text` records, one per line.
    pub fn parse(content: &str) -> Result<Self, OcrError> {
        let mut entries: Vec<(BBox, String)> = Vec::new();
        for (n, line) in content.lines().enumerate() {
            let line_no = n + 1;
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.trim().is_empty() {
                continue;
            }
            let (coords, text) = line.split_once('\t').ok_or_else(|| OcrError::Parse {
                line: line_no,
                msg: "missing tab separator".into(),
            })?;
            let nums: Vec<u32> = coords
                .split_whitespace()
                .map(|t| t.parse::<u32>())
                .collect::<Result<_, _>>()
                .map_err(|e| OcrError::Parse {
                    line: line_no,
                    msg: e.to_string(),
                })?;
            let [x0, y0, x1, y1] = nums[..] else {
                return Err(OcrError::Parse {
                    line: line_no,
                    msg: format!("expected 4 coordinates, got {}", nums.len()),
                });
            };
            if x0 > x1 || y0 > y1 {
                return Err(OcrError::Parse {
                    line: line_no,
                    msg: "inverted box".into(),
                });
            }
            let bbox = BBox::new(x0, y0, x1, y1);
            if entries.iter().any(|(b, _)| *b == bbox) {
                return Err(OcrError::Parse {
                    line: line_no,
                    msg: format!("duplicate box {x0} {y0} {x1} {y1}"),
                });
            }
            entries.push((bbox, text.to_string()));
        }
        Ok(SidecarEngine::new(entries))
    }

    pub fn to_sidecar_string(&self) -> String {
        self.entries
            .iter()
            .map(|(b, t)| format!("{} {} {} {}\t{}\n", b.x0, b.y0, b.x1, b.y1, t))
            .collect()
    }
}

pub fn load_sidecar(path: &Path) -> Result<SidecarEngine, OcrError> {
    SidecarEngine::parse(&fs::read_to_string(path)?)
}

impl OcrEngine for SidecarEngine {
    fn recognize_region(&self, _img: &RasterImage, bbox: &BBox) -> Result<RawText, OcrError> {
        let mut best: Option<(f64, &BBox, &str)> = None;
        for (b, t) in &self.entries {
            let iou = b.iou(bbox);
            if iou >= self.min_iou && best.is_none_or(|(bi, _, _)| iou > bi) {
                best = Some((iou, b, t));
            }
        }
        Ok(match best {
            Some((_, b, t)) => RawText {
                text: t.to_string(),
                coverage: Some(
                    b.intersection(bbox).map_or(0, |i| i.area()) as f64 / bbox.area() as f64,
                ),
            },
            None => RawText {
                text: String::new(),
                coverage: None,
            },
        })
    }
}

/// Adapter for a command-line OCR tool: one process per region, PNG on
/// stdin, recognized text on stdout, exit status 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalEngine {
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
}

impl ExternalEngine {
    /// Splits a command line on whitespace; the first word is the program.
    pub fn from_command_line(cmd: &str, timeout: Duration) -> Option<Self> {
        let mut parts = cmd.split_whitespace().map(str::to_string);
        let program = parts.next()?;
        Some(ExternalEngine {
            program,
            args: parts.collect(),
            timeout,
        })
    }
}

impl OcrEngine for ExternalEngine {
    fn recognize_region(&self, img: &RasterImage, bbox: &BBox) -> Result<RawText, OcrError> {
        let crop = img
            .crop(bbox)
            .map_err(|e| OcrError::Engine(e.to_string()))?;
        let png = encode_png(&crop).map_err(|e| OcrError::Engine(e.to_string()))?;
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = std::thread::spawn(move || {
            // The engine may exit without draining stdin.
            let _ = stdin.write_all(&png);
        });
        let mut stdout = child.stdout.take().expect("piped stdout");
        let reader = std::thread::spawn(move || {
            let mut buf = Vec::new();
            stdout.read_to_end(&mut buf).map(|_| buf)
        });
        let status = match child.wait_timeout(self.timeout)? {
            Some(s) => s,
            None => {
                let _ = child.kill();
                let _ = child.wait();
                let _ = writer.join();
                let _ = reader.join();
                return Err(OcrError::Timeout(self.timeout));
            }
        };
        let _ = writer.join();
        let out = reader
            .join()
            .map_err(|_| OcrError::Engine("reader thread panicked".into()))??;
        if !status.success() {
            return Err(OcrError::Engine(format!("exit status {status}")));
        }
        let text = String::from_utf8(out).map_err(|e| OcrError::Engine(e.to_string()))?;
        Ok(RawText {
            text,
            coverage: None,
        })
    }
}
