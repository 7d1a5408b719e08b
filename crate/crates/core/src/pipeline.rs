//! Corpus runner: segmentation, OCR, features, gel scoring, panel
//! grouping and gene tagging over a directory of figures.
//!
//! A corpus directory holds image files (`.png`, `.jpg`, `.jpeg`). Next to
//! `<stem>.png` the runner looks for `<stem>.id` (figure id, defaults to the
//! stem), `<stem>.ocr.tsv` (sidecar OCR) and, for training and
//! evaluation, `<stem>.gt.json` (ground truth). Records come out in
//! figure-id order whatever the worker count.

use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evalgen::{classification_report, load_ground_truth, match_boxes, EvalReport, GenError, GroundTruth, Prf, ThresholdRow};
use crate::features::{extract_features, FeatureVector, GlcmConfig};
use crate::forest::{load_model, save_model, train, ForestError, ForestModel, LabeledExample, OperatingPoint, TrainParams};
use crate::imgio::{decode_image, to_gray, BBox, RasterImage};
use crate::ner::{count_tokens, tag_mentions, ExclusionRules, GeneLexicon, GeneMention, NerError, TokenCounts};
use crate::ocr::{apply_recognitions, load_sidecar, recognize, ExternalEngine, OcrEngine, SidecarEngine, TextRecognition};
use crate::panels::{detect_panels, panel_report, GelPanel, PanelConfig, PanelReport};
use crate::segmentation::{segment_figure, Segment, SegmentationConfig, SegmentationError};

pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];
pub const REPORT_THRESHOLDS: [f64; 3] = [
    OperatingPoint::HIGH_RECALL.threshold,
    OperatingPoint::BALANCED.threshold,
    OperatingPoint::HIGH_PRECISION.threshold,
];
pub const MATCH_IOU: f64 = 0.5;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ForestError),
    #[error(transparent)]
    Ner(#[from] NerError),
    #[error(transparent)]
    Generator(#[from] GenError),
    #[error("train and test splits share figures: {0:?}")]
    Split(Vec<String>),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "engine")]
pub enum OcrSelection {
    /// `<stem>.ocr.tsv` next to each image; figures without one get no text.
    Sidecar,
    External { command: String, timeout_ms: u64 },
}

/// Settings for the per-figure stages shared by extraction and training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub segmentation: SegmentationConfig,
    pub glcm: GlcmConfig,
    pub ocr: OcrSelection,
    pub min_text_coverage: f64,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            segmentation: SegmentationConfig::default(),
            glcm: GlcmConfig::default(),
            ocr: OcrSelection::Sidecar,
            min_text_coverage: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub input_dir: PathBuf,
    pub model_path: PathBuf,
    pub lexicon_path: Option<PathBuf>,
    pub stoplist_paths: Vec<PathBuf>,
    pub stages: StageConfig,
    pub panel: PanelConfig,
    pub workers: usize,
    pub seed: u64,
    pub record_timings: bool,
}

impl PipelineConfig {
    pub fn new(input_dir: impl Into<PathBuf>, model_path: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            input_dir: input_dir.into(),
            model_path: model_path.into(),
            lexicon_path: None,
            stoplist_paths: Vec::new(),
            stages: StageConfig::default(),
            panel: PanelConfig::default(),
            workers: 1,
            seed: 0,
            record_timings: true,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.workers == 0 {
            return Err(PipelineError::Config("worker count must be at least 1".into()));
        }
        if !self.input_dir.is_dir() {
            return Err(PipelineError::Config(format!("input directory {} not found", self.input_dir.display())));
        }
        let files = std::iter::once(&self.model_path)
            .chain(self.lexicon_path.as_ref())
            .chain(&self.stoplist_paths);
        for p in files {
            if !p.is_file() {
                return Err(PipelineError::Config(format!("{} not found", p.display())));
            }
        }
        self.panel.validate().map_err(PipelineError::Config)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FigureInput {
    pub id: String,
    pub image_path: PathBuf,
}

impl FigureInput {
    fn sibling(&self, suffix: &str) -> PathBuf {
        let stem = self.image_path.file_stem().unwrap_or_default().to_string_lossy();
        self.image_path.with_file_name(format!("{stem}{suffix}"))
    }

    pub fn sidecar_path(&self) -> PathBuf {
        self.sibling(".ocr.tsv")
    }

    pub fn ground_truth_path(&self) -> PathBuf {
        self.sibling(".gt.json")
    }
}

/// Image files of a corpus directory, ordered by figure id then path.
pub fn list_corpus(dir: &Path) -> Result<Vec<FigureInput>, PipelineError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if !is_image || !path.is_file() {
            continue;
        }
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let id_path = path.with_file_name(format!("{stem}.id"));
        let id = match fs::read_to_string(&id_path) {
            Ok(s) if !s.trim().is_empty() => s.trim().to_owned(),
            _ => stem,
        };
        out.push(FigureInput { id, image_path: path });
    }
    out.sort_by(|a, b| a.id.cmp(&b.id).then_with(|| a.image_path.cmp(&b.image_path)));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FigureStatus {
    Ok,
    DecodeFailed,
    NoSegments,
    Error,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub decode_ms: f64,
    pub segmentation_ms: f64,
    pub ocr_ms: f64,
    pub features_ms: f64,
    pub scoring_ms: f64,
    pub panels_ms: f64,
    pub ner_ms: f64,
    pub total_ms: f64,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRecord {
    pub panel: GelPanel,
    pub report: PanelReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureRecord {
    pub figure_id: String,
    pub source: String,
    pub status: FigureStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<Vec<Segment>>,
    /// Forest score per segment, parallel to `segments`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gel_scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub panels: Option<Vec<PanelRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mentions: Option<Vec<GeneMention>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_counts: Option<TokenCounts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

impl FigureRecord {
    fn failed(input: &FigureInput, status: FigureStatus, error: String) -> Self {
        FigureRecord {
            figure_id: input.id.clone(),
            source: input.image_path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            status,
            error: Some(error),
            width: None,
            height: None,
            segments: None,
            gel_scores: None,
            panels: None,
            mentions: None,
            token_counts: None,
            timings: None,
        }
    }

    pub fn panel_count(&self) -> usize {
        self.panels.as_ref().map_or(0, Vec::len)
    }

    pub fn label_count(&self) -> usize {
        self.panels.iter().flatten().map(|p| p.panel.labels.len()).sum()
    }
}

/// Read-only state shared by all workers.
pub struct Resources {
    pub model: ForestModel,
    pub lexicon: GeneLexicon,
    pub rules: ExclusionRules,
    pub external: Option<ExternalEngine>,
}

impl Resources {
    pub fn load(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        let model = load_model(&cfg.model_path)?;
        let lexicon = match &cfg.lexicon_path {
            Some(p) => GeneLexicon::load(p)?,
            None => {
                info!("no lexicon given, using the shipped demo lexicon");
                GeneLexicon::demo()
            }
        };
        let rules = ExclusionRules::from_files(&cfg.stoplist_paths)?;
        Ok(Resources {
            model,
            lexicon,
            rules,
            external: external_engine(&cfg.stages.ocr)?,
        })
    }
}

fn external_engine(sel: &OcrSelection) -> Result<Option<ExternalEngine>, PipelineError> {
    match sel {
        OcrSelection::Sidecar => Ok(None),
        OcrSelection::External { command, timeout_ms } => {
            ExternalEngine::from_command_line(command, Duration::from_millis(*timeout_ms))
                .map(Some)
                .ok_or_else(|| PipelineError::Config("empty OCR command".into()))
        }
    }
}

/// Segments with OCR applied and one feature vector each.
#[derive(Debug, Clone)]
pub struct AnalyzedFigure {
    pub image: RasterImage,
    pub segments: Vec<Segment>,
    pub recognitions: Vec<TextRecognition>,
    pub features: Vec<FeatureVector>,
}

#[derive(Debug)]
pub struct StageFailure {
    pub status: FigureStatus,
    pub message: String,
}

fn stage_failure(status: FigureStatus, message: impl Into<String>) -> StageFailure {
    StageFailure {
        status,
        message: message.into(),
    }
}

/// Decode, segment, recognize and describe one figure.
pub fn analyze_figure(
    input: &FigureInput,
    stages: &StageConfig,
    external: Option<&ExternalEngine>,
    timings: &mut Timings,
) -> Result<AnalyzedFigure, StageFailure> {
    let t = Instant::now();
    let bytes = fs::read(&input.image_path).map_err(|e| stage_failure(FigureStatus::Error, e.to_string()))?;
    let image = decode_image(&bytes).map_err(|e| stage_failure(FigureStatus::DecodeFailed, e.to_string()))?;
    let gray = to_gray(&image);
    timings.decode_ms = ms(t.elapsed());

    let t = Instant::now();
    let mut segments = segment_figure(&gray, &stages.segmentation).map_err(|e| match e {
        SegmentationError::EmptyResult => stage_failure(FigureStatus::NoSegments, e.to_string()),
    })?;
    timings.segmentation_ms = ms(t.elapsed());

    let t = Instant::now();
    let sidecar;
    let engine: &dyn OcrEngine = match external {
        Some(e) => e,
        None => {
            let path = input.sidecar_path();
            sidecar = if path.is_file() {
                load_sidecar(&path).map_err(|e| stage_failure(FigureStatus::Error, format!("{}: {e}", path.display())))?
            } else {
                SidecarEngine::default()
            };
            &sidecar
        }
    };
    let recognitions: Vec<TextRecognition> = segments.iter().map(|s| recognize(engine, &image, s)).collect();
    apply_recognitions(&mut segments, &recognitions, stages.min_text_coverage);
    timings.ocr_ms = ms(t.elapsed());

    let t = Instant::now();
    let features = segments
        .iter()
        .zip(&recognitions)
        .map(|(s, r)| extract_features(&image, &gray, s, r, &stages.glcm))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| stage_failure(FigureStatus::Error, e.to_string()))?;
    timings.features_ms = ms(t.elapsed());
    Ok(AnalyzedFigure {
        image,
        segments,
        recognitions,
        features,
    })
}

fn process_inner(input: &FigureInput, cfg: &PipelineConfig, res: &Resources) -> FigureRecord {
    let start = Instant::now();
    let mut timings = Timings::default();
    let fig = match analyze_figure(input, &cfg.stages, res.external.as_ref(), &mut timings) {
        Ok(f) => f,
        Err(f) => return FigureRecord::failed(input, f.status, f.message),
    };

    let t = Instant::now();
    let scores = match fig
        .features
        .iter()
        .map(|v| res.model.score(v.as_slice()))
        .collect::<Result<Vec<f64>, _>>()
    {
        Ok(s) => s,
        Err(e) => return FigureRecord::failed(input, FigureStatus::Error, e.to_string()),
    };
    timings.scoring_ms = ms(t.elapsed());

    let t = Instant::now();
    let panels: Vec<PanelRecord> = detect_panels(&fig.segments, &scores, &cfg.panel)
        .into_iter()
        .map(|p| PanelRecord {
            report: panel_report(&p, &fig.segments),
            panel: p,
        })
        .collect();
    timings.panels_ms = ms(t.elapsed());

    let t = Instant::now();
    let mentions: Vec<GeneMention> = panels
        .iter()
        .flat_map(|p| tag_mentions(&p.panel, &res.lexicon, &res.rules))
        .collect();
    let plain: Vec<GelPanel> = panels.iter().map(|p| p.panel.clone()).collect();
    let token_counts = count_tokens(&plain, &fig.segments, &res.lexicon, &res.rules);
    timings.ner_ms = ms(t.elapsed());
    timings.total_ms = ms(start.elapsed());

    FigureRecord {
        figure_id: input.id.clone(),
        source: input.image_path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
        status: FigureStatus::Ok,
        error: None,
        width: Some(fig.image.width()),
        height: Some(fig.image.height()),
        segments: Some(fig.segments),
        gel_scores: Some(scores),
        panels: Some(panels),
        mentions: Some(mentions),
        token_counts: Some(token_counts),
        timings: cfg.record_timings.then_some(timings),
    }
}

/// One figure end to end. Panics inside the stages are caught and
/// reported as status `error`.
pub fn process_figure(input: &FigureInput, cfg: &PipelineConfig, res: &Resources) -> FigureRecord {
    match catch_unwind(AssertUnwindSafe(|| process_inner(input, cfg, res))) {
        Ok(r) => r,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            FigureRecord::failed(input, FigureStatus::Error, format!("internal error: {msg}"))
        }
    }
}

/// Corpus counters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub total_figures: u64,
    pub processed_figures: u64,
    pub decode_failed: u64,
    pub no_segments: u64,
    pub errors: u64,
    pub segments: u64,
    pub gel_segments: u64,
    pub figures_with_panels: u64,
    pub panels: u64,
    pub labels: u64,
    pub panels_per_figure: Option<f64>,
    pub labels_per_panel: Option<f64>,
    pub gene_mentions: u64,
    pub tokens: TokenCounts,
    pub label_gene_token_ratio: Option<f64>,
    pub gene_token_ratio: Option<f64>,
}

impl CorpusSummary {
    /// `gel_segments` counts graphic segments at or above `hp_threshold`.
    pub fn from_records(records: &[FigureRecord], hp_threshold: f64) -> Self {
        let mut s = CorpusSummary {
            total_figures: records.len() as u64,
            ..CorpusSummary::default()
        };
        for r in records {
            match r.status {
                FigureStatus::Ok => s.processed_figures += 1,
                FigureStatus::DecodeFailed => s.decode_failed += 1,
                FigureStatus::NoSegments => s.no_segments += 1,
                FigureStatus::Error => s.errors += 1,
            }
            if let (Some(segs), Some(scores)) = (&r.segments, &r.gel_scores) {
                s.segments += segs.len() as u64;
                s.gel_segments += segs
                    .iter()
                    .zip(scores)
                    .filter(|(seg, &sc)| !seg.is_text() && sc >= hp_threshold)
                    .count() as u64;
            }
            let panels = r.panel_count() as u64;
            s.panels += panels;
            s.figures_with_panels += u64::from(panels > 0);
            s.labels += r.label_count() as u64;
            s.gene_mentions += r.mentions.as_ref().map_or(0, |m| m.len() as u64);
            if let Some(c) = &r.token_counts {
                s.tokens.add(c);
            }
        }
        let ratio = |a: u64, b: u64| (b > 0).then(|| a as f64 / b as f64);
        s.panels_per_figure = ratio(s.panels, s.processed_figures);
        s.labels_per_panel = ratio(s.labels, s.panels);
        s.label_gene_token_ratio = s.tokens.label_ratio();
        s.gene_token_ratio = s.tokens.overall_ratio();
        s
    }

    pub fn failed_figures(&self) -> u64 {
        self.total_figures - self.processed_figures
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OutputLine {
    Figure(FigureRecord),
    Summary(CorpusSummary),
}

#[derive(Debug, Clone)]
pub struct ExtractOutput {
    pub records: Vec<FigureRecord>,
    pub summary: CorpusSummary,
}

impl ExtractOutput {
    /// One JSON line per figure followed by the summary line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, &OutputLine::Figure(r.clone()))?;
            w.write_all(b"\n")?;
        }
        serde_json::to_writer(&mut w, &OutputLine::Summary(self.summary.clone()))?;
        w.write_all(b"\n")
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))
}

pub fn run_extract(cfg: &PipelineConfig) -> Result<ExtractOutput, PipelineError> {
    cfg.validate()?;
    let res = Resources::load(cfg)?;
    let inputs = list_corpus(&cfg.input_dir)?;
    info!("extracting {} figures with {} workers", inputs.len(), cfg.workers);
    let records: Vec<FigureRecord> = pool(cfg.workers)?.install(|| inputs.par_iter().map(|i| process_figure(i, cfg, &res)).collect());
    for r in records.iter().filter(|r| r.status != FigureStatus::Ok) {
        warn!("{}: {:?} {}", r.figure_id, r.status, r.error.as_deref().unwrap_or(""));
    }
    let summary = CorpusSummary::from_records(&records, cfg.panel.high_precision_threshold);
    Ok(ExtractOutput { records, summary })
}

/// Training label of a segment: gel when it matches a planted gel at IoU
/// 0.5, unlabeled when it lies inside a gel without matching (a band or
/// fragment of one), otherwise not gel.
pub fn segment_label(bbox: &BBox, truth: &GroundTruth) -> Option<bool> {
    if truth.gels.iter().any(|g| g.bbox.iou(bbox) >= MATCH_IOU) {
        Some(true)
    } else if truth.gels.iter().any(|g| g.bbox.contains(bbox)) {
        None
    } else {
        Some(false)
    }
}

/// Labeled feature vectors for every figure that has ground truth.
/// Figures failing analysis are skipped with a warning.
pub fn labeled_examples(
    inputs: &[FigureInput],
    stages: &StageConfig,
    workers: usize,
) -> Result<Vec<Vec<LabeledExample>>, PipelineError> {
    let external = external_engine(&stages.ocr)?;
    pool(workers)?.install(|| {
        inputs
            .par_iter()
            .map(|input| {
                let truth = load_ground_truth(&input.ground_truth_path())?;
                let mut timings = Timings::default();
                let fig = match analyze_figure(input, stages, external.as_ref(), &mut timings) {
                    Ok(f) => f,
                    Err(f) => {
                        warn!("{}: skipped for training ({:?}: {})", input.id, f.status, f.message);
                        return Ok(Vec::new());
                    }
                };
                Ok(fig
                    .segments
                    .iter()
                    .zip(fig.features)
                    .filter_map(|(s, features)| {
                        segment_label(&s.bbox, &truth).map(|is_gel| LabeledExample { features, label: is_gel })
                    })
                    .collect())
            })
            .collect()
    })
}

/// Seeded figure-level split; the first `round(n * test_fraction)`
/// shuffled ids form the test set.
pub fn split_figures(ids: &[String], seed: u64, test_fraction: f64) -> (Vec<String>, Vec<String>) {
    let mut shuffled = ids.to_vec();
    shuffled.sort();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((ids.len() as f64) * test_fraction).round() as usize;
    let test = shuffled[..n_test].to_vec();
    let train = shuffled[n_test..].to_vec();
    (train, test)
}

pub fn check_disjoint(train: &[String], test: &[String]) -> Result<(), PipelineError> {
    let train: std::collections::BTreeSet<&String> = train.iter().collect();
    let shared: Vec<String> = test.iter().filter(|t| train.contains(t)).cloned().collect();
    if shared.is_empty() {
        Ok(())
    } else {
        Err(PipelineError::Split(shared))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub input_dir: PathBuf,
    pub model_out: PathBuf,
    pub seed: u64,
    pub test_fraction: f64,
    pub tree_count: usize,
    pub stages: StageConfig,
    pub workers: usize,
}

impl TrainConfig {
    pub fn new(input_dir: impl Into<PathBuf>, model_out: impl Into<PathBuf>) -> Self {
        TrainConfig {
            input_dir: input_dir.into(),
            model_out: model_out.into(),
            seed: 0,
            test_fraction: 0.5,
            tree_count: crate::forest::DEFAULT_TREE_COUNT,
            stages: StageConfig::default(),
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_figures: Vec<String>,
    pub test_figures: Vec<String>,
    pub train_examples: usize,
    pub test_examples: usize,
    pub test_positives: usize,
    pub report: EvalReport,
}

/// Test-split scores paired with their labels.
pub fn score_examples(model: &ForestModel, examples: &[LabeledExample]) -> Result<Vec<(f64, bool)>, ForestError> {
    examples
        .iter()
        .map(|e| model.score(e.features.as_slice()).map(|s| (s, e.label)))
        .collect()
}

/// Trains on one figure split, evaluates on the other, writes the model.
pub fn run_train(cfg: &TrainConfig) -> Result<(ForestModel, TrainReport), PipelineError> {
    if cfg.workers == 0 {
        return Err(PipelineError::Config("worker count must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&cfg.test_fraction) {
        return Err(PipelineError::Config("test fraction must lie in [0, 1)".into()));
    }
    let inputs: Vec<FigureInput> = list_corpus(&cfg.input_dir)?
        .into_iter()
        .filter(|i| i.ground_truth_path().is_file())
        .collect();
    if inputs.is_empty() {
        return Err(PipelineError::Config(format!("no annotated figures in {}", cfg.input_dir.display())));
    }
    let ids: Vec<String> = inputs.iter().map(|i| i.id.clone()).collect();
    let (train_ids, test_ids) = split_figures(&ids, cfg.seed, cfg.test_fraction);
    check_disjoint(&train_ids, &test_ids)?;
    train_and_evaluate(cfg, &inputs, train_ids, test_ids)
}

/// Training and held-out evaluation on explicit figure-id splits.
pub fn train_and_evaluate(
    cfg: &TrainConfig,
    inputs: &[FigureInput],
    train_ids: Vec<String>,
    test_ids: Vec<String>,
) -> Result<(ForestModel, TrainReport), PipelineError> {
    check_disjoint(&train_ids, &test_ids)?;
    let per_figure = labeled_examples(inputs, &cfg.stages, cfg.workers)?;
    let collect = |ids: &[String]| -> Vec<LabeledExample> {
        inputs
            .iter()
            .zip(&per_figure)
            .filter(|(i, _)| ids.contains(&i.id))
            .flat_map(|(_, ex)| ex.iter().cloned())
            .collect()
    };
    let train_set = collect(&train_ids);
    let test_set = collect(&test_ids);
    let params = TrainParams {
        tree_count: cfg.tree_count,
        ..TrainParams::with_seed(cfg.seed)
    };
    let model = pool(cfg.workers)?.install(|| train(&train_set, &params))?;
    save_model(&model, &cfg.model_out)?;
    let scores = score_examples(&model, &test_set)?;
    let report = classification_report(&scores, &REPORT_THRESHOLDS);
    Ok((
        model,
        TrainReport {
            train_figures: train_ids,
            test_figures: test_ids,
            train_examples: train_set.len(),
            test_examples: test_set.len(),
            test_positives: test_set.iter().filter(|e| e.label).count(),
            report,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelEvalReport {
    pub figures: usize,
    pub predicted_panels: usize,
    pub truth_panels: usize,
    pub matched_panels: usize,
    pub report: EvalReport,
}

/// Panel-level precision and recall pooled over figures. Figures with
/// ground truth but no successful record count as predicting nothing;
/// records without ground truth are ignored.
pub fn evaluate_panels(records: &[FigureRecord], truths: &[GroundTruth], threshold: f64) -> PanelEvalReport {
    let (mut predicted, mut truth_n, mut matched) = (0, 0, 0);
    for gt in truths {
        let pred: Vec<BBox> = records
            .iter()
            .filter(|r| r.figure_id == gt.figure_id)
            .flat_map(|r| r.panels.iter().flatten().map(|p| p.panel.region.union_bbox))
            .collect();
        let truth: Vec<BBox> = gt.panels.iter().map(|p| p.bbox).collect();
        matched += match_boxes(&pred, &truth, MATCH_IOU).len();
        predicted += pred.len();
        truth_n += truth.len();
    }
    let p = Prf::from_counts(matched, predicted, truth_n);
    PanelEvalReport {
        figures: truths.len(),
        predicted_panels: predicted,
        truth_panels: truth_n,
        matched_panels: matched,
        report: EvalReport {
            rows: vec![ThresholdRow {
                threshold,
                precision: p.precision,
                recall: p.recall,
                f_score: p.f_score,
            }],
            auc: None,
        },
    }
}

/// Figure records from an extract output file (summary line skipped).
pub fn read_records(path: &Path) -> Result<Vec<FigureRecord>, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        if let OutputLine::Figure(r) = serde_json::from_str(line)? {
            out.push(r);
        }
    }
    Ok(out)
}

/// Every `*.gt.json` in a directory, ordered by figure id.
pub fn read_ground_truth_dir(dir: &Path) -> Result<Vec<GroundTruth>, PipelineError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.to_string_lossy().ends_with(".gt.json") {
            out.push(load_ground_truth(&path)?);
        }
    }
    out.sort_by(|a, b| a.figure_id.cmp(&b.figure_id));
    Ok(out)
}

pub fn run_eval(predictions: &Path, truth_dir: &Path, threshold: f64) -> Result<PanelEvalReport, PipelineError> {
    let records = read_records(predictions)?;
    let truths = read_ground_truth_dir(truth_dir)?;
    Ok(evaluate_panels(&records, &truths, threshold))
}
