//! Random forest scoring the probability that a segment is a gel.
//!
//! Trees are grown on bootstrap resamples with Gini splits over a random
//! subset of ⌈√d⌉ features per node, down to pure nodes. Leaves store the
//! gel fraction of their training samples and the forest score is the
//! mean leaf fraction, so thresholds between hard-vote steps still mean
//! something. Tree `i` draws from ChaCha stream `i` of the master seed,
//! which makes parallel training byte-identical to sequential training.
//!
//! # Model file layout
//!
//! All integers and floats little-endian:
//!
//! ```text
//! magic            8 bytes  "GELRFMDL"
//! format version   u32      1
//! schema version   u32      feature layout version (1)
//! feature count    u32      39
//! seed             u64
//! tree count       u32
//! per tree:
//!   node count     u32
//!   per node:      u8 tag
//!     tag 0 leaf:  f64 gel fraction, u32 sample count
//!     tag 1 split: u32 feature, f64 threshold, u32 left, u32 right
//! ```
//!
//! Node 0 is the root; children always have larger indices than their
//! parent. A sample goes left when `value <= threshold`.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureVector, FEATURE_COUNT};

pub const MODEL_MAGIC: &[u8; 8] = b"GELRFMDL";
pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const FEATURE_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_TREE_COUNT: usize = 75;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("training data holds a single class")]
    SingleClassData,
    #[error("training data is empty")]
    EmptyData,
    #[error("vector has {got} values, model expects {expected}")]
    SchemaMismatch { expected: usize, got: usize },
    #[error("invalid model file: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: FeatureVector,
    pub label: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        gel_fraction: f64,
        samples: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

impl DecisionTree {
    /// Validates that the node array forms a tree rooted at node 0.
    pub fn from_nodes(nodes: Vec<Node>, feature_count: usize) -> Result<Self, ForestError> {
        if nodes.is_empty() {
            return Err(ForestError::Format("tree without nodes".into()));
        }
        for (i, n) in nodes.iter().enumerate() {
            match *n {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if feature >= feature_count {
                        return Err(ForestError::Format(format!("node {i}: feature {feature} out of range")));
                    }
                    if !threshold.is_finite() {
                        return Err(ForestError::Format(format!("node {i}: non-finite threshold")));
                    }
                    if left <= i || right <= i || left >= nodes.len() || right >= nodes.len() {
                        return Err(ForestError::Format(format!("node {i}: bad child index")));
                    }
                }
                Node::Leaf { gel_fraction, .. } => {
                    if !(0.0..=1.0).contains(&gel_fraction) {
                        return Err(ForestError::Format(format!("node {i}: leaf fraction {gel_fraction}")));
                    }
                }
            }
        }
        Ok(DecisionTree { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Gel fraction of the leaf the vector falls into.
    pub fn predict(&self, v: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if v[feature] <= threshold { left } else { right },
                Node::Leaf { gel_fraction, .. } => return gel_fraction,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    trees: Vec<DecisionTree>,
    schema_version: u32,
    feature_count: usize,
    seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub tree_count: usize,
    /// Features sampled per node; `None` means ⌈√d⌉.
    pub features_per_node: Option<usize>,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            tree_count: DEFAULT_TREE_COUNT,
            features_per_node: None,
            min_leaf: 1,
            seed: 0,
        }
    }
}

impl TrainParams {
    pub fn with_seed(seed: u64) -> Self {
        TrainParams {
            seed,
            ..TrainParams::default()
        }
    }
}

/// Probability threshold turning scores into gel / non-gel decisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
}

impl OperatingPoint {
    pub const HIGH_RECALL: OperatingPoint = OperatingPoint { threshold: 0.15 };
    pub const BALANCED: OperatingPoint = OperatingPoint { threshold: 0.30 };
    pub const HIGH_PRECISION: OperatingPoint = OperatingPoint { threshold: 0.60 };

    pub fn new(threshold: f64) -> Result<Self, ForestError> {
        if (0.0..=1.0).contains(&threshold) {
            Ok(OperatingPoint { threshold })
        } else {
            Err(ForestError::InvalidParameter(format!("threshold {threshold} outside [0, 1]")))
        }
    }
}

impl ForestModel {
    pub fn from_trees(trees: Vec<DecisionTree>, feature_count: usize, seed: u64) -> Result<Self, ForestError> {
        if trees.is_empty() {
            return Err(ForestError::InvalidParameter("forest needs at least one tree".into()));
        }
        Ok(ForestModel {
            trees,
            schema_version: FEATURE_SCHEMA_VERSION,
            feature_count,
            seed,
        })
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn schema_version(&self) -> u32 {
        self.schema_version
    }

    pub fn score(&self, v: &[f64]) -> Result<f64, ForestError> {
        if v.len() != self.feature_count {
            return Err(ForestError::SchemaMismatch {
                expected: self.feature_count,
                got: v.len(),
            });
        }
        let total: f64 = self.trees.iter().map(|t| t.predict(v)).sum();
        Ok((total / self.trees.len() as f64).clamp(0.0, 1.0))
    }

    pub fn classify(&self, v: &[f64], op: OperatingPoint) -> Result<bool, ForestError> {
        Ok(self.score(v)? >= op.threshold)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), ForestError> {
        w.write_all(MODEL_MAGIC)?;
        w.write_u32::<LittleEndian>(MODEL_FORMAT_VERSION)?;
        w.write_u32::<LittleEndian>(self.schema_version)?;
        w.write_u32::<LittleEndian>(self.feature_count as u32)?;
        w.write_u64::<LittleEndian>(self.seed)?;
        w.write_u32::<LittleEndian>(self.trees.len() as u32)?;
        for t in &self.trees {
            w.write_u32::<LittleEndian>(t.nodes.len() as u32)?;
            for n in &t.nodes {
                match *n {
                    Node::Leaf { gel_fraction, samples } => {
                        w.write_u8(0)?;
                        w.write_f64::<LittleEndian>(gel_fraction)?;
                        w.write_u32::<LittleEndian>(samples as u32)?;
                    }
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        w.write_u8(1)?;
                        w.write_u32::<LittleEndian>(feature as u32)?;
                        w.write_f64::<LittleEndian>(threshold)?;
                        w.write_u32::<LittleEndian>(left as u32)?;
                        w.write_u32::<LittleEndian>(right as u32)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ForestError> {
        let truncated = |e: io::Error| ForestError::Format(format!("truncated model: {e}"));
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MODEL_MAGIC {
            return Err(ForestError::Format("bad magic bytes".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(truncated)?;
        if version != MODEL_FORMAT_VERSION {
            return Err(ForestError::Format(format!("unsupported format version {version}")));
        }
        let schema_version = r.read_u32::<LittleEndian>().map_err(truncated)?;
        if schema_version != FEATURE_SCHEMA_VERSION {
            return Err(ForestError::Format(format!("unsupported feature schema {schema_version}")));
        }
        let feature_count = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        if feature_count != FEATURE_COUNT {
            return Err(ForestError::Format(format!("model expects {feature_count} features")));
        }
        let seed = r.read_u64::<LittleEndian>().map_err(truncated)?;
        let tree_count = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        if tree_count == 0 {
            return Err(ForestError::Format("forest without trees".into()));
        }
        let mut trees = Vec::with_capacity(tree_count.min(4096));
        for _ in 0..tree_count {
            let n = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
            let mut nodes = Vec::with_capacity(n.min(1 << 20));
            for _ in 0..n {
                let node = match r.read_u8().map_err(truncated)? {
                    0 => Node::Leaf {
                        gel_fraction: r.read_f64::<LittleEndian>().map_err(truncated)?,
                        samples: r.read_u32::<LittleEndian>().map_err(truncated)? as usize,
                    },
                    1 => Node::Split {
                        feature: r.read_u32::<LittleEndian>().map_err(truncated)? as usize,
                        threshold: r.read_f64::<LittleEndian>().map_err(truncated)?,
                        left: r.read_u32::<LittleEndian>().map_err(truncated)? as usize,
                        right: r.read_u32::<LittleEndian>().map_err(truncated)? as usize,
                    },
                    tag => return Err(ForestError::Format(format!("unknown node tag {tag}"))),
                };
                nodes.push(node);
            }
            trees.push(DecisionTree::from_nodes(nodes, feature_count)?);
        }
        if !r.is_empty() {
            return Err(ForestError::Format("trailing bytes".into()));
        }
        Ok(ForestModel {
            trees,
            schema_version,
            feature_count,
            seed,
        })
    }
}

pub fn save_model(model: &ForestModel, path: &Path) -> Result<(), ForestError> {
    fs::write(path, model.to_bytes())?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ForestModel, ForestError> {
    ForestModel::from_bytes(&fs::read(path)?)
}

pub fn train(data: &[LabeledExample], params: &TrainParams) -> Result<ForestModel, ForestError> {
    if data.is_empty() {
        return Err(ForestError::EmptyData);
    }
    let positives = data.iter().filter(|e| e.label).count();
    if positives == 0 || positives == data.len() {
        return Err(ForestError::SingleClassData);
    }
    if params.tree_count == 0 || params.min_leaf == 0 {
        return Err(ForestError::InvalidParameter("tree count and min leaf must be positive".into()));
    }
    let mtry = params
        .features_per_node
        .unwrap_or_else(|| (FEATURE_COUNT as f64).sqrt().ceil() as usize)
        .clamp(1, FEATURE_COUNT);
    let rows: Vec<&[f64]> = data.iter().map(|e| e.features.as_slice()).collect();
    let labels: Vec<bool> = data.iter().map(|e| e.label).collect();
    let trees = (0..params.tree_count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(i as u64);
            let sample: Vec<usize> = (0..rows.len()).map(|_| rng.random_range(0..rows.len())).collect();
            grow_tree(&rows, &labels, sample, mtry, params.min_leaf, &mut rng)
        })
        .collect();
    ForestModel::from_trees(trees, FEATURE_COUNT, params.seed)
}

struct SplitCandidate {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

/// Best Gini split of `idx` on one feature. Impurity is the size-weighted
/// child Gini scaled by n/2, which preserves the ordering.
fn best_split_on(
    rows: &[&[f64]],
    labels: &[bool],
    idx: &[usize],
    feature: usize,
    min_leaf: usize,
) -> Option<SplitCandidate> {
    let mut sorted: Vec<(f64, bool)> = idx.iter().map(|&i| (rows[i][feature], labels[i])).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let n = sorted.len();
    let total_pos = sorted.iter().filter(|s| s.1).count() as f64;
    let mut left_pos = 0.0;
    let mut best: Option<SplitCandidate> = None;
    for i in 0..n - 1 {
        if sorted[i].1 {
            left_pos += 1.0;
        }
        let nl = i + 1;
        let nr = n - nl;
        if nl < min_leaf || nr < min_leaf || sorted[i].0 >= sorted[i + 1].0 {
            continue;
        }
        let (nlf, nrf) = (nl as f64, nr as f64);
        let right_pos = total_pos - left_pos;
        let impurity = left_pos * (nlf - left_pos) / nlf + right_pos * (nrf - right_pos) / nrf;
        if best.as_ref().is_none_or(|b| impurity < b.impurity) {
            let (lo, hi) = (sorted[i].0, sorted[i + 1].0);
            let mut threshold = lo + (hi - lo) / 2.0;
            if threshold >= hi || threshold < lo {
                threshold = lo;
            }
            best = Some(SplitCandidate {
                feature,
                threshold,
                impurity,
            });
        }
    }
    best
}

fn grow_tree(
    rows: &[&[f64]],
    labels: &[bool],
    sample: Vec<usize>,
    mtry: usize,
    min_leaf: usize,
    rng: &mut ChaCha8Rng,
) -> DecisionTree {
    let mut nodes = vec![Node::Leaf {
        gel_fraction: 0.0,
        samples: 0,
    }];
    let mut work = vec![(0usize, sample)];
    let mut order: Vec<usize> = (0..FEATURE_COUNT).collect();
    while let Some((slot, idx)) = work.pop() {
        let pos = idx.iter().filter(|&&i| labels[i]).count();
        let leaf = Node::Leaf {
            gel_fraction: pos as f64 / idx.len() as f64,
            samples: idx.len(),
        };
        if pos == 0 || pos == idx.len() || idx.len() < 2 * min_leaf {
            nodes[slot] = leaf;
            continue;
        }
        order.shuffle(rng);
        let mut block: Vec<usize> = order[..mtry].to_vec();
        block.sort_unstable();
        let mut best: Option<SplitCandidate> = None;
        for &f in &block {
            if let Some(c) = best_split_on(rows, labels, &idx, f, min_leaf) {
                if best.as_ref().is_none_or(|b| c.impurity < b.impurity) {
                    best = Some(c);
                }
            }
        }
        if best.is_none() {
            // Every sampled feature is constant here; fall back to the next
            // informative feature in the shuffled order.
            best = order[mtry..]
                .iter()
                .find_map(|&f| best_split_on(rows, labels, &idx, f, min_leaf));
        }
        let Some(split) = best else {
            nodes[slot] = leaf;
            continue;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| rows[i][split.feature] <= split.threshold);
        let l = nodes.len();
        nodes.push(leaf);
        nodes.push(leaf);
        nodes[slot] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: l,
            right: l + 1,
        };
        work.push((l + 1, right));
        work.push((l, left));
    }
    DecisionTree { nodes }
}
