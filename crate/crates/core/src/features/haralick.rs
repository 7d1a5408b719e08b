//! Gray-level co-occurrence matrices and the Haralick statistics f1-f13.
//!
//! Gray levels are indexed from 1 in the sums below, so f6 (sum average)
//! ranges over `2..=2L`. Logarithms are natural. Entropy terms with zero
//! probability contribute 0, and correlation-type features return 0 when
//! their normalizer vanishes, which keeps flat segments finite.

use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::imgio::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Deg0,
    Deg45,
    Deg90,
    Deg135,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Deg0,
        Direction::Deg45,
        Direction::Deg90,
        Direction::Deg135,
    ];

    /// Pixel offset `(dx, dy)` in image coordinates (y grows downward).
    pub fn offset(self, distance: u32) -> (i64, i64) {
        let d = distance as i64;
        match self {
            Direction::Deg0 => (d, 0),
            Direction::Deg45 => (d, -d),
            Direction::Deg90 => (0, -d),
            Direction::Deg135 => (-d, -d),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlcmConfig {
    pub levels: usize,
    pub distance: u32,
    pub directions: Vec<Direction>,
    pub symmetric: bool,
}

impl Default for GlcmConfig {
    fn default() -> Self {
        GlcmConfig {
            levels: 32,
            distance: 1,
            directions: Direction::ALL.to_vec(),
            symmetric: true,
        }
    }
}

/// Uniform quantization of an 8-bit value into `levels` bins.
#[inline]
pub fn quantize(v: u8, levels: usize) -> usize {
    v as usize * levels / 256
}

/// Normalized co-occurrence matrix, row-major `levels x levels`.
#[derive(Debug, Clone, PartialEq)]
pub struct Glcm {
    levels: usize,
    p: Vec<f64>,
}

impl Glcm {
    pub fn from_probabilities(levels: usize, p: Vec<f64>) -> Self {
        assert_eq!(p.len(), levels * levels, "matrix must be square");
        Glcm { levels, p }
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.levels + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }
}

pub fn glcm(gray: &GrayImage, cfg: &GlcmConfig, direction: Direction) -> Result<Glcm, FeatureError> {
    if cfg.levels < 2 {
        return Err(FeatureError::InvalidConfig("gray levels must be at least 2".into()));
    }
    let l = cfg.levels;
    let (dx, dy) = direction.offset(cfg.distance);
    let (w, h) = (gray.width() as i64, gray.height() as i64);
    let q: Vec<usize> = gray.values().iter().map(|&v| quantize(v, l)).collect();
    let mut counts = vec![0u64; l * l];
    let mut total = 0u64;
    // Valid origins: both (x, y) and (x + dx, y + dy) inside the image.
    let (xs, xe) = (0.max(-dx), w.min(w - dx));
    let (ys, ye) = (0.max(-dy), h.min(h - dy));
    for y in ys..ye {
        for x in xs..xe {
            let a = q[(y * w + x) as usize];
            let b = q[((y + dy) * w + x + dx) as usize];
            counts[a * l + b] += 1;
            total += 1;
            if cfg.symmetric {
                counts[b * l + a] += 1;
                total += 1;
            }
        }
    }
    if total == 0 {
        return Err(FeatureError::TooSmall);
    }
    let t = total as f64;
    Ok(Glcm {
        levels: l,
        p: counts.into_iter().map(|c| c as f64 / t).collect(),
    })
}

#[inline]
fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

pub const HARALICK_NAMES: [&str; 13] = [
    "angular_second_moment",
    "contrast",
    "correlation",
    "variance",
    "inverse_difference_moment",
    "sum_average",
    "sum_variance",
    "sum_entropy",
    "entropy",
    "difference_variance",
    "difference_entropy",
    "info_correlation_1",
    "info_correlation_2",
];

/// Haralick f1-f13 of a normalized square matrix.
pub fn haralick13(m: &Glcm) -> [f64; 13] {
    let l = m.levels;
    let mut px = vec![0.0; l];
    let mut py = vec![0.0; l];
    // index k holds p_{x+y}(k + 2) and p_{x-y}(k)
    let mut psum = vec![0.0; 2 * l - 1];
    let mut pdiff = vec![0.0; l];
    let mut asm = 0.0;
    let mut idm = 0.0;
    let mut entropy = 0.0;
    let mut ij = 0.0;
    for i in 0..l {
        for j in 0..l {
            let p = m.get(i, j);
            if p == 0.0 {
                continue;
            }
            px[i] += p;
            py[j] += p;
            psum[i + j] += p;
            pdiff[i.abs_diff(j)] += p;
            asm += p * p;
            let d = i as f64 - j as f64;
            idm += p / (1.0 + d * d);
            entropy -= plogp(p);
            ij += (i + 1) as f64 * (j + 1) as f64 * p;
        }
    }
    let level = |i: usize| (i + 1) as f64;
    let mux: f64 = px.iter().enumerate().map(|(i, &p)| level(i) * p).sum();
    let muy: f64 = py.iter().enumerate().map(|(j, &p)| level(j) * p).sum();
    let varx: f64 = px.iter().enumerate().map(|(i, &p)| (level(i) - mux).powi(2) * p).sum();
    let vary: f64 = py.iter().enumerate().map(|(j, &p)| (level(j) - muy).powi(2) * p).sum();
    let (sx, sy) = (varx.sqrt(), vary.sqrt());

    let contrast: f64 = pdiff.iter().enumerate().map(|(k, &p)| (k * k) as f64 * p).sum();
    let correlation = if sx > 0.0 && sy > 0.0 {
        (ij - mux * muy) / (sx * sy)
    } else {
        0.0
    };
    let variance = varx;
    let sum_avg: f64 = psum.iter().enumerate().map(|(k, &p)| (k + 2) as f64 * p).sum();
    let sum_var: f64 = psum
        .iter()
        .enumerate()
        .map(|(k, &p)| ((k + 2) as f64 - sum_avg).powi(2) * p)
        .sum();
    let sum_entropy: f64 = -psum.iter().map(|&p| plogp(p)).sum::<f64>();
    let diff_mean: f64 = pdiff.iter().enumerate().map(|(k, &p)| k as f64 * p).sum();
    let diff_var: f64 = pdiff
        .iter()
        .enumerate()
        .map(|(k, &p)| (k as f64 - diff_mean).powi(2) * p)
        .sum();
    let diff_entropy: f64 = -pdiff.iter().map(|&p| plogp(p)).sum::<f64>();

    let hx: f64 = -px.iter().map(|&p| plogp(p)).sum::<f64>();
    let hy: f64 = -py.iter().map(|&p| plogp(p)).sum::<f64>();
    let mut hxy1 = 0.0;
    let mut hxy2 = 0.0;
    for i in 0..l {
        for j in 0..l {
            let q = px[i] * py[j];
            if q > 0.0 {
                hxy1 -= m.get(i, j) * q.ln();
                hxy2 -= q * q.ln();
            }
        }
    }
    let hmax = hx.max(hy);
    let imc1 = if hmax > 0.0 { (entropy - hxy1) / hmax } else { 0.0 };
    let imc2 = (1.0 - (-2.0 * (hxy2 - entropy).max(0.0)).exp()).max(0.0).sqrt();

    [
        asm,
        contrast,
        correlation,
        variance,
        idm,
        sum_avg,
        sum_var,
        sum_entropy,
        entropy,
        diff_var,
        diff_entropy,
        imc1,
        imc2,
    ]
}

/// f1-f13 averaged over the configured directions that have at least one
/// pixel pair. All zeros when none does.
pub fn texture_features(gray: &GrayImage, cfg: &GlcmConfig) -> Result<[f64; 13], FeatureError> {
    let mut acc = [0.0; 13];
    let mut n = 0usize;
    for &dir in &cfg.directions {
        match glcm(gray, cfg, dir) {
            Ok(m) => {
                for (a, v) in acc.iter_mut().zip(haralick13(&m)) {
                    *a += v;
                }
                n += 1;
            }
            Err(FeatureError::TooSmall) => {}
            Err(e) => return Err(e),
        }
    }
    if n > 0 {
        for a in &mut acc {
            *a /= n as f64;
        }
    }
    Ok(acc)
}
