//! Gene and protein name tagging in panel labels.
//!
//! Label text is split on whitespace and stripped of surrounding
//! punctuation. Tokens survive only if they are at least three characters
//! long, not numbers (Arabic digits or Roman numerals), and not on either
//! stoplist; survivors are looked up in the lexicon with exact case.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panels::GelPanel;
use crate::segmentation::Segment;

#[derive(Debug, Error)]
pub enum NerError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("ratio undefined: no {0} tokens")]
    DivisionUndefined(&'static str),
}

pub const DOMAIN_STOPWORDS: [&str; 22] = [
    "min", "hrs", "line", "type", "protein", "DNA", "RNA", "mRNA", "membrane", "gel", "fold", "fragment", "antigen",
    "enzyme", "kinase", "cleavage", "factor", "blot", "pro", "pre", "peptide", "cell",
];

const COMMON_WORDS: &str = include_str!("../data/common_words.txt");
const DEMO_LEXICON: &str = include_str!("../data/lexicon_demo.tsv");

const STRIP: &[char] = &['.', ',', ':', ';', '(', ')', '[', ']', '{', '}', '"', '\''];

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(STRIP))
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

fn roman_value(c: char) -> Option<u32> {
    Some(match c {
        'I' => 1,
        'V' => 5,
        'X' => 10,
        'L' => 50,
        'C' => 100,
        'D' => 500,
        'M' => 1000,
        _ => return None,
    })
}

fn to_roman(mut n: u32) -> String {
    const TABLE: [(u32, &str); 13] = [
        (1000, "M"),
        (900, "CM"),
        (500, "D"),
        (400, "CD"),
        (100, "C"),
        (90, "XC"),
        (50, "L"),
        (40, "XL"),
        (10, "X"),
        (9, "IX"),
        (5, "V"),
        (4, "IV"),
        (1, "I"),
    ];
    let mut out = String::new();
    for (v, s) in TABLE {
        while n >= v {
            out.push_str(s);
            n -= v;
        }
    }
    out
}

/// Canonical Roman numeral in 1..=3999, case-insensitive.
pub fn is_roman_numeral(token: &str) -> bool {
    let upper = token.to_ascii_uppercase();
    let values: Option<Vec<u32>> = upper.chars().map(roman_value).collect();
    let Some(values) = values.filter(|v| !v.is_empty()) else {
        return false;
    };
    let mut total = 0u32;
    for (i, &v) in values.iter().enumerate() {
        match values.get(i + 1) {
            Some(&next) if next > v => total = total.wrapping_sub(v),
            _ => total = total.wrapping_add(v),
        }
    }
    (1..=3999).contains(&total) && to_roman(total) == upper
}

#[derive(Debug, Clone)]
pub struct ExclusionRules {
    pub min_length: usize,
    common: HashSet<String>,
    domain: HashSet<String>,
}

impl Default for ExclusionRules {
    fn default() -> Self {
        ExclusionRules::new(COMMON_WORDS.lines())
    }
}

impl ExclusionRules {
    pub fn new<I, S>(common_words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        ExclusionRules {
            min_length: 3,
            common: common_words
                .into_iter()
                .map(|w| w.as_ref().trim().to_lowercase())
                .filter(|w| !w.is_empty())
                .collect(),
            domain: DOMAIN_STOPWORDS.iter().map(|w| w.to_lowercase()).collect(),
        }
    }

    /// Builds rules from stoplist files, one word per line. With no files
    /// the shipped common-word list is used.
    pub fn from_files(paths: &[impl AsRef<Path>]) -> Result<Self, NerError> {
        if paths.is_empty() {
            return Ok(ExclusionRules::default());
        }
        let mut words = Vec::new();
        for p in paths {
            let p = p.as_ref();
            let content = std::fs::read_to_string(p).map_err(|source| NerError::Io {
                path: p.display().to_string(),
                source,
            })?;
            words.extend(content.lines().map(str::to_owned));
        }
        Ok(ExclusionRules::new(words))
    }

    pub fn common_word_count(&self) -> usize {
        self.common.len()
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        let lower = token.to_lowercase();
        self.common.contains(&lower) || self.domain.contains(&lower)
    }
}

pub fn is_excluded(token: &str, rules: &ExclusionRules) -> bool {
    token.chars().count() < rules.min_length
        || token.chars().all(|c| c.is_ascii_digit())
        || is_roman_numeral(token)
        || rules.is_stopword(token)
}

/// Exact-case token to gene identifier map.
#[derive(Debug, Clone, Default)]
pub struct GeneLexicon {
    entries: HashMap<String, Vec<String>>,
}

impl GeneLexicon {
    pub fn from_pairs<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut entries: HashMap<String, Vec<String>> = HashMap::new();
        for (k, v) in pairs {
            let ids = entries.entry(k.into()).or_default();
            let v = v.into();
            if !ids.contains(&v) {
                ids.push(v);
            }
        }
        entries.retain(|k, _| !k.is_empty());
        GeneLexicon { entries }
    }

    /// Parses `token TAB id[,id...]` lines. Blank lines and lines starting
    /// with `#` are skipped; repeated tokens accumulate ids.
    pub fn parse(content: &str) -> Result<Self, NerError> {
        let mut pairs = Vec::new();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: &str| NerError::Parse {
                line: i + 1,
                msg: msg.to_owned(),
            };
            let (token, ids) = line.split_once('\t').ok_or_else(|| err("expected token<TAB>ids"))?;
            if token.is_empty() {
                return Err(err("empty token"));
            }
            let ids: Vec<&str> = ids.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            if ids.is_empty() {
                return Err(err("no gene ids"));
            }
            pairs.extend(ids.into_iter().map(|id| (token.to_owned(), id.to_owned())));
        }
        Ok(GeneLexicon::from_pairs(pairs))
    }

    pub fn load(path: &Path) -> Result<Self, NerError> {
        let content = std::fs::read_to_string(path).map_err(|source| NerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        GeneLexicon::parse(&content)
    }

    /// The small lexicon shipped with the crate, used by the generator
    /// and as a fallback for demos.
    pub fn demo() -> Self {
        GeneLexicon::parse(DEMO_LEXICON).expect("shipped lexicon parses")
    }

    pub fn lookup(&self, token: &str) -> Option<&[String]> {
        self.entries.get(token).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneMention {
    pub token: String,
    pub gene_ids: Vec<String>,
    pub label_segment_id: usize,
    pub panel_id: usize,
}

/// Tokens of `text` that survive exclusion and hit the lexicon, in order.
pub fn tag_text<'a>(text: &str, lexicon: &'a GeneLexicon, rules: &ExclusionRules) -> Vec<(String, &'a [String])> {
    tokenize(text)
        .into_iter()
        .filter(|t| !is_excluded(t, rules))
        .filter_map(|t| lexicon.lookup(&t).map(|ids| (t, ids)))
        .collect()
}

pub fn tag_mentions(panel: &GelPanel, lexicon: &GeneLexicon, rules: &ExclusionRules) -> Vec<GeneMention> {
    panel
        .labels
        .iter()
        .flat_map(|label| {
            tag_text(&label.text, lexicon, rules)
                .into_iter()
                .map(move |(token, ids)| GeneMention {
                    token,
                    gene_ids: ids.to_vec(),
                    label_segment_id: label.segment_id,
                    panel_id: panel.id,
                })
        })
        .collect()
}

/// Token and gene-token totals over gel labels and over all text.
/// Excluded tokens count toward the totals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub label_tokens: u64,
    pub label_gene_tokens: u64,
    pub all_tokens: u64,
    pub all_gene_tokens: u64,
}

impl TokenCounts {
    pub fn add(&mut self, other: &TokenCounts) {
        self.label_tokens += other.label_tokens;
        self.label_gene_tokens += other.label_gene_tokens;
        self.all_tokens += other.all_tokens;
        self.all_gene_tokens += other.all_gene_tokens;
    }

    pub fn label_ratio(&self) -> Option<f64> {
        (self.label_tokens > 0).then(|| self.label_gene_tokens as f64 / self.label_tokens as f64)
    }

    pub fn overall_ratio(&self) -> Option<f64> {
        (self.all_tokens > 0).then(|| self.all_gene_tokens as f64 / self.all_tokens as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenRatios {
    pub label_ratio: f64,
    pub overall_ratio: f64,
}

pub fn count_tokens(panels: &[GelPanel], all_text: &[Segment], lexicon: &GeneLexicon, rules: &ExclusionRules) -> TokenCounts {
    let mut c = TokenCounts::default();
    for label in panels.iter().flat_map(|p| &p.labels) {
        c.label_tokens += tokenize(&label.text).len() as u64;
        c.label_gene_tokens += tag_text(&label.text, lexicon, rules).len() as u64;
    }
    for text in all_text.iter().filter(|s| s.is_text()).filter_map(|s| s.ocr_text.as_deref()) {
        c.all_tokens += tokenize(text).len() as u64;
        c.all_gene_tokens += tag_text(text, lexicon, rules).len() as u64;
    }
    c
}

pub fn token_stats(
    panels: &[GelPanel],
    all_text: &[Segment],
    lexicon: &GeneLexicon,
    rules: &ExclusionRules,
) -> Result<TokenRatios, NerError> {
    let c = count_tokens(panels, all_text, lexicon, rules);
    Ok(TokenRatios {
        label_ratio: c.label_ratio().ok_or(NerError::DivisionUndefined("gel-label"))?,
        overall_ratio: c.overall_ratio().ok_or(NerError::DivisionUndefined("text"))?,
    })
}
