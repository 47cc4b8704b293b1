//! Header-aware tab-separated loading for GLUE-style files.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use super::text::normalize_text;
use super::vocab::Vocab;
use super::{encode_example, Dataset, Split};
use crate::error::{Error, Result};

/// Which columns hold the text and the label.
#[derive(Clone, Debug, PartialEq)]
pub struct TsvSchema {
    /// One column, or two for sentence-pair tasks.
    pub sentence_cols: Vec<String>,
    pub label_col: String,
    /// Bin a numeric label into this many equal-width classes.
    pub bins: Option<usize>,
    /// Range covered by the bins (STS-B scores span 0 to 5).
    pub bin_range: (f64, f64),
}

impl TsvSchema {
    pub fn single(sentence: &str, label: &str) -> Self {
        TsvSchema {
            sentence_cols: vec![sentence.to_string()],
            label_col: label.to_string(),
            bins: None,
            bin_range: (0.0, 5.0),
        }
    }

    pub fn pair(first: &str, second: &str, label: &str) -> Self {
        TsvSchema {
            sentence_cols: vec![first.to_string(), second.to_string()],
            label_col: label.to_string(),
            bins: None,
            bin_range: (0.0, 5.0),
        }
    }

    pub fn is_pair(&self) -> bool {
        self.sentence_cols.len() > 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TsvRow {
    pub tokens: Vec<String>,
    pub label: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub kept: usize,
    pub duplicates: usize,
    pub missing: usize,
}

/// Parsed rows of one file, before vocabulary encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct TsvTable {
    pub path: PathBuf,
    pub rows: Vec<TsvRow>,
    pub stats: LoadStats,
    pub pair: bool,
}

/// Reads `path`, drops rows with missing fields, then drops repeats of an
/// already-seen (sentences, label) tuple.
pub fn read_tsv(path: &Path, schema: &TsvSchema) -> Result<TsvTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty file", path.display())))?
        .trim_end_matches('\r')
        .split('\t')
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::Schema(name.to_string()))
    };
    let sentence_idx = schema
        .sentence_cols
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;
    let label_idx = col(&schema.label_col)?;

    let mut stats = LoadStats::default();
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for line in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let get = |i: usize| fields.get(i).map(|s| s.trim()).filter(|s| !s.is_empty());
        let sentences: Option<Vec<&str>> = sentence_idx.iter().map(|&i| get(i)).collect();
        let (Some(sentences), Some(label)) = (sentences, get(label_idx)) else {
            stats.missing += 1;
            continue;
        };
        let key = (sentences.clone(), label);
        if !seen.insert(key) {
            stats.duplicates += 1;
            continue;
        }
        let mut tokens = Vec::new();
        for (i, s) in sentences.iter().enumerate() {
            if i > 0 {
                tokens.push(Vocab::separator_token().to_string());
            }
            tokens.extend(normalize_text(s));
        }
        rows.push(TsvRow {
            tokens,
            label: label.to_string(),
        });
    }
    if stats.missing > 0 {
        eprintln!(
            "warning: {}: dropped {} row(s) with missing fields",
            path.display(),
            stats.missing
        );
    }
    stats.kept = rows.len();
    Ok(TsvTable {
        path: path.to_path_buf(),
        rows,
        stats,
        pair: schema.is_pair(),
    })
}

/// Maps raw label strings to contiguous class indices.
#[derive(Clone, Debug, PartialEq)]
pub enum LabelMap {
    /// Labels in first-seen order.
    Categorical(Vec<String>),
    Binned { bins: usize, lo: f64, hi: f64 },
}

impl LabelMap {
    pub fn from_table(table: &TsvTable, schema: &TsvSchema) -> Result<Self> {
        if let Some(bins) = schema.bins {
            let (lo, hi) = schema.bin_range;
            if bins < 2 || !(hi > lo) {
                return Err(Error::Config(format!("invalid binning: {bins} bins over [{lo}, {hi}]")));
            }
            return Ok(LabelMap::Binned { bins, lo, hi });
        }
        let mut order = Vec::new();
        let mut seen = HashMap::new();
        for r in &table.rows {
            if !seen.contains_key(&r.label) {
                seen.insert(r.label.clone(), order.len());
                order.push(r.label.clone());
            }
        }
        Ok(LabelMap::Categorical(order))
    }

    pub fn len(&self) -> usize {
        match self {
            LabelMap::Categorical(v) => v.len(),
            LabelMap::Binned { bins, .. } => *bins,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, label: &str) -> Result<usize> {
        match self {
            LabelMap::Categorical(v) => v
                .iter()
                .position(|l| l == label)
                .ok_or_else(|| Error::Contract(format!("label `{label}` not seen in training data"))),
            LabelMap::Binned { bins, lo, hi } => {
                let x: f64 = label
                    .parse()
                    .map_err(|_| Error::Format(format!("label `{label}` is not numeric")))?;
                let pos = ((x - lo) / (hi - lo) * *bins as f64).floor();
                Ok((pos.max(0.0) as usize).min(bins - 1))
            }
        }
    }
}

impl TsvTable {
    pub fn corpus(&self) -> Vec<Vec<String>> {
        self.rows.iter().map(|r| r.tokens.clone()).collect()
    }

    /// Encodes rows as examples with ids `0..n` in file order.
    pub fn to_dataset(&self, vocab: &Vocab, labels: &LabelMap, max_seq_len: usize, split: Split) -> Result<Dataset> {
        let examples = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| encode_example(i, &r.tokens, labels.index(&r.label)?, labels.len(), vocab, max_seq_len))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(examples, labels.len(), max_seq_len, split, self.path.display().to_string())
    }
}

/// Loads a training file: reads rows, builds the vocabulary and label map
/// from them, and encodes.
pub fn load_tsv(
    path: &Path,
    schema: &TsvSchema,
    min_freq: usize,
    max_seq_len: usize,
) -> Result<(Dataset, Vocab, LabelMap, LoadStats)> {
    let table = read_tsv(path, schema)?;
    let vocab = Vocab::build(&table.corpus(), min_freq, schema.is_pair());
    let labels = LabelMap::from_table(&table, schema)?;
    if labels.len() < 2 {
        return Err(Error::Contract(format!(
            "{}: need at least two classes, found {}",
            path.display(),
            labels.len()
        )));
    }
    let ds = table.to_dataset(&vocab, &labels, max_seq_len, Split::Train)?;
    Ok((ds, vocab, labels, table.stats))
}
