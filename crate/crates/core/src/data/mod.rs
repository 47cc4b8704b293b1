//! Text preprocessing, datasets, and batching.

mod batch;
mod synth;
mod text;
mod tsv;
mod vocab;

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use batch::{batch_iter, sequential_batches, Batch};
pub use synth::{synth_splits, synth_task, SynthKind, TRIGGER};
pub use text::normalize_text;
pub use tsv::{load_tsv, read_tsv, LabelMap, LoadStats, TsvRow, TsvSchema, TsvTable};
pub use vocab::{build_vocab, Vocab, CLS, MASK, PAD, SEP, UNK};

use crate::error::{contract, Result};
use crate::model::checkpoint::short_hash;

/// One CLS-prefixed, padded classification example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub example_id: usize,
    pub token_ids: Vec<usize>,
    /// `true` on CLS and content positions.
    pub mask: Vec<bool>,
    pub label: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    num_classes: usize,
    max_seq_len: usize,
    pub split: Split,
    /// File path or generator description.
    pub provenance: String,
}

/// `[CLS] + ids` truncated to `max_seq_len`, then padded.
pub fn encode_example(
    example_id: usize,
    tokens: &[String],
    label: usize,
    num_classes: usize,
    vocab: &Vocab,
    max_seq_len: usize,
) -> Result<Example> {
    let ids: Vec<usize> = tokens.iter().map(|t| vocab.id(t)).collect();
    encode_ids(example_id, &ids, label, num_classes, max_seq_len)
}

/// Same as [`encode_example`] for already-numeric content.
pub fn encode_ids(
    example_id: usize,
    content: &[usize],
    label: usize,
    num_classes: usize,
    max_seq_len: usize,
) -> Result<Example> {
    contract!(max_seq_len >= 2, "max_seq_len must be >= 2, got {max_seq_len}");
    contract!(label < num_classes, "label {label} outside 0..{num_classes}");
    let keep = content.len().min(max_seq_len - 1);
    let mut token_ids = Vec::with_capacity(max_seq_len);
    token_ids.push(CLS);
    token_ids.extend_from_slice(&content[..keep]);
    let mask = (0..max_seq_len).map(|i| i <= keep).collect();
    token_ids.resize(max_seq_len, PAD);
    Ok(Example {
        example_id,
        token_ids,
        mask,
        label,
    })
}

impl Dataset {
    pub fn new(
        examples: Vec<Example>,
        num_classes: usize,
        max_seq_len: usize,
        split: Split,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        contract!(num_classes >= 2, "need at least two classes");
        let mut seen = HashSet::new();
        for e in &examples {
            contract!(seen.insert(e.example_id), "duplicate example id {}", e.example_id);
            contract!(
                e.token_ids.len() == max_seq_len && e.mask.len() == max_seq_len,
                "example {} has length {} != {max_seq_len}",
                e.example_id,
                e.token_ids.len()
            );
            contract!(e.token_ids[0] == CLS && e.mask[0], "example {} lacks CLS", e.example_id);
            contract!(e.label < num_classes, "example {} label out of range", e.example_id);
        }
        Ok(Dataset {
            examples,
            num_classes,
            max_seq_len,
            split,
            provenance: provenance.into(),
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn max_seq_len(&self) -> usize {
        self.max_seq_len
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    /// Largest token id used, if any.
    pub fn max_token_id(&self) -> Option<usize> {
        self.examples.iter().flat_map(|e| e.token_ids.iter().copied()).max()
    }

    /// Short hash over ids, tokens, and labels.
    pub fn checksum(&self) -> String {
        let mut bytes = Vec::new();
        for e in &self.examples {
            bytes.extend_from_slice(&(e.example_id as u64).to_le_bytes());
            bytes.extend_from_slice(&(e.label as u64).to_le_bytes());
            for &t in &e.token_ids {
                bytes.extend_from_slice(&(t as u32).to_le_bytes());
            }
        }
        short_hash(&bytes)
    }

    /// Copy with exactly `round(fraction·n)` labels moved to a different
    /// class, chosen by `seed`.
    pub fn with_label_noise(&self, fraction: f64, seed: u64) -> Result<Dataset> {
        contract!((0.0..=1.0).contains(&fraction), "noise fraction {fraction} outside [0, 1]");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.len();
        let flips = (fraction * n as f64).round() as usize;
        let mut out = self.clone();
        for i in sample(&mut rng, n, flips) {
            let e = &mut out.examples[i];
            let shift = rng.gen_range(1..self.num_classes);
            e.label = (e.label + shift) % self.num_classes;
        }
        out.provenance = format!("{} + label noise {fraction} seed {seed}", self.provenance);
        Ok(out)
    }
}
