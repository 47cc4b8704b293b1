//! Generated desk-scale classification tasks.
//!
//! Content tokens are drawn from ids `5..vocab_size`; id 4 is the designated
//! trigger for `keyword` and the counted token "x" for `parity`.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{encode_ids, Dataset, Split};
use crate::error::{contract, Error, Result};

pub const TRIGGER: usize = 4;
const FIRST_FILLER: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SynthKind {
    /// Label 1 iff the trigger id appears.
    Keyword,
    /// Label is the parity of the number of trigger ids.
    Parity,
    /// Filler ids split into a low and a high half; label 1 iff high ids are
    /// the majority. Content length is odd so there are no ties.
    Majority,
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::Keyword => "keyword",
            SynthKind::Parity => "parity",
            SynthKind::Majority => "majority",
        })
    }
}

impl FromStr for SynthKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "keyword" => Ok(SynthKind::Keyword),
            "parity" => Ok(SynthKind::Parity),
            "majority" => Ok(SynthKind::Majority),
            other => Err(Error::Config(format!(
                "unknown synthetic task `{other}` (expected keyword, parity or majority)"
            ))),
        }
    }
}

fn filler(rng: &mut ChaCha8Rng, vocab_size: usize) -> usize {
    rng.gen_range(FIRST_FILLER..vocab_size)
}

fn content(kind: SynthKind, label: usize, rng: &mut ChaCha8Rng, vocab_size: usize, max_content: usize) -> Vec<usize> {
    match kind {
        SynthKind::Keyword => {
            let len = rng.gen_range(max_content.div_ceil(2)..=max_content);
            let mut ids: Vec<usize> = (0..len).map(|_| filler(rng, vocab_size)).collect();
            if label == 1 {
                let hits = rng.gen_range(1..=2.min(len));
                for _ in 0..hits {
                    let at = rng.gen_range(0..len);
                    ids[at] = TRIGGER;
                }
            }
            ids
        }
        SynthKind::Parity => {
            let len = rng.gen_range(max_content.div_ceil(2)..=max_content);
            let mut count = rng.gen_range(0..=len);
            if count % 2 != label {
                count = if count == 0 { 1 } else { count - 1 };
            }
            let mut ids: Vec<usize> = (0..len)
                .map(|i| if i < count { TRIGGER } else { filler(rng, vocab_size) })
                .collect();
            ids.shuffle(rng);
            ids
        }
        SynthKind::Majority => {
            let mut len = rng.gen_range(max_content.div_ceil(2)..=max_content);
            if len % 2 == 0 {
                len -= 1;
            }
            let mid = FIRST_FILLER + (vocab_size - FIRST_FILLER) / 2;
            let winners = rng.gen_range(len / 2 + 1..=len);
            let (win, lose) = if label == 1 {
                (mid..vocab_size, FIRST_FILLER..mid)
            } else {
                (FIRST_FILLER..mid, mid..vocab_size)
            };
            let mut ids: Vec<usize> = (0..len)
                .map(|i| {
                    if i < winners {
                        rng.gen_range(win.clone())
                    } else {
                        rng.gen_range(lose.clone())
                    }
                })
                .collect();
            ids.shuffle(rng);
            ids
        }
    }
}

/// `n` binary examples of length `seq_len` (CLS included), labels balanced
/// to within one and shuffled.
pub fn synth_task(kind: SynthKind, seed: u64, n: usize, vocab_size: usize, seq_len: usize) -> Result<Dataset> {
    contract!(n >= 1, "synthetic task needs at least one example");
    contract!(vocab_size >= 7, "synthetic vocabulary needs at least 7 ids, got {vocab_size}");
    contract!(seq_len >= 3, "synthetic seq_len must be >= 3, got {seq_len}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    labels.shuffle(&mut rng);
    let examples = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let ids = content(kind, label, &mut rng, vocab_size, seq_len - 1);
            encode_ids(i, &ids, label, 2, seq_len)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(
        examples,
        2,
        seq_len,
        Split::Train,
        format!("synth:{kind} seed={seed} n={n} vocab={vocab_size} len={seq_len}"),
    )
}

/// Independent train and validation sets drawn from disjoint seed streams.
pub fn synth_splits(
    kind: SynthKind,
    seed: u64,
    n_train: usize,
    n_val: usize,
    vocab_size: usize,
    seq_len: usize,
) -> Result<(Dataset, Dataset)> {
    let train = synth_task(kind, seed.wrapping_mul(2), n_train, vocab_size, seq_len)?;
    let mut val = synth_task(kind, seed.wrapping_mul(2).wrapping_add(1), n_val, vocab_size, seq_len)?;
    val.split = Split::Validation;
    Ok((train, val))
}
