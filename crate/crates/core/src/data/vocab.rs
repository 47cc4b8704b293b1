use std::collections::HashMap;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const MASK: usize = 3;
/// Present only in vocabularies built for sentence-pair data.
pub const SEP: usize = 4;

const RESERVED: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[MASK]", "[SEP]"];

/// Token ↔ id mapping with ids `0..len` and the reserved ids fixed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_freq: usize,
}

impl Vocab {
    fn with_reserved(separator: bool) -> Self {
        let n = if separator { 5 } else { 4 };
        let mut v = Vocab {
            tokens: vec![],
            index: HashMap::new(),
            min_freq: 1,
        };
        for t in &RESERVED[..n] {
            v.push(t.to_string());
        }
        v
    }

    fn push(&mut self, token: String) {
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
    }

    /// Tokens seen at least `min_freq` times, ordered by descending count then
    /// lexicographically. `separator` reserves id 4 for `[SEP]`.
    pub fn build(corpus: &[Vec<String>], min_freq: usize, separator: bool) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for tok in corpus.iter().flatten() {
            *counts.entry(tok.as_str()).or_default() += 1;
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_freq.max(1) && !RESERVED.contains(&t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut v = Self::with_reserved(separator);
        v.min_freq = min_freq;
        for (t, _) in kept {
            v.push(t.to_string());
        }
        v
    }

    /// Reserved ids plus placeholder tokens `w4..w{size-1}` for generated data.
    pub fn synthetic(size: usize) -> Self {
        let mut v = Self::with_reserved(false);
        for id in 4..size {
            v.push(format!("w{id}"));
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn has_separator(&self) -> bool {
        self.tokens.get(SEP).map(String::as_str) == Some(RESERVED[SEP])
    }

    /// Id of `token`, or [`UNK`].
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn separator_token() -> &'static str {
        RESERVED[SEP]
    }
}

/// Free-function form of [`Vocab::build`] without a separator.
pub fn build_vocab(corpus: &[Vec<String>], min_freq: usize) -> Vocab {
    Vocab::build(corpus, min_freq, false)
}
