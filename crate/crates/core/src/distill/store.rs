use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::soften;
use crate::data::{sequential_batches, Dataset};
use crate::error::{contract, Error, Result};
use crate::model::checkpoint;
use crate::model::EncoderModel;
use crate::tensor::Tensor;

const MAGIC: &str = "SOFTLABELS1";
const GEN_BATCH: usize = 64;

/// Teacher probability vectors keyed by example id.
///
/// Text form: a header line
/// `SOFTLABELS1 n=<count> classes=<C> T=<temp> teacher=<checksum> [data=<checksum>]`
/// then `<example_id> <p_0> ... <p_{C-1}>` per example, 17 significant digits.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftLabelStore {
    temperature: f64,
    teacher: String,
    num_classes: usize,
    dataset: Option<String>,
    rows: BTreeMap<usize, Vec<f64>>,
}

impl SoftLabelStore {
    pub fn new(temperature: f64, teacher: impl Into<String>, num_classes: usize) -> Self {
        SoftLabelStore {
            temperature,
            teacher: teacher.into(),
            num_classes,
            dataset: None,
            rows: BTreeMap::new(),
        }
    }

    /// Stores `probs` for `example_id` after checking it is a distribution.
    pub fn insert(&mut self, example_id: usize, probs: Vec<f64>) -> Result<()> {
        contract!(
            probs.len() == self.num_classes,
            "soft label for example {example_id} has {} entries, expected {}",
            probs.len(),
            self.num_classes
        );
        contract!(
            probs.iter().all(|&p| p >= 0.0 && p.is_finite()),
            "soft label for example {example_id} has a negative or non-finite entry"
        );
        let sum: f64 = probs.iter().sum();
        contract!((sum - 1.0).abs() <= 1e-9, "soft label for example {example_id} sums to {sum}");
        contract!(self.rows.insert(example_id, probs).is_none(), "duplicate soft label for example {example_id}");
        Ok(())
    }

    pub fn get(&self, example_id: usize) -> Option<&[f64]> {
        self.rows.get(&example_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.rows.iter().map(|(&id, p)| (id, p.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Checksum of the teacher checkpoint that produced the labels.
    pub fn teacher(&self) -> &str {
        &self.teacher
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Checksum of the dataset the labels were generated on, when recorded.
    pub fn dataset_checksum(&self) -> Option<&str> {
        self.dataset.as_deref()
    }

    pub fn set_dataset_checksum(&mut self, checksum: impl Into<String>) {
        self.dataset = Some(checksum.into());
    }

    /// Fails unless the stored ids are exactly the dataset's ids.
    pub fn check_covers(&self, dataset: &Dataset) -> Result<()> {
        contract!(
            self.num_classes == dataset.num_classes(),
            "soft labels have {} classes, dataset has {}",
            self.num_classes,
            dataset.num_classes()
        );
        for e in dataset.examples() {
            contract!(self.rows.contains_key(&e.example_id), "no soft label for example {}", e.example_id);
        }
        contract!(
            self.rows.len() == dataset.len(),
            "soft-label store has {} entries for {} examples",
            self.rows.len(),
            dataset.len()
        );
        if let Some(d) = &self.dataset {
            contract!(
                *d == dataset.checksum(),
                "soft labels were generated on dataset {d}, not {}",
                dataset.checksum()
            );
        }
        Ok(())
    }

    /// `[ids.len() × C]` targets in the given order.
    pub fn targets(&self, example_ids: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(example_ids.len() * self.num_classes);
        for id in example_ids {
            let row = self
                .get(*id)
                .ok_or_else(|| Error::Contract(format!("no soft label for example {id}")))?;
            data.extend_from_slice(row);
        }
        Tensor::new(vec![example_ids.len(), self.num_classes], data)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{MAGIC} n={} classes={} T={:?} teacher={}",
            self.rows.len(),
            self.num_classes,
            self.temperature,
            self.teacher
        );
        if let Some(d) = &self.dataset {
            let _ = write!(out, " data={d}");
        }
        out.push('\n');
        for (id, probs) in &self.rows {
            let _ = write!(out, "{id}");
            for p in probs {
                let _ = write!(out, " {p:.16e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Format(m);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty soft-label file".into()))?;
        let mut parts = header.split(' ');
        if parts.next() != Some(MAGIC) {
            return Err(bad(format!("missing {MAGIC} header")));
        }
        let fields: BTreeMap<&str, &str> = parts
            .map(|kv| kv.split_once('=').ok_or_else(|| bad(format!("bad header field `{kv}`"))))
            .collect::<Result<_>>()?;
        let field = |k: &str| fields.get(k).copied().ok_or_else(|| bad(format!("header lacks `{k}`")));
        let n: usize = field("n")?.parse().map_err(|_| bad("`n` is not an integer".into()))?;
        let classes: usize = field("classes")?
            .parse()
            .map_err(|_| bad("`classes` is not an integer".into()))?;
        let t: f64 = field("T")?.parse().map_err(|_| bad("`T` is not a number".into()))?;
        let mut store = SoftLabelStore::new(t, field("teacher")?, classes);
        if let Some(d) = fields.get("data") {
            store.dataset = Some(d.to_string());
        }
        for (lineno, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let mut nums = line.split_whitespace();
            let id: usize = nums
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(format!("line {}: bad example id", lineno + 2)))?;
            let probs = nums
                .map(|s| s.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| bad(format!("line {}: bad probability", lineno + 2)))?;
            store.insert(id, probs)?;
        }
        if store.len() != n {
            return Err(bad(format!("header says n={n} but file has {} rows", store.len())));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Runs the teacher without gradients over every example and stores the
/// softened distributions, tagged with the teacher and dataset checksums.
pub fn generate_soft_labels(teacher: &EncoderModel, dataset: &Dataset, temperature: f64) -> Result<SoftLabelStore> {
    let cfg = teacher.config();
    contract!(
        cfg.num_classes == dataset.num_classes(),
        "teacher predicts {} classes, dataset has {}",
        cfg.num_classes,
        dataset.num_classes()
    );
    contract!(!dataset.is_empty(), "cannot generate soft labels for an empty dataset");
    let mut store = SoftLabelStore::new(temperature, checkpoint::checksum(teacher), cfg.num_classes);
    store.set_dataset_checksum(dataset.checksum());
    for batch in sequential_batches(dataset, GEN_BATCH)? {
        let logits = teacher.predict_logits(&batch.token_ids, &batch.mask)?;
        let probs = soften(&logits, temperature)?;
        for (i, &id) in batch.example_ids.iter().enumerate() {
            store.insert(id, probs.row(i).to_vec())?;
        }
    }
    Ok(store)
}
