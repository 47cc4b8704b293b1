//! `key = value` configuration files and the run configuration built from
//! them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{load_tsv, read_tsv, synth_splits, Dataset, Split, SynthKind, TsvSchema};
use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// Parsed `key = value` lines with `#` comments. Keys must be read through
/// the typed getters; [`Settings::finish`] rejects any left unread.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
    used: BTreeSet<String>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", n + 1)));
            }
            if values.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", n + 1)));
            }
        }
        Ok(Settings {
            values,
            used: BTreeSet::new(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Inserts or replaces a value.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn take_str(&mut self, key: &str) -> Option<String> {
        let v = self.values.get(key).cloned();
        if v.is_some() {
            self.used.insert(key.to_string());
        }
        v
    }

    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take_str(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("key `{key}`: cannot parse `{v}`"))),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub fn require_str(&mut self, key: &str) -> Result<String> {
        self.take_str(key)
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    /// Comma-separated list.
    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        match self.take_str(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse()
                        .map_err(|_| Error::Config(format!("key `{key}`: cannot parse `{s}`")))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    /// Fails on the first key never read.
    pub fn finish(&self) -> Result<()> {
        match self.values.keys().find(|k| !self.used.contains(*k)) {
            Some(k) => Err(Error::Config(format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }
}

/// Layer shape of an encoder, independent of data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Arch {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
}

impl Arch {
    pub const DESK_STUDENT: Arch = Arch {
        num_layers: 2,
        num_heads: 2,
        d_model: 32,
        d_ff: 64,
    };
    pub const DESK_TEACHER: Arch = Arch {
        num_layers: 4,
        num_heads: 4,
        d_model: 64,
        d_ff: 128,
    };

    pub fn model_config(&self, vocab_size: usize, max_seq_len: usize, num_classes: usize, eps: f64) -> ModelConfig {
        ModelConfig {
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            vocab_size,
            max_seq_len,
            num_classes,
            layernorm_eps: eps,
        }
    }

    fn read(s: &mut Settings, prefix: &str, default: Arch) -> Result<Arch> {
        Ok(Arch {
            num_layers: s.take_or(&format!("{prefix}num_layers"), default.num_layers)?,
            num_heads: s.take_or(&format!("{prefix}num_heads"), default.num_heads)?,
            d_model: s.take_or(&format!("{prefix}d_model"), default.d_model)?,
            d_ff: s.take_or(&format!("{prefix}d_ff"), default.d_ff)?,
        })
    }

    fn write(&self, out: &mut String, prefix: &str) {
        let _ = writeln!(out, "{prefix}num_layers = {}", self.num_layers);
        let _ = writeln!(out, "{prefix}num_heads = {}", self.num_heads);
        let _ = writeln!(out, "{prefix}d_model = {}", self.d_model);
        let _ = writeln!(out, "{prefix}d_ff = {}", self.d_ff);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSpec {
    Synth {
        kind: SynthKind,
        n_train: usize,
        n_val: usize,
        vocab_size: usize,
        seq_len: usize,
        /// Share of training labels flipped.
        label_noise: f64,
        seed: u64,
    },
    Tsv {
        train: PathBuf,
        validation: Option<PathBuf>,
        schema: TsvSchema,
        min_freq: usize,
        max_seq_len: usize,
    },
}

/// Encoded splits plus the vocabulary size the model must cover.
#[derive(Clone, Debug)]
pub struct LoadedData {
    pub train: Dataset,
    pub validation: Option<Dataset>,
    pub vocab_size: usize,
}

impl LoadedData {
    pub fn num_classes(&self) -> usize {
        self.train.num_classes()
    }

    pub fn max_seq_len(&self) -> usize {
        self.train.max_seq_len()
    }
}

impl DataSpec {
    pub fn load(&self) -> Result<LoadedData> {
        match self {
            DataSpec::Synth {
                kind,
                n_train,
                n_val,
                vocab_size,
                seq_len,
                label_noise,
                seed,
            } => {
                let (mut train, validation) = synth_splits(*kind, *seed, *n_train, *n_val, *vocab_size, *seq_len)?;
                if *label_noise > 0.0 {
                    train = train.with_label_noise(*label_noise, seed.wrapping_add(0x6e6f697365))?;
                }
                Ok(LoadedData {
                    train,
                    validation: Some(validation),
                    vocab_size: *vocab_size,
                })
            }
            DataSpec::Tsv {
                train,
                validation,
                schema,
                min_freq,
                max_seq_len,
            } => {
                let (train_ds, vocab, labels, _) = load_tsv(train, schema, *min_freq, *max_seq_len)?;
                let validation = match validation {
                    Some(p) => Some(read_tsv(p, schema)?.to_dataset(&vocab, &labels, *max_seq_len, Split::Validation)?),
                    None => None,
                };
                Ok(LoadedData {
                    train: train_ds,
                    validation,
                    vocab_size: vocab.len(),
                })
            }
        }
    }
}

/// Everything one command needs: data, both architectures, optimization
/// and distillation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataSpec,
    pub student: Arch,
    pub teacher: Arch,
    pub layernorm_eps: f64,
    pub train: TrainConfig,
    pub distill: DistillConfig,
    /// Share of content positions masked during pre-training.
    pub mask_fraction: f64,
}

impl RunConfig {
    /// Reads every run key from `s`, leaving other keys for the caller.
    pub fn from_settings(s: &mut Settings) -> Result<Self> {
        let data = s.require_str("data")?;
        let data = if let Some(kind) = data.strip_prefix("synth:") {
            DataSpec::Synth {
                kind: kind.parse()?,
                n_train: s.take_or("n_train", 512)?,
                n_val: s.take_or("n_val", 128)?,
                vocab_size: s.take_or("vocab_size", 50)?,
                seq_len: s.take_or("seq_len", 16)?,
                label_noise: s.take_or("label_noise", 0.0)?,
                seed: s.take_or("data_seed", 0)?,
            }
        } else {
            let sentence_cols: Vec<String> = s.take_list("sentence_cols")?.unwrap_or_else(|| vec!["sentence".into()]);
            let mut schema = TsvSchema {
                sentence_cols,
                label_col: s.take_or("label_col", "label".to_string())?,
                bins: s.take("bins")?,
                bin_range: (0.0, 5.0),
            };
            schema.bin_range = (s.take_or("bin_min", 0.0)?, s.take_or("bin_max", 5.0)?);
            DataSpec::Tsv {
                train: PathBuf::from(data),
                validation: s.take_str("validation").map(PathBuf::from),
                schema,
                min_freq: s.take_or("min_freq", 1)?,
                max_seq_len: s.take_or("max_seq_len", 64)?,
            }
        };
        let td = TrainConfig::default();
        let dd = DistillConfig::default();
        let clip: f64 = s.take_or("clip_norm", td.clip_norm.unwrap_or(0.0))?;
        let cfg = RunConfig {
            data,
            student: Arch::read(s, "", Arch::DESK_STUDENT)?,
            teacher: Arch::read(s, "teacher_", Arch::DESK_TEACHER)?,
            layernorm_eps: s.take_or("layernorm_eps", 1e-5)?,
            train: TrainConfig {
                batch_size: s.take_or("batch_size", td.batch_size)?,
                epochs: s.take_or("epochs", td.epochs)?,
                learning_rate: s.take_or("learning_rate", td.learning_rate)?,
                beta1: s.take_or("beta1", td.beta1)?,
                beta2: s.take_or("beta2", td.beta2)?,
                adam_eps: s.take_or("adam_eps", td.adam_eps)?,
                weight_decay: s.take_or("weight_decay", td.weight_decay)?,
                clip_norm: (clip > 0.0).then_some(clip),
                seed: s.take_or("seed", td.seed)?,
                distill: None,
            },
            distill: DistillConfig {
                temperature: s.take_or("temperature", dd.temperature)?,
                alpha: s.take_or("alpha", dd.alpha)?,
                mode: s.take_or("distill_mode", dd.mode)?,
                feature_weight: s.take_or("feature_weight", dd.feature_weight)?,
                scale_by_t_squared: s.take_or("t_squared", dd.scale_by_t_squared)?,
            },
            mask_fraction: s.take_or("mask_fraction", 0.15)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Settings::parse(text)?;
        let cfg = Self::from_settings(&mut s)?;
        s.finish()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.distill.validate()?;
        if !(0.0..=1.0).contains(&self.mask_fraction) {
            return Err(Error::Config(format!("mask_fraction must lie in [0, 1], got {}", self.mask_fraction)));
        }
        if let DataSpec::Synth { label_noise, .. } = self.data {
            if !(0.0..=1.0).contains(&label_noise) {
                return Err(Error::Config(format!("label_noise must lie in [0, 1], got {label_noise}")));
            }
        }
        Ok(())
    }

    /// Student model shape for `data`.
    pub fn student_config(&self, data: &LoadedData) -> ModelConfig {
        self.student
            .model_config(data.vocab_size, data.max_seq_len(), data.num_classes(), self.layernorm_eps)
    }

    pub fn teacher_config(&self, data: &LoadedData) -> ModelConfig {
        self.teacher
            .model_config(data.vocab_size, data.max_seq_len(), data.num_classes(), self.layernorm_eps)
    }

    /// Training settings with distillation switched on.
    pub fn distill_train(&self) -> TrainConfig {
        TrainConfig {
            distill: Some(self.distill),
            ..self.train
        }
    }

    /// Every resolved value, in a form [`RunConfig::parse`] accepts.
    pub fn render(&self) -> String {
        let mut out = String::new();
        match &self.data {
            DataSpec::Synth {
                kind,
                n_train,
                n_val,
                vocab_size,
                seq_len,
                label_noise,
                seed,
            } => {
                let _ = writeln!(out, "data = synth:{kind}");
                let _ = writeln!(out, "n_train = {n_train}");
                let _ = writeln!(out, "n_val = {n_val}");
                let _ = writeln!(out, "vocab_size = {vocab_size}");
                let _ = writeln!(out, "seq_len = {seq_len}");
                let _ = writeln!(out, "label_noise = {label_noise}");
                let _ = writeln!(out, "data_seed = {seed}");
            }
            DataSpec::Tsv {
                train,
                validation,
                schema,
                min_freq,
                max_seq_len,
            } => {
                let _ = writeln!(out, "data = {}", train.display());
                if let Some(v) = validation {
                    let _ = writeln!(out, "validation = {}", v.display());
                }
                let _ = writeln!(out, "sentence_cols = {}", schema.sentence_cols.join(","));
                let _ = writeln!(out, "label_col = {}", schema.label_col);
                if let Some(b) = schema.bins {
                    let _ = writeln!(out, "bins = {b}");
                }
                let _ = writeln!(out, "bin_min = {}", schema.bin_range.0);
                let _ = writeln!(out, "bin_max = {}", schema.bin_range.1);
                let _ = writeln!(out, "min_freq = {min_freq}");
                let _ = writeln!(out, "max_seq_len = {max_seq_len}");
            }
        }
        self.student.write(&mut out, "");
        self.teacher.write(&mut out, "teacher_");
        let t = &self.train;
        let d = &self.distill;
        let _ = writeln!(out, "layernorm_eps = {}", self.layernorm_eps);
        let _ = writeln!(out, "batch_size = {}", t.batch_size);
        let _ = writeln!(out, "epochs = {}", t.epochs);
        let _ = writeln!(out, "learning_rate = {}", t.learning_rate);
        let _ = writeln!(out, "beta1 = {}", t.beta1);
        let _ = writeln!(out, "beta2 = {}", t.beta2);
        let _ = writeln!(out, "adam_eps = {}", t.adam_eps);
        let _ = writeln!(out, "weight_decay = {}", t.weight_decay);
        let _ = writeln!(out, "clip_norm = {}", t.clip_norm.unwrap_or(0.0));
        let _ = writeln!(out, "seed = {}", t.seed);
        let _ = writeln!(out, "temperature = {}", d.temperature);
        let _ = writeln!(out, "alpha = {}", d.alpha);
        let _ = writeln!(out, "distill_mode = {}", d.mode);
        let _ = writeln!(out, "feature_weight = {}", d.feature_weight);
        let _ = writeln!(out, "t_squared = {}", d.scale_by_t_squared);
        let _ = writeln!(out, "mask_fraction = {}", self.mask_fraction);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_unknown_keys() {
        let mut s = Settings::parse("# c\n a = 1 # trailing\n\nb=x\n").unwrap();
        assert_eq!(s.take::<usize>("a").unwrap(), Some(1));
        assert!(matches!(s.finish(), Err(Error::Config(ref m)) if m.contains("`b`")));
        assert!(Settings::parse("a = 1\na = 2\n").is_err());
        assert!(Settings::parse("novalue\n").is_err());
    }

    #[test]
    fn missing_data_is_named() {
        let err = RunConfig::parse("epochs = 3\n").unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("`data`")));
    }

    #[test]
    fn render_roundtrips() {
        let cfg = RunConfig::parse("data = synth:parity\nalpha = 0.25\nclip_norm = 0\nteacher_d_model = 48\n").unwrap();
        assert_eq!(cfg.train.clip_norm, None);
        assert_eq!(RunConfig::parse(&cfg.render()).unwrap(), cfg);
        let tsv = RunConfig::parse("data = a.tsv\nvalidation = b.tsv\nsentence_cols = s1, s2\nbins = 5\n").unwrap();
        assert_eq!(RunConfig::parse(&tsv.render()).unwrap(), tsv);
    }

    #[test]
    fn bad_values_are_config_errors() {
        assert!(RunConfig::parse("data = synth:keyword\nalpha = 2\n").is_err());
        assert!(RunConfig::parse("data = synth:keyword\nepochs = ten\n").is_err());
        assert!(RunConfig::parse("data = synth:nope\n").is_err());
    }
}
