use crate::error::{Error, Result};

/// Hyperparameters of an encoder classifier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    /// Includes the leading classification token.
    pub max_seq_len: usize,
    pub num_classes: usize,
    pub layernorm_eps: f64,
}

impl ModelConfig {
    /// 12 layers, 8 heads. Width and vocabulary are placeholders for a
    /// BERT-base-sized model and are expected to be overridden.
    pub fn paper_reference(vocab_size: usize, max_seq_len: usize, num_classes: usize) -> Self {
        ModelConfig {
            num_layers: 12,
            num_heads: 8,
            d_model: 768,
            d_ff: 3072,
            vocab_size,
            max_seq_len,
            num_classes,
            layernorm_eps: 1e-5,
        }
    }

    /// Default student: 2 layers, 2 heads, width 32.
    pub fn desk_student(vocab_size: usize, max_seq_len: usize, num_classes: usize) -> Self {
        ModelConfig {
            num_layers: 2,
            num_heads: 2,
            d_model: 32,
            d_ff: 64,
            vocab_size,
            max_seq_len,
            num_classes,
            layernorm_eps: 1e-5,
        }
    }

    /// Default teacher: 4 layers, 4 heads, width 64.
    pub fn desk_teacher(vocab_size: usize, max_seq_len: usize, num_classes: usize) -> Self {
        ModelConfig {
            num_layers: 4,
            num_heads: 4,
            d_model: 64,
            d_ff: 128,
            vocab_size,
            max_seq_len,
            num_classes,
            layernorm_eps: 1e-5,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_layers < 1 {
            return fail("num_layers must be >= 1".into());
        }
        if self.num_heads < 1 || !self.d_model.is_multiple_of(self.num_heads) {
            return fail(format!(
                "num_heads {} must divide d_model {}",
                self.num_heads, self.d_model
            ));
        }
        if self.d_model < 2 || !self.d_model.is_multiple_of(2) {
            return fail(format!(
                "d_model must be even and >= 2 for sinusoidal positions, got {}",
                self.d_model
            ));
        }
        if self.d_ff < 1 {
            return fail("d_ff must be >= 1".into());
        }
        if self.vocab_size < 4 {
            return fail(format!("vocab_size must be >= 4, got {}", self.vocab_size));
        }
        if self.max_seq_len < 2 {
            return fail(format!("max_seq_len must be >= 2, got {}", self.max_seq_len));
        }
        if self.num_classes < 2 {
            return fail(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if !(self.layernorm_eps > 0.0) {
            return fail(format!("layernorm_eps must be > 0, got {}", self.layernorm_eps));
        }
        Ok(())
    }

    /// Names and shapes of every parameter, in checkpoint order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let (d, f) = (self.d_model, self.d_ff);
        let mut out = vec![
            ("embed.weight".to_string(), vec![self.vocab_size, d]),
            ("embed.bias".to_string(), vec![d]),
        ];
        for l in 0..self.num_layers {
            for (name, shape) in [
                ("attn.wq", vec![d, d]),
                ("attn.wk", vec![d, d]),
                ("attn.wv", vec![d, d]),
                ("attn.wo", vec![d, d]),
                ("ffn.w1", vec![d, f]),
                ("ffn.b1", vec![f]),
                ("ffn.w2", vec![f, d]),
                ("ffn.b2", vec![d]),
                ("norm1.gamma", vec![d]),
                ("norm1.beta", vec![d]),
                ("norm2.gamma", vec![d]),
                ("norm2.beta", vec![d]),
            ] {
                out.push((format!("layer{l}.{name}"), shape));
            }
        }
        out.push(("cls.weight".to_string(), vec![d, self.num_classes]));
        out.push(("cls.bias".to_string(), vec![self.num_classes]));
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_layout()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// Parameters per encoder layer.
pub(crate) const LAYER_PARAMS: usize = 12;
