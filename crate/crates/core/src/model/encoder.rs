use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::attention::{multi_head_attention, AttentionMask, AttentionVars};
use super::config::{ModelConfig, LAYER_PARAMS};
use super::positional::positional_encoding;
use crate::autograd::{Graph, ParamId, Var};
use crate::error::{contract, Error, Result};
use crate::tensor::Tensor;

/// Graph handles for one encoder layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub attn: AttentionVars,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub norm1: (Var, Var),
    pub norm2: (Var, Var),
}

/// Graph handles for every parameter of an [`EncoderModel`].
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub embed_w: Var,
    pub embed_b: Var,
    pub layers: Vec<LayerVars>,
    pub cls_w: Var,
    pub cls_b: Var,
}

impl ModelVars {
    /// Groups handles laid out in [`ModelConfig::param_layout`] order.
    pub fn from_slice(config: &ModelConfig, vars: &[Var]) -> Self {
        assert_eq!(vars.len(), 4 + config.num_layers * LAYER_PARAMS, "handle count");
        let layers = (0..config.num_layers)
            .map(|l| {
                let p = &vars[2 + l * LAYER_PARAMS..2 + (l + 1) * LAYER_PARAMS];
                LayerVars {
                    attn: AttentionVars {
                        wq: p[0],
                        wk: p[1],
                        wv: p[2],
                        wo: p[3],
                    },
                    w1: p[4],
                    b1: p[5],
                    w2: p[6],
                    b2: p[7],
                    norm1: (p[8], p[9]),
                    norm2: (p[10], p[11]),
                }
            })
            .collect();
        let n = vars.len();
        ModelVars {
            embed_w: vars[0],
            embed_b: vars[1],
            layers,
            cls_w: vars[n - 2],
            cls_b: vars[n - 1],
        }
    }
}

/// Output of a forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// `[batch × num_classes]`, un-normalized.
    pub logits: Var,
    /// Final-layer hidden states, `[batch·seq × d_model]`.
    pub hidden: Var,
}

/// Encoder classifier: token embedding, sinusoidal positions, a stack of
/// post-norm self-attention layers, and a linear head on position 0.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel {
    config: ModelConfig,
    params: Vec<Tensor>,
}

impl EncoderModel {
    /// Scaled-uniform weights, zero biases, unit layer-norm gains.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = config
            .param_layout()
            .into_iter()
            .map(|(name, shape)| {
                if shape.len() == 2 {
                    Tensor::xavier_uniform(shape[0], shape[1], &mut rng)
                } else if name.ends_with(".gamma") {
                    Tensor::ones(&shape)
                } else {
                    Tensor::zeros(&shape)
                }
            })
            .collect();
        Ok(EncoderModel { config, params })
    }

    pub fn from_params(config: ModelConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let layout = config.param_layout();
        contract!(
            layout.len() == params.len(),
            "expected {} parameter tensors, got {}",
            layout.len(),
            params.len()
        );
        for ((name, shape), t) in layout.iter().zip(&params) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Contract(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(EncoderModel { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> Vec<String> {
        self.config.param_layout().into_iter().map(|(n, _)| n).collect()
    }

    /// Ids of the classifier head, which masked-LM pre-training leaves alone.
    pub fn head_param_ids(&self) -> [ParamId; 2] {
        let n = self.params.len();
        [ParamId(n - 2), ParamId(n - 1)]
    }

    /// Adds every parameter to `g`: as `ParamId(i)` leaves when `trainable`,
    /// otherwise as constants.
    pub fn register(&self, g: &mut Graph, trainable: bool) -> ModelVars {
        let vars: Vec<Var> = self
            .params
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if trainable {
                    g.param(ParamId(i), t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        ModelVars::from_slice(&self.config, &vars)
    }

    /// Records a forward pass over a batch of equal-length id sequences.
    pub fn forward(
        &self,
        g: &mut Graph,
        vars: &ModelVars,
        batch: &[Vec<usize>],
        mask: &AttentionMask,
    ) -> Result<Forward> {
        encode(g, vars, &self.config, batch, mask)
    }

    /// Logits without gradient tracking.
    pub fn predict_logits(&self, batch: &[Vec<usize>], mask: &AttentionMask) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.register(&mut g, false);
        let out = self.forward(&mut g, &vars, batch, mask)?;
        Ok(g.value(out.logits).clone())
    }
}

/// `e_i = W_e[x_i] + b_e` for each id.
pub fn embed(g: &mut Graph, ids: &[usize], embed_w: Var, embed_b: Var) -> Result<Var> {
    let rows = g.gather_rows(embed_w, ids)?;
    g.add_bias(rows, embed_b)
}

/// `max(0, x·W1 + b1)·W2 + b2`, row-wise.
pub fn feed_forward(g: &mut Graph, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var> {
    let h = g.matmul(x, w1)?;
    let h = g.add_bias(h, b1)?;
    let h = g.relu(h)?;
    let o = g.matmul(h, w2)?;
    g.add_bias(o, b2)
}

/// Post-norm layer: `Y = LN(X + MHA(X))`, `Z = LN(Y + FFN(Y))`.
pub fn encoder_layer_forward(
    g: &mut Graph,
    x: Var,
    layer: &LayerVars,
    num_heads: usize,
    mask: &AttentionMask,
    eps: f64,
) -> Result<Var> {
    let attn = multi_head_attention(g, x, &layer.attn, num_heads, mask)?;
    let res1 = g.add(x, attn)?;
    let y = g.layer_norm(res1, layer.norm1.0, layer.norm1.1, eps)?;
    let ff = feed_forward(g, y, layer.w1, layer.b1, layer.w2, layer.b2)?;
    let res2 = g.add(y, ff)?;
    g.layer_norm(res2, layer.norm2.0, layer.norm2.1, eps)
}

/// Embedding, positions, the encoder stack, then the head on position 0.
pub fn encode(
    g: &mut Graph,
    vars: &ModelVars,
    config: &ModelConfig,
    batch: &[Vec<usize>],
    mask: &AttentionMask,
) -> Result<Forward> {
    contract!(!batch.is_empty(), "empty batch");
    let s = batch[0].len();
    for seq in batch {
        if seq.len() > config.max_seq_len {
            return Err(Error::Length {
                len: seq.len(),
                max: config.max_seq_len,
            });
        }
        contract!(seq.len() == s, "sequences in a batch must share one length");
    }
    contract!(
        mask.batch() == batch.len() && mask.seq_len() == s,
        "mask is {}x{} but batch is {}x{s}",
        mask.batch(),
        mask.seq_len(),
        batch.len()
    );

    let flat: Vec<usize> = batch.iter().flatten().copied().collect();
    let emb = embed(g, &flat, vars.embed_w, vars.embed_b)?;
    let pe = positional_encoding(s, config.d_model)?;
    let pe = Tensor::from_vec(&[batch.len() * s, config.d_model], pe.data().repeat(batch.len()));
    let pe = g.constant(pe);
    let mut x = g.add(emb, pe)?;
    for layer in &vars.layers {
        x = encoder_layer_forward(g, x, layer, config.num_heads, mask, config.layernorm_eps)?;
    }

    let cls = if batch.len() == 1 {
        g.slice_rows(x, 0, 1)?
    } else {
        let rows = (0..batch.len())
            .map(|b| g.slice_rows(x, b * s, 1))
            .collect::<Result<Vec<_>>>()?;
        g.concat_rows(&rows)?
    };
    let logits = g.matmul(cls, vars.cls_w)?;
    let logits = g.add_bias(logits, vars.cls_b)?;
    Ok(Forward { logits, hidden: x })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            num_layers: 2,
            num_heads: 2,
            d_model: 8,
            d_ff: 12,
            vocab_size: 10,
            max_seq_len: 6,
            num_classes: 3,
            layernorm_eps: 1e-5,
        }
    }

    #[test]
    fn init_follows_layout() {
        let m = EncoderModel::new(tiny(), 1).unwrap();
        for ((name, shape), t) in m.config().param_layout().iter().zip(m.params()) {
            assert_eq!(t.shape(), shape.as_slice(), "{name}");
            if name.ends_with("gamma") {
                assert!(t.data().iter().all(|&x| x == 1.0));
            } else if shape.len() == 1 {
                assert!(t.data().iter().all(|&x| x == 0.0));
            } else {
                let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                assert!(t.data().iter().all(|x| x.abs() <= bound));
            }
        }
    }

    #[test]
    fn embed_examples() {
        let mut g = Graph::new();
        let w = Tensor::from_vec(&[5, 2], (0..10).map(|x| x as f64).collect());
        let we = g.constant(w);
        let zero = g.constant(Tensor::zeros(&[2]));
        let e = embed(&mut g, &[3], we, zero).unwrap();
        assert_eq!(g.value(e).data(), &[6.0, 7.0]);

        let we0 = g.constant(Tensor::zeros(&[5, 2]));
        let b = g.constant(Tensor::from_vec(&[2], vec![0.5, -1.0]));
        let e = embed(&mut g, &[0, 4, 2], we0, b).unwrap();
        assert_eq!(g.value(e).data(), &[0.5, -1.0, 0.5, -1.0, 0.5, -1.0]);

        assert!(matches!(
            embed(&mut g, &[5], we0, b),
            Err(Error::Vocab { id: 5, .. })
        ));
    }

    #[test]
    fn feed_forward_degenerate_cases() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 3]));
        let w1 = g.constant(Tensor::ones(&[3, 4]));
        let b1 = g.constant(Tensor::zeros(&[4]));
        let w2 = g.constant(Tensor::ones(&[4, 3]));
        let b2 = g.constant(Tensor::zeros(&[3]));
        let y = feed_forward(&mut g, x, w1, b1, w2, b2).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));

        let x = g.constant(Tensor::from_rows(&[vec![1.0, -2.0, 0.5]]));
        let dead = g.constant(Tensor::full(&[4], -100.0));
        let b2 = g.constant(Tensor::from_vec(&[3], vec![0.1, 0.2, 0.3]));
        let y = feed_forward(&mut g, x, w1, dead, w2, b2).unwrap();
        assert_eq!(g.value(y).data(), &[0.1, 0.2, 0.3]);
    }

    #[test]
    fn encode_shapes_and_length_error() {
        let m = EncoderModel::new(tiny(), 3).unwrap();
        let batch = vec![vec![2, 5, 6, 0], vec![2, 7, 0, 0], vec![2, 5, 6, 0]];
        let mask = AttentionMask::from_lengths(&[3, 2, 3], 4).unwrap();
        let logits = m.predict_logits(&batch, &mask).unwrap();
        assert_eq!(logits.shape(), &[3, 3]);
        assert_eq!(logits.row(0), logits.row(2));

        let long = vec![vec![2; 7]];
        let mask = AttentionMask::from_lengths(&[7], 7).unwrap();
        assert!(matches!(
            m.predict_logits(&long, &mask),
            Err(Error::Length { len: 7, max: 6 })
        ));
    }

    #[test]
    fn from_params_checks_shapes() {
        let m = EncoderModel::new(tiny(), 3).unwrap();
        let mut p = m.params().to_vec();
        assert!(EncoderModel::from_params(tiny(), p.clone()).is_ok());
        p[1] = Tensor::zeros(&[7]);
        assert!(EncoderModel::from_params(tiny(), p).is_err());
    }
}
