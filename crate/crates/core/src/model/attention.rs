use crate::autograd::{Graph, Var};
use crate::error::{contract, Error, Result};
use crate::tensor::Tensor;

/// Additive score for masked keys.
pub const MASK_SCORE: f64 = -1e9;

/// `[batch × seq_len]` key mask: `true` for real tokens, `false` for padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    seq_len: usize,
    data: Vec<bool>,
}

impl AttentionMask {
    /// Every row must have the same length and a real token at position 0.
    pub fn new(rows: &[Vec<bool>]) -> Result<Self> {
        contract!(!rows.is_empty(), "attention mask with no rows");
        let seq_len = rows[0].len();
        contract!(seq_len >= 1, "attention mask with empty rows");
        for (i, r) in rows.iter().enumerate() {
            contract!(r.len() == seq_len, "mask row {i} has length {} != {seq_len}", r.len());
            contract!(r[0], "mask row {i} hides the classification position");
        }
        Ok(AttentionMask {
            seq_len,
            data: rows.concat(),
        })
    }

    /// Mask with the first `len` positions real, for each `len` in `lengths`.
    pub fn from_lengths(lengths: &[usize], seq_len: usize) -> Result<Self> {
        let rows: Vec<Vec<bool>> = lengths
            .iter()
            .map(|&n| (0..seq_len).map(|j| j < n).collect())
            .collect();
        Self::new(&rows)
    }

    pub fn batch(&self) -> usize {
        self.data.len() / self.seq_len
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn row(&self, b: usize) -> &[bool] {
        &self.data[b * self.seq_len..(b + 1) * self.seq_len]
    }
}

/// Projection weights of one attention block, each `[d_model × d_model]`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

/// `softmax(QKᵀ/√d_k)` with masked key columns pushed to [`MASK_SCORE`].
pub fn attention_weights(g: &mut Graph, q: Var, k: Var, key_mask: &[bool]) -> Result<Var> {
    let (sq, dk) = (g.value(q).rows(), g.value(q).cols());
    let sk = g.value(k).rows();
    if key_mask.len() != sk {
        return Err(Error::Shape {
            op: "attention_mask",
            lhs: g.value(k).shape().to_vec(),
            rhs: vec![key_mask.len()],
        });
    }
    contract!(key_mask.iter().any(|&m| m), "every key is masked");
    let raw = g.matmul_nt(q, k)?;
    let mut scores = g.scale(raw, 1.0 / (dk as f64).sqrt())?;
    if key_mask.iter().any(|&m| !m) {
        let row: Vec<f64> = key_mask
            .iter()
            .map(|&m| if m { 0.0 } else { MASK_SCORE })
            .collect();
        let bias = g.constant(Tensor::from_vec(&[sq, sk], row.repeat(sq)));
        scores = g.add(scores, bias)?;
    }
    g.softmax_rows(scores)
}

/// `softmax(QKᵀ/√d_k)·V` for one sequence.
pub fn scaled_dot_attention(g: &mut Graph, q: Var, k: Var, v: Var, key_mask: &[bool]) -> Result<Var> {
    if g.value(q).cols() != g.value(k).cols() || g.value(k).rows() != g.value(v).rows() {
        return Err(Error::Shape {
            op: "scaled_dot_attention",
            lhs: g.value(q).shape().to_vec(),
            rhs: g.value(k).shape().to_vec(),
        });
    }
    let w = attention_weights(g, q, k, key_mask)?;
    g.matmul(w, v)
}

/// Multi-head self-attention over a batch stacked as `[batch·seq × d_model]`.
///
/// The fused projections are sliced into `num_heads` column blocks, one per
/// head; head outputs are concatenated and projected by `W^O`.
pub fn multi_head_attention(
    g: &mut Graph,
    x: Var,
    w: &AttentionVars,
    num_heads: usize,
    mask: &AttentionMask,
) -> Result<Var> {
    let s = mask.seq_len();
    let batch = mask.batch();
    if g.value(x).rows() != batch * s {
        return Err(Error::Shape {
            op: "multi_head_attention",
            lhs: g.value(x).shape().to_vec(),
            rhs: vec![batch, s],
        });
    }
    let q = g.matmul(x, w.wq)?;
    let k = g.matmul(x, w.wk)?;
    let v = g.matmul(x, w.wv)?;
    let mut per_seq = Vec::with_capacity(batch);
    for b in 0..batch {
        let qb = g.slice_rows(q, b * s, s)?;
        let kb = g.slice_rows(k, b * s, s)?;
        let vb = g.slice_rows(v, b * s, s)?;
        let qh = g.split_cols(qb, num_heads)?;
        let kh = g.split_cols(kb, num_heads)?;
        let vh = g.split_cols(vb, num_heads)?;
        let heads = (0..num_heads)
            .map(|h| scaled_dot_attention(g, qh[h], kh[h], vh[h], mask.row(b)))
            .collect::<Result<Vec<_>>>()?;
        per_seq.push(if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)?
        });
    }
    let stacked = if per_seq.len() == 1 {
        per_seq[0]
    } else {
        g.concat_rows(&per_seq)?
    };
    g.matmul(stacked, w.wo)
}
