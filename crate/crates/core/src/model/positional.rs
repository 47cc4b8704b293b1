use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sinusoidal position table `[seq_len × d_model]`.
///
/// Column `2i` holds `sin(pos / 10000^(2i/d_model))` and column `2i+1` holds the
/// cosine at the same frequency, with `i` the pair index.
pub fn positional_encoding(seq_len: usize, d_model: usize) -> Result<Tensor> {
    if d_model == 0 || !d_model.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "positional encoding needs an even d_model, got {d_model}"
        )));
    }
    if seq_len == 0 {
        return Err(Error::Config("positional encoding needs seq_len >= 1".into()));
    }
    let mut data = vec![0.0; seq_len * d_model];
    for pos in 0..seq_len {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf((2 * i) as f64 / d_model as f64);
            data[pos * d_model + 2 * i] = angle.sin();
            data[pos * d_model + 2 * i + 1] = angle.cos();
        }
    }
    Ok(Tensor::from_vec(&[seq_len, d_model], data))
}
