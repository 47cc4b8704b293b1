//! Encoder-only Transformer classifier.

mod attention;
pub mod checkpoint;
mod config;
mod encoder;
mod positional;

pub use attention::{
    attention_weights, multi_head_attention, scaled_dot_attention, AttentionMask, AttentionVars,
    MASK_SCORE,
};
pub use config::ModelConfig;
pub use encoder::{
    embed, encode, encoder_layer_forward, feed_forward, EncoderModel, Forward, LayerVars, ModelVars,
};
pub use positional::positional_encoding;
