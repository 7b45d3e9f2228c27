//! The hierarchical model: per-chunk encoder, metadata embeddings,
//! cross-chunk transformer, per-label attention and sigmoid head, with exact
//! analytic gradients.

mod backward;
mod checkpoint;
mod config;
mod forward;
pub mod layers;
mod mat;
mod params;

pub use backward::{logit_gradient, model_backward};
pub use checkpoint::{round_to_f32, Checkpoint, CheckpointHeader, FORMAT_VERSION};
pub use config::{MetaFlags, ModelConfig};
pub use forward::{
    apply_meta_embeddings, chunk_encoder_forward, classify, cross_chunk_forward, flatten_chunks, label_attention, meta_vector, model_forward,
    predict, sigmoid, ForwardTrace,
};
pub use mat::{dot, Mat};
pub use params::{EncoderLayer, ModelParams, META_INIT_SD};

/// Smallest config exercising every component.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        t_c: 4,
        n_c: 3,
        hidden: 8,
        vocab_size: 50,
        n_labels: 5,
        n_categories: 3,
        enc_layers: 1,
        enc_heads: 2,
        second_layers: 1,
        second_heads: 2,
        ffn_mult: 2,
        cls_only: false,
        meta: MetaFlags::ALL,
    }
}
