//! Differentiable pooling and attention blocks built on the tape.
//!
//! Layers take `[.., N, F]` descriptor matrices (optionally with a leading
//! batch axis) and typed bundles of tape handles for their parameters. Each
//! parameter bundle can initialize its tensors into a
//! [`ParamStore`](crate::params::ParamStore) under a path prefix and later
//! bind them back from a tape.

pub mod attention;
pub mod attention_cluster;
pub mod gating;
pub mod netvlad;
pub mod second_order;
pub mod t_embed;

pub use attention::{
    multi_head_attention, scaled_dot_attention, transformer_encoder, transformer_encoder_star,
    TransformerConfig, TransformerParams,
};
pub use attention_cluster::{attention_cluster, AttentionClusterConfig, AttentionClusterParams, ShiftShape};
pub use gating::{context_gating, GatingParams};
pub use netvlad::{netvlad, soft_assign, NetVladParams};
pub use second_order::{second_order_embed, SecondOrderConfig, SecondOrderParams};
pub use t_embed::{t_embed, t_embed_pooled, WhiteningState};
