//! Decoder Transformer with masked ReLU attention, the embedding of an
//! instance, explicitly constructed weights and read-outs.

mod construct;
mod embed;
mod layer;
mod readout;

pub use construct::{
    build_constructed_weights, empirical_gate, final_average_heads, forward, lista_vm_weights,
    proof_bound_gate, soft_threshold_mlp, ConstructionMeta, Gate, TransformerWeights,
};
pub use embed::{
    embed_instance, extract_beta, extract_beta_column, hidden_state_csv, EmbeddingSequence, Layout,
};
pub use layer::{masked_attention, mlp_apply, AttentionHead, Layer, MlpWeights};
pub use readout::{final_average_layer, readout_linear, readout_query, ReadOutSpec};

#[cfg(test)]
mod tests;
