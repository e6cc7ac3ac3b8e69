//! The embedding network and its building blocks.

mod attention;
mod checkpoint;
mod conv;
mod model;
mod params;
mod tensor;

pub use attention::{channel_attention, channel_attention_backward, channel_attention_raw, channel_gate, global_average_pool, global_average_pool_raw, init_attention, AttentionGrads, ChannelAttentionParams, GateCache};
pub use checkpoint::{read_checkpoint, sha256_hex, write_checkpoint, Checkpoint, CheckpointHeader};
pub use conv::{Conv2d, Linear};
pub use model::{prepare_input, Backbone, BackboneConfig, BranchOutputs, Embedding, EmbeddingSource, ForwardCache, BRANCH_PARTS, INPUT_MEAN, INPUT_STD};
pub use params::{ParamEntry, ParamLayout};
pub use tensor::FeatureMap;
