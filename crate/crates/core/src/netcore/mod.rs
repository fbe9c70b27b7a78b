//! Network building blocks: a reverse-mode tape, named parameters and checkpoints,
//! global / within-part attention, part-identity and mask embeddings, the denoiser,
//! finite-difference checks, and Adam.

pub mod attention;
pub mod denoiser;
pub mod embed;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;

pub use attention::{attention, global_attention_block, within_part_attention, AttentionParams, AttnScope};
pub use denoiser::{Conditioning, Denoiser, DenoiserConfig, DenoiserOutput, ForwardOptions, Schedule, Stage};
pub use embed::{attach_part_identity, build_mask_embedding_map, IdentityMode, MaskMap, PartEmbeddingTable};
pub use gradcheck::{finite_diff_gradcheck, GradcheckOptions, GradcheckReport, Module, Stencil};
pub use optim::Adam;
pub use params::{Graph, ParamId, ParamStore, TensorFile};
pub use tape::{Mat, Tape, Var};
