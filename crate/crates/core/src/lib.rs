//! Compression of fine-tuned model weights as sparse, low-bit deltas
//! against a shared base model.
//!
//! The pipeline, per layer:
//!
//! 1. [`checkpoint::split`] the fine-tuned weight into base + delta.
//! 2. [`dropout::apply_dropout`]: keep an exact random fraction `1/alpha`
//!    of every row group and rescale survivors by `alpha`. The group width
//!    can be chosen by [`search::search_group_size`].
//! 3. [`quant::quantize`] the survivors to `k` bits, then
//!    [`quant::decompose`] the codes into `m` value ranges stored at
//!    `k − log2 m` bits each.
//! 4. At inference, [`pipeline::forward_separate`] runs the shared base
//!    weight and the sparse delta side by side and sums the outputs.
//!
//! Files use the `DTC1` tensor container and the `DDQ1` compressed-delta
//! artifact in [`format`].

pub mod analysis;
pub mod artifact;
pub mod bitpack;
pub mod checkpoint;
pub mod dropout;
pub mod error;
pub mod fixtures;
pub mod format;
pub mod pipeline;
pub mod quant;
pub mod report;
pub mod rng;
pub mod search;
pub mod tensor;

pub use analysis::{
    global_dropout, intermediate_stats, layer_loss, magnitude_prune, IntermediateStats,
};
pub use artifact::{DqArtifact, DqConfig, LayerArtifact, Method};
pub use checkpoint::{merge, split, DeltaCheckpoint, ModelCheckpoint, TensorSource};
pub use dropout::{apply_dropout, make_mask, DropoutMode, DropoutPlan, GroupSize, MaskMatrix};
pub use error::{Error, Result};
pub use pipeline::{compress, CompressOptions, GroupChoice};
pub use quant::{
    decompose, dequantize, nominal_ratio, quantize, QuantParams, QuantScale, QuantizedDelta,
};
pub use report::{build_report, CompressionReport};
pub use search::{
    candidate_group_sizes, proxy_error, search_group_size, AttentionProbe, SearchResult,
};
pub use tensor::{densify, matmul_dense, matmul_sparse, to_csr, Csr, CsrMatrix, DenseMatrix};
