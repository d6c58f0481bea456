//! Low-rank decomposition of CNN checkpoints.
//!
//! Plans per-layer ranks (parameter reduction or VBMF), factors the selected
//! layers (truncated SVD for dense and 1×1 convs, Tucker-2 for spatial convs),
//! rounds ranks to hardware-friendly multiples and measures whether the
//! factored layers actually run faster.

pub mod arch;
pub mod bench;
pub mod checkpoint;
pub mod compress;
pub mod conv;
pub mod decompose;
pub mod error;
pub mod init;
pub mod json;
pub mod linalg;
pub mod par;
pub mod rank;
pub mod tensor;

pub use arch::{build_resnet, count_macs, count_params, select_layers, ArchDescriptor, CompressionMode, LayerSpec};
pub use checkpoint::{read_checkpoint, write_checkpoint, TensorMap};
pub use decompose::{DecomposedLayer, HooiOptions, LayerFactors};
pub use error::{Error, ErrorCategory, Result};
pub use rank::{plan_ranks, CompressionConfig, LayerAction, RankMethod, RankPlan};
pub use tensor::Tensor;
