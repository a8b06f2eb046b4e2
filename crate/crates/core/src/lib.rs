//! Progressive-attention spectral graph network for EEG emotion
//! classification.
//!
//! The model chains three experts. Each expert runs a Chebyshev graph
//! convolution over the electrode graph, classifies, and derives a
//! gradient-based channel-attention map; the thresholded map prunes weakly
//! relevant electrodes from the graph the next expert sees. A dynamic gate
//! fuses the experts' feature maps for the final prediction, and training
//! combines the fused loss, per-expert losses, and a Jensen-Shannon
//! diversity term over the first two attention maps.
//!
//! Modules:
//! - [`tensor`] / [`record`]: dense 2-D `f64` tensors and the reverse-mode
//!   autodiff record everything differentiable runs through
//! - [`graph`]: montage → adjacency → scaled Laplacian → Chebyshev basis,
//!   plus node pruning and a Jacobi eigendecomposition used by tests
//! - [`expert`]: one convolution + head + attention unit
//! - [`pipeline`]: progressive chaining, fusion, losses, Adam, training
//! - [`data`]: dataset manifests, differential-entropy features, synthetic
//!   planted-signal generation, trial splits
//! - [`checkpoint`]: versioned serialization of trained state

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod expert;
pub mod graph;
pub mod pipeline;
pub mod record;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{AdjacencyRule, EegGraph, MontagePoint, ScaledLaplacian};
pub use record::{Axis, DiffRecord, ElemKind, NodeId, ReduceKind};
pub use tensor::Tensor;
