//! Channel prior convolutional attention (CPCA), the CPCANet segmentation
//! network, and the dense reverse-mode autodiff engine they run on.

pub mod attention;
pub mod augment;
pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod inference;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod ops;
pub mod params;
pub mod tensor;
pub mod train;

pub use attention::{AttentionBlock, AttentionConfig, AttentionOutput, AttentionVariant};
pub use augment::AugmentConfig;
pub use autodiff::{Gradients, Tape, Var};
pub use dataset::SegSample;
pub use error::{Error, Result};
pub use inference::{Prediction, SegmentationModel, SlidingWindowConfig};
pub use loss::{DiceOptions, LossWeights};
pub use metrics::Mask;
pub use network::{ConvBlockOrder, CpcaNet, Ledger, Mode, NetworkConfig};
pub use params::{Bound, BufferId, ParamId, ParamStore};
pub use tensor::{DType, Element, Tensor};
pub use train::{EpochRecord, EvalReport, OptimizerKind, Schedule, TrainConfig, TrainLog};
