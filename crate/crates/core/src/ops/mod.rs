//! Differentiable operator set. Each module provides plain tensor functions and
//! the matching recording methods on [`Tape`](crate::Tape).

pub mod activation;
pub mod conv;
pub mod elementwise;
pub mod linear;
pub mod norm;
pub mod pool;

pub use activation::Activation;
pub use conv::{ConvSpec, Padding, StripAxis};
pub use elementwise::BinaryKind;
pub use norm::{BatchStats, NORM_EPS};
pub use pool::PoolMode;
