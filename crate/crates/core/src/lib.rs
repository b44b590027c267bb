//! Standard-basis low-rank adapters (SBoRA-FA / SBoRA-FB) and a LoRA
//! baseline over frozen weight matrices.
//!
//! * [`adapters`]: layer types, sampling fast paths, merging, multi-adapter
//!   composition and the `SBORA1` checkpoint format.
//! * [`autograd`]: gradients for the trainable matrices and a
//!   finite-difference checker.
//! * [`training`]: seeded optimizer loop over synthetic regression tasks.
//! * [`accounting`]: closed-form parameter/operation counts and the
//!   instrumented counters that must agree with them.
//! * [`quant`]: NF4 blockwise quantization of the base weight.
//! * [`cli`]: the `sbora` experiment driver.
//!
//! Shapes follow `W0 ∈ R^{d×k}`: inputs have `k` features, outputs `d`.

pub mod accounting;
pub mod adapters;
pub mod autograd;
pub mod cli;
pub mod error;
pub mod matrix;
pub mod quant;
pub mod training;

pub use adapters::{Adapter, AdapterKind, AdapterLayer, BasisIndexSet, CombinedModel, Side};
pub use error::{Result, SboraError};
pub use matrix::{Activation, Matrix, Precision, Scalar};
