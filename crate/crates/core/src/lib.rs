//! VCformer: variable-correlation attention over lagged cross-correlations,
//! a Koopman temporal detector, and the training harness around them.

pub mod autodiff;
pub mod baseline;
pub mod data;
pub mod error;
pub mod fft;
pub mod ktd;
pub mod lagcorr;
pub mod linalg;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod vca;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use tensor::{ComplexTensor, Tensor};
