//! Dense tensors and a tape-based reverse-mode differentiator, sized for
//! small convolutional networks.
//!
//! ```
//! use lshr_tensor::{ConvSpec, Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.constant(Tensor::ones([1, 1, 4, 4]));
//! let k = tape.param(Tensor::full([2, 1, 2, 2], 0.5));
//! let y = tape.conv2d(x, k, None, ConvSpec::valid(2)).unwrap();
//! let loss = tape.sum(y).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(k).unwrap().data(), &[4.0; 8]);
//! ```

pub mod conv;
mod error;
pub mod gradcheck;
mod real;
pub mod suite;
mod tape;
mod tensor;

pub use conv::{conv2d, pixel_shuffle, pixel_unshuffle, transposed_conv2d, ConvSpec};
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheckReport};
pub use real::Real;
pub use suite::{op_suite, OpTrial};
pub use tape::{binarize_value, Gradients, Tape, Var};
pub use tensor::Tensor;
