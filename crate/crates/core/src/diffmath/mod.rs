//! Differentiable tensor math: complex and real tensors, the centered
//! orthonormal FFT, same-padded convolutions and a reverse-mode tape.

pub mod conv;
pub mod fft;
pub mod params;
pub mod tape;
pub mod tensor;

pub use conv::{conv2d, conv2d_adjoint, conv2d_dilated};
pub use fft::{fft2c, ifft2c};
pub use params::{ParamEntry, ParameterStore};
pub use tape::{Tape, Value, Var};
pub use tensor::{CTensor, Tensor};
