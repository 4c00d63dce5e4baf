//! Dense tensors with a reverse-mode computation record and the layer set
//! used by the HALI encoder, decoder and discriminator networks.
//!
//! ```
//! use hali_tensor::{Graph, Tensor};
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.param(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! g.backward(y).unwrap();
//! assert_eq!(g.grad(x).unwrap(), &[6.0]);
//! ```

pub mod error;
pub mod gradcheck;
mod graph;
mod ops;
mod rng;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Graph, Mode, Var};
pub use ops::{Activation, RunningStats};
pub use rng::{RngState, SeededRng};
pub use tensor::{Element, Tensor};

/// Output length of a convolution along one spatial axis, `None` when the
/// kernel does not fit the padded input.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    ops::conv_out_dim(input, kernel, stride, pad)
}
