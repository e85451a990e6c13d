//! Minimal dense-tensor reverse-mode automatic differentiation.
//!
//! Build a [`Tape`], register leaves with [`Tape::param`] (tracked) or
//! [`Tape::constant`], compose operators, then call [`Tape::backward`] on a
//! scalar result. Gradients of tracked leaves accumulate across backward
//! passes until [`Tape::zero_grad`].
//!
//! ```
//! use edl_autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
//! let sq = tape.square(x);
//! let loss = tape.sum(sq);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);
//! ```

mod error;
pub mod gradcheck;
mod optim;
pub mod special;
mod tape;
mod tensor;

pub use error::{AutodiffError, Result};
pub use optim::{Adam, Parameter};
pub use tape::{Padding, Tape, Var};
pub use tensor::Tensor;
