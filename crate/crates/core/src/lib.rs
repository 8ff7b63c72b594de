//! Character-attention fully convolutional scene text recognizer.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`] – the 38-class alphabet, character boxes, box shrinking and
//!   ground-truth rasterization.
//! * [`synth`] – hermetic synthetic word rendering, augmentation, crop
//!   perturbations and the on-disk dataset format.
//! * [`nn`] – dense tensors, a small reverse-mode tape, convolution,
//!   deformable convolution, the attention gate and the full network.
//! * [`train`] – weighted losses, Adam, schedules and the training loop.
//! * [`word`] – turning a character probability map into a word.
//! * [`eval`] – test-time resizing, lexicons, evaluation reports and
//!   visualization.
//! * [`cli`] – the `cafcn` command line.

pub mod cli;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod nn;
pub mod synth;
pub mod train;
pub mod word;

pub use error::{Error, Result};
pub use geometry::{Alphabet, CharBox, LabelBundle, NUM_CLASSES};
pub use nn::{Model, NetConfig, Tensor};
pub use word::{ProbMap, WordResult};
