//! Joint handwritten text recognition and layout analysis.
//!
//! A convolutional encoder turns a page image into positional feature
//! sequences; a transformer decoder emits characters interleaved with layout
//! tags; a complexity network modulates features, queries and attention
//! according to how hard the document looks. Training runs a line-to-page
//! curriculum and evaluation covers text, page-group and layout metrics.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod gradsuite;
pub mod imageio;
pub mod layers;
pub mod layout;
pub mod metrics;
pub mod model;
pub mod msap;
pub mod params;
pub mod recognize;
pub mod rng;
pub mod tensor;
pub mod training;
pub mod vocab;

pub use error::{Error, Result};
pub use params::ParamStore;
pub use tensor::{Tape, Tensor, Var};
