//! Lifting-based wavelet-like image compression toolkit.
//!
//! The crate is organised around a generic polyphase lifting engine
//! ([`lifting`]) whose steps are either fixed filters ([`wavelets`]) or
//! learned proposal-opacity networks ([`ops`]).  Every lifting structure is
//! perfectly invertible by construction, for arbitrary operator weights.
//! A small dense-tensor core ([`tensor`], [`nn`]) provides forward passes and
//! hand-written analytic backward passes for the layers those networks need,
//! so the whole analysis/quantize/synthesis pipeline can be optimised
//! end-to-end ([`training`], [`coder`]).  Evaluation lives in [`metrics`] and
//! the compressed-file format in [`codestream`].

pub mod coder;
pub mod codestream;
pub mod error;
pub mod image;
pub mod lifting;
pub mod metrics;
pub mod nn;
pub mod ops;
pub mod oracle;
pub mod store;
pub mod tensor;
pub mod training;
pub mod wavelets;

pub use error::{Error, Result};
pub use lifting::{LiftingStep, LiftingStructure, PolyphasePair, SubbandPyramid};
pub use ops::NetConfig;
pub use store::{GradStore, WeightStore};
pub use tensor::Tensor;
