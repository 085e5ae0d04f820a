//! Speaker identification from simulated cochlear-implant electrodograms
//! and MFCCs.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used by the command-line tools.

// `!(x > y)` is used deliberately so NaN takes the failure branch; dense
// kernels index several arrays in lockstep.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod ace;
pub mod audio;
mod codec;
pub mod embed;
pub mod error;
pub mod frontend;
pub mod gmm;
pub mod linalg;
pub mod scalar;
pub mod spectrum;
pub mod vad;

pub use ace::{encode, AceConfig, Electrodogram};
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Audio = audio::AudioBuffer<f64>;
pub type Features = frontend::FeatureSequence<f64>;
pub type Gmm = gmm::GmmModel<f64>;
pub type SpeakerGmm = gmm::SpeakerModelGmm<f64>;
pub type Stats = embed::BaumWelchStats<f64>;
pub type Tv = embed::TvModel<f64>;
pub type Plda = embed::PldaModel<f64>;

pub type Audio32 = audio::AudioBuffer<f32>;
pub type Features32 = frontend::FeatureSequence<f32>;
pub type Gmm32 = gmm::GmmModel<f32>;
pub type Tv32 = embed::TvModel<f32>;
pub type Plda32 = embed::PldaModel<f32>;
