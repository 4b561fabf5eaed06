//! Content-adaptive post-processing filter banks for a block-transform codec.
//!
//! Filters are trained jointly by competitive learning: each training patch
//! weights the filters by a softmax of their negated losses at a temperature
//! that is lowered on a staircase schedule, so every filter gradually
//! specializes on the patches it already handles best. Trained banks are
//! applied block-wise with per-block filter indices signalled as side
//! information, and compared by BD-rate against an unfiltered anchor and
//! against single-filter and per-QP-range baselines.

pub mod bank;
pub mod blockwise;
pub mod codec;
pub mod distortion;
pub mod error;
pub mod eval;
pub mod filter;
pub mod image;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use bank::{FilterBank, Routing};
pub use codec::{encode_decode, CodecResult, QpLevel};
pub use distortion::{distortion, Metric};
pub use error::{Error, Result};
pub use filter::{filter_forward, init_filter, FilterArch, FilterParams, QpIndicator};
pub use image::ImagePlane;
