//! Template-matching tracking with a diversity-maximizing template memory.
//!
//! Every template lives in an inner-product feature space ([`space`]). The
//! long-term memory keeps the set of templates whose Gram matrix ([`gram`])
//! has the largest determinant, the short-term memory keeps the most recent
//! ones ([`memory`]), and [`inference::step`] combines both into one box per
//! frame on top of the plain matcher in [`matcher`]. [`bench`] holds the
//! evaluation harness.

// `!(x > 0.0)` style checks deliberately treat NaN as failing.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod error;
pub mod gram;
pub mod inference;
pub mod matcher;
pub mod memory;
pub mod space;

pub use error::{Error, Result};
pub use gram::{build_gram, determinant, normalized_determinant, GramMatrix};
pub use inference::{iou, step, BoundingBox, FramePrediction, Source};
pub use matcher::{track_init, track_init_with, Encoder, Frame, InitOptions, TrackState, TrackerConfig};
pub use memory::{BoundMode, Decision, LongTermMemory, LowerBoundConfig, ShortTermMemory, Template};
pub use space::{ActivationMap, FeatureTensor};
