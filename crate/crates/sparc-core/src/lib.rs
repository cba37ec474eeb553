//! PSK-modulated sparse superposition codes for the complex AWGN channel.
//!
//! A codeword is `A beta` where `A` is a block-random design matrix and
//! `beta` carries one PSK-valued nonzero per section of `M` entries. This
//! crate provides the encoder, the AMP decoder with online noise tracking,
//! the state-evolution recursion that predicts decoder NMSE, analytical
//! bound calculators, and error metrics. Spatial coupling and power
//! allocation are both expressed through base matrices.

pub mod amp;
pub mod base_matrix;
pub mod channel;
pub mod design;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod params;
pub mod se;
pub mod seeding;

pub use amp::{decode, decode_tracked, DecodeReport, DecoderConfig};
pub use base_matrix::{BaseMatrix, BaseMatrixKind, RowColAverages};
pub use design::{DesignOperator, OperatorKind, WeightMatrixBlocks};
pub use encoder::{BitPayload, MessageVector};
pub use error::{Result, SparcError};
pub use metrics::{FrameResult, ValueErrorRule};
pub use params::{ChannelSpec, SparcParams};
pub use se::{McConfig, SeState};
