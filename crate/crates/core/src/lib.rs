//! Training-free appearance transfer primitives over dense feature maps.
//!
//! The engine matches masked target features to masked reference features by
//! argmax cosine similarity, gathers the matched reference features into the
//! target layout, and splices them back inside the target mask. A masked
//! AdaIN operation, the evaluation metrics used to score transfers, a binary
//! tensor container, and a streaming server for driving the engine from an
//! external denoising loop are built on the same pieces.
//!
//! - [`matching`]: exact masked matching, naive oracle, flow derivation.
//! - [`transfer`]: rearrangement, injection, AdaIN, per-step orchestration.
//! - [`metrics`]: histogram, embedding, depth, IoU, keypoint and flow metrics.
//! - [`tensor_io`]: `EFT1` tensors, PPM images, keypoint files.
//! - [`service`]: wire protocol, session engine, TCP server and client.
//! - [`eval`]: manifest-driven evaluation batteries with TSV reports.

pub mod bench;
pub mod config;
pub mod error;
pub mod eval;
pub mod matching;
pub mod metrics;
pub mod random;
pub mod selfcheck;
pub mod service;
pub mod tensor_io;
pub mod transfer;
pub mod types;

pub use config::{SessionConfig, StepRange};
pub use error::{Error, Result};
pub use matching::{
    brute_force_match, correspondence_to_flow, cosine_similarity, masked_cosine_match, PreparedReference,
};
pub use transfer::{adain_masked, inject, rearrange, transfer_step, ObjectPair};
pub use types::{
    validate_pair, CorrespondenceMap, DepthMap, EmbeddingVector, FeatureMap, FlowMap, KeypointSet, ObjectMask, RgbImage,
};
