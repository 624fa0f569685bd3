//! Feature-space attribute progression for image sequences.
//!
//! The crate covers the full desk-scale pipeline: a pluggable differentiable
//! embedder, an age-grouped reference gallery with nearest-neighbor queries,
//! linear manifold traversal in feature space, a sequential neighbor-selection
//! environment trained with policy gradients, feature inversion back to image
//! space, and video-level consistency metrics.

pub mod bench;
pub mod config;
pub mod embedder;
pub mod error;
pub mod evaluation;
pub mod formats;
pub mod frame;
pub mod gallery;
pub mod inversion;
pub mod linalg;
pub mod mdp;
pub mod pipeline;
pub mod policy;
pub mod traversal;

pub use embedder::{Embedder, EmbedderKind, EmbedderSpec, PolicyEmbedding, SynthesisEmbedding};
pub use error::Error;
pub use frame::Frame;
pub use gallery::{AgeGroup, AlignmentOp, AttributeVector, Gallery, GalleryEntry};
pub use mdp::{Action, SelectionEnv, SelectionState};
pub use policy::PolicyParams;
pub use traversal::{AgingDelta, NeighborSets, TraversalConfig};
