//! Bloom's-taxonomy classification of exam questions and learning outcomes:
//! text preparation, synonym augmentation, bag-of-words features, SMOTE,
//! three linear classifiers, cross-validated grid search, metrics, and a
//! zero-shot chat-model harness.

pub mod augment;
pub mod corpus;
pub mod evalkit;
pub mod features;
pub mod llm;
pub mod models;
pub mod pipeline;
pub mod seed;
pub mod textprep;
mod wordlist;

pub use corpus::{BloomLabel, LabeledSentence};
pub use evalkit::{ConfusionMatrix, MetricsReport};
pub use features::{FeatureVector, Origin, Vocabulary};
pub use models::{ModelArtifact, ModelKind, ModelSpec};
pub use pipeline::{ErrorClass, PipelineError, RunConfig, RunManifest};
pub use textprep::{PosTag, TokenDoc};
