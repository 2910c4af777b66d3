//! Language diarization: who speaks which language when, from raw audio.
//!
//! A strided conv featurizer feeds a Conformer encoder; a query decoder with masked
//! cross-attention refines one VAD query and several language queries into per-frame
//! masks. Training uses Hungarian-matched, deeply supervised focal and focal Tversky
//! losses. The crate also builds simulated code-switching corpora and scores
//! hypotheses with a frame-based DER.

pub mod decoder;
pub mod encoder;
pub mod error;
pub mod featurizer;
pub mod harness;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod raster;
pub mod simulator;
pub mod types;

pub use decoder::{Decoder, DecoderConfig, DiarizationPrediction, QueryState};
pub use encoder::{ContextualEmbeddings, Encoder, EncoderConfig};
pub use error::{Error, Result};
pub use featurizer::{FeatureSequence, Featurizer, FeaturizerConfig, SAMPLE_RATE};
pub use losses::{hungarian_match, total_loss, Assignment, LossWeights};
pub use metrics::{score, score_corpus, LabelMapping, OverlapPolicy, ScoringConfig, ScoringMode};
pub use model::{LanguageDiarizer, ModelConfig};
pub use raster::{label_matrix_to_segments, segments_to_label_matrix};
pub use simulator::{SimulatedUtterance, SimulationRecipe, SourcePool};
pub use types::{
    ChannelRole, DerBreakdown, FrameCounts, LabelMatrix, LanguageInventory, Segment, SegmentAnnotation,
    WaveformBuffer, VAD_LABEL,
};
