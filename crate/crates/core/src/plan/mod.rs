//! Keyframe planning, window infilling and the end-to-end generation pipeline.

pub mod audio;
pub mod infill;
pub mod masking;
pub mod pipeline;
pub mod planner;
pub mod retrieval;
pub mod session;
pub mod vocab;

pub use audio::{audio_features, audio_tokens, AudioFeatures, AudioQuantizer};
pub use infill::{infill_window, InfillWindow, SlotPrediction, SlotScorer, WindowTrace, REFINEMENT_STEPS};
pub use masking::{mask_training_windows, MaskedWindow, CORRUPT_RATE};
pub use pipeline::{generate_turn, train_all, train_indices, train_planner, GenerateConfig, GenerationResult, Models, TrainConfig};
pub use planner::{Decoding, PlannerModel};
pub use retrieval::{default_layer_weights, RetrievalConfig, RetrievalScorer, StoredWindow, WindowIndex};
pub use session::Session;
pub use vocab::{build_training_sequences, PlannerExample, PlannerVocab};
