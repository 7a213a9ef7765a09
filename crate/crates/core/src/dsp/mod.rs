//! Signal-processing kernels: mel spectrogram, onset envelope, tempo,
//! dynamic-programming beat selection and k-means.

pub mod beat;
pub mod kmeans;
pub mod mel;
pub mod onset;
pub mod tempo;

pub use beat::{dp_beat_select, DEFAULT_TIGHTNESS};
pub use kmeans::{kmeans_assign, kmeans_fit, kmeans_fit_with_report, Codebook, KMeansReport};
pub use mel::{mel_spectrogram, MelConfig, MelSpectrogram};
pub use onset::onset_strength;
pub use tempo::{estimate_tempo, TempoEstimate};
