//! Audio-motion synchronization and distribution metrics.

pub mod esd;
pub mod events;
pub mod report;
pub mod stats;

pub use esd::{esd, esd_scan, EsdReport, ESD_PENALTY};
pub use events::{extract_audio_events, extract_motion_events, velocity_peaks, EventTimes};
pub use report::{EvalReport, SampleReport};
pub use stats::{diversity, frechet_distance};
