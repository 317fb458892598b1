//! Pair registration: detection, description, mutual nearest-neighbour
//! matching and a robust homography at source resolution.

mod matching;
mod pipeline;
mod report;

pub use matching::{
    distance_matrix, match_descriptors, select_top_matches, DescriptorMatch, MatchSet,
};
pub use pipeline::{
    detect_and_describe, register_pair, Detection, KeypointSource, RegisterConfig,
    RegistrationOutput, RegistrationResult, INFERENCE_SIZE,
};
pub use report::{MatchRecord, RegistrationReport, REPORT_SCHEMA};
