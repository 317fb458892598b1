use serde::{Deserialize, Serialize};

use super::pipeline::{RegistrationOutput, RegistrationResult};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub fixed: [f64; 2],
    pub moving: [f64; 2],
    pub distance: f64,
    pub inlier: bool,
}

/// JSON report for one registered pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    pub schema_version: u32,
    pub fixed: String,
    pub moving: String,
    pub keypoint_source: String,
    #[serde(flatten)]
    pub result: RegistrationResult,
    pub matches: Vec<MatchRecord>,
}

impl RegistrationReport {
    pub fn new(
        fixed: impl Into<String>,
        moving: impl Into<String>,
        source: &str,
        out: &RegistrationOutput,
    ) -> Self {
        let mut inlier = vec![false; out.matches.len()];
        for &i in &out.inliers {
            inlier[i] = true;
        }
        let matches = out
            .matches
            .pairs
            .iter()
            .zip(inlier)
            .map(|(p, inlier)| MatchRecord {
                fixed: out.matches.points_a.coords[p.a],
                moving: out.matches.points_b.coords[p.b],
                distance: p.distance,
                inlier,
            })
            .collect();
        Self {
            schema_version: REPORT_SCHEMA,
            fixed: fixed.into(),
            moving: moving.into(),
            keypoint_source: source.to_string(),
            result: out.result.clone(),
            matches,
        }
    }
}
