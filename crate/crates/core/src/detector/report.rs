use serde::{Deserialize, Serialize};

use crate::sim::ActionClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionStage {
    Keyframe,
    Semantic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub frame_id: u64,
    pub class: ActionClass,
    pub stage: DetectionStage,
    pub scenario_id: Option<u8>,
    pub confirmed: bool,
    pub message: String,
    pub interpretation: String,
    /// Best similarity to the class references and the class threshold.
    pub similarity: f64,
    pub threshold: f64,
}
