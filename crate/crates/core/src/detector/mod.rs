//! Two-stage anomaly detection over observation frames: similarity screening against
//! per-class reference keyframes, then semantic constraint validation.

mod constraints;
mod embed;
mod library;
mod metrics;
mod pipeline;
mod report;

use thiserror::Error;

use crate::sim::ActionClass;

pub use constraints::{Requirement, ScenarioRule, TaskConstraints, SCENARIO_RULES};
pub use embed::{
    cosine, embed_frame, fnv1a, Embedder, EmbeddingVector, FeatureHashEmbedder, DEFAULT_DIM,
};
pub use library::{
    calibrate, clean_frames, compute_threshold, intra_similarity, CalibrationConfig,
    ClassReferences, DetectorConfig, ReferenceLibrary, Similarity,
};
pub use metrics::{
    evaluate_detector, scenario_frames, synthetic_corpus, Confusion, CorpusConfig, LabeledFrame,
    Metrics, PipelineMetrics,
};
pub use pipeline::{
    interpret, screen_embedding, stage1_detect, stage2_validate, Detector, Inspection,
    RuleValidator, Screening, SemanticValidator, SemanticVerdict,
};
pub use report::{AnomalyReport, DetectionStage};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectorError {
    #[error("too few references ({count}) for {}", class.map_or("class".to_string(), |c| c.to_string()))]
    TooFewReferences {
        class: Option<ActionClass>,
        count: usize,
    },
    #[error("no references for action class {0}")]
    UnknownClass(ActionClass),
    #[error("no constraint set for action class {0}")]
    MissingConstraintSet(ActionClass),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid detector config: {0}")]
    InvalidConfig(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("semantic validator failed: {0}")]
    Validator(String),
}
