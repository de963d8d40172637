use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::constraints::{Requirement, TaskConstraints};
use super::embed::{cosine, Embedder, EmbeddingVector, FeatureHashEmbedder};
use super::library::{calibrate, CalibrationConfig, DetectorConfig, ReferenceLibrary};
use super::report::{AnomalyReport, DetectionStage};
use super::DetectorError;
use crate::env::EnvConfig;
use crate::fixtures;
use crate::sim::{ActionClass, Monitor, ObservationFrame, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Screening {
    Pass { similarity: f64, threshold: f64 },
    Warning { similarity: f64, threshold: f64 },
}

impl Screening {
    pub fn is_warning(&self) -> bool {
        matches!(self, Screening::Warning { .. })
    }

    pub fn scores(&self) -> (f64, f64) {
        match *self {
            Screening::Pass {
                similarity,
                threshold,
            }
            | Screening::Warning {
                similarity,
                threshold,
            } => (similarity, threshold),
        }
    }
}

/// Stage 1 on a precomputed embedding: warns iff the best reference similarity is below the class threshold.
pub fn screen_embedding(
    embedding: &EmbeddingVector,
    class: ActionClass,
    library: &ReferenceLibrary,
) -> Result<Screening, DetectorError> {
    let refs = library
        .class(class)
        .ok_or(DetectorError::UnknownClass(class))?;
    let similarity = refs
        .refs
        .iter()
        .map(|r| cosine(embedding, r))
        .fold(f64::NEG_INFINITY, f64::max);
    let threshold = refs.threshold;
    Ok(if similarity < threshold {
        Screening::Warning {
            similarity,
            threshold,
        }
    } else {
        Screening::Pass {
            similarity,
            threshold,
        }
    })
}

pub fn stage1_detect(
    frame: &ObservationFrame,
    class: ActionClass,
    library: &ReferenceLibrary,
    embedder: &dyn Embedder,
) -> Result<Screening, DetectorError> {
    screen_embedding(&embedder.embed(frame), class, library)
}

/// Outcome of semantic validation; the wire shape a remote validator returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticVerdict {
    pub confirmed: bool,
    pub scenario_id: Option<u8>,
    pub message: String,
    #[serde(default)]
    pub interpretation: String,
}

pub trait SemanticValidator: Send + Sync {
    fn validate(
        &self,
        frame: &ObservationFrame,
        constraints: &TaskConstraints,
    ) -> Result<SemanticVerdict, DetectorError>;
}

/// Exact predicate engine over frame facts.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleValidator;

impl SemanticValidator for RuleValidator {
    fn validate(
        &self,
        frame: &ObservationFrame,
        constraints: &TaskConstraints,
    ) -> Result<SemanticVerdict, DetectorError> {
        stage2_validate(frame, constraints)
    }
}

/// Plain-language summary of what the frame shows.
pub fn interpret(frame: &ObservationFrame) -> String {
    let mut subject = String::new();
    if let Some(c) = &frame.subject.container {
        subject.push_str(&format!(" on {c}"));
    }
    if let Some(s) = &frame.subject.source {
        subject.push_str(&format!(" from {s}"));
    }
    let facts: Vec<String> = frame
        .facts
        .iter()
        .map(|(k, v)| format!("{} {}", k.replace('_', " "), if *v { "yes" } else { "no" }))
        .collect();
    format!(
        "{}{} at {:.0} s: {}",
        frame.class,
        subject,
        frame.clock,
        facts.join(", ")
    )
}

fn violation_message(violated: &[Requirement]) -> String {
    violated
        .iter()
        .map(|r| format!("\"{}\" violated", r.instruction()))
        .collect::<Vec<_>>()
        .join("; ")
}

pub fn stage2_validate(
    frame: &ObservationFrame,
    constraints: &TaskConstraints,
) -> Result<SemanticVerdict, DetectorError> {
    let violated = constraints.violations(frame)?;
    if violated.is_empty() {
        return Ok(SemanticVerdict {
            confirmed: false,
            scenario_id: None,
            message: "all constraints hold".into(),
            interpretation: interpret(frame),
        });
    }
    let scenario_id = constraints.scenario_for(frame, &violated);
    let mut ordered = violated.clone();
    if let Some(rule) =
        scenario_id.and_then(|s| constraints.rules().iter().find(|r| r.scenario == s))
    {
        ordered.sort_by_key(|r| r.fact != rule.fact);
    }
    Ok(SemanticVerdict {
        confirmed: true,
        scenario_id,
        message: violation_message(&ordered),
        interpretation: interpret(frame),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inspection {
    pub screening: Screening,
    pub report: Option<AnomalyReport>,
}

/// Two-stage detector usable as a run monitor.
#[derive(Clone)]
pub struct Detector {
    library: Arc<ReferenceLibrary>,
    constraints: Arc<TaskConstraints>,
    embedder: Arc<dyn Embedder>,
    validator: Arc<dyn SemanticValidator>,
}

impl std::fmt::Debug for Detector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Detector")
            .field("classes", &self.library.len())
            .field("embedder", &self.embedder.id())
            .finish()
    }
}

impl Detector {
    pub fn new(library: ReferenceLibrary, constraints: TaskConstraints) -> Self {
        Self {
            library: Arc::new(library),
            constraints: Arc::new(constraints),
            embedder: Arc::new(FeatureHashEmbedder::default()),
            validator: Arc::new(RuleValidator),
        }
    }

    /// Library calibrated on clean runs of the bundled passaging program.
    pub fn standard(env: &EnvConfig) -> Result<Self, DetectorError> {
        Self::calibrated(env, DetectorConfig::default())
    }

    /// As [`Detector::standard`] with a caller-chosen threshold configuration.
    pub fn calibrated(env: &EnvConfig, config: DetectorConfig) -> Result<Self, DetectorError> {
        let embedder = FeatureHashEmbedder::default();
        let library = calibrate(
            &fixtures::passaging(),
            env,
            &embedder,
            &CalibrationConfig::default(),
            config,
        )?;
        Ok(Self::new(library, TaskConstraints::standard()))
    }

    pub fn with_embedder(mut self, embedder: Arc<dyn Embedder>) -> Self {
        self.embedder = embedder;
        self
    }

    pub fn with_validator(mut self, validator: Arc<dyn SemanticValidator>) -> Self {
        self.validator = validator;
        self
    }

    pub fn library(&self) -> &ReferenceLibrary {
        &self.library
    }

    pub fn constraints(&self) -> &TaskConstraints {
        &self.constraints
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    pub fn inspect(&self, frame: &ObservationFrame) -> Result<Inspection, DetectorError> {
        self.inspect_embedding(frame, &self.embedder.embed(frame))
    }

    /// Runs both stages with a caller-supplied embedding, e.g. a noisy one.
    pub fn inspect_embedding(
        &self,
        frame: &ObservationFrame,
        embedding: &EmbeddingVector,
    ) -> Result<Inspection, DetectorError> {
        let screening = screen_embedding(embedding, frame.class, &self.library)?;
        if !screening.is_warning() {
            return Ok(Inspection {
                screening,
                report: None,
            });
        }
        let (similarity, threshold) = screening.scores();
        let verdict = match self.validator.validate(frame, &self.constraints) {
            Ok(v) => v,
            Err(e) => SemanticVerdict {
                confirmed: false,
                scenario_id: None,
                message: format!("semantic validation unavailable: {e}"),
                interpretation: String::new(),
            },
        };
        let report = AnomalyReport {
            frame_id: frame.frame_id,
            class: frame.class,
            stage: if verdict.confirmed {
                DetectionStage::Semantic
            } else {
                DetectionStage::Keyframe
            },
            scenario_id: verdict.scenario_id,
            confirmed: verdict.confirmed,
            message: verdict.message,
            interpretation: verdict.interpretation,
            similarity,
            threshold,
        };
        Ok(Inspection {
            screening,
            report: Some(report),
        })
    }
}

impl Monitor for Detector {
    fn observe(&mut self, frame: &ObservationFrame) -> Verdict {
        match self.inspect(frame) {
            Ok(Inspection {
                report: Some(report),
                ..
            }) if report.confirmed => Verdict::Confirmed(report),
            Ok(Inspection {
                report: Some(report),
                ..
            }) => Verdict::Suppressed(report),
            // A class without references cannot be screened.
            Ok(_) | Err(_) => Verdict::Pass,
        }
    }
}
