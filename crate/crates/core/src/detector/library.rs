use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embed::{cosine, Embedder, EmbeddingVector};
use super::DetectorError;
use crate::env::EnvConfig;
use crate::ir::ProtocolProgram;
use crate::sim::{run_program, ActionClass, NoMonitor, ObservationFrame, RunStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub alpha: f64,
    pub similarity: Similarity,
    pub embedder: String,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            similarity: Similarity::Cosine,
            embedder: "feature-hash".into(),
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(DetectorError::InvalidConfig(format!(
                "alpha {} outside (0, 1]",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// All pairwise similarities `sim(f_p, f_q)` for `p < q`.
pub fn intra_similarity(refs: &[EmbeddingVector]) -> Result<Vec<f64>, DetectorError> {
    if refs.len() < 2 {
        return Err(DetectorError::TooFewReferences {
            class: None,
            count: refs.len(),
        });
    }
    let mut out = Vec::with_capacity(refs.len() * (refs.len() - 1) / 2);
    for (p, a) in refs.iter().enumerate() {
        for b in &refs[p + 1..] {
            out.push(cosine(a, b));
        }
    }
    Ok(out)
}

/// Sorts descending and returns the value at 1-based rank `ceil(alpha * n)`, clamped to `[1, n]`.
///
/// # Panics
/// On an empty slice.
pub fn compute_threshold(similarities: &[f64], alpha: f64) -> f64 {
    assert!(!similarities.is_empty(), "threshold of an empty multiset");
    let mut sorted = similarities.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = sorted.len();
    // Tolerate products like 0.9 * 10 = 9.000000000000002.
    let rank = ((alpha * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    sorted[rank - 1]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReferences {
    pub refs: Vec<EmbeddingVector>,
    pub threshold: f64,
}

/// Per-class keyframe embeddings with their thresholds. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceLibrary {
    classes: BTreeMap<ActionClass, ClassReferences>,
    config: DetectorConfig,
}

impl ReferenceLibrary {
    pub fn build(
        refs: BTreeMap<ActionClass, Vec<EmbeddingVector>>,
        config: DetectorConfig,
    ) -> Result<Self, DetectorError> {
        config.validate()?;
        let mut classes = BTreeMap::new();
        for (class, refs) in refs {
            let sims = intra_similarity(&refs).map_err(|_| DetectorError::TooFewReferences {
                class: Some(class),
                count: refs.len(),
            })?;
            let threshold = compute_threshold(&sims, config.alpha);
            classes.insert(class, ClassReferences { refs, threshold });
        }
        Ok(Self { classes, config })
    }

    /// Embeds frames and groups them by class.
    pub fn from_frames<'a>(
        frames: impl IntoIterator<Item = &'a ObservationFrame>,
        embed: impl Fn(&ObservationFrame) -> EmbeddingVector,
        config: DetectorConfig,
    ) -> Result<Self, DetectorError> {
        let mut refs: BTreeMap<ActionClass, Vec<EmbeddingVector>> = BTreeMap::new();
        for f in frames {
            refs.entry(f.class).or_default().push(embed(f));
        }
        Self::build(refs, config)
    }

    pub fn class(&self, class: ActionClass) -> Option<&ClassReferences> {
        self.classes.get(&class)
    }

    pub fn classes(&self) -> impl Iterator<Item = (&ActionClass, &ClassReferences)> {
        self.classes.iter()
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub runs: usize,
    /// Embedder noise applied to each reference, standing in for camera variance.
    pub noise: f64,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            runs: 5,
            noise: 0.02,
            seed: 7,
        }
    }
}

/// Clean-run frames of `program`, repeated `runs` times.
pub fn clean_frames(
    program: &ProtocolProgram,
    env: &EnvConfig,
    runs: usize,
) -> Result<Vec<ObservationFrame>, DetectorError> {
    let log = run_program(program, env, vec![], &mut NoMonitor)
        .map_err(|e| DetectorError::Calibration(e.to_string()))?;
    if log.status != RunStatus::Completed {
        return Err(DetectorError::Calibration(format!(
            "calibration run ended {}",
            log.status
        )));
    }
    let frames: Vec<_> = log.frames().cloned().collect();
    Ok((0..runs).flat_map(|_| frames.iter().cloned()).collect())
}

/// Builds a library from clean runs of `program`.
pub fn calibrate(
    program: &ProtocolProgram,
    env: &EnvConfig,
    embedder: &dyn Embedder,
    calibration: &CalibrationConfig,
    config: DetectorConfig,
) -> Result<ReferenceLibrary, DetectorError> {
    let frames = clean_frames(program, env, calibration.runs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(calibration.seed);
    let refs: Vec<_> = frames
        .iter()
        .map(|f| {
            (
                f.class,
                embedder.embed(f).jitter(&mut rng, calibration.noise),
            )
        })
        .collect();
    let mut grouped: BTreeMap<ActionClass, Vec<EmbeddingVector>> = BTreeMap::new();
    for (class, v) in refs {
        grouped.entry(class).or_default().push(v);
    }
    ReferenceLibrary::build(grouped, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::FeatureHashEmbedder;

    #[test]
    fn threshold_examples() {
        assert_eq!(compute_threshold(&[1.0], 0.9), 1.0);
        assert_eq!(compute_threshold(&[0.9, 0.8, 0.7, 0.6, 0.5], 0.9), 0.5);
        assert_eq!(compute_threshold(&[0.9, 0.8], 0.5), 0.9);
        let ten: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        assert_eq!(compute_threshold(&ten, 0.9), 0.1);
        assert_eq!(compute_threshold(&[0.3, 0.2], 1.0), 0.2);
    }

    #[test]
    fn pairwise_sizes() {
        let e = FeatureHashEmbedder::default();
        let v = e.embed_facts([("tip_attached", true)]);
        assert_eq!(
            intra_similarity(&[v.clone(), v.clone()]).unwrap(),
            vec![1.0]
        );
        assert_eq!(
            intra_similarity(&[v.clone(), v.clone(), v.clone()])
                .unwrap()
                .len(),
            3
        );
        assert!(matches!(
            intra_similarity(&[v]),
            Err(DetectorError::TooFewReferences { count: 1, .. })
        ));
    }

    #[test]
    fn alpha_is_validated() {
        for alpha in [0.0, 1.5, f64::NAN] {
            let cfg = DetectorConfig {
                alpha,
                ..Default::default()
            };
            assert!(ReferenceLibrary::build(BTreeMap::new(), cfg).is_err());
        }
    }

    #[test]
    fn calibration_covers_all_classes() {
        let lib = calibrate(
            &crate::fixtures::passaging(),
            &EnvConfig::default_lab(),
            &FeatureHashEmbedder::default(),
            &CalibrationConfig::default(),
            DetectorConfig::default(),
        )
        .unwrap();
        assert_eq!(lib.len(), 23);
        for (_, c) in lib.classes() {
            assert!(c.refs.len() >= 5);
            assert!((-1.0..=1.0).contains(&c.threshold));
        }
    }
}
