use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::constraints::TaskConstraints;
use super::embed::{Embedder, EmbeddingVector};
use super::pipeline::Detector;
use super::DetectorError;
use crate::env::EnvConfig;
use crate::fixtures;
use crate::sim::{run_program, FaultInjection, NoMonitor, ObservationFrame, SCENARIOS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledFrame {
    pub frame: ObservationFrame,
    pub embedding: EmbeddingVector,
    pub anomalous: bool,
    pub scenario_id: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        num as f64 / den as f64
    }
}

impl Confusion {
    pub fn record(&mut self, actual: bool, flagged: bool) {
        match (actual, flagged) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fn_ += 1,
        }
    }

    /// NaN when nothing was flagged.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineMetrics {
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpr: f64,
}

impl From<Confusion> for PipelineMetrics {
    fn from(c: Confusion) -> Self {
        Self {
            confusion: c,
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            fpr: c.fpr(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub stage1: PipelineMetrics,
    pub two_stage: PipelineMetrics,
    /// Wall-clock seconds per frame; informational only.
    pub mean_latency: f64,
    pub latency_cv: f64,
    /// Confirmed reports whose scenario matches the label.
    pub scenario_hits: usize,
}

/// Frame-level metrics of stage 1 alone and of the full pipeline.
pub fn evaluate_detector(
    detector: &Detector,
    corpus: &[LabeledFrame],
) -> Result<Metrics, DetectorError> {
    if corpus.is_empty() {
        return Err(DetectorError::EmptyCorpus);
    }
    let mut stage1 = Confusion::default();
    let mut two = Confusion::default();
    let mut latencies = Vec::with_capacity(corpus.len());
    let mut scenario_hits = 0;
    for item in corpus {
        let t = Instant::now();
        let inspection = detector.inspect_embedding(&item.frame, &item.embedding)?;
        latencies.push(t.elapsed().as_secs_f64());
        let confirmed = inspection.report.as_ref().is_some_and(|r| r.confirmed);
        stage1.record(item.anomalous, inspection.screening.is_warning());
        two.record(item.anomalous, confirmed);
        if confirmed
            && item.scenario_id.is_some()
            && inspection.report.as_ref().and_then(|r| r.scenario_id) == item.scenario_id
        {
            scenario_hits += 1;
        }
    }
    let n = latencies.len() as f64;
    let mean = latencies.iter().sum::<f64>() / n;
    let var = latencies.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok(Metrics {
        stage1: stage1.into(),
        two_stage: two.into(),
        mean_latency: mean,
        latency_cv: if mean > 0.0 { var.sqrt() / mean } else { 0.0 },
        scenario_hits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub clean: usize,
    pub faulty: usize,
    /// Per-dimension embedder noise on every frame.
    pub noise: f64,
    /// Fraction of frames hit by a much larger disturbance.
    pub glitch_rate: f64,
    pub glitch_noise: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            clean: 160,
            faulty: 40,
            noise: 0.02,
            glitch_rate: 0.1,
            glitch_noise: 0.15,
            seed: 42,
        }
    }
}

/// First frame of each scenario's run that breaks its class constraints.
pub fn scenario_frames(env: &EnvConfig) -> Result<Vec<(u8, ObservationFrame)>, DetectorError> {
    let program = fixtures::passaging();
    let constraints = TaskConstraints::standard();
    let mut out = Vec::new();
    for s in &SCENARIOS {
        let host = fixtures::passaging_host(s.id).expect("every scenario has a host");
        let fault = FaultInjection::new(s.id, host)
            .map_err(|e| DetectorError::Calibration(e.to_string()))?;
        let log = run_program(&program, env, vec![fault], &mut NoMonitor)
            .map_err(|e| DetectorError::Calibration(e.to_string()))?;
        let frame = log
            .frames()
            .find(|f| constraints.violations(f).is_ok_and(|v| !v.is_empty()))
            .cloned()
            .ok_or_else(|| {
                DetectorError::Calibration(format!("scenario {} left no trace", s.id))
            })?;
        out.push((s.id, frame));
    }
    Ok(out)
}

/// Clean frames drawn from a clean passaging run plus fault frames cycling through all
/// scenarios, each embedded with seeded noise and shuffled.
pub fn synthetic_corpus(
    env: &EnvConfig,
    embedder: &dyn Embedder,
    config: &CorpusConfig,
) -> Result<Vec<LabeledFrame>, DetectorError> {
    let clean = super::library::clean_frames(&fixtures::passaging(), env, 1)?;
    let faults = scenario_frames(env)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noisy = |frame: &ObservationFrame, rng: &mut ChaCha8Rng| {
        let sigma = if rng.random::<f64>() < config.glitch_rate {
            config.glitch_noise
        } else {
            config.noise
        };
        embedder.embed(frame).jitter(rng, sigma)
    };
    let mut corpus = Vec::with_capacity(config.clean + config.faulty);
    for _ in 0..config.clean {
        let frame = &clean[rng.random_range(0..clean.len())];
        let embedding = noisy(frame, &mut rng);
        corpus.push(LabeledFrame {
            frame: frame.clone(),
            embedding,
            anomalous: false,
            scenario_id: None,
        });
    }
    for i in 0..config.faulty {
        let (id, frame) = &faults[i % faults.len()];
        let embedding = noisy(frame, &mut rng);
        corpus.push(LabeledFrame {
            frame: frame.clone(),
            embedding,
            anomalous: true,
            scenario_id: Some(*id),
        });
    }
    corpus.shuffle(&mut rng);
    Ok(corpus)
}
