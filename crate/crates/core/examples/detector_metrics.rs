//! Builds the synthetic labeled corpus and prints stage-1 and two-stage metrics.

use labrun_core::detector::{evaluate_detector, synthetic_corpus, CorpusConfig, Detector};
use labrun_core::env::EnvConfig;

fn main() {
    let env = EnvConfig::default_lab();
    let detector = Detector::standard(&env).expect("calibration");
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(42);
    let config = CorpusConfig {
        seed,
        ..Default::default()
    };
    let corpus = synthetic_corpus(&env, detector.embedder(), &config).expect("corpus");
    let m = evaluate_detector(&detector, &corpus).expect("metrics");
    for (name, p) in [("stage-1", m.stage1), ("two-stage", m.two_stage)] {
        println!(
            "{name:<10} precision {:.3} recall {:.3} f1 {:.3} fpr {:.3}  {:?}",
            p.precision, p.recall, p.f1, p.fpr, p.confusion
        );
    }
    println!("scenario matches: {}/{}", m.scenario_hits, config.faulty);
    println!(
        "mean latency {:.2e} s, cv {:.2}",
        m.mean_latency, m.latency_cv
    );
    for (class, refs) in detector.library().classes() {
        println!(
            "  {:<38} refs {:>3}  tau {:.4}",
            class.to_string(),
            refs.refs.len(),
            refs.threshold
        );
    }
}
