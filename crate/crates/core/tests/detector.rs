use std::collections::BTreeMap;

use labrun_core::detector::{
    calibrate, clean_frames, compute_threshold, cosine, embed_frame, evaluate_detector,
    intra_similarity, stage1_detect, stage2_validate, synthetic_corpus, CalibrationConfig,
    CorpusConfig, DetectionStage, Detector, DetectorConfig, DetectorError, FeatureHashEmbedder,
    LabeledFrame, ReferenceLibrary, Screening, TaskConstraints,
};
use labrun_core::env::EnvConfig;
use labrun_core::fixtures;
use labrun_core::ir::Primitive;
use labrun_core::sim::{
    run_program, ActionClass, EventKind, FaultInjection, FrameSubject, ObservationFrame, Phase,
    RunStatus, Stage, Verdict, SCENARIOS,
};
use proptest::prelude::*;
use std::sync::OnceLock;

fn standard() -> &'static Detector {
    static D: OnceLock<Detector> = OnceLock::new();
    D.get_or_init(|| Detector::standard(&EnvConfig::default_lab()).unwrap())
}

fn frame(primitive: Primitive, phase: Phase, facts: &[(&str, bool)]) -> ObservationFrame {
    ObservationFrame {
        frame_id: 0,
        class: ActionClass { primitive, phase },
        stage: Stage::Mid,
        index: 0,
        subject: FrameSubject::default(),
        facts: facts.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        clock: 0.0,
    }
}

fn aspirate_frame(tip: bool) -> ObservationFrame {
    frame(
        Primitive::RemoveLiquid,
        Phase::Aspirate,
        &[
            ("tip_attached", tip),
            ("container_on_platform", true),
            ("lid_open", true),
            ("platform_raised", true),
        ],
    )
}

/// Independent signed feature hash over `fact=value` tokens.
fn oracle_embed(facts: &[(&str, bool)]) -> Vec<f64> {
    let mut v = vec![0.0; 64];
    for (k, val) in facts {
        let mut h: u64 = 14695981039346656037;
        for b in format!("{k}={val}").bytes() {
            h = (h ^ b as u64).wrapping_mul(1099511628211);
        }
        v[(h % 64) as usize] += if h >> 63 == 0 { 1.0 } else { -1.0 };
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

#[test]
fn embedding_matches_oracle_and_separates_tip_state() {
    let with = aspirate_frame(true);
    let without = aspirate_frame(false);
    let facts: Vec<(&str, bool)> = with.facts.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    let a = embed_frame(&with);
    for (x, y) in a.as_slice().iter().zip(oracle_embed(&facts)) {
        assert!((x - y).abs() < 1e-15);
    }
    assert!((a.norm() - 1.0).abs() < 1e-12);
    assert_eq!(a, embed_frame(&with.clone()));
    let sim = cosine(&a, &embed_frame(&without));
    assert!((sim - 0.75).abs() < 1e-12, "{sim}");
}

#[test]
fn intra_similarity_matches_brute_force() {
    let env = EnvConfig::default_lab();
    let class = ActionClass {
        primitive: Primitive::AddLiquid,
        phase: Phase::Aspirate,
    };
    let frames = clean_frames(&fixtures::passaging(), &env, 5).unwrap();
    let refs: Vec<_> = frames
        .iter()
        .filter(|f| f.class == class)
        .map(embed_frame)
        .collect();
    let got = intra_similarity(&refs).unwrap();
    let mut want = Vec::new();
    for p in 0..refs.len() {
        for q in 0..refs.len() {
            if p < q {
                let dot: f64 = refs[p]
                    .as_slice()
                    .iter()
                    .zip(refs[q].as_slice())
                    .map(|(x, y)| x * y)
                    .sum();
                want.push(dot);
            }
        }
    }
    assert_eq!(got.len(), refs.len() * (refs.len() - 1) / 2);
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-12);
    }
}

fn noiseless_library(env: &EnvConfig) -> ReferenceLibrary {
    calibrate(
        &fixtures::passaging(),
        env,
        &FeatureHashEmbedder::default(),
        &CalibrationConfig {
            noise: 0.0,
            ..Default::default()
        },
        DetectorConfig::default(),
    )
    .unwrap()
}

#[test]
fn stage1_passes_references_and_flags_missing_tip() {
    let env = EnvConfig::default_lab();
    let lib = noiseless_library(&env);
    let e = FeatureHashEmbedder::default();
    let class = aspirate_frame(true).class;
    assert!(matches!(
        stage1_detect(&aspirate_frame(true), class, &lib, &e).unwrap(),
        Screening::Pass { .. }
    ));
    assert!(stage1_detect(&aspirate_frame(false), class, &lib, &e)
        .unwrap()
        .is_warning());
    let unknown = ActionClass {
        primitive: Primitive::Shake,
        phase: Phase::Spin,
    };
    assert_eq!(
        stage1_detect(&aspirate_frame(true), unknown, &lib, &e),
        Err(DetectorError::UnknownClass(unknown))
    );
}

#[test]
fn stage2_confirms_and_clears() {
    let c = TaskConstraints::standard();
    let v = stage2_validate(&aspirate_frame(false), &c).unwrap();
    assert!(v.confirmed);
    assert_eq!(v.scenario_id, Some(2));
    assert!(
        v.message.contains("\"attach pipette tip\" violated"),
        "{}",
        v.message
    );
    let clear = stage2_validate(&aspirate_frame(true), &c).unwrap();
    assert!(!clear.confirmed);
    let rotor = frame(
        Primitive::Centrifuge,
        Phase::Load,
        &[("rotor_in_place", false), ("tube_present", true)],
    );
    assert_eq!(stage2_validate(&rotor, &c).unwrap().scenario_id, Some(14));
    let missing = TaskConstraints::new(BTreeMap::new(), vec![]);
    assert!(matches!(
        stage2_validate(&rotor, &missing),
        Err(DetectorError::MissingConstraintSet(_))
    ));
}

#[test]
fn every_scenario_is_confirmed_with_its_id() {
    let env = EnvConfig::default_lab();
    let detector = standard();
    let program = fixtures::passaging();
    for s in &SCENARIOS {
        let host = fixtures::passaging_host(s.id).unwrap();
        let mut monitor = detector.clone();
        let log = run_program(
            &program,
            &env,
            vec![FaultInjection::new(s.id, host).unwrap()],
            &mut monitor,
        )
        .unwrap();
        assert_eq!(log.status, RunStatus::AwaitingReplan, "scenario {}", s.id);
        let confirmed: Vec<_> = log.reports.iter().filter(|r| r.confirmed).collect();
        assert_eq!(confirmed.len(), 1, "scenario {}", s.id);
        assert_eq!(confirmed[0].scenario_id, Some(s.id));
        assert_eq!(confirmed[0].stage, DetectionStage::Semantic);
        assert!(log
            .events
            .iter()
            .any(|e| matches!(e.kind, EventKind::AlertRaised { .. }) && e.index == Some(host)));
    }
}

#[test]
fn clean_run_under_detector_completes_without_reports() {
    let env = EnvConfig::default_lab();
    let mut detector = standard().clone();
    let log = run_program(&fixtures::passaging(), &env, vec![], &mut detector).unwrap();
    assert_eq!(log.status, RunStatus::Completed);
    assert!(log.reports.is_empty());
}

#[test]
fn clean_batch_false_positive_count_is_frozen() {
    let env = EnvConfig::default_lab();
    let detector = standard();
    let cfg = CorpusConfig {
        clean: 200,
        faulty: 0,
        ..Default::default()
    };
    let corpus = synthetic_corpus(&env, detector.embedder(), &cfg).unwrap();
    let m = evaluate_detector(detector, &corpus).unwrap();
    assert_eq!(m.stage1.confusion.fp, CLEAN_BATCH_WARNINGS);
    assert_eq!(m.two_stage.confusion.fp, 0);
    assert!(m.two_stage.precision.is_nan());
}

const CLEAN_BATCH_WARNINGS: usize = 27;

#[test]
fn degenerate_corpora() {
    let env = EnvConfig::default_lab();
    let detector = standard();
    assert_eq!(
        evaluate_detector(detector, &[]),
        Err(DetectorError::EmptyCorpus)
    );
    let clean: Vec<_> = clean_frames(&fixtures::medium_change(), &env, 1)
        .unwrap()
        .into_iter()
        .map(|f| LabeledFrame {
            embedding: embed_frame(&f),
            frame: f,
            anomalous: false,
            scenario_id: None,
        })
        .collect();
    let m = evaluate_detector(detector, &clean).unwrap();
    assert_eq!(m.two_stage.fpr, 0.0);
    assert!(m.two_stage.precision.is_nan());
    let faulty = vec![LabeledFrame {
        embedding: embed_frame(&aspirate_frame(false)),
        frame: aspirate_frame(false),
        anomalous: true,
        scenario_id: Some(2),
    }];
    let m = evaluate_detector(detector, &faulty).unwrap();
    assert_eq!(m.two_stage.recall, 1.0);
    assert_eq!(m.scenario_hits, 1);
}

#[test]
fn suppression_lowers_false_positives_on_synthetic_corpus() {
    let env = EnvConfig::default_lab();
    let detector = standard();
    let corpus = synthetic_corpus(&env, detector.embedder(), &CorpusConfig::default()).unwrap();
    assert_eq!(corpus.len(), 200);
    assert_eq!(corpus.iter().filter(|f| f.anomalous).count(), 40);
    let m = evaluate_detector(detector, &corpus).unwrap();
    assert!(m.two_stage.fpr < m.stage1.fpr, "{:?}", m);
    assert!(m.two_stage.recall >= 0.9);
    let again = synthetic_corpus(&env, detector.embedder(), &CorpusConfig::default()).unwrap();
    assert_eq!(corpus, again);
}

#[test]
fn monitor_passes_clean_frame() {
    let mut detector = standard().clone();
    let ok = frame(
        Primitive::Shake,
        Phase::Agitate,
        &[("container_on_platform", true), ("lid_open", false)],
    );
    assert_eq!(
        labrun_core::sim::Monitor::observe(&mut detector, &ok),
        Verdict::Pass
    );
}

proptest! {
    #[test]
    fn threshold_is_monotone_in_alpha(
        sims in prop::collection::vec(-1.0f64..=1.0, 1..60),
        a in 0.01f64..=1.0,
        b in 0.01f64..=1.0,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(compute_threshold(&sims, lo) >= compute_threshold(&sims, hi));
    }

    #[test]
    fn two_stage_positives_are_a_subset(seed in 0u64..500, glitch in 0.0f64..0.5) {
        let env = EnvConfig::default_lab();
        let detector = standard();
        let cfg = CorpusConfig { clean: 30, faulty: 10, glitch_rate: glitch, seed, ..Default::default() };
        let corpus = synthetic_corpus(&env, detector.embedder(), &cfg).unwrap();
        for item in &corpus {
            let i = detector.inspect_embedding(&item.frame, &item.embedding).unwrap();
            if i.report.as_ref().is_some_and(|r| r.confirmed) {
                prop_assert!(i.screening.is_warning());
            }
        }
        let m = evaluate_detector(detector, &corpus).unwrap();
        prop_assert!(m.two_stage.fpr <= m.stage1.fpr);
        let mut reversed = corpus.clone();
        reversed.reverse();
        let r = evaluate_detector(detector, &reversed).unwrap();
        prop_assert_eq!(m.stage1.confusion, r.stage1.confusion);
        prop_assert_eq!(m.two_stage.confusion, r.two_stage.confusion);
    }
}
